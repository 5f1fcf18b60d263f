#pragma once

// Discrete-event model of the asynchronous serving path: inference is
// triggered when a request arrives, its result lands in a per-user cache, and
// the real-time fetch at the end of the request window reads that cache.
// A streaming trainer ingests samples and the served model is swapped at a
// fixed sync period.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace rgr {

struct SimConfig {
  double request_rate = 2.0;             // requests per simulated second
  std::int64_t inference_latency_ms = 60;
  std::int64_t inference_jitter_ms = 0;  // latency ~ U[latency - jitter, latency + jitter]
  std::int64_t window_ms = 120;          // arrival -> real-time fetch
  std::int64_t cache_ttl_ms = 600000;
  std::int64_t sync_period_ms = 3600000;
  std::int64_t duration_ms = 3 * 3600000;
  std::int64_t lookup_cost_ms = 1;
  std::int64_t write_cost_ms = 1;
  std::int64_t ingest_delay_ms = 1000;   // fetch -> SampleIngest
  int workers = 4;                       // concurrent inference slots
  int stream_steps_per_sync = 10;        // trainer steps folded into each sync
  int n_users = 500;
  std::uint64_t seed = 7;

  void validate() const;
};

enum class EventKind {
  kRequestArrive,
  kAsyncTrigger,
  kInferenceDone,
  kCacheWrite,
  kRealtimeFetch,
  kSampleIngest,
  kModelSync,
};

std::string_view event_kind_name(EventKind kind);

struct ServingEvent {
  std::int64_t time_ms = 0;
  std::uint64_t seq = 0;  // processing order
  EventKind kind = EventKind::kRequestArrive;
  std::int64_t request = -1;  // request index, -1 for ModelSync
  std::int64_t user_id = -1;
  int version = 0;
  std::string detail;  // kind-specific key=value pairs

  std::string to_line() const;
};

// The retrieval handle must be a pure function of (model version, user); it
// returns a digest of the ranked result. `ingest` and `sync` are optional.
struct ServingHandles {
  std::function<std::string(int version, std::int64_t user_id)> retrieve;
  std::function<void(std::int64_t user_id, std::int64_t time_ms)> ingest;
  // Called when a sync fires; the new version serves every inference that
  // starts from then on.
  std::function<void(int new_version)> sync;
};

struct ServingReport {
  std::int64_t requests = 0;
  std::int64_t hits = 0;
  std::int64_t misses = 0;
  double hit_rate = 0;
  double latency_p50_ms = 0;   // real-time path, nearest rank
  double latency_p99_ms = 0;
  double mean_staleness_ms = 0;  // hits only: serve time - last sync
  std::int64_t served_stale = 0;  // hit built by an older model version
  std::int64_t served_fresh = 0;
  int sync_events = 0;
  int final_version = 0;
  std::int64_t ingested = 0;
  std::int64_t max_queue = 0;
  double mean_queue_wait_ms = 0;
  std::string event_log_digest;
  std::string result_digest;  // over the result digests written to the cache
  std::vector<ServingEvent> events;  // filled when keep_events is set

  // Stable key=value lines, sorted by key.
  std::string summary() const;
};

ServingReport run_simulation(const SimConfig& config, const ServingHandles& handles,
                             bool keep_events = false);

void write_event_log(std::ostream& out, const std::vector<ServingEvent>& events);

// Nearest-rank percentile of an unsorted sample (q in (0, 1]).
double nearest_rank(std::vector<double> values, double q);

}  // namespace rgr
