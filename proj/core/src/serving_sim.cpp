#include "rgr/serving_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <map>
#include <ostream>
#include <queue>
#include <random>
#include <sstream>

#include "rgr/digest.hpp"
#include "rgr/error.hpp"

namespace rgr {

void SimConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::kInvalidConfig, "serving: " + what);
  };
  check(request_rate > 0 && std::isfinite(request_rate), "request_rate must be > 0");
  check(inference_latency_ms > 0, "inference_latency_ms must be > 0");
  check(inference_jitter_ms >= 0 && inference_jitter_ms < inference_latency_ms,
        "inference_jitter_ms must be in [0, inference_latency_ms)");
  check(window_ms > 0, "window_ms must be > 0");
  check(cache_ttl_ms > 0, "cache_ttl_ms must be > 0");
  check(sync_period_ms > 0, "sync_period_ms must be > 0");
  check(duration_ms > 0, "duration_ms must be > 0");
  check(lookup_cost_ms > 0, "lookup_cost_ms must be > 0");
  check(write_cost_ms > 0, "write_cost_ms must be > 0");
  check(ingest_delay_ms > 0, "ingest_delay_ms must be > 0");
  check(workers >= 1, "workers must be >= 1");
  check(n_users >= 1, "n_users must be >= 1");
  check(stream_steps_per_sync >= 0, "stream_steps_per_sync must be >= 0");
}

std::string_view event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::kRequestArrive: return "RequestArrive";
    case EventKind::kAsyncTrigger: return "AsyncTrigger";
    case EventKind::kInferenceDone: return "InferenceDone";
    case EventKind::kCacheWrite: return "CacheWrite";
    case EventKind::kRealtimeFetch: return "RealtimeFetch";
    case EventKind::kSampleIngest: return "SampleIngest";
    case EventKind::kModelSync: return "ModelSync";
  }
  return "Unknown";
}

std::string ServingEvent::to_line() const {
  std::ostringstream os;
  os << time_ms << '\t' << seq << '\t' << event_kind_name(kind) << "\treq=" << request
     << "\tuser=" << user_id << "\tversion=" << version;
  if (!detail.empty()) os << '\t' << detail;
  return os.str();
}

double nearest_rank(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "nearest_rank: empty sample");
  require(q > 0 && q <= 1, ErrorCode::kInvalidArgument, "nearest_rank: q must be in (0, 1]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  std::size_t rank = static_cast<std::size_t>(std::ceil(q * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

namespace {

struct Pending {
  std::int64_t time = 0;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::kRequestArrive;
  std::int64_t request = -1;
  int sync_index = 0;
};

// A write landing at t is visible to a fetch at t, so writes go first on ties.
struct Later {
  bool operator()(const Pending& a, const Pending& b) const {
    if (a.time != b.time) return a.time > b.time;
    const bool aw = a.kind == EventKind::kCacheWrite, bw = b.kind == EventKind::kCacheWrite;
    if (aw != bw) return bw;
    return a.seq > b.seq;
  }
};

struct Request {
  std::int64_t user = 0;
  std::int64_t arrival = 0;
  std::int64_t started = -1;
  int version = 0;
  std::string digest;
};

struct CacheEntry {
  std::int64_t request = -1;
  std::int64_t written = 0;
  int version = 0;
  std::string digest;
};

std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string ServingReport::summary() const {
  std::map<std::string, std::string> kv{
      {"requests", std::to_string(requests)},
      {"hits", std::to_string(hits)},
      {"misses", std::to_string(misses)},
      {"hit_rate", format_fixed(hit_rate)},
      {"latency_p50_ms", format_fixed(latency_p50_ms)},
      {"latency_p99_ms", format_fixed(latency_p99_ms)},
      {"mean_staleness_ms", format_fixed(mean_staleness_ms)},
      {"served_stale", std::to_string(served_stale)},
      {"served_fresh", std::to_string(served_fresh)},
      {"sync_events", std::to_string(sync_events)},
      {"final_version", std::to_string(final_version)},
      {"ingested", std::to_string(ingested)},
      {"max_queue", std::to_string(max_queue)},
      {"mean_queue_wait_ms", format_fixed(mean_queue_wait_ms)},
      {"event_log_digest", event_log_digest},
      {"result_digest", result_digest},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

ServingReport run_simulation(const SimConfig& config, const ServingHandles& handles,
                             bool keep_events) {
  config.validate();
  require(static_cast<bool>(handles.retrieve), ErrorCode::kInvalidArgument,
          "serving: retrieve handle required");

  std::mt19937_64 rng(derive_seed(config.seed, "serving"));
  std::exponential_distribution<double> gap(config.request_rate / 1000.0);
  std::uniform_int_distribution<std::int64_t> pick_user(0, config.n_users - 1);
  std::uniform_int_distribution<std::int64_t> jitter(-config.inference_jitter_ms,
                                                     config.inference_jitter_ms);

  std::priority_queue<Pending, std::vector<Pending>, Later> queue;
  std::uint64_t next_seq = 0;
  auto push = [&](std::int64_t time, EventKind kind, std::int64_t request, int sync_index = 0) {
    queue.push(Pending{time, next_seq++, kind, request, sync_index});
  };

  const int n_syncs = static_cast<int>(config.duration_ms / config.sync_period_ms);
  for (int k = 1; k <= n_syncs; ++k)
    push(static_cast<std::int64_t>(k) * config.sync_period_ms, EventKind::kModelSync, -1, k);

  std::vector<Request> requests;
  auto new_arrival = [&](std::int64_t after) {
    const std::int64_t t = after + static_cast<std::int64_t>(std::floor(gap(rng)));
    if (t >= config.duration_ms) return;
    Request r;
    r.user = pick_user(rng);
    r.arrival = t;
    requests.push_back(r);
    push(t, EventKind::kRequestArrive, static_cast<std::int64_t>(requests.size()) - 1);
  };
  new_arrival(0);

  ServingReport report;
  Fnv1a log_hash;
  Fnv1a result_hash;
  std::deque<std::int64_t> waiting;
  int free_workers = config.workers;
  int version = 0;
  std::int64_t last_sync = 0;
  std::map<std::int64_t, CacheEntry> cache;
  std::vector<double> latencies;
  double staleness_total = 0;
  double wait_total = 0;
  std::int64_t started_count = 0;

  auto start = [&](std::int64_t r, std::int64_t now) {
    Request& req = requests[static_cast<std::size_t>(r)];
    --free_workers;
    req.started = now;
    req.version = version;
    wait_total += static_cast<double>(now - req.arrival);
    ++started_count;
    const std::int64_t latency =
        config.inference_latency_ms + (config.inference_jitter_ms > 0 ? jitter(rng) : 0);
    push(now + latency, EventKind::kInferenceDone, r);
  };

  std::uint64_t processed = 0;
  while (!queue.empty()) {
    const Pending ev = queue.top();
    queue.pop();
    ServingEvent out;
    out.time_ms = ev.time;
    out.seq = processed++;
    out.kind = ev.kind;
    out.request = ev.request;
    Request* req = ev.request >= 0 ? &requests[static_cast<std::size_t>(ev.request)] : nullptr;
    if (req) out.user_id = req->user;
    out.version = version;

    switch (ev.kind) {
      case EventKind::kRequestArrive:
        ++report.requests;
        push(ev.time, EventKind::kAsyncTrigger, ev.request);
        push(ev.time + config.window_ms, EventKind::kRealtimeFetch, ev.request);
        new_arrival(ev.time);
        break;
      case EventKind::kAsyncTrigger:
        if (free_workers > 0) {
          start(ev.request, ev.time);
          out.detail = "queued=0";
        } else {
          waiting.push_back(ev.request);
          report.max_queue = std::max<std::int64_t>(report.max_queue,
                                                    static_cast<std::int64_t>(waiting.size()));
          out.detail = "queued=" + std::to_string(waiting.size());
        }
        break;
      case EventKind::kInferenceDone:
        req->digest = handles.retrieve(req->version, req->user);
        out.version = req->version;
        out.detail = "result=" + req->digest;
        push(ev.time + config.write_cost_ms, EventKind::kCacheWrite, ev.request);
        ++free_workers;
        if (!waiting.empty()) {
          const std::int64_t next = waiting.front();
          waiting.pop_front();
          start(next, ev.time);
        }
        break;
      case EventKind::kCacheWrite: {
        CacheEntry& slot = cache[req->user];
        if (ev.request > slot.request) slot = CacheEntry{ev.request, ev.time, req->version, req->digest};
        result_hash.str(req->digest).pod(ev.request);
        out.version = req->version;
        out.detail = "result=" + req->digest;
        break;
      }
      case EventKind::kRealtimeFetch: {
        auto it = cache.find(req->user);
        const bool hit = it != cache.end() && it->second.request >= ev.request &&
                         it->second.written <= ev.time &&
                         ev.time - it->second.written <= config.cache_ttl_ms;
        latencies.push_back(static_cast<double>(config.lookup_cost_ms));
        if (hit) {
          ++report.hits;
          const std::int64_t staleness = ev.time - last_sync;
          staleness_total += static_cast<double>(staleness);
          if (it->second.version < version) ++report.served_stale;
          else ++report.served_fresh;
          out.detail = "hit=1\tserved_version=" + std::to_string(it->second.version) +
                       "\tstaleness_ms=" + std::to_string(staleness) +
                       "\tresult=" + it->second.digest;
        } else {
          ++report.misses;
          out.detail = "hit=0";
        }
        push(ev.time + config.ingest_delay_ms, EventKind::kSampleIngest, ev.request);
        break;
      }
      case EventKind::kSampleIngest:
        ++report.ingested;
        if (handles.ingest) handles.ingest(req->user, ev.time);
        break;
      case EventKind::kModelSync:
        if (handles.sync) handles.sync(ev.sync_index);
        version = ev.sync_index;
        last_sync = ev.time;
        ++report.sync_events;
        out.version = version;
        break;
    }

    const std::string line = out.to_line();
    log_hash.str(line).str("\n");
    if (keep_events) report.events.push_back(std::move(out));
  }

  const std::int64_t fetched = report.hits + report.misses;
  report.hit_rate = fetched > 0 ? static_cast<double>(report.hits) / static_cast<double>(fetched) : 0;
  if (!latencies.empty()) {
    report.latency_p50_ms = nearest_rank(latencies, 0.50);
    report.latency_p99_ms = nearest_rank(latencies, 0.99);
  }
  report.mean_staleness_ms = report.hits > 0 ? staleness_total / static_cast<double>(report.hits) : 0;
  report.mean_queue_wait_ms = started_count > 0 ? wait_total / static_cast<double>(started_count) : 0;
  report.final_version = version;
  report.event_log_digest = log_hash.hex();
  report.result_digest = result_hash.hex();
  return report;
}

void write_event_log(std::ostream& out, const std::vector<ServingEvent>& events) {
  out << "#rgr-events\tv1\ttime_ms\tseq\tkind\tfields\n";
  for (const auto& e : events) out << e.to_line() << '\n';
}

}  // namespace rgr
