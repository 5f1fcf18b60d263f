#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "rgr/digest.hpp"
#include "rgr/error.hpp"
#include "rgr/serving_sim.hpp"

using namespace rgr;

namespace {

ServingHandles hashing_handles() {
  ServingHandles h;
  h.retrieve = [](int version, std::int64_t user) {
    Fnv1a f;
    f.pod(version).pod(user);
    return f.hex();
  };
  return h;
}

SimConfig low_load() {
  SimConfig c;
  c.request_rate = 0.5;
  c.inference_latency_ms = 60;
  c.window_ms = 100;
  c.duration_ms = 3 * 3600000;
  c.sync_period_ms = 3600000;
  c.n_users = 50;
  c.seed = 9;
  return c;
}

std::map<std::string, std::string> fields(const std::string& detail) {
  std::map<std::string, std::string> out;
  std::istringstream in(detail);
  std::string kv;
  while (std::getline(in, kv, '\t')) {
    auto eq = kv.find('=');
    if (eq != std::string::npos) out[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return out;
}

}  // namespace

TEST(Serving, LowLoadHitsEveryRequest) {
  ServingReport r = run_simulation(low_load(), hashing_handles());
  ASSERT_GT(r.requests, 1000);
  EXPECT_EQ(r.hits, r.requests);
  EXPECT_DOUBLE_EQ(r.hit_rate, 1.0);
  EXPECT_DOUBLE_EQ(r.latency_p99_ms, 1.0);  // the lookup cost
  EXPECT_LT(r.latency_p99_ms, 5.0);
  EXPECT_EQ(r.ingested, r.requests);
}

TEST(Serving, InferenceSlowerThanWindowAlwaysMisses) {
  SimConfig c = low_load();
  c.inference_latency_ms = 150;
  ServingReport r = run_simulation(c, hashing_handles());
  EXPECT_GT(r.requests, 0);
  EXPECT_EQ(r.hits, 0);
  EXPECT_DOUBLE_EQ(r.hit_rate, 0.0);
}

TEST(Serving, LatencyMaskingThreshold) {
  // Without queueing a request hits iff its result is written inside the window.
  SimConfig c = low_load();
  c.duration_ms = 600000;
  c.workers = 10000;
  c.window_ms = 100;
  c.write_cost_ms = 3;
  for (std::int64_t lat : {10, 50, 96, 97, 98, 120, 400}) {
    c.inference_latency_ms = lat;
    ServingReport r = run_simulation(c, hashing_handles());
    EXPECT_DOUBLE_EQ(r.hit_rate, lat + c.write_cost_ms <= c.window_ms ? 1.0 : 0.0) << lat;
  }
}

TEST(Serving, SyncCountIsFloorOfDurationOverPeriod) {
  SimConfig c = low_load();
  std::vector<int> seen;
  ServingHandles h = hashing_handles();
  h.sync = [&](int v) { seen.push_back(v); };
  ServingReport r = run_simulation(c, h, true);
  EXPECT_EQ(r.sync_events, 3);
  EXPECT_EQ(r.final_version, 3);
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3}));
  std::vector<std::int64_t> times;
  for (const auto& e : r.events)
    if (e.kind == EventKind::kModelSync) times.push_back(e.time_ms);
  EXPECT_EQ(times, (std::vector<std::int64_t>{3600000, 7200000, 10800000}));

  c.duration_ms = 2 * 3600000 + 1800000;
  c.request_rate = 0.05;
  EXPECT_EQ(run_simulation(c, hashing_handles()).sync_events, 2);
  c.duration_ms = 3599999;
  EXPECT_EQ(run_simulation(c, hashing_handles()).sync_events, 0);
}

TEST(Serving, RerunIsByteIdentical) {
  SimConfig c = low_load();
  c.inference_jitter_ms = 20;
  c.duration_ms = 1800000;
  ServingReport a = run_simulation(c, hashing_handles(), true);
  ServingReport b = run_simulation(c, hashing_handles(), true);
  std::ostringstream la, lb;
  write_event_log(la, a.events);
  write_event_log(lb, b.events);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(a.summary(), b.summary());
  EXPECT_EQ(a.event_log_digest, b.event_log_digest);
  c.seed = 10;
  EXPECT_NE(run_simulation(c, hashing_handles()).event_log_digest, a.event_log_digest);
}

TEST(Serving, KeepEventsDoesNotChangeTheRun) {
  SimConfig c = low_load();
  c.duration_ms = 600000;
  EXPECT_EQ(run_simulation(c, hashing_handles(), false).summary(),
            run_simulation(c, hashing_handles(), true).summary());
}

TEST(Serving, StalenessIsTimeSinceLastSync) {
  SimConfig c = low_load();
  c.sync_period_ms = 1800000;  // 30 min
  c.duration_ms = 2 * 3600000;
  ServingReport r = run_simulation(c, hashing_handles(), true);
  std::int64_t checked = 0;
  double total = 0;
  for (const auto& e : r.events) {
    if (e.kind != EventKind::kRealtimeFetch) continue;
    auto f = fields(e.detail);
    if (f["hit"] != "1") continue;
    const std::int64_t expect = e.time_ms % c.sync_period_ms;
    EXPECT_EQ(std::stoll(f["staleness_ms"]), expect);
    EXPECT_LT(expect, c.sync_period_ms);
    total += static_cast<double>(expect);
    ++checked;
  }
  EXPECT_EQ(checked, r.hits);
  EXPECT_NEAR(r.mean_staleness_ms, total / static_cast<double>(checked), 1e-6);
  // Arrivals are uniform in time, so the mean sits near half a period.
  EXPECT_NEAR(r.mean_staleness_ms, c.sync_period_ms / 2.0, c.sync_period_ms * 0.1);
}

TEST(Serving, ResultsChangeAfterSync) {
  SimConfig c = low_load();
  ServingReport r = run_simulation(c, hashing_handles(), true);
  std::map<std::int64_t, std::map<std::string, std::set<std::string>>> per_user;  // user -> version -> results
  for (const auto& e : r.events) {
    if (e.kind != EventKind::kRealtimeFetch) continue;
    auto f = fields(e.detail);
    if (f["hit"] == "1") per_user[e.user_id][f["served_version"]].insert(f["result"]);
  }
  int compared = 0;
  for (const auto& [user, versions] : per_user) {
    if (versions.count("0") == 0 || versions.count("1") == 0) continue;
    EXPECT_EQ(versions.at("0").size(), 1u);
    EXPECT_NE(*versions.at("0").begin(), *versions.at("1").begin());
    ++compared;
  }
  EXPECT_GT(compared, 0);
}

TEST(Serving, EventLogIsCausal) {
  SimConfig c = low_load();
  c.request_rate = 40;  // enough load to queue
  c.workers = 2;
  c.inference_jitter_ms = 30;
  c.duration_ms = 120000;
  c.sync_period_ms = 30000;
  ServingReport r = run_simulation(c, hashing_handles(), true);
  EXPECT_GT(r.max_queue, 0);
  EXPECT_GT(r.hits, 0);
  EXPECT_GT(r.misses, 0);

  struct Seen {
    std::int64_t arrive = -1, trigger = -1, done = -1, write = -1, fetch = -1, ingest = -1;
    int version_at_trigger = -1, inference_version = -1;
  };
  std::map<std::int64_t, Seen> req;
  std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> writes;  // request -> (time, user)
  std::int64_t last_time = 0;
  std::uint64_t last_seq = 0;
  bool first = true;
  for (const auto& e : r.events) {
    EXPECT_GE(e.time_ms, last_time);
    if (!first && e.time_ms == last_time) {
      EXPECT_GT(e.seq, last_seq);
    }
    first = false;
    last_time = e.time_ms;
    last_seq = e.seq;
    if (e.request < 0) continue;
    Seen& s = req[e.request];
    switch (e.kind) {
      case EventKind::kRequestArrive: s.arrive = e.time_ms; break;
      case EventKind::kAsyncTrigger:
        s.trigger = e.time_ms;
        s.version_at_trigger = e.version;
        break;
      case EventKind::kInferenceDone:
        s.done = e.time_ms;
        s.inference_version = e.version;
        break;
      case EventKind::kCacheWrite:
        s.write = e.time_ms;
        writes[e.request] = {e.time_ms, e.user_id};
        break;
      case EventKind::kRealtimeFetch: {
        s.fetch = e.time_ms;
        auto f = fields(e.detail);
        if (f["hit"] == "1") {
          // The served entry was written by this or a later request of the same user.
          bool found = false;
          for (const auto& [q, w] : writes)
            if (q >= e.request && w.second == e.user_id && w.first <= e.time_ms) found = true;
          EXPECT_TRUE(found) << "request " << e.request;
          EXPECT_LE(std::stoi(f["served_version"]), e.version);
        }
        break;
      }
      case EventKind::kSampleIngest: s.ingest = e.time_ms; break;
      case EventKind::kModelSync: break;
    }
  }
  for (const auto& [id, s] : req) {
    EXPECT_EQ(s.trigger, s.arrive);
    EXPECT_EQ(s.fetch, s.arrive + c.window_ms);
    EXPECT_EQ(s.ingest, s.fetch + c.ingest_delay_ms);
    EXPECT_GE(s.done, s.trigger + c.inference_latency_ms - c.inference_jitter_ms);
    EXPECT_EQ(s.write, s.done + c.write_cost_ms);
    // A queued inference may pick up a newer model, never an older one.
    EXPECT_GE(s.inference_version, s.version_at_trigger);
  }
}

TEST(Serving, NearestRankAndValidation) {
  EXPECT_DOUBLE_EQ(nearest_rank({5, 1, 3, 2, 4}, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(nearest_rank({5, 1, 3, 2, 4}, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(nearest_rank({5, 1, 3, 2, 4}, 0.01), 1.0);
  SimConfig c = low_load();
  c.inference_latency_ms = 0;
  EXPECT_THROW(run_simulation(c, hashing_handles()), Error);
  c = low_load();
  c.sync_period_ms = 0;
  EXPECT_THROW(c.validate(), Error);
  c = low_load();
  c.inference_jitter_ms = 60;
  EXPECT_THROW(c.validate(), Error);
}
