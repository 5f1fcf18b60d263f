#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "rgr/datagen.hpp"
#include "rgr/error.hpp"
#include "rgr/sid_tokenizer.hpp"

using namespace rgr;

namespace {

WorldConfig small_world() {
  WorldConfig c;
  c.n_items = 300;
  c.n_users = 40;
  c.n_clusters = 6;
  c.sessions_per_user = 5;
  c.seed = 123;
  return c;
}

std::map<std::int64_t, std::size_t> index_of(const World& w) {
  std::map<std::int64_t, std::size_t> m;
  for (std::size_t i = 0; i < w.items.size(); ++i) m[w.items[i].item_id] = i;
  return m;
}

// Sessions per user, timestamp order, holdout last.
std::map<std::int64_t, std::vector<const Session*>> by_user(const SessionLog& log) {
  std::map<std::int64_t, std::vector<const Session*>> m;
  for (const auto& s : log.train) m[s.user_id].push_back(&s);
  for (const auto& s : log.holdout) m[s.user_id].push_back(&s);
  return m;
}

std::string items_text(const World& w) {
  std::ostringstream o;
  write_items(o, w, "d");
  return o.str();
}

}  // namespace

TEST(World, NoFeatureNoiseMeansFeaturesAreLatents) {
  WorldConfig c = small_world();
  c.feature_noise = 0;
  World w = generate_world(c);
  for (const auto& it : w.items) EXPECT_TRUE(it.feature == it.latent);
}

TEST(World, DeterministicBySeed) {
  World a = generate_world(small_world());
  World b = generate_world(small_world());
  EXPECT_EQ(items_text(a), items_text(b));
  std::ostringstream sa, sb;
  write_sessions(sa, generate_sessions(a), "d");
  write_sessions(sb, generate_sessions(b), "d");
  EXPECT_EQ(sa.str(), sb.str());
  WorldConfig c = small_world();
  c.seed = 124;
  EXPECT_NE(items_text(a), items_text(generate_world(c)));
}

TEST(World, SeparatedClustersGetConsistentFirstCodes) {
  WorldConfig c = small_world();
  c.n_clusters = 2;
  c.cluster_scale = 10;
  c.subcluster_scale = 0.5;
  World w = generate_world(c);
  auto features = w.features();
  const int sizes[] = {2};
  Codebooks cb = train_codebooks(features, sizes, 5);
  int agree = 0;
  for (const auto& it : w.items) agree += encode_item(it.feature, cb)[0] == it.cluster ? 1 : 0;
  const int n = static_cast<int>(w.items.size());
  const int best = std::max(agree, n - agree);  // codes are a relabelling of clusters
  EXPECT_GE(best, static_cast<int>(0.95 * n));
}

TEST(Sessions, UnitTierCountsGiveOrderedAffinities) {
  WorldConfig c = small_world();
  c.tier_counts = {1, 1, 1, 1};
  c.affinity_noise = 0;
  World w = generate_world(c);
  SessionLog log = generate_sessions(w);
  auto idx = index_of(w);
  for (const auto& [user, sessions] : by_user(log)) {
    for (const Session* s : sessions) {
      std::size_t targets = 0;
      for (int k = 1; k <= 4; ++k) targets += s->tier(k).size();
      EXPECT_EQ(targets, 4u);
      double prev = 1e300;
      for (int k = 4; k >= 1; --k) {
        const double a = w.affinity(w.users[static_cast<std::size_t>(user)], idx[s->tier(k)[0]], s->timestamp);
        EXPECT_LT(a, prev);
        prev = a;
      }
    }
  }
}

TEST(Sessions, NoiseFreeTopTierIsArgmaxUnseen) {
  WorldConfig c = small_world();
  c.affinity_noise = 0;
  World w = generate_world(c);
  SessionLog log = generate_sessions(w);
  auto idx = index_of(w);
  for (const auto& [user, sessions] : by_user(log)) {
    std::set<std::int64_t> seen;
    for (const auto& [u, h] : log.seed_histories)
      if (u == user) seen.insert(h.begin(), h.end());
    const UserState& us = w.users[static_cast<std::size_t>(user)];
    for (const Session* s : sessions) {
      std::size_t best = 0;
      double best_a = -1e300;
      for (std::size_t i = 0; i < w.items.size(); ++i) {
        if (seen.count(w.items[i].item_id)) continue;
        const double a = w.affinity(us, i, s->timestamp);
        if (a > best_a) {
          best_a = a;
          best = i;
        }
      }
      ASSERT_EQ(s->tier(4).size(), 1u);
      EXPECT_EQ(s->tier(4)[0], w.items[best].item_id);
      for (const auto& t : s->tiers) seen.insert(t.begin(), t.end());
    }
  }
}

TEST(Sessions, TierAffinityOrderedOnAverageWithNoise) {
  World w = generate_world(small_world());
  SessionLog log = generate_sessions(w);
  auto idx = index_of(w);
  std::array<double, 4> sum{};
  std::array<int, 4> n{};
  for (const auto& s : log.train)
    for (int k = 1; k <= 4; ++k)
      for (auto id : s.tier(k)) {
        sum[static_cast<std::size_t>(k - 1)] += w.affinity(w.users[static_cast<std::size_t>(s.user_id)], idx[id], s.timestamp);
        ++n[static_cast<std::size_t>(k - 1)];
      }
  for (int k = 1; k < 4; ++k)
    EXPECT_GT(sum[static_cast<std::size_t>(k)] / n[static_cast<std::size_t>(k)],
              sum[static_cast<std::size_t>(k - 1)] / n[static_cast<std::size_t>(k - 1)]);
}

TEST(Sessions, HoldoutTargetsNeverAppearInTraining) {
  World w = generate_world(small_world());
  SessionLog log = generate_sessions(w);
  ASSERT_EQ(log.holdout.size(), static_cast<std::size_t>(w.config.n_users));
  EXPECT_EQ(log.train.size(), static_cast<std::size_t>(w.config.n_users * (w.config.sessions_per_user - 1)));
  std::map<std::int64_t, std::set<std::int64_t>> held;
  for (const auto& s : log.holdout)
    for (const auto& t : s.tiers) held[s.user_id].insert(t.begin(), t.end());
  for (const auto& s : log.train) {
    EXPECT_LT(s.timestamp, w.config.sessions_per_user);
    for (const auto& t : s.tiers)
      for (auto id : t) EXPECT_FALSE(held[s.user_id].count(id)) << "user " << s.user_id << " item " << id;
  }
}

TEST(Sessions, HistoriesGrowFromClickedTiers) {
  World w = generate_world(small_world());
  SessionLog log = generate_sessions(w);
  auto users = by_user(log);
  for (const auto& [user, sessions] : users) {
    for (std::size_t i = 1; i < sessions.size(); ++i) {
      const Session& prev = *sessions[i - 1];
      const Session& cur = *sessions[i];
      const auto& h = cur.history;
      EXPECT_LE(h.size(), static_cast<std::size_t>(w.config.history_max));
      // The newest history entries are the previous session's G4 then G3.
      std::vector<std::int64_t> added = prev.tier(4);
      added.insert(added.end(), prev.tier(3).begin(), prev.tier(3).end());
      ASSERT_GE(h.size(), added.size());
      EXPECT_TRUE(std::equal(added.begin(), added.end(), h.end() - static_cast<std::ptrdiff_t>(added.size())));
    }
  }
}

TEST(Persistence, ItemsRoundTrip) {
  World w = generate_world(small_world());
  std::stringstream ss;
  write_items(ss, w, "abc");
  auto items = read_items(ss, "abc");
  ASSERT_EQ(items.size(), w.items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(items[i].item_id, w.items[i].item_id);
    EXPECT_EQ(items[i].cluster, w.items[i].cluster);
    EXPECT_TRUE(items[i].feature == w.items[i].feature);
    EXPECT_TRUE(items[i].latent == w.items[i].latent);
  }
}

TEST(Persistence, SessionsRoundTrip) {
  World w = generate_world(small_world());
  SessionLog log = generate_sessions(w);
  std::stringstream ss;
  write_sessions(ss, log, "abc");
  const std::string first = ss.str();
  SessionLog back = read_sessions(ss, "abc");
  ASSERT_EQ(back.train.size(), log.train.size());
  ASSERT_EQ(back.holdout.size(), log.holdout.size());
  for (std::size_t i = 0; i < log.train.size(); ++i) {
    EXPECT_EQ(back.train[i].user_id, log.train[i].user_id);
    EXPECT_EQ(back.train[i].history, log.train[i].history);
    EXPECT_EQ(back.train[i].tiers, log.train[i].tiers);
  }
  for (std::size_t i = 0; i < log.holdout.size(); ++i) EXPECT_EQ(back.holdout[i].tiers, log.holdout[i].tiers);
  std::ostringstream again;
  write_sessions(again, back, "abc");
  EXPECT_EQ(again.str(), first);
}

TEST(Persistence, SidsRoundTrip) {
  SidIndex idx(std::map<std::int64_t, SemanticId>{{3, SemanticId{{1, 2}}}, {9, SemanticId{{0, 5}}}});
  std::stringstream ss;
  write_sids(ss, idx, "xyz");
  SidIndex back = read_sids(ss, "xyz");
  EXPECT_EQ(back.items(), idx.items());
}

TEST(Persistence, DigestMismatchAborts) {
  World w = generate_world(small_world());
  std::stringstream ss;
  write_items(ss, w, "abc");
  try {
    read_items(ss, "def");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDigestMismatch);
  }
  std::stringstream junk("not a header\n");
  EXPECT_THROW(read_items(junk, ""), Error);
}

TEST(WorldConfig, Validation) {
  WorldConfig c = small_world();
  c.seed_pool = 1000;
  EXPECT_THROW(generate_world(c), Error);
  c = small_world();
  c.exposure_window = 1;  // narrower than the G2 count
  EXPECT_THROW(c.validate(), Error);
  c = small_world();
  c.n_items = 10;  // cannot fill every session
  EXPECT_THROW(generate_sessions(generate_world(c)), Error);
}
