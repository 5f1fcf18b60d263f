#pragma once

// Synthetic world: hierarchical item clusters, multi-interest users with
// drift, and sessions whose four feedback tiers follow the latent affinity.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rgr/sid_tokenizer.hpp"
#include "rgr/training_objectives.hpp"

namespace rgr {

struct WorldConfig {
  int n_items = 2000;
  int n_users = 500;
  int d_latent = 16;
  int n_clusters = 32;
  int n_subclusters = 4;        // per cluster
  double cluster_scale = 3.0;   // spread of cluster centres
  double subcluster_scale = 1.0;
  double item_scale = 0.35;
  double feature_noise = 0.05;  // sigma_f
  int interests_per_user = 2;
  double user_noise = 0.3;
  double drift = 0.08;          // per-session drift step scale
  double affinity_noise = 0.1;
  int sessions_per_user = 8;
  int seed_history_min = 4;     // initial history length range
  int seed_history_max = 8;
  int seed_pool = 40;           // initial history drawn from this many top items
  int history_max = 20;
  // Items per session for G4, G3, G2, G1.
  std::array<int, kTierCount> tier_counts{1, 2, 3, 4};
  // G2 is drawn from the next `exposure_window` affinity ranks after G3, G1
  // from the `pseudo_window` ranks after that. A window equal to the tier
  // count makes the tiers contiguous.
  int exposure_window = 20;
  int pseudo_window = 200;
  bool random_tiers = false;    // null world: tiers ignore affinity
  std::uint64_t seed = 7;

  int count_for_tier(int k) const { return tier_counts[static_cast<std::size_t>(kTierCount - k)]; }
  void validate() const;
};

struct WorldItem {
  std::int64_t item_id = 0;
  int cluster = 0;
  int subcluster = 0;  // global index, cluster * n_subclusters + local
  FeatureVector latent;
  FeatureVector feature;
};

struct UserState {
  std::int64_t user_id = 0;
  std::vector<FeatureVector> interests;
  std::vector<FeatureVector> drifts;
};

struct World {
  WorldConfig config;
  std::vector<WorldItem> items;
  std::vector<UserState> users;

  std::vector<ItemFeature> features() const;
  // Noise-free affinity of item `item_index` for `user` at session `session`.
  double affinity(const UserState& user, std::size_t item_index, int session) const;
};

World generate_world(const WorldConfig& config);

// Item-level session record. Timestamp 0 holds the initial history
// (tier 0); sessions 1..S carry the four tiers.
struct Session {
  std::int64_t user_id = 0;
  int timestamp = 0;
  std::vector<std::int64_t> history;  // oldest first, at most history_max
  std::array<std::vector<std::int64_t>, kTierCount> tiers;  // tiers[k - 1] = G_k

  const std::vector<std::int64_t>& tier(int k) const { return tiers[static_cast<std::size_t>(k - 1)]; }
  std::vector<std::int64_t>& tier(int k) { return tiers[static_cast<std::size_t>(k - 1)]; }
};

struct SessionLog {
  std::vector<Session> train;    // every session except each user's last
  std::vector<Session> holdout;  // last session per user
  // Initial histories per user in user order, kept for serialization.
  std::vector<std::pair<std::int64_t, std::vector<std::int64_t>>> seed_histories;
  int history_max = 20;
};

SessionLog generate_sessions(const World& world);

// SID form of a session for training or retrieval.
SessionSample to_sample(const Session& session, const SidIndex& index);

// ---- persistence ------------------------------------------------------------

void write_items(std::ostream& out, const World& world, const std::string& digest);
std::vector<WorldItem> read_items(std::istream& in, const std::string& expected_digest);

void write_sessions(std::ostream& out, const SessionLog& log, const std::string& digest);
SessionLog read_sessions(std::istream& in, const std::string& expected_digest);

void write_sids(std::ostream& out, const SidIndex& index, const std::string& digest);
SidIndex read_sids(std::istream& in, const std::string& expected_digest);

// Reads the `digest=` field of an artifact header line.
std::string header_digest(const std::string& header_line);

}  // namespace rgr
