#include "rgr/datagen.hpp"

#include <algorithm>
#include <cerrno>
#include <limits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "rgr/digest.hpp"
#include "rgr/error.hpp"

namespace rgr {

void WorldConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::kInvalidConfig, "world: " + what);
  };
  check(n_items >= 1 && n_users >= 1 && d_latent >= 1, "n_items, n_users, d_latent must be >= 1");
  check(n_clusters >= 1 && n_subclusters >= 1, "cluster counts must be >= 1");
  check(cluster_scale >= 0 && subcluster_scale >= 0 && item_scale >= 0 && feature_noise >= 0 &&
            user_noise >= 0 && drift >= 0 && affinity_noise >= 0,
        "scales must be >= 0");
  check(interests_per_user >= 1, "interests_per_user must be >= 1");
  check(sessions_per_user >= 1, "sessions_per_user must be >= 1");
  check(seed_history_min >= 1 && seed_history_max >= seed_history_min,
        "seed history range must satisfy 1 <= min <= max");
  check(seed_pool >= seed_history_max, "seed_pool must be >= seed_history_max");
  check(history_max >= 1, "history_max must be >= 1");
  int per_session = 0;
  for (int c : tier_counts) {
    check(c >= 0, "tier counts must be >= 0");
    per_session += c;
  }
  check(per_session >= 1, "tier counts must sum to >= 1");
  check(exposure_window >= count_for_tier(2), "exposure_window must be >= the G2 count");
  check(pseudo_window >= count_for_tier(1), "pseudo_window must be >= the G1 count");
  const long long span = static_cast<long long>(count_for_tier(4)) + count_for_tier(3) +
                         exposure_window + pseudo_window;
  check(static_cast<long long>(seed_pool) <= n_items, "seed_pool exceeds n_items");
  check(static_cast<long long>(seed_history_max) +
                static_cast<long long>(sessions_per_user - 1) * per_session + span <=
            n_items,
        "not enough items for every session of a user");
}

std::vector<ItemFeature> World::features() const {
  std::vector<ItemFeature> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back({it.item_id, it.feature});
  return out;
}

double World::affinity(const UserState& user, std::size_t item_index, int session) const {
  const FeatureVector& z = items[item_index].latent;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < user.interests.size(); ++k) {
    FeatureVector u = user.interests[k] + static_cast<double>(session) * user.drifts[k];
    best = std::min(best, (u - z).squaredNorm());
  }
  return -best;
}

namespace {

FeatureVector gaussian(std::mt19937_64& rng, int d, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureVector v(d);
  for (int i = 0; i < d; ++i) v(i) = normal(rng) * scale;
  return v;
}

}  // namespace

World generate_world(const WorldConfig& config) {
  config.validate();
  World world;
  world.config = config;
  const int d = config.d_latent;
  std::mt19937_64 rng(derive_seed(config.seed, "world"));

  std::vector<FeatureVector> subcentres;
  for (int c = 0; c < config.n_clusters; ++c) {
    FeatureVector centre = gaussian(rng, d, config.cluster_scale);
    for (int s = 0; s < config.n_subclusters; ++s)
      subcentres.push_back(centre + gaussian(rng, d, config.subcluster_scale));
  }

  std::uniform_int_distribution<int> pick_cluster(0, config.n_clusters - 1);
  std::uniform_int_distribution<int> pick_sub(0, config.n_subclusters - 1);
  world.items.reserve(static_cast<std::size_t>(config.n_items));
  for (int i = 0; i < config.n_items; ++i) {
    WorldItem item;
    item.item_id = i;
    item.cluster = pick_cluster(rng);
    item.subcluster = item.cluster * config.n_subclusters + pick_sub(rng);
    item.latent = subcentres[static_cast<std::size_t>(item.subcluster)] + gaussian(rng, d, config.item_scale);
    item.feature = item.latent;
    if (config.feature_noise > 0) item.feature += gaussian(rng, d, config.feature_noise);
    world.items.push_back(std::move(item));
  }

  std::uniform_int_distribution<std::size_t> pick_centre(0, subcentres.size() - 1);
  for (int u = 0; u < config.n_users; ++u) {
    std::mt19937_64 urng(derive_seed(derive_seed(config.seed, "user"), static_cast<std::uint64_t>(u)));
    UserState user;
    user.user_id = u;
    for (int k = 0; k < config.interests_per_user; ++k) {
      user.interests.push_back(subcentres[pick_centre(urng)] + gaussian(urng, d, config.user_noise));
      user.drifts.push_back(gaussian(urng, d, config.drift));
    }
    world.users.push_back(std::move(user));
  }
  return world;
}

namespace {

// Indices sorted by score descending, lowest index on ties.
std::vector<std::size_t> order_by_score(const std::vector<double>& score,
                                        const std::vector<std::size_t>& pool) {
  std::vector<std::size_t> order = pool;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

std::vector<std::int64_t> tail(const std::vector<std::int64_t>& v, int n) {
  const std::size_t keep = std::min(v.size(), static_cast<std::size_t>(n));
  return std::vector<std::int64_t>(v.end() - static_cast<std::ptrdiff_t>(keep), v.end());
}

// Sessions of one user given the initial history.
std::vector<Session> replay_sessions(std::int64_t user_id, const std::vector<std::int64_t>& seed,
                                     const std::vector<std::array<std::vector<std::int64_t>, kTierCount>>& tiers,
                                     int history_max) {
  std::vector<Session> out;
  std::vector<std::int64_t> hist = seed;
  for (std::size_t s = 0; s < tiers.size(); ++s) {
    Session session;
    session.user_id = user_id;
    session.timestamp = static_cast<int>(s) + 1;
    session.history = tail(hist, history_max);
    session.tiers = tiers[s];
    for (int k : {4, 3})
      for (auto id : session.tier(k)) hist.push_back(id);
    out.push_back(std::move(session));
  }
  return out;
}

}  // namespace

SessionLog generate_sessions(const World& world) {
  const WorldConfig& cfg = world.config;
  cfg.validate();
  const std::size_t n = world.items.size();
  SessionLog log;
  log.history_max = cfg.history_max;

  for (const auto& user : world.users) {
    std::mt19937_64 rng(
        derive_seed(derive_seed(cfg.seed, "sessions"), static_cast<std::uint64_t>(user.user_id)));
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<bool> seen(n, false);

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i)
      score[i] = cfg.random_tiers ? uniform(rng) : world.affinity(user, i, 0);
    std::vector<std::size_t> pool = order_by_score(score, all);
    pool.resize(static_cast<std::size_t>(cfg.seed_pool));
    std::shuffle(pool.begin(), pool.end(), rng);
    std::uniform_int_distribution<int> len(cfg.seed_history_min, cfg.seed_history_max);
    pool.resize(static_cast<std::size_t>(len(rng)));
    std::vector<std::int64_t> seed_history;
    for (std::size_t i : pool) {
      seed_history.push_back(world.items[i].item_id);
      seen[i] = true;
    }

    std::vector<std::array<std::vector<std::int64_t>, kTierCount>> tiers;
    for (int s = 1; s <= cfg.sessions_per_user; ++s) {
      std::vector<std::size_t> unseen;
      for (std::size_t i = 0; i < n; ++i) {
        if (seen[i]) continue;
        unseen.push_back(i);
        score[i] = cfg.random_tiers ? uniform(rng)
                                    : world.affinity(user, i, s) + cfg.affinity_noise * noise(rng);
      }
      std::vector<std::size_t> order = order_by_score(score, unseen);
      std::array<std::vector<std::int64_t>, kTierCount> t;
      std::size_t next = 0;
      for (int k = kTierCount; k >= 1; --k) {
        const int count = cfg.count_for_tier(k);
        const int window = k == 2 ? cfg.exposure_window : k == 1 ? cfg.pseudo_window : count;
        // Ranks next .. next + window - 1, choose `count` of them keeping rank order.
        std::vector<std::size_t> ranks(static_cast<std::size_t>(window));
        std::iota(ranks.begin(), ranks.end(), next);
        if (window > count) {
          std::shuffle(ranks.begin(), ranks.end(), rng);
          ranks.resize(static_cast<std::size_t>(count));
          std::sort(ranks.begin(), ranks.end());
        }
        for (std::size_t r : ranks) {
          std::size_t i = order[r];
          t[static_cast<std::size_t>(k - 1)].push_back(world.items[i].item_id);
          seen[i] = true;
        }
        next += static_cast<std::size_t>(window);
      }
      tiers.push_back(std::move(t));
    }

    auto sessions = replay_sessions(user.user_id, seed_history, tiers, cfg.history_max);
    log.seed_histories.emplace_back(user.user_id, std::move(seed_history));
    log.holdout.push_back(sessions.back());
    sessions.pop_back();
    for (auto& s : sessions) log.train.push_back(std::move(s));
  }
  return log;
}

SessionSample to_sample(const Session& session, const SidIndex& index) {
  SessionSample sample;
  sample.user_id = session.user_id;
  for (auto id : session.history) {
    require(index.contains_item(id), ErrorCode::kInvalidArgument,
            "session references unknown item " + std::to_string(id));
    sample.history.push_back(index.sid_of(id));
  }
  for (int k = 1; k <= kTierCount; ++k)
    for (auto id : session.tier(k)) {
      require(index.contains_item(id), ErrorCode::kInvalidArgument,
              "session references unknown item " + std::to_string(id));
      sample.tier(k).push_back(index.sid_of(id));
    }
  return sample;
}

// ---- persistence ------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

std::int64_t parse_int(const std::string& s, const std::string& what) {
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(s.c_str(), &end, 10);
  require(!s.empty() && end && *end == '\0' && errno == 0, ErrorCode::kFormatError,
          "bad integer for " + what + ": '" + s + "'");
  return v;
}

double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  require(!s.empty() && end && *end == '\0' && std::isfinite(v), ErrorCode::kFormatError,
          "bad number for " + what + ": '" + s + "'");
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Parses "#rgr-<kind>\tv1\tdigest=...\tkey=value..." and checks kind, version
// and digest. Returns the key=value fields.
std::map<std::string, std::string> read_header(std::istream& in, const std::string& kind,
                                               const std::string& expected_digest) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kFormatError,
          kind + ": missing header");
  auto fields = split_tabs(line);
  require(fields.size() >= 3 && fields[0] == "#rgr-" + kind, ErrorCode::kFormatError,
          kind + ": bad header line");
  require(fields[1] == "v1", ErrorCode::kFormatError, kind + ": unsupported version " + fields[1]);
  std::map<std::string, std::string> kv;
  for (std::size_t i = 2; i < fields.size(); ++i) {
    auto eq = fields[i].find('=');
    require(eq != std::string::npos, ErrorCode::kFormatError, kind + ": bad header field");
    kv[fields[i].substr(0, eq)] = fields[i].substr(eq + 1);
  }
  require(kv.count("digest") != 0, ErrorCode::kFormatError, kind + ": header lacks digest");
  if (!expected_digest.empty())
    require(kv["digest"] == expected_digest, ErrorCode::kDigestMismatch,
            kind + ": config digest " + kv["digest"] + " does not match " + expected_digest);
  return kv;
}

bool next_record(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    return true;
  }
  return false;
}

}  // namespace

std::string header_digest(const std::string& header_line) {
  for (const auto& f : split_tabs(header_line))
    if (f.rfind("digest=", 0) == 0) return f.substr(7);
  fail(ErrorCode::kFormatError, "header has no digest field");
}

void write_items(std::ostream& out, const World& world, const std::string& digest) {
  const int d = world.items.empty() ? 0 : static_cast<int>(world.items[0].feature.size());
  out << "#rgr-items\tv1\tdigest=" << digest << "\td=" << d << "\n";
  out << "#item_id\tcluster\tsubcluster\tfeature[0.." << d << ")\tlatent[0.." << d << ")\n";
  for (const auto& it : world.items) {
    out << it.item_id << '\t' << it.cluster << '\t' << it.subcluster;
    for (int i = 0; i < d; ++i) out << '\t' << format_double(it.feature(i));
    for (int i = 0; i < d; ++i) out << '\t' << format_double(it.latent(i));
    out << '\n';
  }
}

std::vector<WorldItem> read_items(std::istream& in, const std::string& expected_digest) {
  auto kv = read_header(in, "items", expected_digest);
  require(kv.count("d") != 0, ErrorCode::kFormatError, "items: header lacks d");
  const int d = static_cast<int>(parse_int(kv["d"], "d"));
  std::vector<WorldItem> items;
  std::string line;
  while (next_record(in, line)) {
    auto f = split_tabs(line);
    require(f.size() == static_cast<std::size_t>(3 + 2 * d), ErrorCode::kFormatError,
            "items: expected " + std::to_string(3 + 2 * d) + " columns");
    WorldItem it;
    it.item_id = parse_int(f[0], "item_id");
    it.cluster = static_cast<int>(parse_int(f[1], "cluster"));
    it.subcluster = static_cast<int>(parse_int(f[2], "subcluster"));
    it.feature.resize(d);
    it.latent.resize(d);
    for (int i = 0; i < d; ++i) {
      it.feature(i) = parse_double(f[static_cast<std::size_t>(3 + i)], "feature");
      it.latent(i) = parse_double(f[static_cast<std::size_t>(3 + d + i)], "latent");
    }
    items.push_back(std::move(it));
  }
  return items;
}

void write_sessions(std::ostream& out, const SessionLog& log, const std::string& digest) {
  out << "#rgr-sessions\tv1\tdigest=" << digest << "\thistory_max=" << log.history_max << "\n";
  out << "#user_id\ttimestamp\ttier\titem_id\n";
  std::map<std::int64_t, std::vector<const Session*>> by_user;
  for (const auto& s : log.train) by_user[s.user_id].push_back(&s);
  for (const auto& s : log.holdout) by_user[s.user_id].push_back(&s);
  for (const auto& [user, seed] : log.seed_histories) {
    for (auto id : seed) out << user << "\t0\t0\t" << id << '\n';
    for (const Session* s : by_user[user]) {
      for (int k = kTierCount; k >= 1; --k)
        for (auto id : s->tier(k)) out << user << '\t' << s->timestamp << '\t' << k << '\t' << id << '\n';
    }
  }
}

SessionLog read_sessions(std::istream& in, const std::string& expected_digest) {
  auto kv = read_header(in, "sessions", expected_digest);
  require(kv.count("history_max") != 0, ErrorCode::kFormatError, "sessions: header lacks history_max");
  SessionLog log;
  log.history_max = static_cast<int>(parse_int(kv["history_max"], "history_max"));
  require(log.history_max >= 1, ErrorCode::kFormatError, "sessions: history_max must be >= 1");

  struct UserRows {
    std::vector<std::int64_t> seed;
    std::map<int, std::array<std::vector<std::int64_t>, kTierCount>> sessions;
  };
  std::map<std::int64_t, UserRows> users;
  std::vector<std::int64_t> order;
  std::string line;
  while (next_record(in, line)) {
    auto f = split_tabs(line);
    require(f.size() == 4, ErrorCode::kFormatError, "sessions: expected 4 columns");
    auto user = parse_int(f[0], "user_id");
    auto ts = parse_int(f[1], "timestamp");
    auto tier = parse_int(f[2], "tier");
    auto item = parse_int(f[3], "item_id");
    if (users.find(user) == users.end()) order.push_back(user);
    auto& rows = users[user];
    if (ts == 0) {
      require(tier == 0, ErrorCode::kFormatError, "sessions: timestamp 0 rows must be tier 0");
      rows.seed.push_back(item);
    } else {
      require(ts > 0 && tier >= 1 && tier <= kTierCount, ErrorCode::kFormatError,
              "sessions: tier must be in 1..4 for timestamp > 0");
      rows.sessions[static_cast<int>(ts)][static_cast<std::size_t>(tier - 1)].push_back(item);
    }
  }
  for (auto user : order) {
    auto& rows = users[user];
    require(!rows.seed.empty(), ErrorCode::kFormatError,
            "sessions: user " + std::to_string(user) + " has no initial history");
    std::vector<std::array<std::vector<std::int64_t>, kTierCount>> tiers;
    int expect = 1;
    for (auto& [ts, t] : rows.sessions) {
      require(ts == expect++, ErrorCode::kFormatError, "sessions: timestamps must be 1..S without gaps");
      tiers.push_back(t);
    }
    require(!tiers.empty(), ErrorCode::kFormatError,
            "sessions: user " + std::to_string(user) + " has no sessions");
    auto sessions = replay_sessions(user, rows.seed, tiers, log.history_max);
    log.seed_histories.emplace_back(user, rows.seed);
    log.holdout.push_back(sessions.back());
    sessions.pop_back();
    for (auto& s : sessions) log.train.push_back(std::move(s));
  }
  return log;
}

void write_sids(std::ostream& out, const SidIndex& index, const std::string& digest) {
  const int m = index.size() == 0 ? 0 : index.items().begin()->second.levels();
  out << "#rgr-sids\tv1\tdigest=" << digest << "\tm=" << m << "\n";
  out << "#item_id\tcode[0.." << m << ")\n";
  for (const auto& [item, sid] : index.items()) {
    out << item;
    for (int c : sid.codes) out << '\t' << c;
    out << '\n';
  }
}

SidIndex read_sids(std::istream& in, const std::string& expected_digest) {
  auto kv = read_header(in, "sids", expected_digest);
  require(kv.count("m") != 0, ErrorCode::kFormatError, "sids: header lacks m");
  const int m = static_cast<int>(parse_int(kv["m"], "m"));
  std::map<std::int64_t, SemanticId> assignment;
  std::string line;
  while (next_record(in, line)) {
    auto f = split_tabs(line);
    require(f.size() == static_cast<std::size_t>(1 + m), ErrorCode::kFormatError,
            "sids: expected " + std::to_string(1 + m) + " columns");
    SemanticId sid;
    for (int l = 0; l < m; ++l)
      sid.codes.push_back(static_cast<int>(parse_int(f[static_cast<std::size_t>(1 + l)], "code")));
    auto item = parse_int(f[0], "item_id");
    require(assignment.emplace(item, std::move(sid)).second, ErrorCode::kFormatError,
            "sids: duplicate item " + std::to_string(item));
  }
  return SidIndex(assignment);
}

}  // namespace rgr
