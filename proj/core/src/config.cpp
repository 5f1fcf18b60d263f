#include "rgr/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "rgr/digest.hpp"
#include "rgr/error.hpp"

namespace rgr {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view what) {
  fail(ErrorCode::kInvalidConfig,
       "config: " + std::string(key) + " = '" + std::string(value) + "': expected " + std::string(what));
}

template <typename I>
I parse_integer(std::string_view key, std::string_view v) {
  I out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string_view> split_list(std::string_view key, std::string_view v) {
  std::vector<std::string_view> out;
  if (trim(v).empty()) bad_value(key, v, "a non-empty comma-separated list");
  std::size_t start = 0;
  while (true) {
    std::size_t comma = v.find(',', start);
    std::string_view item = trim(v.substr(start, comma == std::string_view::npos ? v.size() - start : comma - start));
    if (item.empty()) bad_value(key, v, "a comma-separated list without empty items");
    out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fmt(xs[i]);
  }
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
};

using Registry = std::map<std::string, Field, std::less<>>;

template <typename I, typename Ref>
Field integer(Ref ref) {
  return {[ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_integer<I>(k, v); }};
}

template <typename Ref>
Field real(Ref ref) {
  return {[ref](const RunConfig& c) { return format_real(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_real(k, v); }};
}

template <typename Ref>
Field boolean(Ref ref) {
  return {[ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [ref](RunConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_bool(k, v); }};
}

template <typename Ref>
Field int_list(Ref ref) {
  return {[ref](const RunConfig& c) {
            return join(ref(const_cast<RunConfig&>(c)), [](int x) { return std::to_string(x); });
          },
          [ref](RunConfig& c, std::string_view k, std::string_view v) {
            std::vector<int> out;
            for (auto item : split_list(k, v)) out.push_back(parse_integer<int>(k, item));
            ref(c) = std::move(out);
          }};
}

template <typename Ref>
Field real_list(Ref ref) {
  return {[ref](const RunConfig& c) { return join(ref(const_cast<RunConfig&>(c)), format_real); },
          [ref](RunConfig& c, std::string_view k, std::string_view v) {
            std::vector<double> out;
            for (auto item : split_list(k, v)) out.push_back(parse_real(k, item));
            ref(c) = std::move(out);
          }};
}

// Tier sets are written as the list of included tier numbers, e.g. "3,4".
template <typename Ref>
Field tier_set(Ref ref) {
  return {[ref](const RunConfig& c) {
            const auto& inc = ref(const_cast<RunConfig&>(c));
            std::vector<int> ks;
            for (int k = 1; k <= kTierCount; ++k)
              if (inc[static_cast<std::size_t>(k - 1)]) ks.push_back(k);
            return join(ks, [](int x) { return std::to_string(x); });
          },
          [ref](RunConfig& c, std::string_view k, std::string_view v) {
            std::array<bool, kTierCount> inc{false, false, false, false};
            for (auto item : split_list(k, v)) {
              int t = parse_integer<int>(k, item);
              if (t < 1 || t > kTierCount) bad_value(k, v, "tier numbers in 1..4");
              inc[static_cast<std::size_t>(t - 1)] = true;
            }
            ref(c) = inc;
          }};
}

Registry build_registry() {
  Registry r;
  r["run.seed"] = integer<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.seed; });

#define RGR_WORLD_INT(name) r["world." #name] = integer<int>([](RunConfig& c) -> int& { return c.world.name; })
#define RGR_WORLD_REAL(name) r["world." #name] = real([](RunConfig& c) -> double& { return c.world.name; })
  RGR_WORLD_INT(n_items);
  RGR_WORLD_INT(n_users);
  RGR_WORLD_INT(d_latent);
  RGR_WORLD_INT(n_clusters);
  RGR_WORLD_INT(n_subclusters);
  RGR_WORLD_REAL(cluster_scale);
  RGR_WORLD_REAL(subcluster_scale);
  RGR_WORLD_REAL(item_scale);
  RGR_WORLD_REAL(feature_noise);
  RGR_WORLD_INT(interests_per_user);
  RGR_WORLD_REAL(user_noise);
  RGR_WORLD_REAL(drift);
  RGR_WORLD_REAL(affinity_noise);
  RGR_WORLD_INT(sessions_per_user);
  RGR_WORLD_INT(seed_history_min);
  RGR_WORLD_INT(seed_history_max);
  RGR_WORLD_INT(seed_pool);
  RGR_WORLD_INT(history_max);
  RGR_WORLD_INT(exposure_window);
  RGR_WORLD_INT(pseudo_window);
#undef RGR_WORLD_INT
#undef RGR_WORLD_REAL
  r["world.random_tiers"] = boolean([](RunConfig& c) -> bool& { return c.world.random_tiers; });
  // Counts for G4, G3, G2, G1.
  r["world.tier_counts"] = {
      [](const RunConfig& c) {
        std::vector<int> v(c.world.tier_counts.begin(), c.world.tier_counts.end());
        return join(v, [](int x) { return std::to_string(x); });
      },
      [](RunConfig& c, std::string_view k, std::string_view v) {
        auto items = split_list(k, v);
        if (items.size() != kTierCount) bad_value(k, v, "four counts (G4,G3,G2,G1)");
        for (std::size_t i = 0; i < items.size(); ++i) c.world.tier_counts[i] = parse_integer<int>(k, items[i]);
      }};

  r["tokenizer.max_iterations"] = integer<int>([](RunConfig& c) -> int& { return c.tokenizer.max_iterations; });
  r["tokenizer.tolerance"] = real([](RunConfig& c) -> double& { return c.tokenizer.tolerance; });

  r["model.d_model"] = integer<int>([](RunConfig& c) -> int& { return c.model.d_model; });
  r["model.n_layers"] = integer<int>([](RunConfig& c) -> int& { return c.model.n_layers; });
  r["model.n_heads"] = integer<int>([](RunConfig& c) -> int& { return c.model.n_heads; });
  r["model.vocab_sizes"] = int_list([](RunConfig& c) -> std::vector<int>& { return c.model.vocab_sizes; });
  r["model.max_seq_len"] = integer<int>([](RunConfig& c) -> int& { return c.model.max_seq_len; });
  r["model.init_scale"] = real([](RunConfig& c) -> double& { return c.model.init_scale; });

  r["train.steps"] = integer<int>([](RunConfig& c) -> int& { return c.train.steps; });
  r["train.batch_size"] = integer<int>([](RunConfig& c) -> int& { return c.train.batch_size; });
  r["train.learning_rate"] = real([](RunConfig& c) -> double& { return c.train.learning_rate; });
  r["train.momentum"] = real([](RunConfig& c) -> double& { return c.train.momentum; });
  r["train.clip_norm"] = real([](RunConfig& c) -> double& { return c.train.clip_norm; });
  r["train.head_lr_scale"] = real([](RunConfig& c) -> double& { return c.train.head_lr_scale; });
  r["train.adam_beta1"] = real([](RunConfig& c) -> double& { return c.train.adam_beta1; });
  r["train.adam_beta2"] = real([](RunConfig& c) -> double& { return c.train.adam_beta2; });
  r["train.adam_eps"] = real([](RunConfig& c) -> double& { return c.train.adam_eps; });
  r["train.warmup_steps"] = integer<int>([](RunConfig& c) -> int& { return c.train.history_warmup_steps; });
  r["train.optimizer"] = {
      [](const RunConfig& c) { return std::string(optimizer_name(c.train.optimizer)); },
      [](RunConfig& c, std::string_view, std::string_view v) { c.train.optimizer = parse_optimizer(v); }};

  r["loss.alpha"] = real([](RunConfig& c) -> double& { return c.train.weights.alpha; });
  r["loss.beta"] = real([](RunConfig& c) -> double& { return c.train.weights.beta; });
  r["loss.normalize_ldpo"] = boolean([](RunConfig& c) -> bool& { return c.train.weights.normalize_ldpo; });
  r["loss.positives"] = tier_set([](RunConfig& c) -> std::array<bool, kTierCount>& {
    return c.train.rsp.positives.include;
  });

  r["rsp.lambdas"] = int_list([](RunConfig& c) -> std::vector<int>& { return c.train.rsp.lambdas; });
  r["rsp.temperature"] = real([](RunConfig& c) -> double& { return c.train.rsp.temperature; });
  r["rsp.last_only"] = boolean([](RunConfig& c) -> bool& { return c.train.rsp.last_only; });

  r["retrieval.lambdas"] = int_list([](RunConfig& c) -> std::vector<int>& { return c.retrieval.lambdas; });
  r["retrieval.beams"] = int_list([](RunConfig& c) -> std::vector<int>& { return c.retrieval.beams; });
  r["retrieval.temperature"] = real([](RunConfig& c) -> double& { return c.retrieval.temperature; });
  r["retrieval.constrain_to_corpus"] =
      boolean([](RunConfig& c) -> bool& { return c.retrieval.constrain_to_corpus; });
  r["retrieval.mode"] = {
      [](const RunConfig& c) { return std::string(rank_mode_name(c.retrieval.mode)); },
      [](RunConfig& c, std::string_view, std::string_view v) { c.retrieval.mode = parse_rank_mode(v); }};

  r["eval.ks"] = int_list([](RunConfig& c) -> std::vector<int>& { return c.eval.ks; });
  r["eval.replicates"] = integer<int>([](RunConfig& c) -> int& { return c.eval.replicates; });
  r["eval.alpha_values"] = real_list([](RunConfig& c) -> std::vector<double>& { return c.eval.alpha_values; });
  r["eval.lambda2_values"] = int_list([](RunConfig& c) -> std::vector<int>& { return c.eval.lambda2_values; });
  r["eval.variants"] = {
      [](const RunConfig& c) {
        return join(c.eval.variants, [](Variant v) { return std::string(variant_name(v)); });
      },
      [](RunConfig& c, std::string_view k, std::string_view v) {
        std::vector<Variant> out;
        for (auto item : split_list(k, v)) out.push_back(parse_variant(item));
        c.eval.variants = std::move(out);
      }};

#define RGR_SIM_INT(name) \
  r["serving." #name] = integer<std::int64_t>([](RunConfig& c) -> std::int64_t& { return c.serving.name; })
  RGR_SIM_INT(inference_latency_ms);
  RGR_SIM_INT(inference_jitter_ms);
  RGR_SIM_INT(window_ms);
  RGR_SIM_INT(cache_ttl_ms);
  RGR_SIM_INT(sync_period_ms);
  RGR_SIM_INT(duration_ms);
  RGR_SIM_INT(lookup_cost_ms);
  RGR_SIM_INT(write_cost_ms);
  RGR_SIM_INT(ingest_delay_ms);
#undef RGR_SIM_INT
  r["serving.request_rate"] = real([](RunConfig& c) -> double& { return c.serving.request_rate; });
  r["serving.workers"] = integer<int>([](RunConfig& c) -> int& { return c.serving.workers; });
  r["serving.stream_steps_per_sync"] =
      integer<int>([](RunConfig& c) -> int& { return c.serving.stream_steps_per_sync; });
  return r;
}

const Registry& registry() {
  static const Registry r = build_registry();
  return r;
}

const Field& field(std::string_view key) {
  const auto& r = registry();
  auto it = r.find(key);
  if (it == r.end()) fail(ErrorCode::kInvalidConfig, "config: unknown key '" + std::string(key) + "'");
  return it->second;
}

}  // namespace

void EvalConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::kInvalidConfig, "eval: " + what);
  };
  check(!ks.empty(), "ks must be non-empty");
  for (int k : ks) check(k >= 1, "every K must be >= 1");
  check(replicates >= 1, "replicates must be >= 1");
  check(!variants.empty(), "variants must be non-empty");
  for (double a : alpha_values) check(a >= 0 && std::isfinite(a), "alpha values must be >= 0");
  for (int l : lambda2_values) check(l >= 1, "lambda2 values must be >= 1");
}

void RunConfig::set(std::string_view key, std::string_view value) {
  field(key).set(*this, key, trim(value));
}

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : registry()) out.push_back(k);
  return out;
}

void RunConfig::validate() const {
  world.validate();
  model.validate();
  train.validate(model);
  eval.validate();
  resolved_serving().validate();
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::kInvalidConfig, "config: " + what);
  };
  check(tokenizer.max_iterations >= 1, "tokenizer.max_iterations must be >= 1");
  check(tokenizer.tolerance >= 0, "tokenizer.tolerance must be >= 0");
  const int m = model.levels();
  check(static_cast<int>(retrieval.lambdas.size()) == m, "retrieval.lambdas needs one entry per level");
  check(static_cast<int>(retrieval.beams.size()) == m, "retrieval.beams needs one entry per level");
  for (int x : retrieval.lambdas) check(x >= 1, "retrieval.lambdas must be >= 1");
  for (int x : retrieval.beams) check(x >= 1, "retrieval.beams must be >= 1");
  check(retrieval.temperature > 0, "retrieval.temperature must be > 0");
  long long capacity = 1;
  for (int v : model.vocab_sizes) capacity = std::min<long long>(capacity * v, 1LL << 40);
  check(world.n_items <= capacity, "world.n_items exceeds the SID capacity of model.vocab_sizes");
  int per_session = 0;
  for (int c : world.tier_counts) per_session += c;
  check(1 + m * (1 + per_session) <= model.max_seq_len,
        "model.max_seq_len cannot hold one history item plus every target of a session");
  check(1 + m * (world.history_max + 1) <= model.max_seq_len,
        "model.max_seq_len cannot hold a full history plus one decoded item");
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, f] : registry()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

std::string RunConfig::digest() const { return Fnv1a().str(canonical()).hex(); }

std::uint64_t RunConfig::world_seed() const { return derive_seed(seed, "world"); }
std::uint64_t RunConfig::tokenizer_seed() const { return derive_seed(seed, "tokenizer"); }
std::uint64_t RunConfig::train_seed(int replicate) const {
  return derive_seed(derive_seed(seed, "train"), static_cast<std::uint64_t>(replicate));
}
std::uint64_t RunConfig::serving_seed() const { return derive_seed(seed, "serving"); }

WorldConfig RunConfig::resolved_world() const {
  WorldConfig w = world;
  w.seed = world_seed();
  return w;
}

SimConfig RunConfig::resolved_serving() const {
  SimConfig s = serving;
  s.n_users = world.n_users;
  s.seed = serving_seed();
  return s;
}

RunConfig parse_config(std::istream& in, RunConfig base) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    auto eq = s.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorCode::kInvalidConfig, "config: line " + std::to_string(lineno) + ": expected key = value");
    base.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIoError, "cannot open config " + path);
  return parse_config(in, std::move(base));
}

}  // namespace rgr
