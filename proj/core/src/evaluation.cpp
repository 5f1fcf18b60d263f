#include "rgr/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>

#include "rgr/digest.hpp"
#include "rgr/error.hpp"
#include "rgr/parallel.hpp"

namespace rgr {

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string shortest(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

constexpr TruthTier kTiers[] = {TruthTier::kClick, TruthTier::kPageView};

// values[tier][k] for one retrieval run.
std::vector<std::vector<double>> tier_values(const std::vector<RetrievalResult>& results,
                                             const std::vector<Session>& holdout,
                                             const std::vector<int>& ks) {
  require(results.size() == holdout.size(), ErrorCode::kDimensionError,
          "evaluation: one result per held-out session required");
  std::vector<std::vector<std::int64_t>> ranked;
  ranked.reserve(results.size());
  for (const auto& r : results) ranked.push_back(r.item_ids());
  std::vector<std::vector<double>> out;
  for (TruthTier t : kTiers) {
    std::vector<std::vector<std::int64_t>> truth;
    truth.reserve(holdout.size());
    for (const auto& s : holdout) truth.push_back(truth_items(s, t));
    std::vector<double> row;
    for (int k : ks) row.push_back(hit_rate_at_k(ranked, truth, k));
    out.push_back(std::move(row));
  }
  return out;
}

// Appends rows for one label given values[replicate][tier][k].
void add_rows(MetricsReport& report, const std::string& label,
              const std::vector<std::vector<std::vector<double>>>& per_rep, const std::vector<int>& ks) {
  for (std::size_t t = 0; t < std::size(kTiers); ++t) {
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      MetricRow row;
      row.label = label;
      row.tier = std::string(truth_tier_name(kTiers[t]));
      row.k = ks[ki];
      for (const auto& rep : per_rep) row.values.push_back(rep[t][ki]);
      MeanSd ms = mean_sd(row.values);
      row.mean = ms.mean;
      row.sd = ms.sd;
      report.rows.push_back(std::move(row));
    }
  }
}

MetricsReport new_report(const Experiment& exp, const std::string& kind) {
  MetricsReport r;
  r.kind = kind;
  r.config_digest = exp.config.digest();
  for (int i = 0; i < exp.config.eval.replicates; ++i) r.seeds.push_back(exp.config.train_seed(i));
  return r;
}

}  // namespace

double hit_rate_at_k(const std::vector<std::vector<std::int64_t>>& ranked,
                     const std::vector<std::vector<std::int64_t>>& truth, int k) {
  require(ranked.size() == truth.size(), ErrorCode::kDimensionError,
          "hit_rate_at_k: results and truth must align per user");
  require(k >= 1, ErrorCode::kInvalidArgument, "hit_rate_at_k: K must be >= 1");
  double total = 0;
  std::size_t users = 0;
  for (std::size_t u = 0; u < ranked.size(); ++u) {
    const std::set<std::int64_t> t(truth[u].begin(), truth[u].end());
    if (t.empty()) continue;
    const std::size_t top = std::min<std::size_t>(ranked[u].size(), static_cast<std::size_t>(k));
    std::set<std::int64_t> seen;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < top; ++i)
      if (t.count(ranked[u][i]) && seen.insert(ranked[u][i]).second) ++hits;
    total += static_cast<double>(hits) / static_cast<double>(t.size());
    ++users;
  }
  return users == 0 ? 0.0 : total / static_cast<double>(users);
}

std::string_view truth_tier_name(TruthTier tier) {
  return tier == TruthTier::kClick ? "click" : "pv";
}

std::vector<std::int64_t> truth_items(const Session& session, TruthTier tier) {
  std::vector<std::int64_t> out = session.tier(4);
  out.insert(out.end(), session.tier(3).begin(), session.tier(3).end());
  if (tier == TruthTier::kPageView) out.insert(out.end(), session.tier(2).begin(), session.tier(2).end());
  return out;
}

MeanSd mean_sd(const std::vector<double>& values) {
  MeanSd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

const MetricRow* MetricsReport::find(const std::string& label, const std::string& tier, int k) const {
  for (const auto& r : rows)
    if (r.label == label && r.tier == tier && r.k == k) return &r;
  return nullptr;
}

std::string MetricsReport::to_tsv() const {
  std::string out = "label\ttier\tk\tmean\tsd\tn\tvalues\n";
  for (const auto& r : rows) {
    out += r.label + "\t" + r.tier + "\t" + std::to_string(r.k) + "\t" + fixed6(r.mean) + "\t" +
           fixed6(r.sd) + "\t" + std::to_string(r.values.size()) + "\t";
    for (std::size_t i = 0; i < r.values.size(); ++i) out += (i ? "," : "") + fixed6(r.values[i]);
    out += "\n";
  }
  return out;
}

std::string MetricsReport::summary() const {
  std::map<std::string, std::string> kv = notes;
  kv["kind"] = kind;
  kv["config_digest"] = config_digest;
  std::string seeds_s;
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds_s += (i ? "," : "") + std::to_string(seeds[i]);
  kv["seeds"] = seeds_s;
  for (const auto& r : rows) {
    const std::string base = r.label + "." + r.tier + ".hr@" + std::to_string(r.k);
    kv[base + ".mean"] = fixed6(r.mean);
    kv[base + ".sd"] = fixed6(r.sd);
  }
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

MetricsReport tiered_report(const std::vector<RetrievalResult>& results,
                            const std::vector<Session>& holdout, const std::vector<int>& ks,
                            const std::string& label) {
  MetricsReport report;
  report.kind = "eval";
  add_rows(report, label, {tier_values(results, holdout, ks)}, ks);
  return report;
}

Experiment prepare_experiment(const RunConfig& config) {
  config.validate();
  Experiment exp{config, generate_world(config.resolved_world()), {}, {}, {}, {}, {}};
  const auto features = exp.world.features();
  exp.codebooks = train_codebooks(features, config.model.vocab_sizes, config.tokenizer_seed(), config.tokenizer);
  exp.index = SidIndex(assign_corpus(features, exp.codebooks));
  exp.log = generate_sessions(exp.world);
  exp.train_samples.reserve(exp.log.train.size());
  for (const auto& s : exp.log.train) exp.train_samples.push_back(to_sample(s, exp.index));
  for (const auto& s : exp.log.holdout) exp.holdout_histories.push_back(to_sample(s, exp.index).history);
  return exp;
}

std::vector<RetrievalResult> retrieve_all(const Experiment& exp, const TrainedModel& model,
                                          const BeamOptions& options) {
  const bool rerank = model.head.has_value() && options.mode != RankMode::kIapOnly;
  std::vector<RetrievalResult> out(exp.holdout_histories.size());
  parallel_for(out.size(), [&](std::size_t u) {
    FlushDenormals ftz;
    const auto& hist = exp.holdout_histories[u];
    out[u] = rerank ? beam_search(hist, model.backbone, &*model.head, exp.index, options)
                    : iap_only_rank(hist, model.backbone, exp.index, options.beams, options.temperature);
  });
  return out;
}

const TrainedModel& ModelCache::get(Variant variant, double alpha, int replicate) {
  Key key{variant, alpha, replicate};
  auto it = models_.find(key);
  if (it != models_.end()) return it->second;
  TrainConfig tc = exp_.config.train;
  tc.weights.alpha = alpha;
  TrainedModel m = train_model(exp_.train_samples, exp_.config.model, tc, variant,
                               exp_.config.train_seed(replicate));
  return models_.emplace(key, std::move(m)).first->second;
}

std::string schedule_digest(const TrainedModel& model) {
  Fnv1a h;
  for (const auto& s : model.log) h.str(s.batch_digest);
  return h.hex();
}

MetricsReport run_ablation(const Experiment& exp, ModelCache& cache) {
  const auto& cfg = exp.config;
  MetricsReport report = new_report(exp, "ablation");
  for (Variant v : cfg.eval.variants) {
    std::vector<std::vector<std::vector<double>>> per_rep;
    for (int r = 0; r < cfg.eval.replicates; ++r) {
      const TrainedModel& m = cache.get(v, cfg.train.weights.alpha, r);
      per_rep.push_back(tier_values(retrieve_all(exp, m, cfg.retrieval), exp.log.holdout, cfg.eval.ks));
      report.notes["batches." + std::string(variant_name(v)) + "." + std::to_string(r)] = schedule_digest(m);
    }
    add_rows(report, std::string(variant_name(v)), per_rep, cfg.eval.ks);
  }
  return report;
}

MetricsReport alpha_sweep(const Experiment& exp, ModelCache& cache, const std::vector<double>& alphas) {
  const auto& cfg = exp.config;
  MetricsReport report = new_report(exp, "sweep-alpha");
  for (double a : alphas) {
    std::vector<std::vector<std::vector<double>>> per_rep;
    for (int r = 0; r < cfg.eval.replicates; ++r) {
      const TrainedModel& m = cache.get(Variant::kFull, a, r);
      per_rep.push_back(tier_values(retrieve_all(exp, m, cfg.retrieval), exp.log.holdout, cfg.eval.ks));
    }
    add_rows(report, "alpha=" + shortest(a), per_rep, cfg.eval.ks);
  }
  return report;
}

MetricsReport lambda2_sweep(const Experiment& exp, ModelCache& cache, const std::vector<int>& lambdas) {
  const auto& cfg = exp.config;
  require(cfg.model.levels() >= 2, ErrorCode::kInvalidConfig, "lambda2 sweep needs at least two levels");
  MetricsReport report = new_report(exp, "sweep-lambda2");
  for (int lam : lambdas) {
    require(lam >= 1, ErrorCode::kInvalidConfig, "lambda2 values must be >= 1");
    BeamOptions opts = cfg.retrieval;
    opts.lambdas.back() = lam;
    std::vector<std::vector<std::vector<double>>> per_rep;
    for (int r = 0; r < cfg.eval.replicates; ++r) {
      const TrainedModel& m = cache.get(Variant::kFull, cfg.train.weights.alpha, r);
      per_rep.push_back(tier_values(retrieve_all(exp, m, opts), exp.log.holdout, cfg.eval.ks));
    }
    add_rows(report, "lambda2=" + std::to_string(lam), per_rep, cfg.eval.ks);
  }
  return report;
}

}  // namespace rgr
