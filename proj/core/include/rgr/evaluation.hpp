#pragma once

// Hit-rate metrics over held-out sessions, plus the ablation and sweep
// harnesses that train variants on shared data and seeds.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rgr/config.hpp"
#include "rgr/datagen.hpp"
#include "rgr/inference.hpp"
#include "rgr/sid_tokenizer.hpp"
#include "rgr/trainer.hpp"

namespace rgr {

// Mean over users with non-empty truth of |top-K ∩ truth| / |truth|.
double hit_rate_at_k(const std::vector<std::vector<std::int64_t>>& ranked,
                     const std::vector<std::vector<std::int64_t>>& truth, int k);

enum class TruthTier {
  kClick,     // G4 ∪ G3
  kPageView,  // G4 ∪ G3 ∪ G2
};

std::string_view truth_tier_name(TruthTier tier);
std::vector<std::int64_t> truth_items(const Session& session, TruthTier tier);

struct MetricRow {
  std::string label;
  std::string tier;
  int k = 0;
  std::vector<double> values;  // one per replicate
  double mean = 0;
  double sd = 0;  // sample sd (n - 1), 0 for a single value
};

struct MetricsReport {
  std::string kind;
  std::string config_digest;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricRow> rows;
  std::map<std::string, std::string> notes;  // extra key=value facts

  const MetricRow* find(const std::string& label, const std::string& tier, int k) const;
  std::string to_tsv() const;
  // Sorted key=value lines.
  std::string summary() const;
};

struct MeanSd {
  double mean = 0;
  double sd = 0;
};
MeanSd mean_sd(const std::vector<double>& values);

// HR@K for the Click and PV truth tiers, one row per (tier, K).
MetricsReport tiered_report(const std::vector<RetrievalResult>& results,
                            const std::vector<Session>& holdout, const std::vector<int>& ks,
                            const std::string& label = "model");

// Data shared by every model of one run.
struct Experiment {
  RunConfig config;
  World world;
  SessionLog log;
  Codebooks codebooks;
  SidIndex index;
  std::vector<SessionSample> train_samples;
  std::vector<std::vector<SemanticId>> holdout_histories;
};

Experiment prepare_experiment(const RunConfig& config);

// Rank-head variants decode with beam_search in options.mode; the others
// with iap_only_rank over options.beams. Users run in parallel.
std::vector<RetrievalResult> retrieve_all(const Experiment& exp, const TrainedModel& model,
                                          const BeamOptions& options);

// Trains on demand and keeps models keyed by (variant, alpha, replicate).
class ModelCache {
 public:
  explicit ModelCache(const Experiment& exp) : exp_(exp) {}
  const TrainedModel& get(Variant variant, double alpha, int replicate);
  std::size_t size() const { return models_.size(); }

 private:
  struct Key {
    Variant variant;
    double alpha;
    int replicate;
    bool operator<(const Key& o) const {
      if (variant != o.variant) return variant < o.variant;
      if (alpha != o.alpha) return alpha < o.alpha;
      return replicate < o.replicate;
    }
  };
  const Experiment& exp_;
  std::map<Key, TrainedModel> models_;
};

// Digest over every step's batch digest of a trained model.
std::string schedule_digest(const TrainedModel& model);

MetricsReport run_ablation(const Experiment& exp, ModelCache& cache);
MetricsReport alpha_sweep(const Experiment& exp, ModelCache& cache, const std::vector<double>& alphas);
// Full models at the configured alpha; only the retrieval lambda of the last
// level changes.
MetricsReport lambda2_sweep(const Experiment& exp, ModelCache& cache, const std::vector<int>& lambdas);

}  // namespace rgr
