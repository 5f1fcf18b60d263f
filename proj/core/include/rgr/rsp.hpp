#pragma once

// Refined scoring: top-lambda codeword selection from the generative head,
// then a small target-attention rank head that rescores each candidate
// against the visible hidden states.

#include <cstdint>
#include <vector>

#include "rgr/neural_core.hpp"
#include "rgr/training_objectives.hpp"

namespace rgr {

inline constexpr double kProbClamp = 1e-7;

struct CandidateSet {
  int level = 0;
  std::vector<int> codes;         // descending probability, lowest id on ties
  std::vector<double> iap_probs;  // tempered softmax mass of each code
  std::vector<double> rsp_scores; // filled by the caller when scored
};

// Top-min(lambda, V) codes of a probability vector, sorted by probability
// then code id.
CandidateSet top_candidates(const std::vector<double>& probs, int level, int lambda);

// Softmax over logits / temperature.
std::vector<double> tempered_softmax(const std::vector<double>& logits, double temperature);

template <typename T>
CandidateSet select_candidates(const Backbone<T>& model, const RowVector<T>& hidden, int level,
                               int lambda, double temperature = 1.0);

// Positions visible from `position` under the layout mask, in order.
std::vector<int> hidden_set(const TrainingLayout& layout, int position);

// Parameter names (rank_head.*): wq, wk, wv (d x d), w1 (d x d),
// b1 (1 x d), w2 (d x 1), b2 (1 x 1).
template <typename T>
class RankHead {
 public:
  RankHead(int d_model, std::uint64_t seed, double init_scale = 0.02);
  RankHead(int d_model, ParameterSet<T> params);

  int d_model() const { return d_model_; }
  const ParameterSet<T>& params() const { return params_; }
  ParameterSet<T>& params() { return params_; }

  static ParameterSet<T> empty_like(int d_model);

  template <typename U>
  RankHead<U> cast() const {
    return RankHead<U>(d_model_, params_.template cast<U>());
  }

 private:
  int d_model_;
  ParameterSet<T> params_;
};

// Graph form. queries: k x d candidate embeddings; keys/values: the projected
// hidden set (n x d each, already multiplied by wk / wv). Returns k x 1
// pre-sigmoid logits.
template <typename T>
ad::Var<T> rank_logits(const Binding<T>& head, ad::Var<T> queries, ad::Var<T> keys,
                       ad::Var<T> values);

// Numeric form for one candidate embedding against hidden rows H (n x d).
// Returns s clamped to [kProbClamp, 1 - kProbClamp].
template <typename T>
double rank_score(const RowVector<T>& candidate_embedding, const Matrix<T>& hidden_rows,
                  const RankHead<T>& head);

// Batched numeric scoring: every row of `embeddings` against the same H.
template <typename T>
std::vector<double> rank_scores(const Matrix<T>& embeddings, const Matrix<T>& hidden_rows,
                                const RankHead<T>& head);

// Mean binary cross-entropy with probability clamping.
double bce_loss(const std::vector<double>& scores, const std::vector<int>& labels,
                double eps = kProbClamp);

struct RspTrainOptions {
  std::vector<int> lambdas{32, 64};
  double temperature = 1.0;
  bool last_only = false;  // score only the last positive span of the layout
  PositiveTiers positives;
};

template <typename T>
struct RspLoss {
  ad::Var<T> value;  // mean BCE
  int scored = 0;    // number of (candidate, label) entries
};

// BCE over the candidate sets of every positive target span and level. The true
// code is appended to the candidate list when selection missed it.
template <typename T>
RspLoss<T> rsp_bce_loss(ad::Tape<T>& tape, const ForwardTrace<T>& trace,
                        const TrainingLayout& layout, const ModelConfig& config,
                        const Binding<T>& head, const RspTrainOptions& options);

template <typename T>
struct TotalLoss {
  IapLoss<T> iap;
  RspLoss<T> rsp;
  ad::Var<T> total;  // BCE + IAP
};

template <typename T>
TotalLoss<T> total_loss(ad::Tape<T>& tape, const ForwardTrace<T>& trace,
                        const TrainingLayout& layout, const ModelConfig& config,
                        const LossWeights& weights, const Binding<T>& head,
                        const RspTrainOptions& options);

}  // namespace rgr
