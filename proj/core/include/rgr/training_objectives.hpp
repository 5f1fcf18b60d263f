#pragma once

// Multi-target training layout, block attention mask, item scores and the
// IAP objectives (next-token prediction over the positive tiers plus the
// listwise preference loss).

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "rgr/neural_core.hpp"
#include "rgr/sid_tokenizer.hpp"

namespace rgr {

// Feedback tiers, weakest to strongest. Tier k corresponds to G_k.
enum class Tier : int {
  kPseudoExposure = 1,
  kExposure = 2,
  kClick = 3,
  kPurchase = 4,
};
constexpr int kTierCount = 4;

struct SessionSample {
  std::int64_t user_id = 0;
  std::vector<SemanticId> history;  // oldest first
  // tiers[k - 1] holds G_k.
  std::array<std::vector<SemanticId>, kTierCount> tiers;

  std::vector<SemanticId>& tier(int k) { return tiers[static_cast<std::size_t>(k - 1)]; }
  const std::vector<SemanticId>& tier(int k) const { return tiers[static_cast<std::size_t>(k - 1)]; }
  std::size_t target_count() const;
  void validate(const ModelConfig& config) const;
};

enum class SegmentKind { kBos, kHistory, kTarget };

struct Segment {
  SegmentKind kind = SegmentKind::kHistory;
  int tier = 0;   // target only
  int index = 0;  // target only: position within its tier list
  bool operator==(const Segment&) const = default;
};

struct TargetSpan {
  int tier = 0;
  int index = 0;
  int begin = 0;  // first token position
  SemanticId sid;
};

struct TrainingLayout {
  std::vector<int> tokens;
  std::vector<int> positions;  // target spans restart right after the history
  std::vector<Segment> segments;
  std::vector<TargetSpan> spans;
  int prefix_length = 0;  // BOS + history tokens
  AttentionMask mask;

  int size() const { return static_cast<int>(tokens.size()); }
  const TargetSpan* find_span(int tier, int index) const;
  // Position whose hidden state predicts level `level` of `span`: the last
  // history token for level 0, else the span's previous token.
  int predictor_position(const TargetSpan& span, int level) const;
};

// Which tiers enter a layout. Tiers not listed are dropped before layout.
struct LayoutTiers {
  std::array<bool, kTierCount> include{true, true, true, true};
  bool has(int k) const { return include[static_cast<std::size_t>(k - 1)]; }
};

TrainingLayout build_layout(const SessionSample& sample, const ModelConfig& config,
                            const LayoutTiers& tiers = {});

// mask[i][j] allowed iff j <= i and (j is BOS/history, or i and j share a
// target span).
AttentionMask build_mask(const TrainingLayout& layout);

// Drops the oldest history items until the layout fits max_seq_len.
SessionSample truncate_history(const SessionSample& sample, const ModelConfig& config,
                               const LayoutTiers& tiers = {});

struct LossWeights {
  double alpha = 1.0;  // LDPO weight
  double beta = 1.0;   // LDPO sharpness
  bool normalize_ldpo = true;  // divide by the number of winner terms
  void validate() const;
};

// pi(p) per span (n_spans x 1 column, layout span order).
template <typename T>
ad::Var<T> item_scores(const ForwardTrace<T>& trace, const TrainingLayout& layout,
                       const ModelConfig& config);

template <typename T>
ad::Var<T> item_score(const ForwardTrace<T>& trace, const TrainingLayout& layout,
                      const ModelConfig& config, const TargetSpan& span);

// Per-tier lists of item scores; scores[k - 1] holds G_k.
using TierScores = std::array<std::vector<double>, kTierCount>;

struct LdpoValue {
  double value = 0;
  bool skipped = false;  // no tier pair had both sides populated
};

LdpoValue ldpo_loss(const TierScores& scores, double beta, bool normalize = false);

template <typename T>
struct GraphLdpo {
  ad::Var<T> value;
  bool skipped = false;
};

// Graph form over a pi column; tier of row i is `tiers[i]`.
template <typename T>
GraphLdpo<T> ldpo_loss(ad::Tape<T>& tape, ad::Var<T> scores, const std::vector<int>& tiers,
                       const LossWeights& weights);

// Which tiers count as NTP positives.
struct PositiveTiers {
  std::array<bool, kTierCount> include{true, true, true, true};
  bool has(int k) const { return include[static_cast<std::size_t>(k - 1)]; }
};

// Mean over all codeword tokens of positive target spans of -log P.
template <typename T>
ad::Var<T> ntp_loss(ad::Tape<T>& tape, const ForwardTrace<T>& trace, const TrainingLayout& layout,
                    const ModelConfig& config, const PositiveTiers& positives = {});

template <typename T>
struct IapLoss {
  ad::Var<T> total;
  ad::Var<T> ntp;
  std::optional<ad::Var<T>> ldpo;  // absent when alpha == 0 or skipped
  ad::Var<T> scores;               // pi column
};

template <typename T>
IapLoss<T> iap_loss(ad::Tape<T>& tape, const ForwardTrace<T>& trace, const TrainingLayout& layout,
                    const ModelConfig& config, const LossWeights& weights,
                    const PositiveTiers& positives = {});

}  // namespace rgr
