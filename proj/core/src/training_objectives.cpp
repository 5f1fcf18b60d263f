#include "rgr/training_objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rgr/error.hpp"

namespace rgr {

std::size_t SessionSample::target_count() const {
  std::size_t n = 0;
  for (const auto& t : tiers) n += t.size();
  return n;
}

void SessionSample::validate(const ModelConfig& config) const {
  require(!history.empty(), ErrorCode::kEmptyHistory, "sample: history must be non-empty");
  require(target_count() > 0, ErrorCode::kInvalidArgument, "sample: all tiers empty");
  auto check = [&](const SemanticId& sid) {
    require(sid.levels() == config.levels(), ErrorCode::kDimensionError,
            "sample: SID " + to_string(sid) + " has wrong length");
    for (int l = 0; l < sid.levels(); ++l)
      require(sid[l] >= 0 && sid[l] < config.vocab_sizes[static_cast<std::size_t>(l)],
              ErrorCode::kInvalidArgument, "sample: SID " + to_string(sid) + " out of range");
  };
  for (const auto& sid : history) check(sid);
  for (const auto& t : tiers)
    for (const auto& sid : t) check(sid);
}

const TargetSpan* TrainingLayout::find_span(int tier, int index) const {
  for (const auto& s : spans)
    if (s.tier == tier && s.index == index) return &s;
  return nullptr;
}

int TrainingLayout::predictor_position(const TargetSpan& span, int level) const {
  return level == 0 ? prefix_length - 1 : span.begin + level - 1;
}

namespace {

std::size_t layout_tokens(const SessionSample& sample, int m, const LayoutTiers& tiers) {
  std::size_t n = 1 + sample.history.size() * static_cast<std::size_t>(m);
  for (int k = 1; k <= kTierCount; ++k)
    if (tiers.has(k)) n += sample.tier(k).size() * static_cast<std::size_t>(m);
  return n;
}

}  // namespace

TrainingLayout build_layout(const SessionSample& sample, const ModelConfig& config,
                            const LayoutTiers& tiers) {
  sample.validate(config);
  const int m = config.levels();
  const std::size_t total = layout_tokens(sample, m, tiers);
  require(total <= static_cast<std::size_t>(config.max_seq_len), ErrorCode::kLengthError,
          "build_layout: " + std::to_string(total) + " tokens exceed max_seq_len " +
              std::to_string(config.max_seq_len));

  TrainingLayout layout;
  layout.tokens.reserve(total);
  layout.tokens.push_back(ModelConfig::kBos);
  layout.segments.push_back({SegmentKind::kBos, 0, 0});
  for (const auto& sid : sample.history) {
    for (int l = 0; l < m; ++l) {
      layout.tokens.push_back(config.token(l, sid[l]));
      layout.segments.push_back({SegmentKind::kHistory, 0, 0});
    }
  }
  layout.prefix_length = static_cast<int>(layout.tokens.size());
  require(layout.prefix_length + m <= config.max_seq_len, ErrorCode::kLengthError,
          "build_layout: target positions exceed max_seq_len");
  layout.positions.resize(layout.tokens.size());
  std::iota(layout.positions.begin(), layout.positions.end(), 0);

  for (int k = 1; k <= kTierCount; ++k) {
    if (!tiers.has(k)) continue;
    const auto& list = sample.tier(k);
    for (std::size_t idx = 0; idx < list.size(); ++idx) {
      TargetSpan span{k, static_cast<int>(idx), static_cast<int>(layout.tokens.size()), list[idx]};
      for (int l = 0; l < m; ++l) {
        layout.tokens.push_back(config.token(l, list[idx][l]));
        layout.positions.push_back(layout.prefix_length + l);
        layout.segments.push_back({SegmentKind::kTarget, k, static_cast<int>(idx)});
      }
      layout.spans.push_back(std::move(span));
    }
  }
  layout.mask = build_mask(layout);
  return layout;
}

AttentionMask build_mask(const TrainingLayout& layout) {
  const int n = layout.size();
  AttentionMask mask(n);
  for (int i = 0; i < n; ++i) {
    const Segment& qi = layout.segments[static_cast<std::size_t>(i)];
    for (int j = 0; j <= i; ++j) {
      const Segment& kj = layout.segments[static_cast<std::size_t>(j)];
      bool shared_span = qi.kind == SegmentKind::kTarget && kj == qi;
      if (kj.kind != SegmentKind::kTarget || shared_span) mask.set(i, j, true);
    }
  }
  return mask;
}

SessionSample truncate_history(const SessionSample& sample, const ModelConfig& config,
                               const LayoutTiers& tiers) {
  SessionSample out = sample;
  const int m = config.levels();
  while (out.history.size() > 1 &&
         (layout_tokens(out, m, tiers) > static_cast<std::size_t>(config.max_seq_len) ||
          1 + static_cast<int>(out.history.size()) * m + m > config.max_seq_len)) {
    out.history.erase(out.history.begin());
  }
  return out;
}

void LossWeights::validate() const {
  require(std::isfinite(alpha) && alpha >= 0, ErrorCode::kInvalidConfig, "loss: alpha must be >= 0");
  require(std::isfinite(beta) && beta > 0, ErrorCode::kInvalidConfig, "loss: beta must be > 0");
}

template <typename T>
ad::Var<T> item_scores(const ForwardTrace<T>& trace, const TrainingLayout& layout,
                       const ModelConfig& config) {
  require(!layout.spans.empty(), ErrorCode::kInvalidArgument, "item_scores: layout has no targets");
  ad::Var<T> total;
  for (int l = 0; l < config.levels(); ++l) {
    std::vector<int> rows;
    std::vector<std::pair<int, int>> picks;
    rows.reserve(layout.spans.size());
    for (std::size_t s = 0; s < layout.spans.size(); ++s) {
      rows.push_back(layout.predictor_position(layout.spans[s], l));
      picks.emplace_back(static_cast<int>(s), layout.spans[s].sid[l]);
    }
    auto h = ad::gather_rows(trace.hidden, std::move(rows));
    auto logp = ad::log_softmax_rows(level_logits(trace, config, h, l));
    auto picked = ad::pick(logp, std::move(picks));
    total = total.valid() ? ad::add(total, picked) : picked;
  }
  return total;
}

template <typename T>
ad::Var<T> item_score(const ForwardTrace<T>& trace, const TrainingLayout& layout,
                      const ModelConfig& config, const TargetSpan& span) {
  ad::Var<T> total;
  for (int l = 0; l < config.levels(); ++l) {
    auto h = ad::gather_rows(trace.hidden, {layout.predictor_position(span, l)});
    auto logp = ad::log_softmax_rows(level_logits(trace, config, h, l));
    auto picked = ad::pick(logp, {{0, span.sid[l]}});
    total = total.valid() ? ad::add(total, picked) : picked;
  }
  return total;
}

LdpoValue ldpo_loss(const TierScores& scores, double beta, bool normalize) {
  require(std::isfinite(beta) && beta > 0, ErrorCode::kInvalidArgument, "ldpo_loss: beta must be > 0");
  LdpoValue out;
  std::vector<double> lower;
  int terms = 0;
  for (int j = 1; j < kTierCount; ++j) {
    for (double s : scores[static_cast<std::size_t>(j - 1)]) lower.push_back(beta * s);
    const auto& winners = scores[static_cast<std::size_t>(j)];
    if (winners.empty() || lower.empty()) continue;
    for (double w : winners) {
      double bw = beta * w;
      double mx = std::max(bw, *std::max_element(lower.begin(), lower.end()));
      double acc = std::exp(bw - mx);
      for (double x : lower) acc += std::exp(x - mx);
      out.value += mx + std::log(acc) - bw;
      ++terms;
    }
  }
  out.skipped = terms == 0;
  if (normalize && terms > 0) out.value /= terms;
  return out;
}

template <typename T>
GraphLdpo<T> ldpo_loss(ad::Tape<T>& tape, ad::Var<T> scores, const std::vector<int>& tiers,
                       const LossWeights& weights) {
  require(static_cast<Eigen::Index>(tiers.size()) == scores.rows(), ErrorCode::kDimensionError,
          "ldpo_loss: one tier per score row required");
  std::vector<ad::Var<T>> terms;
  std::vector<int> lower;
  for (int j = 1; j < kTierCount; ++j) {
    for (std::size_t i = 0; i < tiers.size(); ++i)
      if (tiers[i] == j) lower.push_back(static_cast<int>(i));
    std::vector<int> winners;
    for (std::size_t i = 0; i < tiers.size(); ++i)
      if (tiers[i] == j + 1) winners.push_back(static_cast<int>(i));
    if (winners.empty() || lower.empty()) continue;
    for (int w : winners) {
      std::vector<int> rows{w};
      rows.insert(rows.end(), lower.begin(), lower.end());
      auto scaled = ad::scale(ad::gather_rows(scores, std::move(rows)), static_cast<T>(weights.beta));
      auto winner = ad::scale(ad::gather_rows(scores, {w}), static_cast<T>(weights.beta));
      terms.push_back(ad::sub(ad::logsumexp(scaled), winner));
    }
  }
  GraphLdpo<T> out;
  out.skipped = terms.empty();
  out.value = ad::add_all<T>(tape, terms);
  if (weights.normalize_ldpo && !terms.empty())
    out.value = ad::scale(out.value, T(1) / static_cast<T>(terms.size()));
  return out;
}

namespace {

template <typename T>
ad::Var<T> ntp_from_scores(ad::Tape<T>& tape, ad::Var<T> scores, const TrainingLayout& layout,
                           const ModelConfig& config, const PositiveTiers& positives) {
  std::vector<int> rows;
  for (std::size_t s = 0; s < layout.spans.size(); ++s)
    if (positives.has(layout.spans[s].tier)) rows.push_back(static_cast<int>(s));
  if (rows.empty()) return tape.constant(Matrix<T>::Zero(1, 1));
  const T denom = static_cast<T>(rows.size()) * static_cast<T>(config.levels());
  return ad::scale(ad::sum(ad::gather_rows(scores, std::move(rows))), T(-1) / denom);
}

}  // namespace

template <typename T>
ad::Var<T> ntp_loss(ad::Tape<T>& tape, const ForwardTrace<T>& trace, const TrainingLayout& layout,
                    const ModelConfig& config, const PositiveTiers& positives) {
  return ntp_from_scores(tape, item_scores(trace, layout, config), layout, config, positives);
}

template <typename T>
IapLoss<T> iap_loss(ad::Tape<T>& tape, const ForwardTrace<T>& trace, const TrainingLayout& layout,
                    const ModelConfig& config, const LossWeights& weights,
                    const PositiveTiers& positives) {
  weights.validate();
  IapLoss<T> out;
  out.scores = item_scores(trace, layout, config);
  out.ntp = ntp_from_scores(tape, out.scores, layout, config, positives);
  out.total = out.ntp;
  if (weights.alpha > 0) {
    std::vector<int> tiers;
    for (const auto& s : layout.spans) tiers.push_back(s.tier);
    auto ldpo = ldpo_loss(tape, out.scores, tiers, weights);
    if (!ldpo.skipped) {
      out.ldpo = ldpo.value;
      out.total = ad::add(out.ntp, ad::scale(ldpo.value, static_cast<T>(weights.alpha)));
    }
  }
  return out;
}

#define RGR_INSTANTIATE(T)                                                                      \
  template ad::Var<T> item_scores<T>(const ForwardTrace<T>&, const TrainingLayout&,             \
                                     const ModelConfig&);                                       \
  template ad::Var<T> item_score<T>(const ForwardTrace<T>&, const TrainingLayout&,              \
                                    const ModelConfig&, const TargetSpan&);                     \
  template GraphLdpo<T> ldpo_loss<T>(ad::Tape<T>&, ad::Var<T>, const std::vector<int>&,         \
                                     const LossWeights&);                                       \
  template ad::Var<T> ntp_loss<T>(ad::Tape<T>&, const ForwardTrace<T>&, const TrainingLayout&,  \
                                  const ModelConfig&, const PositiveTiers&);                    \
  template IapLoss<T> iap_loss<T>(ad::Tape<T>&, const ForwardTrace<T>&, const TrainingLayout&,  \
                                  const ModelConfig&, const LossWeights&, const PositiveTiers&);

RGR_INSTANTIATE(float)
RGR_INSTANTIATE(double)

#undef RGR_INSTANTIATE

}  // namespace rgr
