#include "rgr/rsp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rgr/error.hpp"

namespace rgr {

namespace {

enum HeadSlot : std::size_t { kWq, kWk, kWv, kW1, kB1, kW2, kB2 };

}  // namespace

std::vector<double> tempered_softmax(const std::vector<double>& logits, double temperature) {
  require(temperature > 0 && std::isfinite(temperature), ErrorCode::kInvalidArgument,
          "softmax temperature must be > 0");
  require(!logits.empty(), ErrorCode::kInvalidArgument, "softmax over empty logits");
  double mx = *std::max_element(logits.begin(), logits.end()) / temperature;
  std::vector<double> p(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] / temperature - mx);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

CandidateSet top_candidates(const std::vector<double>& probs, int level, int lambda) {
  require(lambda >= 1, ErrorCode::kInvalidArgument, "select_candidates: lambda must be >= 1");
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(lambda)));
  CandidateSet out;
  out.level = level;
  out.codes = order;
  for (int c : order) out.iap_probs.push_back(probs[static_cast<std::size_t>(c)]);
  return out;
}

template <typename T>
CandidateSet select_candidates(const Backbone<T>& model, const RowVector<T>& hidden, int level,
                               int lambda, double temperature) {
  const ModelConfig& cfg = model.config();
  require(level >= 0 && level < cfg.levels(), ErrorCode::kInvalidArgument,
          "select_candidates: level out of range");
  require(hidden.size() == cfg.d_model, ErrorCode::kDimensionError,
          "select_candidates: hidden size mismatch");
  const int vl = cfg.vocab_sizes[static_cast<std::size_t>(level)];
  RowVector<T> logits =
      hidden * model.token_embedding().middleRows(cfg.level_offset(level), vl).transpose();
  std::vector<double> z(static_cast<std::size_t>(vl));
  for (int c = 0; c < vl; ++c) z[static_cast<std::size_t>(c)] = static_cast<double>(logits(c));
  return top_candidates(tempered_softmax(z, temperature), level, lambda);
}

std::vector<int> hidden_set(const TrainingLayout& layout, int position) {
  require(position >= 0 && position < layout.size(), ErrorCode::kInvalidArgument,
          "hidden_set: position out of range");
  return layout.mask.visible(position);
}

// ---- rank head --------------------------------------------------------------

template <typename T>
ParameterSet<T> RankHead<T>::empty_like(int d_model) {
  ParameterSet<T> p;
  p.add("rank_head.wq", Matrix<T>::Zero(d_model, d_model));
  p.add("rank_head.wk", Matrix<T>::Zero(d_model, d_model));
  p.add("rank_head.wv", Matrix<T>::Zero(d_model, d_model));
  p.add("rank_head.w1", Matrix<T>::Zero(d_model, d_model));
  p.add("rank_head.b1", Matrix<T>::Zero(1, d_model));
  p.add("rank_head.w2", Matrix<T>::Zero(d_model, 1));
  p.add("rank_head.b2", Matrix<T>::Zero(1, 1));
  return p;
}

template <typename T>
RankHead<T>::RankHead(int d_model, std::uint64_t seed, double init_scale)
    : d_model_(d_model), params_(empty_like(d_model)) {
  require(d_model > 0, ErrorCode::kInvalidConfig, "rank head: d_model must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Projections use 1/sqrt(d). Queries are token embeddings of scale
  // init_scale, so W_q is scaled up to give unit-scale queries like the keys.
  const double proj = 1.0 / std::sqrt(static_cast<double>(d_model));
  for (std::size_t i : {kWq, kWk, kWv, kW1}) {
    const double sd = i == kWq && init_scale > 0 ? proj / init_scale : proj;
    auto& w = params_[i].value;
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<T>(normal(rng) * sd);
  }
  auto& w2 = params_[kW2].value;
  for (Eigen::Index k = 0; k < w2.size(); ++k) w2.data()[k] = static_cast<T>(normal(rng) * init_scale);
}

template <typename T>
RankHead<T>::RankHead(int d_model, ParameterSet<T> params)
    : d_model_(d_model), params_(std::move(params)) {
  ParameterSet<T> expected = empty_like(d_model);
  require(expected.size() == params_.size(), ErrorCode::kFormatError,
          "rank head: parameter count mismatch");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    require(expected[i].name == params_[i].name, ErrorCode::kFormatError,
            "rank head: unexpected parameter " + params_[i].name);
    require(expected[i].value.rows() == params_[i].value.rows() &&
                expected[i].value.cols() == params_[i].value.cols(),
            ErrorCode::kFormatError, "rank head: shape mismatch for " + params_[i].name);
  }
}

template <typename T>
ad::Var<T> rank_logits(const Binding<T>& head, ad::Var<T> queries, ad::Var<T> keys,
                       ad::Var<T> values) {
  const auto& v = head.vars;
  require(v.size() == 7, ErrorCode::kDimensionError, "rank_logits: binding is not a rank head");
  require(keys.rows() >= 1, ErrorCode::kInvalidArgument, "rank_logits: empty hidden set");
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(queries.cols()));
  auto q = ad::matmul(queries, v[kWq]);
  auto att = ad::softmax_rows(ad::scale(ad::matmul_nt(q, keys), inv_sqrt_d));
  auto o = ad::matmul(att, values);
  auto f = ad::gelu(ad::add_row(ad::matmul(o, v[kW1]), v[kB1]));
  return ad::add_row(ad::matmul(f, v[kW2]), v[kB2]);
}

template <typename T>
std::vector<double> rank_scores(const Matrix<T>& embeddings, const Matrix<T>& hidden_rows,
                                const RankHead<T>& head) {
  require(hidden_rows.rows() >= 1, ErrorCode::kInvalidArgument, "rank_score: empty hidden set");
  require(embeddings.cols() == head.d_model() && hidden_rows.cols() == head.d_model(),
          ErrorCode::kDimensionError, "rank_score: width mismatch");
  ad::Tape<T> tape(false);
  auto binding = bind(tape, head.params(), false);
  auto h = tape.constant(hidden_rows);
  auto keys = ad::matmul(h, binding.vars[kWk]);
  auto values = ad::matmul(h, binding.vars[kWv]);
  auto z = rank_logits(binding, tape.constant(embeddings), keys, values).value();
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double s = 1.0 / (1.0 + std::exp(-static_cast<double>(z(i, 0))));
    out[static_cast<std::size_t>(i)] = std::clamp(s, kProbClamp, 1.0 - kProbClamp);
  }
  return out;
}

template <typename T>
double rank_score(const RowVector<T>& candidate_embedding, const Matrix<T>& hidden_rows,
                  const RankHead<T>& head) {
  Matrix<T> e = candidate_embedding;
  return rank_scores(e, hidden_rows, head)[0];
}

double bce_loss(const std::vector<double>& scores, const std::vector<int>& labels, double eps) {
  require(scores.size() == labels.size() && !scores.empty(), ErrorCode::kDimensionError,
          "bce_loss: scores and labels must be non-empty and aligned");
  double total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double s = std::clamp(scores[i], eps, 1.0 - eps);
    total -= labels[i] ? std::log(s) : std::log(1.0 - s);
  }
  return total / static_cast<double>(scores.size());
}

template <typename T>
RspLoss<T> rsp_bce_loss(ad::Tape<T>& tape, const ForwardTrace<T>& trace,
                        const TrainingLayout& layout, const ModelConfig& config,
                        const Binding<T>& head, const RspTrainOptions& options) {
  require(static_cast<int>(options.lambdas.size()) == config.levels(), ErrorCode::kInvalidConfig,
          "rsp: one lambda per level required");
  std::vector<const TargetSpan*> spans;
  for (const auto& s : layout.spans)
    if (options.positives.has(s.tier)) spans.push_back(&s);
  if (options.last_only && !spans.empty()) spans = {spans.back()};

  RspLoss<T> out;
  if (spans.empty()) {
    out.value = tape.constant(Matrix<T>::Zero(1, 1));
    return out;
  }
  auto keys_all = ad::matmul(trace.hidden, head.vars[kWk]);
  auto values_all = ad::matmul(trace.hidden, head.vars[kWv]);
  const Matrix<T> hidden = trace.hidden.value();
  const Matrix<T> emb = trace.token_embedding.value();

  std::vector<ad::Var<T>> logits;
  std::vector<T> labels;
  for (const TargetSpan* span : spans) {
    for (int l = 0; l < config.levels(); ++l) {
      const int pos = layout.predictor_position(*span, l);
      const int vl = config.vocab_sizes[static_cast<std::size_t>(l)];
      RowVector<T> h = hidden.row(pos);
      RowVector<T> z = h * emb.middleRows(config.level_offset(l), vl).transpose();
      std::vector<double> zd(static_cast<std::size_t>(vl));
      for (int c = 0; c < vl; ++c) zd[static_cast<std::size_t>(c)] = static_cast<double>(z(c));
      CandidateSet cand = top_candidates(tempered_softmax(zd, options.temperature), l,
                                         options.lambdas[static_cast<std::size_t>(l)]);
      const int truth = span->sid[l];
      if (std::find(cand.codes.begin(), cand.codes.end(), truth) == cand.codes.end())
        cand.codes.push_back(truth);

      std::vector<int> tokens;
      for (int c : cand.codes) {
        tokens.push_back(config.token(l, c));
        labels.push_back(c == truth ? T(1) : T(0));
      }
      std::vector<int> visible = hidden_set(layout, pos);
      auto queries = ad::gather_rows(trace.token_embedding, std::move(tokens));
      auto keys = ad::gather_rows(keys_all, visible);
      auto values = ad::gather_rows(values_all, std::move(visible));
      logits.push_back(rank_logits(head, queries, keys, values));
    }
  }
  auto all = ad::concat_rows<T>(std::span<const ad::Var<T>>(logits));
  out.scored = static_cast<int>(labels.size());
  out.value = ad::scale(ad::bce_with_logits(all, std::move(labels), static_cast<T>(kProbClamp)),
                        T(1) / static_cast<T>(out.scored));
  return out;
}

template <typename T>
TotalLoss<T> total_loss(ad::Tape<T>& tape, const ForwardTrace<T>& trace,
                        const TrainingLayout& layout, const ModelConfig& config,
                        const LossWeights& weights, const Binding<T>& head,
                        const RspTrainOptions& options) {
  TotalLoss<T> out;
  out.iap = iap_loss(tape, trace, layout, config, weights, options.positives);
  out.rsp = rsp_bce_loss(tape, trace, layout, config, head, options);
  out.total = ad::add(out.rsp.value, out.iap.total);
  return out;
}

#define RGR_INSTANTIATE(T)                                                                     \
  template CandidateSet select_candidates<T>(const Backbone<T>&, const RowVector<T>&, int, int, \
                                             double);                                          \
  template class RankHead<T>;                                                                  \
  template ad::Var<T> rank_logits<T>(const Binding<T>&, ad::Var<T>, ad::Var<T>, ad::Var<T>);   \
  template std::vector<double> rank_scores<T>(const Matrix<T>&, const Matrix<T>&,              \
                                              const RankHead<T>&);                             \
  template double rank_score<T>(const RowVector<T>&, const Matrix<T>&, const RankHead<T>&);    \
  template RspLoss<T> rsp_bce_loss<T>(ad::Tape<T>&, const ForwardTrace<T>&,                    \
                                      const TrainingLayout&, const ModelConfig&,               \
                                      const Binding<T>&, const RspTrainOptions&);              \
  template TotalLoss<T> total_loss<T>(ad::Tape<T>&, const ForwardTrace<T>&,                    \
                                      const TrainingLayout&, const ModelConfig&,               \
                                      const LossWeights&, const Binding<T>&,                   \
                                      const RspTrainOptions&);

RGR_INSTANTIATE(float)
RGR_INSTANTIATE(double)

#undef RGR_INSTANTIATE

}  // namespace rgr
