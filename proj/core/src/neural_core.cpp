#include "rgr/neural_core.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "rgr/error.hpp"

namespace rgr {

int ModelConfig::vocab_size() const {
  return kFirstCodeToken + std::accumulate(vocab_sizes.begin(), vocab_sizes.end(), 0);
}

int ModelConfig::level_offset(int level) const {
  int offset = kFirstCodeToken;
  for (int l = 0; l < level; ++l) offset += vocab_sizes[static_cast<std::size_t>(l)];
  return offset;
}

int ModelConfig::token(int level, int code) const {
  return level_offset(level) + code;
}

void ModelConfig::validate() const {
  require(d_model > 0 && n_layers > 0 && n_heads > 0, ErrorCode::kInvalidConfig,
          "model: d_model, n_layers and n_heads must be positive");
  require(d_model % n_heads == 0, ErrorCode::kInvalidConfig,
          "model: d_model must be divisible by n_heads");
  require(!vocab_sizes.empty(), ErrorCode::kInvalidConfig, "model: at least one SID level");
  for (int v : vocab_sizes) require(v >= 1, ErrorCode::kInvalidConfig, "model: V_l must be >= 1");
  require(max_seq_len >= 2, ErrorCode::kInvalidConfig, "model: max_seq_len must be >= 2");
  require(init_scale > 0, ErrorCode::kInvalidConfig, "model: init_scale must be positive");
}

AttentionMask AttentionMask::causal(int n) {
  AttentionMask mask(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) mask.set(i, j, true);
  return mask;
}

int AttentionMask::visible_count(int i) const {
  int count = 0;
  for (int j = 0; j < n_; ++j) count += allowed(i, j) ? 1 : 0;
  return count;
}

std::vector<int> AttentionMask::visible(int i) const {
  std::vector<int> out;
  for (int j = 0; j < n_; ++j)
    if (allowed(i, j)) out.push_back(j);
  return out;
}

template <typename T>
Matrix<T> AttentionMask::additive() const {
  Matrix<T> out(n_, n_);
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < n_; ++j) out(i, j) = allowed(i, j) ? T(0) : ad::kNegInf<T>;
  return out;
}

template Matrix<float> AttentionMask::additive<float>() const;
template Matrix<double> AttentionMask::additive<double>() const;

// ---- ParameterSet -----------------------------------------------------------

template <typename T>
std::size_t ParameterSet<T>::add(std::string name, Matrix<T> value) {
  require(find(name) < 0, ErrorCode::kInvalidArgument, "duplicate parameter " + name);
  tensors_.push_back({std::move(name), std::move(value)});
  return tensors_.size() - 1;
}

template <typename T>
std::ptrdiff_t ParameterSet<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return static_cast<std::ptrdiff_t>(i);
  return -1;
}

template <typename T>
const Matrix<T>& ParameterSet<T>::at(std::string_view name) const {
  auto i = find(name);
  require(i >= 0, ErrorCode::kInvalidArgument, "unknown parameter " + std::string(name));
  return tensors_[static_cast<std::size_t>(i)].value;
}

template <typename T>
Matrix<T>& ParameterSet<T>::at(std::string_view name) {
  auto i = find(name);
  require(i >= 0, ErrorCode::kInvalidArgument, "unknown parameter " + std::string(name));
  return tensors_[static_cast<std::size_t>(i)].value;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::zeros_like() const {
  ParameterSet out;
  for (const auto& t : tensors_) out.add(t.name, Matrix<T>::Zero(t.value.rows(), t.value.cols()));
  return out;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

template <typename T>
void ParameterSet<T>::add_scaled(const ParameterSet& other, T factor) {
  require(other.size() == size(), ErrorCode::kDimensionError, "add_scaled: layout mismatch");
  for (std::size_t i = 0; i < size(); ++i) tensors_[i].value += factor * other.tensors_[i].value;
}

template <typename T>
void ParameterSet<T>::scale(T factor) {
  for (auto& t : tensors_) t.value *= factor;
}

template <typename T>
double ParameterSet<T>::squared_norm() const {
  double acc = 0;
  for (const auto& t : tensors_) acc += static_cast<double>(t.value.squaredNorm());
  return acc;
}

template <typename T>
Binding<T> bind(ad::Tape<T>& tape, const ParameterSet<T>& params, bool trainable) {
  Binding<T> out;
  out.vars.reserve(params.size());
  for (const auto& t : params)
    out.vars.push_back(trainable ? tape.variable(t.value) : tape.constant(t.value));
  return out;
}

template <typename T>
void accumulate_grads(const ad::Tape<T>& tape, const Binding<T>& binding, ParameterSet<T>& grads) {
  require(binding.vars.size() == grads.size(), ErrorCode::kDimensionError,
          "accumulate_grads: layout mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& g = tape.grad(binding.vars[i].id());
    if (g.size() != 0) grads[i].value += g;
  }
}

// ---- Backbone ---------------------------------------------------------------

namespace {

constexpr int kPerBlock = 16;

enum BlockSlot {
  kLn1Gain, kLn1Bias, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
  kLn2Gain, kLn2Bias, kW1, kB1, kW2, kB2,
};

std::size_t block_index(int layer, BlockSlot slot) {
  return 2 + static_cast<std::size_t>(layer) * kPerBlock + static_cast<std::size_t>(slot);
}

}  // namespace

template <typename T>
ParameterSet<T> Backbone<T>::empty_like(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model;
  const int ff = 4 * d;
  ParameterSet<T> p;
  p.add("backbone.tok_emb", Matrix<T>::Zero(config.vocab_size(), d));
  p.add("backbone.pos_emb", Matrix<T>::Zero(config.max_seq_len, d));
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string b = "backbone.block" + std::to_string(l) + ".";
    p.add(b + "ln1.gain", Matrix<T>::Ones(1, d));
    p.add(b + "ln1.bias", Matrix<T>::Zero(1, d));
    p.add(b + "attn.wq", Matrix<T>::Zero(d, d));
    p.add(b + "attn.bq", Matrix<T>::Zero(1, d));
    p.add(b + "attn.wk", Matrix<T>::Zero(d, d));
    p.add(b + "attn.bk", Matrix<T>::Zero(1, d));
    p.add(b + "attn.wv", Matrix<T>::Zero(d, d));
    p.add(b + "attn.bv", Matrix<T>::Zero(1, d));
    p.add(b + "attn.wo", Matrix<T>::Zero(d, d));
    p.add(b + "attn.bo", Matrix<T>::Zero(1, d));
    p.add(b + "ln2.gain", Matrix<T>::Ones(1, d));
    p.add(b + "ln2.bias", Matrix<T>::Zero(1, d));
    p.add(b + "mlp.w1", Matrix<T>::Zero(d, ff));
    p.add(b + "mlp.b1", Matrix<T>::Zero(1, ff));
    p.add(b + "mlp.w2", Matrix<T>::Zero(ff, d));
    p.add(b + "mlp.b2", Matrix<T>::Zero(1, d));
  }
  p.add("backbone.ln_f.gain", Matrix<T>::Ones(1, d));
  p.add("backbone.ln_f.bias", Matrix<T>::Zero(1, d));
  return p;
}

template <typename T>
Backbone<T>::Backbone(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(empty_like(config_)) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double std_dev = config_.init_scale;
  const double residual_std = std_dev / std::sqrt(2.0 * config_.n_layers);
  auto fill = [&](Matrix<T>& m, double s) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(s * normal(rng));
  };
  for (auto& t : params_) {
    const std::string& n = t.name;
    bool is_matrix = n.ends_with("tok_emb") || n.ends_with("pos_emb") || n.ends_with(".wq") ||
                     n.ends_with(".wk") || n.ends_with(".wv") || n.ends_with(".w1");
    bool is_residual_out = n.ends_with(".wo") || n.ends_with(".w2");
    if (is_matrix) fill(t.value, std_dev);
    if (is_residual_out) fill(t.value, residual_std);
  }
}

template <typename T>
Backbone<T>::Backbone(ModelConfig config, ParameterSet<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  ParameterSet<T> expected = empty_like(config_);
  require(expected.size() == params_.size(), ErrorCode::kFormatError,
          "backbone: parameter count mismatch");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    require(expected[i].name == params_[i].name, ErrorCode::kFormatError,
            "backbone: unexpected parameter " + params_[i].name);
    require(expected[i].value.rows() == params_[i].value.rows() &&
                expected[i].value.cols() == params_[i].value.cols(),
            ErrorCode::kFormatError, "backbone: shape mismatch for " + params_[i].name);
  }
}

template <typename T>
ForwardTrace<T> forward(ad::Tape<T>& tape, const Backbone<T>& model, const Binding<T>& binding,
                        std::span<const int> tokens, std::span<const int> positions,
                        const AttentionMask& mask) {
  (void)tape;
  const ModelConfig& cfg = model.config();
  const int n = static_cast<int>(tokens.size());
  require(n >= 1, ErrorCode::kInvalidArgument, "forward: empty sequence");
  require(n <= cfg.max_seq_len, ErrorCode::kLengthError,
          "forward: sequence of " + std::to_string(n) + " tokens exceeds max_seq_len " +
              std::to_string(cfg.max_seq_len));
  require(positions.size() == tokens.size(), ErrorCode::kDimensionError,
          "forward: positions must match tokens");
  require(mask.size() == n, ErrorCode::kDimensionError, "forward: mask size mismatch");
  require(binding.vars.size() == model.params().size(), ErrorCode::kDimensionError,
          "forward: binding does not match the model");
  for (int i = 0; i < n; ++i) {
    require(tokens[static_cast<std::size_t>(i)] >= 0 &&
                tokens[static_cast<std::size_t>(i)] < cfg.vocab_size(),
            ErrorCode::kInvalidArgument, "forward: token id out of range");
    require(positions[static_cast<std::size_t>(i)] >= 0 &&
                positions[static_cast<std::size_t>(i)] < cfg.max_seq_len,
            ErrorCode::kLengthError, "forward: position id exceeds max_seq_len");
  }

  const auto& v = binding.vars;
  const int d = cfg.d_model;
  const int dh = d / cfg.n_heads;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  const T eps = T(1e-5);

  auto additive = std::make_shared<const Matrix<T>>(mask.additive<T>());
  ad::Var<T> x = ad::add(ad::gather_rows(v[0], std::vector<int>(tokens.begin(), tokens.end())),
                         ad::gather_rows(v[1], std::vector<int>(positions.begin(), positions.end())));

  for (int l = 0; l < cfg.n_layers; ++l) {
    auto p = [&](BlockSlot s) { return v[block_index(l, s)]; };
    ad::Var<T> h = ad::layer_norm(x, p(kLn1Gain), p(kLn1Bias), eps);
    ad::Var<T> q = ad::add_row(ad::matmul(h, p(kWq)), p(kBq));
    ad::Var<T> k = ad::add_row(ad::matmul(h, p(kWk)), p(kBk));
    ad::Var<T> val = ad::add_row(ad::matmul(h, p(kWv)), p(kBv));
    std::vector<ad::Var<T>> heads;
    heads.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      auto qh = ad::slice_cols(q, hd * dh, dh);
      auto kh = ad::slice_cols(k, hd * dh, dh);
      auto vh = ad::slice_cols(val, hd * dh, dh);
      auto scores = ad::add_mask(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_dh), additive);
      heads.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    ad::Var<T> att = ad::add_row(
        ad::matmul(ad::concat_cols<T>(std::span<const ad::Var<T>>(heads)), p(kWo)), p(kBo));
    x = ad::add(x, att);
    ad::Var<T> h2 = ad::layer_norm(x, p(kLn2Gain), p(kLn2Bias), eps);
    ad::Var<T> f = ad::gelu(ad::add_row(ad::matmul(h2, p(kW1)), p(kB1)));
    x = ad::add(x, ad::add_row(ad::matmul(f, p(kW2)), p(kB2)));
  }
  const std::size_t lnf = 2 + static_cast<std::size_t>(cfg.n_layers) * kPerBlock;
  ForwardTrace<T> trace;
  trace.hidden = ad::layer_norm(x, v[lnf], v[lnf + 1], eps);
  trace.token_embedding = v[0];
  return trace;
}

template <typename T>
Matrix<T> hidden_states(const Backbone<T>& model, std::span<const int> tokens,
                        std::span<const int> positions, const AttentionMask& mask) {
  ad::Tape<T> tape(false);
  auto binding = bind(tape, model.params(), false);
  return forward(tape, model, binding, tokens, positions, mask).hidden.value();
}

template <typename T>
ad::Var<T> level_logits(const ForwardTrace<T>& trace, const ModelConfig& config,
                        ad::Var<T> hidden_rows, int level) {
  require(level >= 0 && level < config.levels(), ErrorCode::kInvalidArgument,
          "level_logits: level out of range");
  auto table = ad::slice_rows(trace.token_embedding, config.level_offset(level),
                              config.vocab_sizes[static_cast<std::size_t>(level)]);
  return ad::matmul_nt(hidden_rows, table);
}

template <typename T>
RowVector<T> level_distribution(const Backbone<T>& model, const RowVector<T>& hidden, int level) {
  const ModelConfig& cfg = model.config();
  require(level >= 0 && level < cfg.levels(), ErrorCode::kInvalidArgument,
          "level_distribution: level out of range");
  require(hidden.size() == cfg.d_model, ErrorCode::kDimensionError,
          "level_distribution: hidden size mismatch");
  const int vl = cfg.vocab_sizes[static_cast<std::size_t>(level)];
  RowVector<T> logits = hidden * model.token_embedding().middleRows(cfg.level_offset(level), vl).transpose();
  T mx = logits.maxCoeff();
  RowVector<T> p = (logits.array() - mx).exp();
  return p / p.sum();
}

#define RGR_INSTANTIATE(T)                                                                     \
  template class ParameterSet<T>;                                                              \
  template class Backbone<T>;                                                                  \
  template Binding<T> bind<T>(ad::Tape<T>&, const ParameterSet<T>&, bool);                     \
  template void accumulate_grads<T>(const ad::Tape<T>&, const Binding<T>&, ParameterSet<T>&);  \
  template ForwardTrace<T> forward<T>(ad::Tape<T>&, const Backbone<T>&, const Binding<T>&,     \
                                      std::span<const int>, std::span<const int>,              \
                                      const AttentionMask&);                                   \
  template Matrix<T> hidden_states<T>(const Backbone<T>&, std::span<const int>,                \
                                      std::span<const int>, const AttentionMask&);             \
  template ad::Var<T> level_logits<T>(const ForwardTrace<T>&, const ModelConfig&, ad::Var<T>,  \
                                      int);                                                    \
  template RowVector<T> level_distribution<T>(const Backbone<T>&, const RowVector<T>&, int);

RGR_INSTANTIATE(float)
RGR_INSTANTIATE(double)

#undef RGR_INSTANTIATE

}  // namespace rgr
