#pragma once

// Decoder-only causal transformer over codeword tokens. The attention mask is
// an explicit input, so the same stack serves plain causal decoding and the
// block-masked multi-target training layout.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rgr/autograd.hpp"

namespace rgr {

using ad::Matrix;
using ad::RowVector;

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  std::vector<int> vocab_sizes{32, 64};  // V_l per level; m = vocab_sizes.size()
  int max_seq_len = 128;
  double init_scale = 0.02;

  static constexpr int kBos = 0;
  static constexpr int kPad = 1;
  static constexpr int kFirstCodeToken = 2;

  int levels() const { return static_cast<int>(vocab_sizes.size()); }
  int vocab_size() const;
  // Token id of codeword `code` at level `level` (0-based level).
  int token(int level, int code) const;
  // First token id of the level-`level` slice.
  int level_offset(int level) const;
  void validate() const;
};

// Square allowed/blocked attention pattern. allowed(i, j) means query i may
// attend to key j.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(int n) : n_(n), allowed_(static_cast<std::size_t>(n) * n, 0) {}

  static AttentionMask causal(int n);

  int size() const { return n_; }
  bool allowed(int i, int j) const { return allowed_[index(i, j)] != 0; }
  void set(int i, int j, bool value) { allowed_[index(i, j)] = value ? 1 : 0; }
  int visible_count(int i) const;
  std::vector<int> visible(int i) const;

  // Additive form: 0 where allowed, -inf otherwise.
  template <typename T>
  Matrix<T> additive() const;

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * n_ + j; }
  int n_ = 0;
  std::vector<std::uint8_t> allowed_;
};

// Ordered named tensors. Gradients use the same type with identical layout.
template <typename T>
struct NamedTensor {
  std::string name;
  Matrix<T> value;
};

template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix<T> value);
  std::size_t size() const { return tensors_.size(); }
  NamedTensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  const Matrix<T>& at(std::string_view name) const;
  Matrix<T>& at(std::string_view name);
  std::ptrdiff_t find(std::string_view name) const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  // Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  std::size_t scalar_count() const;
  void add_scaled(const ParameterSet& other, T factor);
  void scale(T factor);
  double squared_norm() const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& t : tensors_) out.add(t.name, t.value.template cast<U>());
    return out;
  }

 private:
  std::vector<NamedTensor<T>> tensors_;
};

// Tape handles for every tensor of a ParameterSet, in the same order.
template <typename T>
struct Binding {
  std::vector<ad::Var<T>> vars;
};

template <typename T>
Binding<T> bind(ad::Tape<T>& tape, const ParameterSet<T>& params, bool trainable);

// Adds the tape gradients of a binding into `grads` (same layout).
template <typename T>
void accumulate_grads(const ad::Tape<T>& tape, const Binding<T>& binding, ParameterSet<T>& grads);

template <typename T>
class Backbone {
 public:
  Backbone(ModelConfig config, std::uint64_t seed);
  Backbone(ModelConfig config, ParameterSet<T> params);

  const ModelConfig& config() const { return config_; }
  const ParameterSet<T>& params() const { return params_; }
  ParameterSet<T>& params() { return params_; }

  const Matrix<T>& token_embedding() const { return params_[0].value; }

  // Names and shapes every checkpoint must provide.
  static ParameterSet<T> empty_like(const ModelConfig& config);

  template <typename U>
  Backbone<U> cast() const {
    return Backbone<U>(config_, params_.template cast<U>());
  }

 private:
  ModelConfig config_;
  ParameterSet<T> params_;
};

template <typename T>
struct ForwardTrace {
  ad::Var<T> hidden;  // seq_len x d_model, after the final layer norm
  ad::Var<T> token_embedding;  // bound table, reused by the output head
};

// Runs the stack over `tokens` with explicit position ids. `binding` must come
// from bind(tape, backbone.params(), ...).
template <typename T>
ForwardTrace<T> forward(ad::Tape<T>& tape, const Backbone<T>& model, const Binding<T>& binding,
                        std::span<const int> tokens, std::span<const int> positions,
                        const AttentionMask& mask);

// Convenience: causal forward with positions 0..n-1, values only.
template <typename T>
Matrix<T> hidden_states(const Backbone<T>& model, std::span<const int> tokens,
                        std::span<const int> positions, const AttentionMask& mask);

// Level-sliced logits h . emb(c) for every codeword c of `level` (graph form).
// `hidden_rows` is k x d; result k x V_level.
template <typename T>
ad::Var<T> level_logits(const ForwardTrace<T>& trace, const ModelConfig& config,
                        ad::Var<T> hidden_rows, int level);

// Softmax over inner products of `hidden` with the level's codeword
// embeddings.
template <typename T>
RowVector<T> level_distribution(const Backbone<T>& model, const RowVector<T>& hidden, int level);

}  // namespace rgr
