#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation as a node in creation order, so
// the reverse sweep is a plain backwards walk over the node list. The engine
// is instantiated for float (training) and double (verification).

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace rgr::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
constexpr T kNegInf = -std::numeric_limits<T>::infinity();

template <typename T>
class Tape;

// Handle to a node of a Tape. Cheap to copy; only valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape<T>* tape() const { return tape_; }

  const Matrix<T>& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  T scalar() const { return value()(0, 0); }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  // With record = false no backward closures are stored (inference mode).
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Matrix<T> value) { return push(std::move(value), false, {}); }
  Var<T> variable(Matrix<T> value) { return push(std::move(value), record_, {}); }

  const Matrix<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  // Gradient of the last backward() target w.r.t. node id; empty if the node
  // never received gradient.
  const Matrix<T>& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  // Accumulator used by backward closures; allocates zeros on first touch.
  Matrix<T>& grad_ref(int id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (node.grad.size() == 0) node.grad = Matrix<T>::Zero(node.value.rows(), node.value.cols());
    return node.grad;
  }

  // Records a node. needs_grad is true iff any parent needs gradient.
  Var<T> record(Matrix<T> value, std::initializer_list<Var<T>> parents, Backward backward) {
    bool needs = false;
    if (record_) {
      for (const auto& p : parents) needs = needs || needs_grad(p.id());
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }
  Var<T> record(Matrix<T> value, std::span<const Var<T>> parents, Backward backward) {
    bool needs = false;
    if (record_) {
      for (const auto& p : parents) needs = needs || needs_grad(p.id());
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  // Seeds d(loss)/d(loss) = 1 for a 1x1 node and sweeps the tape backwards.
  void backward(const Var<T>& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool needs_grad = false;
    Backward backward;
  };

  Var<T> push(Matrix<T> value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix<T>(), needs_grad, std::move(backward)});
    return Var<T>(this, static_cast<int>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
  bool record_;
};

// ---- operations -------------------------------------------------------------

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);       // a * b
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);    // a * b^T
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);    // row broadcast over rows of a
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> gelu(Var<T> a);                   // exact erf form
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps);
// Adds a constant additive mask (0 / -inf entries) to a.
template <typename T> Var<T> add_mask(Var<T> a, std::shared_ptr<const Matrix<T>> mask);
template <typename T> Var<T> softmax_rows(Var<T> a);           // -inf entries map to 0
template <typename T> Var<T> log_softmax_rows(Var<T> a);
template <typename T> Var<T> gather_rows(Var<T> a, std::vector<int> rows);
template <typename T> Var<T> slice_rows(Var<T> a, int begin, int count);
template <typename T> Var<T> slice_cols(Var<T> a, int begin, int count);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
// Picks entries (row, col) into an n x 1 column.
template <typename T> Var<T> pick(Var<T> a, std::vector<std::pair<int, int>> entries);
template <typename T> Var<T> sum(Var<T> a);                    // -> 1x1
template <typename T> Var<T> logsumexp(Var<T> a);              // over all entries -> 1x1
// Sum over entries of -[y log s + (1-y) log(1-s)], s = clamp(sigmoid(z), eps, 1-eps).
template <typename T> Var<T> bce_with_logits(Var<T> logits, std::vector<T> labels, T eps);

// Sum of 1x1 nodes; returns a constant zero when `terms` is empty.
template <typename T> Var<T> add_all(Tape<T>& tape, std::span<const Var<T>> terms);

}  // namespace rgr::ad
