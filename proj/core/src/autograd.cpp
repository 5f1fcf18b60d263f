#include "rgr/autograd.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "rgr/error.hpp"

namespace rgr::ad {

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  require(loss.tape() == this, ErrorCode::kInvalidArgument, "backward: foreign variable");
  require(loss.rows() == 1 && loss.cols() == 1, ErrorCode::kInvalidArgument,
          "backward: loss must be 1x1");
  for (auto& node : nodes_) node.grad.resize(0, 0);
  if (!needs_grad(loss.id())) return;
  grad_ref(loss.id())(0, 0) = T(1);
  for (int i = loss.id(); i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.backward && node.grad.size() != 0) node.backward(*this, i);
  }
}

namespace {

template <typename T>
Tape<T>& tape_of(const Var<T>& a) {
  assert(a.valid());
  return *a.tape();
}

template <typename T>
void same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kDimensionError,
          std::string(op) + ": shape mismatch");
}

template <typename T>
T erf_of(T x) {
  return std::erf(x);
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require(a.cols() == b.rows(), ErrorCode::kDimensionError, "matmul: inner dimension mismatch");
  auto& tape = tape_of(a);
  Matrix<T> out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad_ref(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad_ref(ib).noalias() += t.value(ia).transpose() * g;
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  require(a.cols() == b.cols(), ErrorCode::kDimensionError, "matmul_nt: inner dimension mismatch");
  auto& tape = tape_of(a);
  Matrix<T> out = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad_ref(ia).noalias() += g * t.value(ib);
    if (t.needs_grad(ib)) t.grad_ref(ib).noalias() += g.transpose() * t.value(ia);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_shape(a, b, "add");
  auto& tape = tape_of(a);
  Matrix<T> out = a.value() + b.value();
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad_ref(ia) += g;
    if (t.needs_grad(ib)) t.grad_ref(ib) += g;
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_shape(a, b, "sub");
  auto& tape = tape_of(a);
  Matrix<T> out = a.value() - b.value();
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad_ref(ia) += g;
    if (t.needs_grad(ib)) t.grad_ref(ib) -= g;
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorCode::kDimensionError,
          "add_row: bias must be 1 x cols");
  auto& tape = tape_of(a);
  Matrix<T> out = a.value();
  out.rowwise() += row.value().row(0);
  const int ia = a.id(), ir = row.id();
  return tape.record(std::move(out), {a, row}, [ia, ir](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad_ref(ia) += g;
    if (t.needs_grad(ir)) t.grad_ref(ir) += g.colwise().sum();
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  auto& tape = tape_of(a);
  Matrix<T> out = a.value() * factor;
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, factor](Tape<T>& t, int self) {
    t.grad_ref(ia) += t.grad(self) * factor;
  });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  auto& tape = tape_of(a);
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Matrix<T> out = a.value().unaryExpr(
      [inv_sqrt2](T x) { return T(0.5) * x * (T(1) + erf_of(x * inv_sqrt2)); });
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, inv_sqrt2](Tape<T>& t, int self) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * T(3.14159265358979323846));
    Matrix<T> d = t.value(ia).unaryExpr([&](T x) {
      return T(0.5) * (T(1) + erf_of(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
    });
    t.grad_ref(ia) += t.grad(self).cwiseProduct(d);
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  auto& tape = tape_of(a);
  Matrix<T> out = a.value().unaryExpr([](T x) { return T(1) / (T(1) + std::exp(-x)); });
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    const Matrix<T>& s = t.value(self);
    t.grad_ref(ia) += t.grad(self).cwiseProduct(s.cwiseProduct((T(1) - s.array()).matrix()));
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const Eigen::Index n = x.rows(), d = x.cols();
  require(gain.rows() == 1 && gain.cols() == d && bias.rows() == 1 && bias.cols() == d,
          ErrorCode::kDimensionError, "layer_norm: gain/bias must be 1 x d");
  auto& tape = tape_of(x);
  auto xhat = std::make_shared<Matrix<T>>(n, d);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  const Matrix<T>& xv = x.value();
  for (Eigen::Index r = 0; r < n; ++r) {
    T mean = xv.row(r).mean();
    T var = (xv.row(r).array() - mean).square().mean();
    T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = inv;
    xhat->row(r) = (xv.row(r).array() - mean) * inv;
  }
  Matrix<T> out = xhat->array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.record(std::move(out), {x, gain, bias},
                     [ix, ig, ib, xhat, inv_std](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ig)) t.grad_ref(ig) += g.cwiseProduct(*xhat).colwise().sum();
    if (t.needs_grad(ib)) t.grad_ref(ib) += g.colwise().sum();
    if (t.needs_grad(ix)) {
      Matrix<T> dxhat = g.array().rowwise() * t.value(ig).row(0).array();
      Matrix<T>& gx = t.grad_ref(ix);
      const T dim = static_cast<T>(dxhat.cols());
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        T m1 = dxhat.row(r).sum() / dim;
        T m2 = dxhat.row(r).dot(xhat->row(r)) / dim;
        gx.row(r).array() += (*inv_std)[static_cast<std::size_t>(r)] *
                             (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
      }
    }
  });
}

template <typename T>
Var<T> add_mask(Var<T> a, std::shared_ptr<const Matrix<T>> mask) {
  require(mask && mask->rows() == a.rows() && mask->cols() == a.cols(),
          ErrorCode::kDimensionError, "add_mask: shape mismatch");
  auto& tape = tape_of(a);
  Matrix<T> out = a.value() + *mask;
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, mask](Tape<T>& t, int self) {
    // Masked entries carry -inf; their downstream gradient is exactly zero
    // (softmax output 0), so we pass gradient through only where finite.
    Matrix<T>& ga = t.grad_ref(ia);
    const Matrix<T>& g = t.grad(self);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.cols(); ++j)
        if (std::isfinite((*mask)(i, j))) ga(i, j) += g(i, j);
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  auto& tape = tape_of(a);
  const Matrix<T>& av = a.value();
  Matrix<T> out(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    T mx = av.row(r).maxCoeff();
    require(std::isfinite(mx), ErrorCode::kInvalidArgument, "softmax_rows: fully masked row");
    // Eigen's vectorised exp clamps its input, so -inf would give a denormal.
    out.row(r) = (av.row(r).array() == kNegInf<T>).select(T(0), (av.row(r).array() - mx).exp());
    out.row(r) /= out.row(r).sum();
  }
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    const Matrix<T>& p = t.value(self);
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ga = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      T dot = g.row(r).dot(p.row(r));
      ga.row(r).array() += p.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> a) {
  auto& tape = tape_of(a);
  const Matrix<T>& av = a.value();
  Matrix<T> out(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    T mx = av.row(r).maxCoeff();
    T lse = mx + std::log((av.row(r).array() - mx).exp().sum());
    out.row(r) = av.row(r).array() - lse;
  }
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    const Matrix<T>& lp = t.value(self);
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ga = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < lp.rows(); ++r) {
      T gsum = g.row(r).sum();
      ga.row(r).array() += g.row(r).array() - lp.row(r).array().exp() * gsum;
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<int> rows) {
  auto& tape = tape_of(a);
  const Matrix<T>& av = a.value();
  Matrix<T> out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < av.rows(), ErrorCode::kDimensionError,
            "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  }
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, rows = std::move(rows)](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

template <typename T>
Var<T> slice_rows(Var<T> a, int begin, int count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.rows(), ErrorCode::kDimensionError,
          "slice_rows: range out of bounds");
  auto& tape = tape_of(a);
  Matrix<T> out = a.value().middleRows(begin, count);
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, begin, count](Tape<T>& t, int self) {
    t.grad_ref(ia).middleRows(begin, count) += t.grad(self);
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, int begin, int count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.cols(), ErrorCode::kDimensionError,
          "slice_cols: range out of bounds");
  auto& tape = tape_of(a);
  Matrix<T> out = a.value().middleCols(begin, count);
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, begin, count](Tape<T>& t, int self) {
    t.grad_ref(ia).middleCols(begin, count) += t.grad(self);
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  require(!parts.empty(), ErrorCode::kInvalidArgument, "concat_cols: no parts");
  auto& tape = tape_of(parts[0]);
  Eigen::Index rows = parts[0].rows(), cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, ErrorCode::kDimensionError, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.cols();
  }
  return tape.record(std::move(out), parts, [layout](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    for (const auto& [id, offset] : layout) {
      if (t.needs_grad(id)) t.grad_ref(id) += g.middleCols(offset, t.value(id).cols());
    }
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  require(!parts.empty(), ErrorCode::kInvalidArgument, "concat_rows: no parts");
  auto& tape = tape_of(parts[0]);
  Eigen::Index cols = parts[0].cols(), rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, ErrorCode::kDimensionError, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<T> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.rows();
  }
  return tape.record(std::move(out), parts, [layout](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    for (const auto& [id, offset] : layout) {
      if (t.needs_grad(id)) t.grad_ref(id) += g.middleRows(offset, t.value(id).rows());
    }
  });
}

template <typename T>
Var<T> pick(Var<T> a, std::vector<std::pair<int, int>> entries) {
  auto& tape = tape_of(a);
  const Matrix<T>& av = a.value();
  Matrix<T> out(static_cast<Eigen::Index>(entries.size()), 1);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto [r, c] = entries[i];
    require(r >= 0 && r < av.rows() && c >= 0 && c < av.cols(), ErrorCode::kDimensionError,
            "pick: index out of range");
    out(static_cast<Eigen::Index>(i), 0) = av(r, c);
  }
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, entries = std::move(entries)](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < entries.size(); ++i)
      ga(entries[i].first, entries[i].second) += g(static_cast<Eigen::Index>(i), 0);
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  auto& tape = tape_of(a);
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    t.grad_ref(ia).array() += t.grad(self)(0, 0);
  });
}

template <typename T>
Var<T> logsumexp(Var<T> a) {
  require(a.value().size() > 0, ErrorCode::kInvalidArgument, "logsumexp: empty input");
  auto& tape = tape_of(a);
  const Matrix<T>& av = a.value();
  T mx = av.maxCoeff();
  Matrix<T> out(1, 1);
  out(0, 0) = mx + std::log((av.array() - mx).exp().sum());
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    T lse = t.value(self)(0, 0);
    T g = t.grad(self)(0, 0);
    t.grad_ref(ia).array() += g * (t.value(ia).array() - lse).exp();
  });
}

template <typename T>
Var<T> bce_with_logits(Var<T> logits, std::vector<T> labels, T eps) {
  require(logits.cols() == 1 && logits.rows() == static_cast<Eigen::Index>(labels.size()),
          ErrorCode::kDimensionError, "bce_with_logits: labels must match an n x 1 logit column");
  auto& tape = tape_of(logits);
  const Matrix<T>& z = logits.value();
  Matrix<T> out(1, 1);
  T total = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    T s = T(1) / (T(1) + std::exp(-z(i, 0)));
    T sc = std::clamp(s, eps, T(1) - eps);
    T y = labels[static_cast<std::size_t>(i)];
    total -= y * std::log(sc) + (T(1) - y) * std::log(T(1) - sc);
  }
  out(0, 0) = total;
  const int iz = logits.id();
  return tape.record(std::move(out), {logits},
                     [iz, eps, labels = std::move(labels)](Tape<T>& t, int self) {
    T g = t.grad(self)(0, 0);
    const Matrix<T>& zv = t.value(iz);
    Matrix<T>& gz = t.grad_ref(iz);
    for (Eigen::Index i = 0; i < zv.rows(); ++i) {
      T s = T(1) / (T(1) + std::exp(-zv(i, 0)));
      if (s <= eps || s >= T(1) - eps) continue;  // clamped: flat
      T y = labels[static_cast<std::size_t>(i)];
      gz(i, 0) += g * (s - y);
    }
  });
}

template <typename T>
Var<T> add_all(Tape<T>& tape, std::span<const Var<T>> terms) {
  if (terms.empty()) return tape.constant(Matrix<T>::Zero(1, 1));
  Var<T> acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

#define RGR_INSTANTIATE(T)                                                              \
  template class Tape<T>;                                                               \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                            \
  template Var<T> matmul_nt<T>(Var<T>, Var<T>);                                         \
  template Var<T> add<T>(Var<T>, Var<T>);                                               \
  template Var<T> sub<T>(Var<T>, Var<T>);                                               \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                           \
  template Var<T> scale<T>(Var<T>, T);                                                  \
  template Var<T> gelu<T>(Var<T>);                                                      \
  template Var<T> sigmoid<T>(Var<T>);                                                   \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                             \
  template Var<T> add_mask<T>(Var<T>, std::shared_ptr<const Matrix<T>>);                \
  template Var<T> softmax_rows<T>(Var<T>);                                              \
  template Var<T> log_softmax_rows<T>(Var<T>);                                          \
  template Var<T> gather_rows<T>(Var<T>, std::vector<int>);                             \
  template Var<T> slice_rows<T>(Var<T>, int, int);                                      \
  template Var<T> slice_cols<T>(Var<T>, int, int);                                      \
  template Var<T> concat_cols<T>(std::span<const Var<T>>);                              \
  template Var<T> concat_rows<T>(std::span<const Var<T>>);                              \
  template Var<T> pick<T>(Var<T>, std::vector<std::pair<int, int>>);                    \
  template Var<T> sum<T>(Var<T>);                                                       \
  template Var<T> logsumexp<T>(Var<T>);                                                 \
  template Var<T> bce_with_logits<T>(Var<T>, std::vector<T>, T);                        \
  template Var<T> add_all<T>(Tape<T>&, std::span<const Var<T>>);

RGR_INSTANTIATE(float)
RGR_INSTANTIATE(double)

#undef RGR_INSTANTIATE

}  // namespace rgr::ad
