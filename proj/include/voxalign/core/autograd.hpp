#pragma once

// Tape-based reverse-mode autodiff over Matrix. A Tape lives for one forward
// pass; node creation order is a topological order, so backward is a single
// reverse sweep. All math is double precision.

#include "voxalign/core/matrix.hpp"
#include "voxalign/core/rng.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <utility>
#include <deque>
#include <vector>

namespace voxalign {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int idx = -1;

  bool valid() const { return tape != nullptr && idx >= 0; }
  const Matrix& val() const;
  std::size_t rows() const { return val().rows(); }
  std::size_t cols() const { return val().cols(); }
  double scalar() const;
};

class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, int)> backprop;  // (tape, own index)
  };

  Var var(Matrix value, bool needs_grad = true) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{this, (int)nodes_.size() - 1};
  }

  Var constant(Matrix value) { return var(std::move(value), false); }

  Var scalar(double v, bool needs_grad = false) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return var(std::move(m), needs_grad);
  }

  const Matrix& value(int i) const { return nodes_[(std::size_t)i].value; }
  Matrix& value(int i) { return nodes_[(std::size_t)i].value; }

  const Matrix& grad(const Var& v) {
    Node& n = nodes_[(std::size_t)v.idx];
    ensure_grad(n);
    return n.grad;
  }

  // Adds g into the gradient of node i, allocating on first touch. No-op for
  // nodes that do not require gradients.
  void accumulate(int i, const Matrix& g) {
    Node& n = nodes_[(std::size_t)i];
    if (!n.needs_grad) return;
    ensure_grad(n);
    if (!n.grad.same_shape(g)) throw std::logic_error("gradient shape mismatch");
    n.grad.map() += g.map();
  }

  void backward(const Var& root) {
    if (root.tape != this) throw std::logic_error("backward: foreign Var");
    const std::size_t nroot = (std::size_t)root.idx;
    if (nodes_[nroot].value.size() != 1)
      throw std::logic_error("backward: root must be a scalar");
    std::vector<char> needed(nodes_.size(), 0);
    needed[nroot] = 1;
    Matrix seed(1, 1);
    seed(0, 0) = 1.0;
    nodes_[nroot].grad = seed;
    for (std::size_t i = nroot + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!needed[i] || !n.needs_grad) continue;
      if (n.grad.empty()) continue;  // never received gradient
      for (int p : n.parents)
        if (nodes_[(std::size_t)p].needs_grad) needed[(std::size_t)p] = 1;
      if (n.backprop) n.backprop(*this, (int)i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // Internal: register a derived node.
  Var make(Matrix value, std::vector<int> parents,
           std::function<void(Tape&, int)> backprop) {
    bool any = false;
    for (int p : parents) any = any || nodes_[(std::size_t)p].needs_grad;
    Node n;
    n.value = std::move(value);
    n.needs_grad = any;
    n.parents = std::move(parents);
    if (any) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{this, (int)nodes_.size() - 1};
  }

  Node& node(int i) { return nodes_[(std::size_t)i]; }

 private:
  static void ensure_grad(Node& n) {
    if (n.grad.empty() && !n.value.empty())
      n.grad = Matrix(n.value.rows(), n.value.cols(), 0.0);
  }
  // Deque keeps node references stable while the tape grows, so values
  // returned by Var::val() stay valid for the life of the tape.
  std::deque<Node> nodes_;
};

inline const Matrix& Var::val() const { return tape->value(idx); }
inline double Var::scalar() const {
  const Matrix& m = val();
  if (m.size() != 1) throw std::logic_error("scalar() on non-scalar Var");
  return m(0, 0);
}

namespace ag {

inline Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw std::logic_error("Vars from different tapes");
  return *a.tape;
}

inline Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (!a.val().same_shape(b.val())) throw std::invalid_argument("add: shape mismatch");
  Matrix out = a.val();
  out.map() += b.val().map();
  int pa = a.idx, pb = b.idx;
  return t.make(std::move(out), {pa, pb}, [pa, pb](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    tp.accumulate(pa, g);
    tp.accumulate(pb, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (!a.val().same_shape(b.val())) throw std::invalid_argument("sub: shape mismatch");
  Matrix out = a.val();
  out.map() -= b.val().map();
  int pa = a.idx, pb = b.idx;
  return t.make(std::move(out), {pa, pb}, [pa, pb](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    tp.accumulate(pa, g);
    Matrix neg = g;
    neg.map() = -neg.map();
    tp.accumulate(pb, neg);
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (!a.val().same_shape(b.val())) throw std::invalid_argument("mul: shape mismatch");
  Matrix out = a.val();
  out.map() = out.map().cwiseProduct(b.val().map());
  int pa = a.idx, pb = b.idx;
  return t.make(std::move(out), {pa, pb}, [pa, pb](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    Matrix da = g;
    da.map() = da.map().cwiseProduct(tp.value(pb).map());
    tp.accumulate(pa, da);
    Matrix db = g;
    db.map() = db.map().cwiseProduct(tp.value(pa).map());
    tp.accumulate(pb, db);
  });
}

inline Var scale(Var a, double s) {
  Matrix out = a.val();
  out.map() *= s;
  int pa = a.idx;
  return a.tape->make(std::move(out), {pa}, [pa, s](Tape& tp, int self) {
    Matrix g = tp.node(self).grad;
    g.map() *= s;
    tp.accumulate(pa, g);
  });
}

inline Var add_scalar(Var a, double c) {
  Matrix out = a.val();
  out.map().array() += c;
  int pa = a.idx;
  return a.tape->make(std::move(out), {pa}, [pa](Tape& tp, int self) {
    tp.accumulate(pa, tp.node(self).grad);
  });
}

inline Var neg(Var a) { return scale(a, -1.0); }

// out = a * s where s is a 1x1 Var (e.g. a learned temperature factor).
inline Var scale_by(Var a, Var s) {
  Tape& t = tape_of(a, s);
  if (s.val().size() != 1) throw std::invalid_argument("scale_by: s must be 1x1");
  Matrix out = a.val();
  out.map() *= s.scalar();
  int pa = a.idx, ps = s.idx;
  return t.make(std::move(out), {pa, ps}, [pa, ps](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    Matrix da = g;
    da.map() *= tp.value(ps)(0, 0);
    tp.accumulate(pa, da);
    Matrix ds(1, 1);
    ds(0, 0) = g.map().cwiseProduct(tp.value(pa).map()).sum();
    tp.accumulate(ps, ds);
  });
}

// Broadcast-add a 1xD row vector to every row of an NxD matrix.
inline Var add_rowvec(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (b.val().rows() != 1 || b.val().cols() != a.val().cols())
    throw std::invalid_argument("add_rowvec: b must be 1 x cols(a)");
  Matrix out = a.val();
  out.map().rowwise() += b.val().map().row(0);
  int pa = a.idx, pb = b.idx;
  return t.make(std::move(out), {pa, pb}, [pa, pb](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    tp.accumulate(pa, g);
    Matrix db(1, g.cols());
    db.map().row(0) = g.map().colwise().sum();
    tp.accumulate(pb, db);
  });
}

// Multiply row i of a (NxD) by s(i,0) (Nx1).
inline Var scale_rows(Var a, Var s) {
  Tape& t = tape_of(a, s);
  if (s.val().cols() != 1 || s.val().rows() != a.val().rows())
    throw std::invalid_argument("scale_rows: s must be rows(a) x 1");
  Matrix out = a.val();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double f = s.val()(r, 0);
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= f;
  }
  int pa = a.idx, ps = s.idx;
  return t.make(std::move(out), {pa, ps}, [pa, ps](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    const Matrix& av = tp.value(pa);
    const Matrix& sv = tp.value(ps);
    Matrix da = g;
    Matrix ds(sv.rows(), 1, 0.0);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) {
        acc += g(r, c) * av(r, c);
        da(r, c) *= sv(r, 0);
      }
      ds(r, 0) = acc;
    }
    tp.accumulate(pa, da);
    tp.accumulate(ps, ds);
  });
}

inline Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Matrix out = voxalign::matmul(a.val(), b.val());
  int pa = a.idx, pb = b.idx;
  return t.make(std::move(out), {pa, pb}, [pa, pb](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    tp.accumulate(pa, voxalign::matmul_nt(g, tp.value(pb)));
    tp.accumulate(pb, voxalign::matmul_tn(tp.value(pa), g));
  });
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Matrix out = voxalign::matmul_nt(a.val(), b.val());
  int pa = a.idx, pb = b.idx;
  return t.make(std::move(out), {pa, pb}, [pa, pb](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    tp.accumulate(pa, voxalign::matmul(g, tp.value(pb)));
    tp.accumulate(pb, voxalign::matmul_tn(g, tp.value(pa)));
  });
}

// a^T * b
inline Var matmul_tn(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Matrix out = voxalign::matmul_tn(a.val(), b.val());
  int pa = a.idx, pb = b.idx;
  return t.make(std::move(out), {pa, pb}, [pa, pb](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    tp.accumulate(pa, voxalign::matmul_nt(tp.value(pb), g));
    tp.accumulate(pb, voxalign::matmul(tp.value(pa), g));
  });
}

inline Var transpose(Var a) {
  Matrix out = a.val().transposed();
  int pa = a.idx;
  return a.tape->make(std::move(out), {pa}, [pa](Tape& tp, int self) {
    tp.accumulate(pa, tp.node(self).grad.transposed());
  });
}

inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.val().size()) throw std::invalid_argument("reshape: size mismatch");
  Matrix out(rows, cols);
  out.storage() = a.val().storage();
  int pa = a.idx;
  std::size_t orows = a.val().rows(), ocols = a.val().cols();
  return a.tape->make(std::move(out), {pa}, [pa, orows, ocols](Tape& tp, int self) {
    Matrix g(orows, ocols);
    g.storage() = tp.node(self).grad.storage();
    tp.accumulate(pa, g);
  });
}

inline Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
  if (r1 > a.val().rows() || r0 > r1) throw std::invalid_argument("slice_rows: bad range");
  Matrix out(r1 - r0, a.val().cols());
  out.map() = a.val().map().middleRows((Eigen::Index)r0, (Eigen::Index)(r1 - r0));
  int pa = a.idx;
  std::size_t rows = a.val().rows(), cols = a.val().cols();
  return a.tape->make(std::move(out), {pa}, [pa, r0, rows, cols](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    Matrix da(rows, cols, 0.0);
    da.map().middleRows((Eigen::Index)r0, (Eigen::Index)g.rows()) = g.map();
    tp.accumulate(pa, da);
  });
}

inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  if (c1 > a.val().cols() || c0 > c1) throw std::invalid_argument("slice_cols: bad range");
  Matrix out(a.val().rows(), c1 - c0);
  out.map() = a.val().map().middleCols((Eigen::Index)c0, (Eigen::Index)(c1 - c0));
  int pa = a.idx;
  std::size_t rows = a.val().rows(), cols = a.val().cols();
  return a.tape->make(std::move(out), {pa}, [pa, c0, rows, cols](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    Matrix da(rows, cols, 0.0);
    da.map().middleCols((Eigen::Index)c0, (Eigen::Index)g.cols()) = g.map();
    tp.accumulate(pa, da);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Tape& t = *parts[0].tape;
  std::size_t cols = parts[0].val().cols(), rows = 0;
  for (const Var& p : parts) {
    if (p.tape != &t || p.val().cols() != cols)
      throw std::invalid_argument("concat_rows: mismatched parts");
    rows += p.val().rows();
  }
  Matrix out(rows, cols);
  std::vector<int> idxs;
  std::vector<std::size_t> offsets;
  std::size_t r = 0;
  for (const Var& p : parts) {
    out.map().middleRows((Eigen::Index)r, (Eigen::Index)p.val().rows()) = p.val().map();
    idxs.push_back(p.idx);
    offsets.push_back(r);
    r += p.val().rows();
  }
  return t.make(std::move(out), idxs, [idxs, offsets](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      const Matrix& pv = tp.value(idxs[i]);
      Matrix gi(pv.rows(), pv.cols());
      gi.map() = g.map().middleRows((Eigen::Index)offsets[i], (Eigen::Index)pv.rows());
      tp.accumulate(idxs[i], gi);
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Tape& t = *parts[0].tape;
  std::size_t rows = parts[0].val().rows(), cols = 0;
  for (const Var& p : parts) {
    if (p.tape != &t || p.val().rows() != rows)
      throw std::invalid_argument("concat_cols: mismatched parts");
    cols += p.val().cols();
  }
  Matrix out(rows, cols);
  std::vector<int> idxs;
  std::vector<std::size_t> offsets;
  std::size_t c = 0;
  for (const Var& p : parts) {
    out.map().middleCols((Eigen::Index)c, (Eigen::Index)p.val().cols()) = p.val().map();
    idxs.push_back(p.idx);
    offsets.push_back(c);
    c += p.val().cols();
  }
  return t.make(std::move(out), idxs, [idxs, offsets](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      const Matrix& pv = tp.value(idxs[i]);
      Matrix gi(pv.rows(), pv.cols());
      gi.map() = g.map().middleCols((Eigen::Index)offsets[i], (Eigen::Index)pv.cols());
      tp.accumulate(idxs[i], gi);
    }
  });
}

inline Var rowsum(Var a) {
  Matrix out(a.val().rows(), 1);
  out.map().col(0) = a.val().map().rowwise().sum();
  int pa = a.idx;
  std::size_t cols = a.val().cols();
  return a.tape->make(std::move(out), {pa}, [pa, cols](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    Matrix da(g.rows(), cols);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) da(r, c) = g(r, 0);
    tp.accumulate(pa, da);
  });
}

inline Var sum_all(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.val().sum();
  int pa = a.idx;
  std::size_t rows = a.val().rows(), cols = a.val().cols();
  return a.tape->make(std::move(out), {pa}, [pa, rows, cols](Tape& tp, int self) {
    tp.accumulate(pa, Matrix(rows, cols, tp.node(self).grad(0, 0)));
  });
}

inline Var mean_all(Var a) { return scale(sum_all(a), 1.0 / (double)a.val().size()); }

namespace detail {
template <typename F, typename DF>
Var unary(Var a, F f, DF df, const char* /*name*/) {
  Matrix out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i]);
  int pa = a.idx;
  return a.tape->make(std::move(out), {pa}, [pa, df](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    const Matrix& x = tp.value(pa);
    const Matrix& y = tp.node(self).value;
    Matrix da(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * df(x[i], y[i]);
    tp.accumulate(pa, da);
  });
}
}  // namespace detail

inline Var exp(Var a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; }, "exp");
}

inline Var log(Var a) {
  return detail::unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; }, "log");
}

inline Var tanh(Var a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; }, "tanh");
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
inline Var gelu(Var a) {
  static const double kInvSqrt2 = 0.7071067811865475244;
  static const double kInvSqrt2Pi = 0.3989422804014326779;
  return detail::unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      },
      "gelu");
}

inline Var abs(Var a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, "abs");
}

inline Var square(Var a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; },
      "square");
}

// Elementwise x^p. Caller guarantees the domain (add eps before sqrt/inverse).
inline Var pow_scalar(Var a, double p) {
  return detail::unary(
      a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); }, "pow");
}

inline Var sqrt(Var a) { return pow_scalar(a, 0.5); }

// Row-wise softmax. An optional constant additive mask (same shape) is applied
// to the logits first; gradients never flow into the mask.
inline Var softmax_rows(Var a, const Matrix* add_mask = nullptr) {
  Matrix out = a.val();
  if (add_mask) {
    if (!add_mask->same_shape(out)) throw std::invalid_argument("softmax mask shape");
    out.map() += add_mask->map();
  }
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double mx = -1e300;
    for (std::size_t c = 0; c < out.cols(); ++c) mx = std::max(mx, out(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < out.cols(); ++c) {
      out(r, c) = std::exp(out(r, c) - mx);
      denom += out(r, c);
    }
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) /= denom;
  }
  int pa = a.idx;
  return a.tape->make(std::move(out), {pa}, [pa](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    const Matrix& y = tp.node(self).value;
    Matrix da(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c)
        da(r, c) = y(r, c) * (g(r, c) - dot);
    }
    tp.accumulate(pa, da);
  });
}

inline Var log_softmax_rows(Var a) {
  Matrix out = a.val();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double mx = -1e300;
    for (std::size_t c = 0; c < out.cols(); ++c) mx = std::max(mx, out(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < out.cols(); ++c) denom += std::exp(out(r, c) - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) -= lse;
  }
  int pa = a.idx;
  return a.tape->make(std::move(out), {pa}, [pa](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    const Matrix& y = tp.node(self).value;  // log-probs
    Matrix da(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) gsum += g(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c)
        da(r, c) = g(r, c) - std::exp(y(r, c)) * gsum;
    }
    tp.accumulate(pa, da);
  });
}

// Rows of a selected by index (with repetition allowed); embedding lookup.
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  Matrix out(idx.size(), a.val().cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= a.val().rows()) throw std::out_of_range("gather_rows index");
    out.map().row((Eigen::Index)r) = a.val().map().row((Eigen::Index)idx[r]);
  }
  int pa = a.idx;
  std::size_t rows = a.val().rows(), cols = a.val().cols();
  return a.tape->make(std::move(out), {pa},
                      [pa, idx = std::move(idx), rows, cols](Tape& tp, int self) {
                        const Matrix& g = tp.node(self).grad;
                        Matrix da(rows, cols, 0.0);
                        for (std::size_t r = 0; r < idx.size(); ++r)
                          da.map().row((Eigen::Index)idx[r]) +=
                              g.map().row((Eigen::Index)r);
                        tp.accumulate(pa, da);
                      });
}

// Picks a(r_i, c_i) for each coordinate pair into an n x 1 column.
inline Var gather_elems(Var a, std::vector<std::pair<std::size_t, std::size_t>> coords) {
  Matrix out(coords.size(), 1);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    auto [r, c] = coords[i];
    if (r >= a.val().rows() || c >= a.val().cols())
      throw std::out_of_range("gather_elems coordinate");
    out(i, 0) = a.val()(r, c);
  }
  int pa = a.idx;
  std::size_t rows = a.val().rows(), cols = a.val().cols();
  return a.tape->make(std::move(out), {pa},
                      [pa, coords = std::move(coords), rows, cols](Tape& tp, int self) {
                        const Matrix& g = tp.node(self).grad;
                        Matrix da(rows, cols, 0.0);
                        for (std::size_t i = 0; i < coords.size(); ++i)
                          da(coords[i].first, coords[i].second) += g(i, 0);
                        tp.accumulate(pa, da);
                      });
}

// Square matrix with its diagonal overwritten by a constant; the diagonal
// carries no gradient.
inline Var fill_diagonal(Var a, double c) {
  if (a.val().rows() != a.val().cols())
    throw std::invalid_argument("fill_diagonal: square required");
  Matrix out = a.val();
  for (std::size_t i = 0; i < out.rows(); ++i) out(i, i) = c;
  int pa = a.idx;
  return a.tape->make(std::move(out), {pa}, [pa](Tape& tp, int self) {
    Matrix g = tp.node(self).grad;
    for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) = 0.0;
    tp.accumulate(pa, g);
  });
}

// Inverted dropout. Identity when training=false or p=0.
inline Var dropout(Var a, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const double keep = 1.0 - p;
  Matrix mask(a.val().rows(), a.val().cols());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  Matrix out = a.val();
  out.map() = out.map().cwiseProduct(mask.map());
  int pa = a.idx;
  return a.tape->make(std::move(out), {pa},
                      [pa, mask = std::move(mask)](Tape& tp, int self) {
                        Matrix g = tp.node(self).grad;
                        g.map() = g.map().cwiseProduct(mask.map());
                        tp.accumulate(pa, g);
                      });
}

// Value passes through, gradient does not.
inline Var stopgrad(Var a) { return a.tape->constant(a.val()); }

// Row-wise layer norm with affine parameters (gamma, beta are 1xD).
inline Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5) {
  Tape& t = tape_of(x, gamma);
  if (beta.tape != &t) throw std::logic_error("layer_norm: foreign beta");
  const std::size_t N = x.val().rows(), D = x.val().cols();
  if (gamma.val().rows() != 1 || gamma.val().cols() != D || !gamma.val().same_shape(beta.val()))
    throw std::invalid_argument("layer_norm: affine shape mismatch");
  Matrix xhat(N, D), inv_std(N, 1), out(N, D);
  for (std::size_t r = 0; r < N; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < D; ++c) mu += x.val()(r, c);
    mu /= (double)D;
    double var = 0.0;
    for (std::size_t c = 0; c < D; ++c) {
      const double d = x.val()(r, c) - mu;
      var += d * d;
    }
    var /= (double)D;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std(r, 0) = is;
    for (std::size_t c = 0; c < D; ++c) {
      xhat(r, c) = (x.val()(r, c) - mu) * is;
      out(r, c) = gamma.val()(0, c) * xhat(r, c) + beta.val()(0, c);
    }
  }
  int px = x.idx, pg = gamma.idx, pb = beta.idx;
  return t.make(std::move(out), {px, pg, pb},
                [px, pg, pb, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& tp, int self) {
                  const Matrix& g = tp.node(self).grad;
                  const std::size_t N = g.rows(), D = g.cols();
                  const Matrix& gm = tp.value(pg);
                  Matrix dgamma(1, D, 0.0), dbeta(1, D, 0.0), dx(N, D);
                  for (std::size_t r = 0; r < N; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t c = 0; c < D; ++c) {
                      const double dxh = g(r, c) * gm(0, c);
                      m1 += dxh;
                      m2 += dxh * xhat(r, c);
                      dgamma(0, c) += g(r, c) * xhat(r, c);
                      dbeta(0, c) += g(r, c);
                    }
                    m1 /= (double)D;
                    m2 /= (double)D;
                    for (std::size_t c = 0; c < D; ++c) {
                      const double dxh = g(r, c) * gm(0, c);
                      dx(r, c) = inv_std(r, 0) * (dxh - m1 - xhat(r, c) * m2);
                    }
                  }
                  tp.accumulate(px, dx);
                  tp.accumulate(pg, dgamma);
                  tp.accumulate(pb, dbeta);
                });
}

// Mean of a_i log sigmoid(x_i) + b_i log(1 - sigmoid(x_i)) terms, negated:
//   L = -(1/N) sum_i [ a_i log s(x_i) + b_i log(1 - s(x_i)) ]
// computed via stable softplus. Coefficient matrices a, b are constants; a
// positive-weighted BCE uses a = w_pos * y and b = (1 - y).
inline Var bce_logits(Var x, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(x.val()) || !b.same_shape(x.val()))
    throw std::invalid_argument("bce_logits: shape mismatch");
  const std::size_t n = x.val().size();
  auto softplus = [](double v) {
    return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  };
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x.val()[i];
    // -log s(x) = softplus(-x); -log(1-s(x)) = softplus(x)
    loss += a[i] * softplus(-xi) + b[i] * softplus(xi);
  }
  loss /= (double)n;
  Matrix out(1, 1);
  out(0, 0) = loss;
  int px = x.idx;
  Matrix ac = a, bc = b;
  return x.tape->make(std::move(out), {px},
                      [px, ac = std::move(ac), bc = std::move(bc)](Tape& tp, int self) {
                        const double g = tp.node(self).grad(0, 0);
                        const Matrix& xv = tp.value(px);
                        const std::size_t n = xv.size();
                        Matrix dx(xv.rows(), xv.cols());
                        for (std::size_t i = 0; i < n; ++i) {
                          const double s = xv[i] >= 0.0
                                               ? 1.0 / (1.0 + std::exp(-xv[i]))
                                               : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
                          dx[i] = g * ((ac[i] + bc[i]) * s - ac[i]) / (double)n;
                        }
                        tp.accumulate(px, dx);
                      });
}

// -(1/N) sum_i log_softmax(x)_{i, t_i}
inline Var cross_entropy_rows(Var logits, const std::vector<std::size_t>& targets) {
  if (targets.size() != logits.val().rows())
    throw std::invalid_argument("cross_entropy: target count mismatch");
  Var lsm = log_softmax_rows(logits);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  coords.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) coords.emplace_back(i, targets[i]);
  return scale(sum_all(gather_elems(lsm, std::move(coords))), -1.0 / (double)targets.size());
}

// Rows scaled to unit L2 norm (eps keeps zero rows finite).
inline Var normalize_rows(Var x, double eps = 1e-12) {
  Var sq = rowsum(mul(x, x));
  Var inv_norm = pow_scalar(add_scalar(sq, eps), -0.5);
  return scale_rows(x, inv_norm);
}

inline Var mse(Var pred, const Matrix& target) {
  Var diff = sub(pred, pred.tape->constant(target));
  return mean_all(mul(diff, diff));
}

inline Var l1(Var pred, const Matrix& target) {
  Var diff = sub(pred, pred.tape->constant(target));
  return mean_all(abs(diff));
}

}  // namespace ag
}  // namespace voxalign
