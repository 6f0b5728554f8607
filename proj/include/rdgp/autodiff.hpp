#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records one computation; Mat is a handle to a matrix value that may
// or may not be tracked on a tape.  Operations on untracked handles evaluate
// eagerly and record nothing, so the same model code serves both training
// (gradients) and plain evaluation.

namespace rdgp::ag {

using Md = Eigen::MatrixXd;

class Tape;

class Mat {
 public:
  Mat() = default;
  Mat(std::shared_ptr<const Md> v, Tape* tape, int id)
      : v_(std::move(v)), tape_(tape), id_(id) {}

  static Mat constant(Md v) {
    return Mat(std::make_shared<const Md>(std::move(v)), nullptr, -1);
  }
  static Mat scalar(double v) {
    Md m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  bool defined() const { return static_cast<bool>(v_); }
  const Md& value() const { return *v_; }
  std::shared_ptr<const Md> shared() const { return v_; }
  bool tracked() const { return tape_ != nullptr && id_ >= 0; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  Eigen::Index rows() const { return v_->rows(); }
  Eigen::Index cols() const { return v_->cols(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }
  double scalar_value() const {
    assert(is_scalar());
    return (*v_)(0, 0);
  }

 private:
  std::shared_ptr<const Md> v_;
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Md&)>;

  int emit(const std::shared_ptr<const Md>& value, BackFn back) {
    nodes_.push_back(Node{value->rows(), value->cols(), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Mat leaf(Md value) {
    auto v = std::make_shared<const Md>(std::move(value));
    int id = emit(v, BackFn());
    return Mat(v, this, id);
  }

  void accumulate(int id, const Md& g) {
    if (!adj_set_[id]) {
      adj_[id] = g;
      adj_set_[id] = 1;
    } else {
      adj_[id] += g;
    }
  }

  // Backpropagates from a 1x1 root node.  Adjoints of leaves are then
  // available through adjoint().
  void backward(const Mat& root) {
    if (!root.tracked() || root.tape() != this)
      throw std::logic_error("ag: backward root is not tracked on this tape");
    if (root.rows() != 1 || root.cols() != 1)
      throw std::logic_error("ag: backward root must be scalar");
    adj_.assign(nodes_.size(), Md());
    adj_set_.assign(nodes_.size(), 0);
    accumulate(root.id(), Md::Ones(1, 1));
    for (int i = root.id(); i >= 0; --i) {
      if (!adj_set_[i] || !nodes_[i].back) continue;
      nodes_[i].back(*this, adj_[i]);
    }
  }

  // Adjoint of a node; zeros if the node was not reached.
  Md adjoint(const Mat& node) const {
    if (!node.tracked() || node.tape() != this)
      throw std::logic_error("ag: adjoint of untracked node");
    if (node.id() < static_cast<int>(adj_set_.size()) && adj_set_[node.id()])
      return adj_[node.id()];
    return Md::Zero(node.rows(), node.cols());
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::Index rows, cols;
    BackFn back;
  };
  std::vector<Node> nodes_;
  std::vector<Md> adj_;
  std::vector<char> adj_set_;
};

namespace detail {

inline Tape* result_tape(const Mat& a) { return a.tracked() ? a.tape() : nullptr; }
inline Tape* result_tape(const Mat& a, const Mat& b) {
  Tape* ta = result_tape(a);
  Tape* tb = result_tape(b);
  if (ta && tb && ta != tb) throw std::logic_error("ag: mixing tapes");
  return ta ? ta : tb;
}

inline Mat make(Tape* tape, Md value, Tape::BackFn back) {
  auto v = std::make_shared<const Md>(std::move(value));
  if (!tape) return Mat(v, nullptr, -1);
  int id = tape->emit(v, std::move(back));
  return Mat(v, tape, id);
}

inline void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string("ag: shape mismatch in ") + op);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (shapes must match, or one operand is 1x1)

inline Mat add(const Mat& a, const Mat& b) {
  Tape* t = detail::result_tape(a, b);
  if (a.is_scalar() && !b.is_scalar()) {
    Md out = b.value().array() + a.scalar_value();
    auto back = [a, b](Tape& tp, const Md& g) {
      if (a.tracked()) tp.accumulate(a.id(), Md::Constant(1, 1, g.sum()));
      if (b.tracked()) tp.accumulate(b.id(), g);
    };
    return detail::make(t, std::move(out), back);
  }
  if (b.is_scalar() && !a.is_scalar()) return add(b, a);
  detail::check_same_shape(a, b, "add");
  Md out = a.value() + b.value();
  auto back = [a, b](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), g);
    if (b.tracked()) tp.accumulate(b.id(), g);
  };
  return detail::make(t, std::move(out), back);
}

inline Mat neg(const Mat& a) {
  Md out = -a.value();
  auto back = [a](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), -g);
  };
  return detail::make(detail::result_tape(a), std::move(out), back);
}

inline Mat sub(const Mat& a, const Mat& b) { return add(a, neg(b)); }

inline Mat mul(const Mat& a, const Mat& b) {
  Tape* t = detail::result_tape(a, b);
  if (a.is_scalar() && !b.is_scalar()) {
    Md out = b.value() * a.scalar_value();
    auto back = [a, b](Tape& tp, const Md& g) {
      if (a.tracked())
        tp.accumulate(a.id(), Md::Constant(1, 1, (g.array() * b.value().array()).sum()));
      if (b.tracked()) tp.accumulate(b.id(), g * a.scalar_value());
    };
    return detail::make(t, std::move(out), back);
  }
  if (b.is_scalar() && !a.is_scalar()) return mul(b, a);
  detail::check_same_shape(a, b, "mul");
  Md out = a.value().cwiseProduct(b.value());
  auto back = [a, b](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), g.cwiseProduct(b.value()));
    if (b.tracked()) tp.accumulate(b.id(), g.cwiseProduct(a.value()));
  };
  return detail::make(t, std::move(out), back);
}

inline Mat div(const Mat& a, const Mat& b) {
  Tape* t = detail::result_tape(a, b);
  if (b.is_scalar() && !a.is_scalar()) {
    double bv = b.scalar_value();
    Md out = a.value() / bv;
    auto back = [a, b, bv](Tape& tp, const Md& g) {
      if (a.tracked()) tp.accumulate(a.id(), g / bv);
      if (b.tracked())
        tp.accumulate(b.id(),
                      Md::Constant(1, 1, -(g.array() * a.value().array()).sum() / (bv * bv)));
    };
    return detail::make(t, std::move(out), back);
  }
  if (a.is_scalar() && !b.is_scalar()) {
    Md out = a.scalar_value() / b.value().array();
    auto back = [a, b, out](Tape& tp, const Md& g) {
      if (a.tracked())
        tp.accumulate(a.id(), Md::Constant(1, 1, (g.array() / b.value().array()).sum()));
      if (b.tracked())
        tp.accumulate(b.id(), (-g.array() * out.array() / b.value().array()).matrix());
    };
    return detail::make(t, std::move(out), back);
  }
  detail::check_same_shape(a, b, "div");
  Md out = a.value().cwiseQuotient(b.value());
  auto back = [a, b, out](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), g.cwiseQuotient(b.value()));
    if (b.tracked())
      tp.accumulate(b.id(), (-g.array() * out.array() / b.value().array()).matrix());
  };
  return detail::make(t, std::move(out), back);
}

// double-scalar conveniences
inline Mat add(const Mat& a, double c) {
  Md out = a.value().array() + c;
  auto back = [a](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), g);
  };
  return detail::make(detail::result_tape(a), std::move(out), back);
}
inline Mat mul(const Mat& a, double c) {
  Md out = a.value() * c;
  auto back = [a, c](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), g * c);
  };
  return detail::make(detail::result_tape(a), std::move(out), back);
}

inline Mat operator+(const Mat& a, const Mat& b) { return add(a, b); }
inline Mat operator-(const Mat& a, const Mat& b) { return sub(a, b); }
inline Mat operator*(const Mat& a, const Mat& b) { return mul(a, b); }
inline Mat operator/(const Mat& a, const Mat& b) { return div(a, b); }
inline Mat operator-(const Mat& a) { return neg(a); }
inline Mat operator+(const Mat& a, double c) { return add(a, c); }
inline Mat operator+(double c, const Mat& a) { return add(a, c); }
inline Mat operator-(const Mat& a, double c) { return add(a, -c); }
inline Mat operator-(double c, const Mat& a) { return add(neg(a), c); }
inline Mat operator*(const Mat& a, double c) { return mul(a, c); }
inline Mat operator*(double c, const Mat& a) { return mul(a, c); }
inline Mat operator/(const Mat& a, double c) { return mul(a, 1.0 / c); }
inline Mat operator/(double c, const Mat& a) { return div(Mat::scalar(c), a); }

// ---------------------------------------------------------------------------
// elementwise unary ops

namespace detail {
template <typename FwdFn, typename DerivFn>
Mat unary(const Mat& a, FwdFn fwd, DerivFn deriv) {
  Md out = fwd(a.value().array()).matrix();
  Md d = deriv(a.value().array(), out.array()).matrix();
  auto back = [a, d](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), g.cwiseProduct(d));
  };
  return make(result_tape(a), std::move(out), back);
}
}  // namespace detail

inline Mat exp(const Mat& a) {
  return detail::unary(
      a, [](const auto& x) { return x.exp(); },
      [](const auto&, const auto& y) { return y; });
}
inline Mat log(const Mat& a) {
  return detail::unary(
      a, [](const auto& x) { return x.log(); },
      [](const auto& x, const auto&) { return x.inverse(); });
}
inline Mat sqrt(const Mat& a) {
  return detail::unary(
      a, [](const auto& x) { return x.sqrt(); },
      [](const auto&, const auto& y) { return 0.5 * y.inverse(); });
}
inline Mat square(const Mat& a) {
  return detail::unary(
      a, [](const auto& x) { return x.square(); },
      [](const auto& x, const auto&) { return 2.0 * x; });
}
inline Mat sin(const Mat& a) {
  return detail::unary(
      a, [](const auto& x) { return x.sin(); },
      [](const auto& x, const auto&) { return x.cos(); });
}
inline Mat cos(const Mat& a) {
  return detail::unary(
      a, [](const auto& x) { return x.cos(); },
      [](const auto& x, const auto&) { return -x.sin(); });
}

inline Mat pow_const(const Mat& a, double p) {
  return detail::unary(
      a, [p](const auto& x) { return x.pow(p); },
      [p](const auto& x, const auto&) { return p * x.pow(p - 1.0); });
}

// softplus(x) = log(1 + e^x), numerically stable for large |x|
inline Mat softplus(const Mat& a) {
  return detail::unary(
      a,
      [](const auto& x) {
        return x.unaryExpr([](double v) {
          return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
        });
      },
      [](const auto& x, const auto&) { return 0.5 * (1.0 + (0.5 * x).tanh()); });
}

// max(x, 0); the subgradient at 0 is taken as 0
inline Mat max0(const Mat& a) {
  return detail::unary(
      a, [](const auto& x) { return x.max(0.0); },
      [](const auto& x, const auto&) { return (x > 0.0).template cast<double>(); });
}

namespace detail {
// cos(sqrt(s)) and sinc(sqrt(s)) with series branches so both are smooth in s
// through s = 0 (they are real-analytic in s).
inline double cos_sqrt_val(double s) {
  if (s < 1e-8) return 1.0 - s / 2.0 + s * s / 24.0;
  return std::cos(std::sqrt(s));
}
inline double sinc_sqrt_val(double s) {
  if (s < 1e-8) return 1.0 - s / 6.0 + s * s / 120.0;
  double r = std::sqrt(s);
  return std::sin(r) / r;
}
inline double cos_sqrt_deriv(double s) { return -0.5 * sinc_sqrt_val(s); }
inline double sinc_sqrt_deriv(double s) {
  if (s < 1e-6) return -1.0 / 6.0 + s / 60.0 - s * s / 2520.0;
  return (std::cos(std::sqrt(s)) - sinc_sqrt_val(s)) / (2.0 * s);
}
}  // namespace detail

inline Mat cos_sqrt(const Mat& a) {
  return detail::unary(
      a,
      [](const auto& x) { return x.unaryExpr([](double s) { return detail::cos_sqrt_val(s); }); },
      [](const auto& x, const auto&) {
        return x.unaryExpr([](double s) { return detail::cos_sqrt_deriv(s); });
      });
}
inline Mat sinc_sqrt(const Mat& a) {
  return detail::unary(
      a,
      [](const auto& x) { return x.unaryExpr([](double s) { return detail::sinc_sqrt_val(s); }); },
      [](const auto& x, const auto&) {
        return x.unaryExpr([](double s) { return detail::sinc_sqrt_deriv(s); });
      });
}

// a^b for positive a; both arguments 1x1
inline Mat pow(const Mat& a, const Mat& b) {
  if (!a.is_scalar() || !b.is_scalar())
    throw std::invalid_argument("ag: pow expects scalar operands");
  return exp(mul(b, log(a)));
}

// ---------------------------------------------------------------------------
// linear algebra

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("ag: matmul shape mismatch");
  Md out = a.value() * b.value();
  auto back = [a, b](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), g * b.value().transpose());
    if (b.tracked()) tp.accumulate(b.id(), a.value().transpose() * g);
  };
  return detail::make(detail::result_tape(a, b), std::move(out), back);
}

inline Mat transpose(const Mat& a) {
  Md out = a.value().transpose();
  auto back = [a](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), g.transpose());
  };
  return detail::make(detail::result_tape(a), std::move(out), back);
}

inline Mat sum(const Mat& a) {
  Md out = Md::Constant(1, 1, a.value().sum());
  auto back = [a](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), Md::Constant(a.rows(), a.cols(), g(0, 0)));
  };
  return detail::make(detail::result_tape(a), std::move(out), back);
}

inline Mat rowsum(const Mat& a) {
  Md out = a.value().rowwise().sum();
  auto back = [a](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), g * Md::Ones(1, a.cols()));
  };
  return detail::make(detail::result_tape(a), std::move(out), back);
}

inline Mat colsum(const Mat& a) {
  Md out = a.value().colwise().sum();
  auto back = [a](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), Md::Ones(a.rows(), 1) * g);
  };
  return detail::make(detail::result_tape(a), std::move(out), back);
}

// replicate a column vector (n x 1) across m columns
inline Mat bcast_cols(const Mat& v, Eigen::Index m) {
  if (v.cols() != 1) throw std::invalid_argument("ag: bcast_cols expects a column vector");
  Md out = v.value().replicate(1, m);
  auto back = [v](Tape& tp, const Md& g) {
    if (v.tracked()) tp.accumulate(v.id(), g.rowwise().sum());
  };
  return detail::make(detail::result_tape(v), std::move(out), back);
}

// replicate a row vector (1 x m) across n rows
inline Mat bcast_rows(const Mat& v, Eigen::Index n) {
  if (v.rows() != 1) throw std::invalid_argument("ag: bcast_rows expects a row vector");
  Md out = v.value().replicate(n, 1);
  auto back = [v](Tape& tp, const Md& g) {
    if (v.tracked()) tp.accumulate(v.id(), g.colwise().sum());
  };
  return detail::make(detail::result_tape(v), std::move(out), back);
}

inline Mat fill(const Mat& s, Eigen::Index n, Eigen::Index m) {
  if (!s.is_scalar()) throw std::invalid_argument("ag: fill expects scalar");
  Md out = Md::Constant(n, m, s.scalar_value());
  auto back = [s](Tape& tp, const Md& g) {
    if (s.tracked()) tp.accumulate(s.id(), Md::Constant(1, 1, g.sum()));
  };
  return detail::make(detail::result_tape(s), std::move(out), back);
}

inline Mat block(const Mat& a, Eigen::Index i0, Eigen::Index j0, Eigen::Index r,
                 Eigen::Index c) {
  Md out = a.value().block(i0, j0, r, c);
  auto back = [a, i0, j0, r, c](Tape& tp, const Md& g) {
    if (a.tracked()) {
      Md full = Md::Zero(a.rows(), a.cols());
      full.block(i0, j0, r, c) = g;
      tp.accumulate(a.id(), full);
    }
  };
  return detail::make(detail::result_tape(a), std::move(out), back);
}

inline Mat cols(const Mat& a, Eigen::Index j0, Eigen::Index c) {
  return block(a, 0, j0, a.rows(), c);
}
inline Mat rows(const Mat& a, Eigen::Index i0, Eigen::Index r) {
  return block(a, i0, 0, r, a.cols());
}

inline Mat concat_cols(const std::vector<Mat>& parts) {
  if (parts.empty()) throw std::invalid_argument("ag: concat_cols of nothing");
  Eigen::Index n = parts[0].rows(), m = 0;
  Tape* t = nullptr;
  for (const auto& p : parts) {
    if (p.rows() != n) throw std::invalid_argument("ag: concat_cols row mismatch");
    m += p.cols();
    if (p.tracked()) t = detail::result_tape(parts[0].tracked() ? parts[0] : p, p);
  }
  Md out(n, m);
  Eigen::Index j = 0;
  for (const auto& p : parts) {
    out.middleCols(j, p.cols()) = p.value();
    j += p.cols();
  }
  auto back = [parts](Tape& tp, const Md& g) {
    Eigen::Index j = 0;
    for (const auto& p : parts) {
      if (p.tracked()) tp.accumulate(p.id(), g.middleCols(j, p.cols()));
      j += p.cols();
    }
  };
  return detail::make(t, std::move(out), back);
}

inline Mat concat_rows(const std::vector<Mat>& parts) {
  std::vector<Mat> tr;
  tr.reserve(parts.size());
  for (const auto& p : parts) tr.push_back(transpose(p));
  return transpose(concat_cols(tr));
}

inline Mat diagvec(const Mat& a) {
  Md out = a.value().diagonal();
  auto back = [a](Tape& tp, const Md& g) {
    if (a.tracked()) {
      Md full = Md::Zero(a.rows(), a.cols());
      full.diagonal() = g;
      tp.accumulate(a.id(), full);
    }
  };
  return detail::make(detail::result_tape(a), std::move(out), back);
}

inline Mat diagmat(const Mat& v) {
  if (v.cols() != 1) throw std::invalid_argument("ag: diagmat expects a column vector");
  Md out = Md(v.value().col(0).asDiagonal());
  auto back = [v](Tape& tp, const Md& g) {
    if (v.tracked()) tp.accumulate(v.id(), g.diagonal());
  };
  return detail::make(detail::result_tape(v), std::move(out), back);
}

// lower-triangular matrix from a packed vector (column-major, diagonal included)
inline Mat tril_from_packed(const Mat& v, Eigen::Index n) {
  if (v.cols() != 1 || v.rows() != n * (n + 1) / 2)
    throw std::invalid_argument("ag: tril_from_packed size mismatch");
  Md out = Md::Zero(n, n);
  Eigen::Index idx = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j; i < n; ++i) out(i, j) = v.value()(idx++, 0);
  auto back = [v, n](Tape& tp, const Md& g) {
    if (v.tracked()) {
      Md gv(n * (n + 1) / 2, 1);
      Eigen::Index idx = 0;
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = j; i < n; ++i) gv(idx++, 0) = g(i, j);
      tp.accumulate(v.id(), gv);
    }
  };
  return detail::make(detail::result_tape(v), std::move(out), back);
}

// keep lower triangle (including diagonal), zero the rest
inline Mat tril(const Mat& a) {
  Md out = a.value().triangularView<Eigen::Lower>();
  auto back = [a](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), Md(g.triangularView<Eigen::Lower>()));
  };
  return detail::make(detail::result_tape(a), std::move(out), back);
}

// elementwise select: mask is a constant 0/1 matrix
inline Mat select(const Md& mask, const Mat& a, const Mat& b) {
  detail::check_same_shape(a, b, "select");
  Md out = mask.array() * a.value().array() + (1.0 - mask.array()) * b.value().array();
  auto back = [mask, a, b](Tape& tp, const Md& g) {
    if (a.tracked()) tp.accumulate(a.id(), g.cwiseProduct(mask));
    if (b.tracked()) tp.accumulate(b.id(), (g.array() * (1.0 - mask.array())).matrix());
  };
  return detail::make(detail::result_tape(a, b), std::move(out), back);
}

// ---------------------------------------------------------------------------
// Cholesky and triangular solves

inline Mat cholesky(const Mat& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("ag: cholesky of non-square");
  Eigen::LLT<Md> llt(a.value());
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("ag: cholesky failed (matrix not positive definite)");
  Md L = llt.matrixL();
  auto back = [a, L](Tape& tp, const Md& g) {
    if (!a.tracked()) return;
    // Reverse-mode rule for A = L L^T: abar = Phi(L^T gbar) conjugated back
    // by L^{-1}, then symmetrised.
    Md P = (L.transpose() * g).eval();
    P = Md(P.triangularView<Eigen::Lower>());
    P.diagonal() *= 0.5;
    Md T = L.transpose().triangularView<Eigen::Upper>().solve(P);
    Md abar = L.transpose().triangularView<Eigen::Upper>().solve(T.transpose()).transpose();
    tp.accumulate(a.id(), 0.5 * (abar + abar.transpose()));
  };
  return detail::make(detail::result_tape(a), std::move(L), back);
}

// x = L^{-1} b with L lower triangular
inline Mat tri_solve(const Mat& l, const Mat& b) {
  Md x = l.value().triangularView<Eigen::Lower>().solve(b.value());
  auto back = [l, b, x](Tape& tp, const Md& g) {
    Md gb = l.value().transpose().triangularView<Eigen::Upper>().solve(g);
    if (b.tracked()) tp.accumulate(b.id(), gb);
    if (l.tracked()) {
      Md gl = -(gb * x.transpose());
      tp.accumulate(l.id(), Md(gl.triangularView<Eigen::Lower>()));
    }
  };
  return detail::make(detail::result_tape(l, b), std::move(x), back);
}

// x = L^{-T} b with L lower triangular
inline Mat tri_solve_T(const Mat& l, const Mat& b) {
  Md x = l.value().transpose().triangularView<Eigen::Upper>().solve(b.value());
  auto back = [l, b, x](Tape& tp, const Md& g) {
    Md gb = l.value().triangularView<Eigen::Lower>().solve(g);
    if (b.tracked()) tp.accumulate(b.id(), gb);
    if (l.tracked()) {
      Md gl = -(x * gb.transpose());
      tp.accumulate(l.id(), Md(gl.triangularView<Eigen::Lower>()));
    }
  };
  return detail::make(detail::result_tape(l, b), std::move(x), back);
}

// ---------------------------------------------------------------------------
// small conveniences

inline Mat dot(const Mat& a, const Mat& b) { return sum(mul(a, b)); }

inline Mat trace(const Mat& a) { return sum(diagvec(a)); }

inline Mat logdet_from_cholesky(const Mat& l) { return 2.0 * sum(log(diagvec(l))); }

}  // namespace rdgp::ag
