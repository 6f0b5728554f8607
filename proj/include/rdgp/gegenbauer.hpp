#pragma once

#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "rdgp/autodiff.hpp"

// Gegenbauer polynomials C_k^(alpha) via the three-term recurrence
//   C_k = (2(k-1+alpha) t C_{k-1} - (k-2+2alpha) C_{k-2}) / k,
//   C_0 = 1, C_1 = 2 alpha t,
// with derivatives obtained from d/dt C_k^(alpha) = 2 alpha C_{k-1}^(alpha+1).
// The recurrence is templated on the value type so the same code runs on
// plain doubles and on batched autodiff matrices.

namespace rdgp {

namespace detail {
template <typename T>
T ones_like(const T&);

template <>
inline double ones_like<double>(const double&) {
  return 1.0;
}
template <>
inline ag::Mat ones_like<ag::Mat>(const ag::Mat& t) {
  return ag::Mat::constant(Eigen::MatrixXd::Ones(t.rows(), t.cols()));
}
}  // namespace detail

// All of C_0^(alpha)(t) .. C_K^(alpha)(t).
template <typename T>
std::vector<T> gegenbauer_sequence(int max_degree, double alpha, const T& t) {
  std::vector<T> c;
  c.reserve(max_degree + 1);
  c.push_back(detail::ones_like(t));
  if (max_degree >= 1) c.push_back(t * (2.0 * alpha));
  for (int k = 2; k <= max_degree; ++k) {
    T next = (t * c[k - 1] * (2.0 * (k - 1 + alpha)) - c[k - 2] * (k - 2 + 2.0 * alpha)) *
             (1.0 / k);
    c.push_back(next);
  }
  return c;
}

// Homogenised sequence: entry n equals r^n C_n^(alpha)(z / r) with s = r^2,
// which is a polynomial in (z, s).  Used by the solid-form harmonics
// recursion, where the argument is a coordinate of an unnormalised subvector.
template <typename T>
std::vector<T> gegenbauer_sequence_homogeneous(int max_degree, double alpha, const T& z,
                                               const T& s) {
  std::vector<T> c;
  c.reserve(max_degree + 1);
  c.push_back(detail::ones_like(z));
  if (max_degree >= 1) c.push_back(z * (2.0 * alpha));
  for (int k = 2; k <= max_degree; ++k) {
    T next = (z * c[k - 1] * (2.0 * (k - 1 + alpha)) -
              s * c[k - 2] * (k - 2 + 2.0 * alpha)) *
             (1.0 / k);
    c.push_back(next);
  }
  return c;
}

// Value, first and second derivative of C_k^(alpha) at t in [-1, 1].
inline std::tuple<double, double, double> gegenbauer(int k, double alpha, double t) {
  if (k < 0) throw std::invalid_argument("gegenbauer: degree must be nonnegative");
  if (alpha <= 0.0) throw std::invalid_argument("gegenbauer: alpha must be positive");
  if (t < -1.0 - 1e-9 || t > 1.0 + 1e-9)
    throw std::domain_error("gegenbauer: t outside [-1, 1]");
  t = std::min(1.0, std::max(-1.0, t));

  auto c0 = gegenbauer_sequence(k, alpha, t);
  double value = c0[k];
  double d1 = 0.0, d2 = 0.0;
  if (k >= 1) {
    auto c1 = gegenbauer_sequence(k - 1, alpha + 1.0, t);
    d1 = 2.0 * alpha * c1[k - 1];
  }
  if (k >= 2) {
    auto c2 = gegenbauer_sequence(k - 2, alpha + 2.0, t);
    d2 = 4.0 * alpha * (alpha + 1.0) * c2[k - 2];
  }
  return {value, d1, d2};
}

// C_k^(alpha)(1) = Gamma(k + 2 alpha) / (Gamma(2 alpha) k!)
inline double gegenbauer_at_one(int k, double alpha) {
  return std::exp(std::lgamma(k + 2.0 * alpha) - std::lgamma(2.0 * alpha) -
                  std::lgamma(k + 1.0));
}

// d/dt C_k^(alpha) at t = 1
inline double gegenbauer_deriv_at_one(int k, double alpha) {
  if (k < 1) return 0.0;
  return 2.0 * alpha * gegenbauer_at_one(k - 1, alpha + 1.0);
}

}  // namespace rdgp
