#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "rdgp/autodiff.hpp"
#include "rdgp/gegenbauer.hpp"
#include "rdgp/sphere.hpp"

// Real spherical harmonics.
//
// On S_2 the basis is evaluated through associated-Legendre recurrences in
// the colatitude variable z = x_3, with the sin/cos longitude factors carried
// as the polynomials c_m = Re (x_1 + i x_2)^m and s_m = Im (x_1 + i x_2)^m.
// Everything stays polynomial in the embedding coordinates, so evaluation is
// smooth across the poles and safe to differentiate.
//
// On S_d the basis comes from the recursive Gegenbauer-product construction
// over hyperspherical angles, kept in "solid" (pre-multiplied) form for the
// same reason.

namespace rdgp {

inline double laplace_eigenvalue(int k, int d) {
  if (k < 0 || d < 1) throw std::invalid_argument("laplace_eigenvalue: bad arguments");
  return static_cast<double>(k) * (k + d - 1);
}

inline int harmonic_count(int k, int d) {
  if (k < 0 || d < 2) throw std::invalid_argument("harmonic_count: bad arguments");
  if (k == 0) return 1;
  long double logn = std::log(static_cast<long double>(2 * k + d - 1)) +
                     std::lgamma(static_cast<long double>(k + d - 1)) -
                     std::lgamma(static_cast<long double>(k + 1)) -
                     std::lgamma(static_cast<long double>(d));
  return static_cast<int>(std::llround(std::exp(logn)));
}

inline int total_harmonic_count(int max_degree, int d) {
  int n = 0;
  for (int k = 0; k <= max_degree; ++k) n += harmonic_count(k, d);
  return n;
}

// surface volume of S_d embedded in R^{d+1}
inline double sphere_volume(int d) {
  return 2.0 * std::pow(M_PI, 0.5 * (d + 1)) / std::tgamma(0.5 * (d + 1));
}

namespace detail {

// sin/cos multiple-angle polynomials: c_m + i s_m = (x + i y)^m
template <typename T>
void multiple_angle(const T& x, const T& y, int max_m, std::vector<T>& c, std::vector<T>& s) {
  c.clear();
  s.clear();
  c.push_back(ones_like(x));
  s.push_back(ones_like(x) * 0.0);
  for (int m = 1; m <= max_m; ++m) {
    c.push_back(c[m - 1] * x - s[m - 1] * y);
    s.push_back(s[m - 1] * x + c[m - 1] * y);
  }
}

// Q_{k,m}(z) = P_k^m(z) / (1-z^2)^{m/2} (no Condon-Shortley phase) and its
// z-derivative, for 0 <= m <= k <= K.
template <typename T>
struct LegendreTables {
  // q[k][m], dq[k][m]
  std::vector<std::vector<T>> q, dq;
};

template <typename T>
LegendreTables<T> legendre_tables(const T& z, int K, bool with_deriv) {
  LegendreTables<T> t;
  t.q.assign(K + 1, {});
  if (with_deriv) t.dq.assign(K + 1, {});
  for (int k = 0; k <= K; ++k) {
    t.q[k].resize(k + 1, ones_like(z) * 0.0);
    if (with_deriv) t.dq[k].resize(k + 1, ones_like(z) * 0.0);
  }
  double dfact = 1.0;  // (2m-1)!!
  for (int m = 0; m <= K; ++m) {
    if (m > 0) dfact *= 2 * m - 1;
    t.q[m][m] = ones_like(z) * dfact;
    if (with_deriv) t.dq[m][m] = ones_like(z) * 0.0;
    if (m + 1 <= K) {
      t.q[m + 1][m] = z * ((2 * m + 1) * dfact);
      if (with_deriv) t.dq[m + 1][m] = ones_like(z) * ((2 * m + 1) * dfact);
    }
    for (int k = m + 2; k <= K; ++k) {
      double a = static_cast<double>(2 * k - 1) / (k - m);
      double b = static_cast<double>(k - 1 + m) / (k - m);
      t.q[k][m] = z * t.q[k - 1][m] * a - t.q[k - 2][m] * b;
      if (with_deriv)
        t.dq[k][m] = (t.q[k - 1][m] + z * t.dq[k - 1][m]) * a - t.dq[k - 2][m] * b;
    }
  }
  return t;
}

// orthonormalisation constant for the real harmonic of degree k, order m
inline double sh_norm_s2(int k, int m) {
  double logr = std::lgamma(k - m + 1.0) - std::lgamma(k + m + 1.0);
  double n = std::sqrt((2.0 * k + 1.0) / (4.0 * M_PI) * std::exp(logr));
  return m > 0 ? n * std::sqrt(2.0) : n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// batched S_2 harmonics on the autodiff graph

struct HarmonicBasisS2 {
  int max_degree = -1;
  bool with_grad = false;
  // value[k]: n x (2k+1), columns ordered j = -k..k (sin |j| for j < 0,
  // zonal at j = 0, cos j for j > 0)
  std::vector<ag::Mat> value;
  // Euclidean partials of the polynomial extension, same shapes
  std::vector<std::array<ag::Mat, 3>> dvalue;
};

inline HarmonicBasisS2 scalar_harmonics_s2_batch(const ag::Mat& X, int K, bool with_grad) {
  if (X.cols() != 3) throw std::invalid_argument("scalar_harmonics_s2_batch: points must be n x 3");
  if (K < 0) throw std::invalid_argument("scalar_harmonics_s2_batch: negative degree");
  ag::Mat x = ag::cols(X, 0, 1), y = ag::cols(X, 1, 1), z = ag::cols(X, 2, 1);

  std::vector<ag::Mat> c, s;
  detail::multiple_angle(x, y, K, c, s);
  auto leg = detail::legendre_tables(z, K, with_grad);

  HarmonicBasisS2 basis;
  basis.max_degree = K;
  basis.with_grad = with_grad;
  for (int k = 0; k <= K; ++k) {
    std::vector<ag::Mat> colv, dxv, dyv, dzv;
    for (int j = -k; j <= k; ++j) {
      int m = std::abs(j);
      double nrm = detail::sh_norm_s2(k, m);
      const ag::Mat& ang = j < 0 ? s[m] : c[m];
      ag::Mat val = m == 0 ? leg.q[k][0] * nrm : ang * leg.q[k][m] * nrm;
      colv.push_back(val);
      if (with_grad) {
        if (m == 0) {
          dxv.push_back(val * 0.0);
          dyv.push_back(val * 0.0);
          dzv.push_back(leg.dq[k][0] * nrm);
        } else {
          // d/dx (c_m) = m c_{m-1}, d/dy (c_m) = -m s_{m-1}
          // d/dx (s_m) = m s_{m-1}, d/dy (s_m) =  m c_{m-1}
          ag::Mat dang_dx = (j < 0 ? s[m - 1] : c[m - 1]) * static_cast<double>(m);
          ag::Mat dang_dy = (j < 0 ? c[m - 1] : ag::neg(s[m - 1])) * static_cast<double>(m);
          dxv.push_back(dang_dx * leg.q[k][m] * nrm);
          dyv.push_back(dang_dy * leg.q[k][m] * nrm);
          dzv.push_back(ang * leg.dq[k][m] * nrm);
        }
      }
    }
    basis.value.push_back(ag::concat_cols(colv));
    if (with_grad)
      basis.dvalue.push_back({ag::concat_cols(dxv), ag::concat_cols(dyv), ag::concat_cols(dzv)});
  }
  return basis;
}

// Tangential-gradient fields of the scalar harmonics, normalised by
// 1/sqrt(lambda_k): the divergence-type vector harmonics.  Returns, per
// degree k = 1..K, the three embedding components, each n x (2k+1).
struct VectorBasisS2 {
  int max_degree = 0;
  // div[k-1][c] and curl[k-1][c], c = 0,1,2
  std::vector<std::array<ag::Mat, 3>> div, curl;
};

inline VectorBasisS2 vector_harmonics_s2_batch(const ag::Mat& X, int K,
                                               const HarmonicBasisS2& scalar) {
  if (!scalar.with_grad || scalar.max_degree < K)
    throw std::logic_error("vector_harmonics_s2_batch: scalar basis lacks gradients");
  ag::Mat x = ag::cols(X, 0, 1), y = ag::cols(X, 1, 1), z = ag::cols(X, 2, 1);
  VectorBasisS2 out;
  out.max_degree = K;
  for (int k = 1; k <= K; ++k) {
    Eigen::Index w = 2 * k + 1;
    const auto& d = scalar.dvalue[k];
    // radial component <x, grad>
    ag::Mat radial = ag::mul(ag::bcast_cols(x, w), d[0]) + ag::mul(ag::bcast_cols(y, w), d[1]) +
                     ag::mul(ag::bcast_cols(z, w), d[2]);
    double inv_sqrt_lambda = 1.0 / std::sqrt(laplace_eigenvalue(k, 2));
    std::array<ag::Mat, 3> dv = {
        (d[0] - ag::mul(ag::bcast_cols(x, w), radial)) * inv_sqrt_lambda,
        (d[1] - ag::mul(ag::bcast_cols(y, w), radial)) * inv_sqrt_lambda,
        (d[2] - ag::mul(ag::bcast_cols(z, w), radial)) * inv_sqrt_lambda};
    // curl-type: x cross div-type
    std::array<ag::Mat, 3> cv = {
        ag::mul(ag::bcast_cols(y, w), dv[2]) - ag::mul(ag::bcast_cols(z, w), dv[1]),
        ag::mul(ag::bcast_cols(z, w), dv[0]) - ag::mul(ag::bcast_cols(x, w), dv[2]),
        ag::mul(ag::bcast_cols(x, w), dv[1]) - ag::mul(ag::bcast_cols(y, w), dv[0])};
    out.div.push_back(std::move(dv));
    out.curl.push_back(std::move(cv));
  }
  return out;
}

// ---------------------------------------------------------------------------
// batched S_d harmonics (recursive Gegenbauer-product construction)

struct HarmonicBasisSd {
  int max_degree = -1;
  int d = 0;
  std::vector<ag::Mat> value;  // value[k]: n x N(k, d)
};

namespace detail {

template <typename T>
T square_of(const T& x) {
  return x * x;
}

// Solid-form harmonics over the first `ncoords` coordinates: the degree-k
// entries equal r^k Y_k(u) for u on S_{ncoords-1}, polynomials in the
// coordinates.  Ordering is the recursive one (inner degree ascending).
template <typename T>
std::vector<std::vector<T>> solid_harmonics_rec(const std::vector<T>& coords, int ncoords,
                                                int K) {
  std::vector<std::vector<T>> out(K + 1);
  if (ncoords == 2) {
    std::vector<T> c, s;
    multiple_angle(coords[0], coords[1], K, c, s);
    out[0].push_back(c[0] * (1.0 / std::sqrt(2.0 * M_PI)));
    for (int m = 1; m <= K; ++m) {
      out[m].push_back(c[m] * (1.0 / std::sqrt(M_PI)));
      out[m].push_back(s[m] * (1.0 / std::sqrt(M_PI)));
    }
    return out;
  }
  int dsub = ncoords - 1;  // sphere dimension of this level
  auto inner = solid_harmonics_rec(coords, ncoords - 1, K);
  const T& z = coords[ncoords - 1];
  // squared radius of this level's subvector; the recursion runs in solid
  // (pre-multiplied) form, so inner arguments are not unit vectors
  T s2 = square_of(coords[0]);
  for (int c = 1; c < ncoords; ++c) s2 = s2 + square_of(coords[c]);
  for (int k = 0; k <= K; ++k) {
    for (int l = 0; l <= k; ++l) {
      double alpha = l + 0.5 * (dsub - 1);
      auto geg = gegenbauer_sequence_homogeneous(k - l, alpha, z, s2);
      // 1 / L2 norm of C_{k-l}^(alpha) under the weight (1-t^2)^(alpha-1/2)
      int n = k - l;
      double logh = std::log(M_PI) + (1.0 - 2.0 * alpha) * std::log(2.0) +
                    std::lgamma(n + 2.0 * alpha) - std::lgamma(n + 1.0) -
                    std::log(n + alpha) - 2.0 * std::lgamma(alpha);
      double b = std::exp(-0.5 * logh);
      T a = geg[n] * b;
      for (const auto& sub : inner[l]) out[k].push_back(a * sub);
    }
  }
  return out;
}

}  // namespace detail

inline HarmonicBasisSd scalar_harmonics_sd_batch(const ag::Mat& X, int d, int K) {
  if (d < 2) throw std::invalid_argument("scalar_harmonics_sd_batch: need d >= 2");
  if (X.cols() != d + 1)
    throw std::invalid_argument("scalar_harmonics_sd_batch: points must be n x (d+1)");
  std::vector<ag::Mat> coords;
  for (int c = 0; c <= d; ++c) coords.push_back(ag::cols(X, c, 1));
  auto lists = detail::solid_harmonics_rec<ag::Mat>(coords, d + 1, K);
  HarmonicBasisSd basis;
  basis.max_degree = K;
  basis.d = d;
  for (int k = 0; k <= K; ++k) {
    if (static_cast<int>(lists[k].size()) != harmonic_count(k, d))
      throw std::logic_error("scalar_harmonics_sd_batch: count mismatch");
    basis.value.push_back(ag::concat_cols(lists[k]));
  }
  return basis;
}

// ---------------------------------------------------------------------------
// pointwise evaluation (plain doubles through the same templated cores)

// all harmonics of degree 0..K at x, degree-major, order -k..k
inline Eigen::VectorXd scalar_harmonics_s2(const SpherePoint& x, int K) {
  if (x.dim() != 2) throw std::invalid_argument("scalar_harmonics_s2: point not on S_2");
  if (K < 0) throw std::invalid_argument("scalar_harmonics_s2: negative degree");
  double xc = x.coords(0), yc = x.coords(1), zc = x.coords(2);
  std::vector<double> c, s;
  detail::multiple_angle(xc, yc, K, c, s);
  auto leg = detail::legendre_tables(zc, K, false);
  Eigen::VectorXd out((K + 1) * (K + 1));
  int at = 0;
  for (int k = 0; k <= K; ++k)
    for (int j = -k; j <= k; ++j) {
      int m = std::abs(j);
      double nrm = detail::sh_norm_s2(k, m);
      out(at++) = m == 0 ? nrm * leg.q[k][0] : nrm * leg.q[k][m] * (j < 0 ? s[m] : c[m]);
    }
  return out;
}

struct VectorHarmonics {
  std::vector<TangentVector> div, curl;  // degree-major, order -k..k within degree
};

inline VectorHarmonics vector_harmonics_s2(const SpherePoint& x, int K) {
  if (x.dim() != 2) throw std::invalid_argument("vector_harmonics_s2: point not on S_2");
  if (K < 0) throw std::invalid_argument("vector_harmonics_s2: negative degree");
  VectorHarmonics out;
  if (K == 0) return out;
  double xc = x.coords(0), yc = x.coords(1), zc = x.coords(2);
  std::vector<double> c, s;
  detail::multiple_angle(xc, yc, K, c, s);
  auto leg = detail::legendre_tables(zc, K, true);
  Eigen::Vector3d pos = x.coords;
  for (int k = 1; k <= K; ++k) {
    double inv_sqrt_lambda = 1.0 / std::sqrt(laplace_eigenvalue(k, 2));
    for (int j = -k; j <= k; ++j) {
      int m = std::abs(j);
      double nrm = detail::sh_norm_s2(k, m);
      Eigen::Vector3d grad;
      if (m == 0) {
        grad << 0.0, 0.0, nrm * leg.dq[k][0];
      } else {
        double dang_dx = m * (j < 0 ? s[m - 1] : c[m - 1]);
        double dang_dy = m * (j < 0 ? c[m - 1] : -s[m - 1]);
        double ang = j < 0 ? s[m] : c[m];
        grad << nrm * dang_dx * leg.q[k][m], nrm * dang_dy * leg.q[k][m],
            nrm * ang * leg.dq[k][m];
      }
      Eigen::Vector3d dv = inv_sqrt_lambda * (grad - pos.dot(grad) * pos);
      out.div.emplace_back(x, Vec(dv));
      out.curl.emplace_back(x, Vec(pos.cross(dv)));
    }
  }
  return out;
}

// all harmonics of degree 0..K on S_d at x, degree-major, recursive ordering
inline Eigen::VectorXd scalar_harmonics_sd(const SpherePoint& x, int K) {
  int d = x.dim();
  if (d < 2) throw std::invalid_argument("scalar_harmonics_sd: need d >= 2");
  std::vector<double> coords(x.coords.data(), x.coords.data() + d + 1);
  auto lists = detail::solid_harmonics_rec<double>(coords, d + 1, K);
  Eigen::VectorXd out(total_harmonic_count(K, d));
  int at = 0;
  for (int k = 0; k <= K; ++k)
    for (double v : lists[k]) out(at++) = v;
  return out;
}

}  // namespace rdgp
