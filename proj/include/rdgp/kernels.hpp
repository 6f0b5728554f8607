#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "rdgp/autodiff.hpp"
#include "rdgp/gegenbauer.hpp"
#include "rdgp/harmonics.hpp"
#include "rdgp/sphere.hpp"

// Truncated manifold Matern kernels on S_d, evaluated through the addition
// theorem, and the Hodge divergence/curl/compositional kernels on S_2.

namespace rdgp {

constexpr double kInfiniteNu = std::numeric_limits<double>::infinity();

struct MaternSpec {
  double nu = 1.5;      // smoothness; kInfiniteNu gives the squared-exponential limit
  double kappa = 1.0;   // length scale
  double sigma2 = 1.0;  // variance
  int K = 5;            // truncation degree
  int d = 2;            // sphere dimension

  void validate() const {
    if (!(kappa > 0.0) || !(sigma2 > 0.0) || K < 0 || d < 1 || !(nu > 0.0))
      throw std::invalid_argument("MaternSpec: invalid hyperparameters");
  }
};

struct HodgeSpec {
  MaternSpec div, curl;

  void validate() const {
    div.validate();
    curl.validate();
    if (div.d != 2 || curl.d != 2)
      throw std::invalid_argument("HodgeSpec: Hodge kernels require d = 2");
    if (div.K != curl.K)
      throw std::invalid_argument("HodgeSpec: div and curl truncations must match");
  }
};

// Phi_{nu,kappa}(lambda)
inline double spectral_weight(const MaternSpec& spec, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("spectral_weight: negative eigenvalue");
  if (std::isinf(spec.nu)) return std::exp(-0.5 * spec.kappa * spec.kappa * lambda);
  return std::pow(2.0 * spec.nu / (spec.kappa * spec.kappa) + lambda,
                  -spec.nu - 0.5 * spec.d);
}

// c_{k,d} * C_k^(alpha)(1) = N(k,d) / vol(S_d): the degree-k weight of the
// addition theorem evaluated at coincident points.
inline double addition_constant_at_one(int k, int d) {
  return harmonic_count(k, d) / sphere_volume(d);
}

// c_{k,d} itself (documented for test oracles)
inline double addition_constant(int k, int d) {
  double alpha = 0.5 * (d - 1);
  return addition_constant_at_one(k, d) / gegenbauer_at_one(k, alpha);
}

// C_{nu,kappa}: ensures the truncated kernel has k(x, x) = sigma^2 exactly
inline double scalar_normalizer(const MaternSpec& spec) {
  double c = 0.0;
  for (int k = 0; k <= spec.K; ++k)
    c += spectral_weight(spec, laplace_eigenvalue(k, spec.d)) *
         addition_constant_at_one(k, spec.d);
  return c;
}

inline double scalar_matern_kernel_from_dot(const MaternSpec& spec, double t) {
  double alpha = 0.5 * (spec.d - 1);
  t = std::min(1.0, std::max(-1.0, t));
  auto c = gegenbauer_sequence(spec.K, alpha, t);
  double acc = 0.0;
  for (int k = 0; k <= spec.K; ++k)
    acc += spectral_weight(spec, laplace_eigenvalue(k, spec.d)) *
           addition_constant(k, spec.d) * c[k];
  return spec.sigma2 * acc / scalar_normalizer(spec);
}

inline double scalar_matern_kernel(const MaternSpec& spec, const SpherePoint& x,
                                   const SpherePoint& x2) {
  if (x.dim() != spec.d || x2.dim() != spec.d)
    throw std::invalid_argument("scalar_matern_kernel: dimension mismatch");
  return scalar_matern_kernel_from_dot(spec, x.coords.dot(x2.coords));
}

// ---------------------------------------------------------------------------
// Hodge kernels on S_2

// Trace normaliser of one Hodge part: sum_k Phi(lambda_k)/lambda_k *
// ((k+alpha)/alpha) * 2 C_k'(1), so that tr k_part(x, x) = sigma^2.
inline double hodge_part_normalizer(const MaternSpec& spec) {
  if (spec.d != 2) throw std::invalid_argument("hodge_part_normalizer: requires d = 2");
  double alpha = 0.5;
  double c = 0.0;
  for (int k = 1; k <= spec.K; ++k) {
    double lam = laplace_eigenvalue(k, 2);
    c += spectral_weight(spec, lam) / lam * ((k + alpha) / alpha) *
         2.0 * gegenbauer_deriv_at_one(k, alpha);
  }
  return c;
}

namespace detail {

// sum_k w_k [C_k''(t) (P_x x')(P_x' x)^T + C_k'(t) P_x P_x'] for w_k the
// normalised spectral weights of one Hodge part
inline Eigen::Matrix3d hodge_structure_sum(const MaternSpec& spec, const Eigen::Vector3d& x,
                                           const Eigen::Vector3d& x2) {
  double alpha = 0.5;
  double t = std::min(1.0, std::max(-1.0, x.dot(x2)));
  Eigen::Matrix3d px = Eigen::Matrix3d::Identity() - x * x.transpose();
  Eigen::Matrix3d px2 = Eigen::Matrix3d::Identity() - x2 * x2.transpose();
  Eigen::Vector3d u = px * x2;   // P_x x'
  Eigen::Vector3d v = px2 * x;   // P_x' x
  Eigen::Matrix3d rank1 = u * v.transpose();
  Eigen::Matrix3d proj = px * px2;

  auto c1 = gegenbauer_sequence(spec.K - 1, alpha + 1.0, t);
  auto c2 = spec.K >= 2 ? gegenbauer_sequence(spec.K - 2, alpha + 2.0, t) : std::vector<double>{};
  Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
  for (int k = 1; k <= spec.K; ++k) {
    double lam = laplace_eigenvalue(k, 2);
    double w = spectral_weight(spec, lam) / lam * ((k + alpha) / alpha);
    double d1 = 2.0 * alpha * c1[k - 1];
    double d2 = k >= 2 ? 4.0 * alpha * (alpha + 1.0) * c2[k - 2] : 0.0;
    acc += w * (d2 * rank1 + d1 * proj);
  }
  return acc;
}

inline Eigen::Matrix3d cross_matrix(const Eigen::Vector3d& x) {
  Eigen::Matrix3d r;
  r << 0, -x.z(), x.y(), x.z(), 0, -x.x(), -x.y(), x.x(), 0;
  return r;
}

}  // namespace detail

inline Eigen::Matrix3d hodge_div_kernel(const MaternSpec& spec, const SpherePoint& x,
                                        const SpherePoint& x2) {
  if (spec.d != 2 || x.dim() != 2 || x2.dim() != 2)
    throw std::invalid_argument("hodge_div_kernel: requires points on S_2");
  return (spec.sigma2 / hodge_part_normalizer(spec)) *
         detail::hodge_structure_sum(spec, x.coords, x2.coords);
}

inline Eigen::Matrix3d hodge_curl_kernel(const MaternSpec& spec, const SpherePoint& x,
                                         const SpherePoint& x2) {
  if (spec.d != 2 || x.dim() != 2 || x2.dim() != 2)
    throw std::invalid_argument("hodge_curl_kernel: requires points on S_2");
  Eigen::Matrix3d g = detail::hodge_structure_sum(spec, x.coords, x2.coords);
  Eigen::Matrix3d rx = detail::cross_matrix(x.coords);
  Eigen::Matrix3d rx2 = detail::cross_matrix(x2.coords);
  return (spec.sigma2 / hodge_part_normalizer(spec)) * (rx * g * rx2.transpose());
}

inline Eigen::Matrix3d hodge_compositional_kernel(const HodgeSpec& spec, const SpherePoint& x,
                                                  const SpherePoint& x2) {
  return hodge_div_kernel(spec.div, x, x2) + hodge_curl_kernel(spec.curl, x, x2);
}

// ---------------------------------------------------------------------------
// spectral feature maps

// per-feature scaling sqrt(sigma^2 Phi(lambda_deg) / C) for scalar features
inline Eigen::VectorXd scalar_feature_scales(const MaternSpec& spec) {
  double c = scalar_normalizer(spec);
  Eigen::VectorXd s(total_harmonic_count(spec.K, spec.d));
  int at = 0;
  for (int k = 0; k <= spec.K; ++k) {
    double v = std::sqrt(spec.sigma2 * spectral_weight(spec, laplace_eigenvalue(k, spec.d)) / c);
    for (int j = 0; j < harmonic_count(k, spec.d); ++j) s(at++) = v;
  }
  return s;
}

// Psi_{begin:end}(x): entries for basis indices in [begin, end), degree-major
inline Eigen::VectorXd scalar_feature_map(const MaternSpec& spec, const SpherePoint& x,
                                          int begin, int end) {
  int total = total_harmonic_count(spec.K, spec.d);
  if (begin < 0 || end > total || begin > end)
    throw std::out_of_range("scalar_feature_map: range exceeds truncation");
  Eigen::VectorXd phi = spec.d == 2 ? scalar_harmonics_s2(x, spec.K)
                                    : scalar_harmonics_sd(x, spec.K);
  Eigen::VectorXd s = scalar_feature_scales(spec);
  return (phi.array() * s.array()).segment(begin, end - begin);
}

// per-column scaling sqrt(4 pi sigma^2 Phi(lambda) / C_part) for the
// normalised eigenfields of one Hodge part, degree-major k = 1..K
inline Eigen::VectorXd hodge_feature_scales(const MaternSpec& spec) {
  double c = hodge_part_normalizer(spec);
  Eigen::VectorXd s(total_harmonic_count(spec.K, 2) - 1);
  int at = 0;
  for (int k = 1; k <= spec.K; ++k) {
    double v =
        std::sqrt(4.0 * M_PI * spec.sigma2 * spectral_weight(spec, laplace_eigenvalue(k, 2)) / c);
    for (int j = 0; j < 2 * k + 1; ++j) s(at++) = v;
  }
  return s;
}

// Columns are tangent feature fields at x: div-type block then curl-type
// block, indices in [begin, end) over the combined ordering.
inline Eigen::MatrixXd vector_feature_map(const HodgeSpec& spec, const SpherePoint& x,
                                          int begin, int end) {
  spec.validate();
  int per_kind = total_harmonic_count(spec.div.K, 2) - 1;
  int total = 2 * per_kind;
  if (begin < 0 || end > total || begin > end)
    throw std::out_of_range("vector_feature_map: range exceeds truncation");
  auto vh = vector_harmonics_s2(x, spec.div.K);
  Eigen::VectorXd sd = hodge_feature_scales(spec.div);
  Eigen::VectorXd sc = hodge_feature_scales(spec.curl);
  Eigen::MatrixXd out(3, end - begin);
  for (int idx = begin; idx < end; ++idx) {
    if (idx < per_kind)
      out.col(idx - begin) = sd(idx) * vh.div[idx].vec;
    else
      out.col(idx - begin) = sc(idx - per_kind) * vh.curl[idx - per_kind].vec;
  }
  return out;
}

// ---------------------------------------------------------------------------
// graph-side spectra (trainable hyperparameters)

struct MaternParamsAg {
  ag::Mat nu;      // 1x1; ignored when inf_nu
  ag::Mat kappa;   // 1x1
  ag::Mat sigma2;  // 1x1
  bool inf_nu = false;
  int K = 5;
  int d = 2;
};

struct SpectrumAg {
  std::vector<ag::Mat> phi;  // 1x1 nodes, k = 0..K
  ag::Mat scalar_norm;       // sum_k phi_k N(k,d)/vol
  ag::Mat hodge_norm;        // defined for d = 2 only
  ag::Mat sigma2;
  int K = 0;
  int d = 2;
};

inline SpectrumAg make_spectrum(const MaternParamsAg& p) {
  SpectrumAg s;
  s.K = p.K;
  s.d = p.d;
  s.sigma2 = p.sigma2;
  ag::Mat kap2 = ag::square(p.kappa);
  ag::Mat exponent;
  ag::Mat base_shift;
  if (!p.inf_nu) {
    exponent = ag::neg(p.nu + 0.5 * p.d);
    base_shift = 2.0 * p.nu / kap2;
  }
  for (int k = 0; k <= p.K; ++k) {
    double lam = laplace_eigenvalue(k, p.d);
    if (p.inf_nu)
      s.phi.push_back(ag::exp(kap2 * (-0.5 * lam)));
    else
      s.phi.push_back(ag::pow(base_shift + lam, exponent));
  }
  ag::Mat sn = ag::Mat::scalar(0.0);
  for (int k = 0; k <= p.K; ++k)
    sn = sn + s.phi[k] * addition_constant_at_one(k, p.d);
  s.scalar_norm = sn;
  if (p.d == 2) {
    double alpha = 0.5;
    ag::Mat hn = ag::Mat::scalar(0.0);
    for (int k = 1; k <= p.K; ++k) {
      double lam = laplace_eigenvalue(k, 2);
      hn = hn + s.phi[k] * ((k + alpha) / alpha * 2.0 * gegenbauer_deriv_at_one(k, alpha) / lam);
    }
    s.hodge_norm = hn;
  }
  return s;
}

// batched scalar kernel values from a matrix of dot products
inline ag::Mat scalar_kernel_from_dots(const SpectrumAg& s, const ag::Mat& t) {
  double alpha = 0.5 * (s.d - 1);
  auto c = gegenbauer_sequence(s.K, alpha, t);
  ag::Mat acc = ag::mul(s.phi[0] * addition_constant(0, s.d), c[0]);
  for (int k = 1; k <= s.K; ++k)
    acc = acc + ag::mul(s.phi[k] * addition_constant(k, s.d), c[k]);
  return ag::mul(s.sigma2 / s.scalar_norm, acc);
}

}  // namespace rdgp
