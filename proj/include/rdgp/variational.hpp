#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "rdgp/autodiff.hpp"
#include "rdgp/gvf.hpp"
#include "rdgp/harmonics.hpp"
#include "rdgp/kernels.hpp"
#include "rdgp/params.hpp"
#include "rdgp/rng.hpp"
#include "rdgp/sphere.hpp"

// Whitened sparse variational layers.  This header holds the exact-GP
// reference, the batched-point plumbing shared by all layers, and the
// interdomain (IV) family; the inducing-location (IL) family lives in
// inducing.hpp.

namespace rdgp {

// ---------------------------------------------------------------------------
// exact GP (reference implementation and test oracle)

struct ExactGp {
  MaternSpec kernel;
  std::vector<SpherePoint> inputs;
  Eigen::VectorXd targets;
  Eigen::VectorXd noise_diag;
};

struct GpPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

namespace detail {
inline Eigen::LLT<Eigen::MatrixXd> jittered_llt(const Eigen::MatrixXd& a, double jitter,
                                                const char* who) {
  Eigen::MatrixXd m = a;
  m.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(std::string(who) + ": Gram matrix not positive definite");
  return llt;
}
}  // namespace detail

inline GpPosterior exact_posterior(const ExactGp& gp, const std::vector<SpherePoint>& stars) {
  const int n = static_cast<int>(gp.inputs.size());
  const int s = static_cast<int>(stars.size());
  Eigen::MatrixXd kxx(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      kxx(i, j) = scalar_matern_kernel(gp.kernel, gp.inputs[i], gp.inputs[j]);
  kxx += Eigen::MatrixXd(gp.noise_diag.asDiagonal());
  Eigen::MatrixXd ksx(s, n);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < n; ++j)
      ksx(i, j) = scalar_matern_kernel(gp.kernel, stars[i], gp.inputs[j]);
  Eigen::MatrixXd kss(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) kss(i, j) = scalar_matern_kernel(gp.kernel, stars[i], stars[j]);

  auto llt = detail::jittered_llt(kxx, 1e-8, "exact_posterior");
  GpPosterior post;
  post.mean = ksx * llt.solve(gp.targets);
  post.cov = kss - ksx * llt.solve(ksx.transpose());
  return post;
}

inline double exact_log_marginal(const ExactGp& gp) {
  const int n = static_cast<int>(gp.inputs.size());
  Eigen::MatrixXd kxx(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      kxx(i, j) = scalar_matern_kernel(gp.kernel, gp.inputs[i], gp.inputs[j]);
  kxx += Eigen::MatrixXd(gp.noise_diag.asDiagonal());
  auto llt = detail::jittered_llt(kxx, 1e-8, "exact_log_marginal");
  double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  double quad = gp.targets.dot(llt.solve(gp.targets));
  return -0.5 * (quad + logdet + n * std::log(2.0 * M_PI));
}

// ---------------------------------------------------------------------------
// batched points with cached harmonic bases

class PointsBatch {
 public:
  explicit PointsBatch(ag::Mat x) : X(std::move(x)) {}

  ag::Mat X;  // n x (d+1)

  Eigen::Index size() const { return X.rows(); }
  int ambient_dim() const { return static_cast<int>(X.cols()); }

  const HarmonicBasisS2& s2_basis(int K, bool grad) const {
    if (s2_.max_degree < K || (grad && !s2_.with_grad)) {
      int deg = std::max(K, s2_.max_degree);
      s2_ = scalar_harmonics_s2_batch(X, deg, grad || s2_.with_grad);
      vec_ = VectorBasisS2{};
    }
    return s2_;
  }

  const VectorBasisS2& s2_vector_basis(int K) const {
    if (vec_.max_degree < K) vec_ = vector_harmonics_s2_batch(X, K, s2_basis(K, true));
    return vec_;
  }

  const HarmonicBasisSd& sd_basis(int d, int K) const {
    if (sd_.max_degree < K || sd_.d != d) sd_ = scalar_harmonics_sd_batch(X, d, K);
    return sd_;
  }

  // orthonormal tangent basis fields, D-1 of them, each n x D.  On S_2 the
  // basis comes from cross products with a fixed auxiliary axis; for d > 2 a
  // Householder reflection pinned to the last coordinate axis is used, which
  // is singular only at the antipode of that axis.
  const std::vector<ag::Mat>& tangent_basis_fields() const {
    if (!basis_.empty()) return basis_;
    const Eigen::Index n = X.rows();
    const int D = ambient_dim();
    if (D == 3) {
      ag::Mat x = ag::cols(X, 0, 1), y = ag::cols(X, 1, 1), z = ag::cols(X, 2, 1);
      Eigen::MatrixXd mask(n, 1);
      for (Eigen::Index i = 0; i < n; ++i)
        mask(i, 0) = std::abs(X.value()(i, 2)) < 0.9 ? 1.0 : 0.0;
      ag::Mat zero = ag::Mat::constant(Eigen::MatrixXd::Zero(n, 1));
      // e3 x p = (-y, x, 0);  e1 x p = (0, -z, y)
      ag::Mat v0 = ag::select(mask, ag::neg(y), zero);
      ag::Mat v1 = ag::select(mask, x, ag::neg(z));
      ag::Mat v2 = ag::select(mask, zero, y);
      ag::Mat nrm = ag::sqrt(ag::square(v0) + ag::square(v1) + ag::square(v2));
      v0 = v0 / nrm;
      v1 = v1 / nrm;
      v2 = v2 / nrm;
      basis_.push_back(ag::concat_cols({v0, v1, v2}));
      ag::Mat w0 = y * v2 - z * v1;
      ag::Mat w1 = z * v0 - x * v2;
      ag::Mat w2 = x * v1 - y * v0;
      basis_.push_back(ag::concat_cols({w0, w1, w2}));
      return basis_;
    }
    // Householder: H = I - 2 u u^T with u || (x + e_D); columns 0..D-2 of H
    // form an orthonormal tangent basis at x
    if ((X.value().col(D - 1).array() + 1.0).minCoeff() < 1e-8)
      throw std::domain_error("tangent_basis_fields: point at the singular antipode");
    std::vector<ag::Mat> coords;
    for (int c = 0; c < D; ++c) coords.push_back(ag::cols(X, c, 1));
    ag::Mat last_plus = coords[D - 1] + 1.0;
    ag::Mat nrm2 = ag::square(last_plus);
    for (int c = 0; c + 1 < D; ++c) nrm2 = nrm2 + ag::square(coords[c]);
    ag::Mat inv_nrm = 1.0 / ag::sqrt(nrm2);
    std::vector<ag::Mat> u;
    for (int c = 0; c + 1 < D; ++c) u.push_back(ag::mul(coords[c], inv_nrm));
    u.push_back(ag::mul(last_plus, inv_nrm));
    for (int j = 0; j + 1 < D; ++j) {
      std::vector<ag::Mat> colsv;
      for (int c = 0; c < D; ++c) {
        ag::Mat v = ag::neg(2.0 * ag::mul(u[c], u[j]));
        if (c == j) v = v + 1.0;
        colsv.push_back(v);
      }
      basis_.push_back(ag::concat_cols(colsv));
    }
    return basis_;
  }

 private:
  mutable HarmonicBasisS2 s2_;
  mutable VectorBasisS2 vec_;
  mutable HarmonicBasisSd sd_;
  mutable std::vector<ag::Mat> basis_;
};

// ---------------------------------------------------------------------------
// marginal moments and reparameterised sampling

struct ScalMoments {
  ag::Mat mean, var;  // n x 1 each
};

// Tangent-basis Gaussian moments of a vector field at a batch of points:
// mean rows are tangent, cov holds the lower triangle of the (D-1)x(D-1)
// covariance in the given basis, entrywise over the batch.
struct VecMoments {
  ag::Mat mean;                           // n x D
  std::vector<ag::Mat> basis;             // D-1 fields, each n x D
  std::vector<std::vector<ag::Mat>> cov;  // cov[i][j], j <= i, each n x 1

  int tangent_dim() const { return static_cast<int>(basis.size()); }
};

namespace detail {
inline void check_covariance_floor(const ag::Mat& v, const char* who) {
  if (v.value().minCoeff() < -1e-8)
    throw std::runtime_error(std::string(who) + ": covariance eigenvalue below -1e-8");
}
}  // namespace detail

// batched Cholesky of the tangent covariance; small negatives are clamped
inline std::vector<std::vector<ag::Mat>> tangent_cholesky(
    const std::vector<std::vector<ag::Mat>>& cov) {
  const int t = static_cast<int>(cov.size());
  std::vector<std::vector<ag::Mat>> l(t);
  for (int i = 0; i < t; ++i) {
    detail::check_covariance_floor(cov[i][i], "tangent_cholesky");
    l[i].resize(i + 1);
    for (int j = 0; j <= i; ++j) {
      ag::Mat acc = cov[i][j];
      for (int k = 0; k < j; ++k) acc = acc - ag::mul(l[i][k], l[j][k]);
      if (j == i)
        l[i][i] = ag::sqrt(ag::max0(acc));
      else
        l[i][j] = acc / (l[j][j] + 1e-150);
    }
  }
  return l;
}

// mean + A eps with A A^T equal to the tangent covariance; eps is n x (D-1)
inline ag::Mat sample_tangent(const VecMoments& m, const ag::Mat& eps) {
  const int t = m.tangent_dim();
  auto l = tangent_cholesky(m.cov);
  ag::Mat out = m.mean;
  const Eigen::Index D = m.mean.cols();
  for (int i = 0; i < t; ++i) {
    ag::Mat u = ag::mul(l[i][0], ag::cols(eps, 0, 1));
    for (int j = 1; j <= i; ++j) u = u + ag::mul(l[i][j], ag::cols(eps, j, 1));
    out = out + ag::mul(ag::bcast_cols(u, D), m.basis[i]);
  }
  return out;
}

inline ag::Mat sample_scalar(const ScalMoments& m, const ag::Mat& eps) {
  detail::check_covariance_floor(m.var, "sample_scalar");
  return m.mean + ag::sqrt(ag::max0(m.var)) * eps;
}

// KL(N(m', S') || N(0, I)) from the whitened mean and the lower-triangular
// factor of S'
inline ag::Mat kl_whitened(const ag::Mat& mprime, const ag::Mat& factor) {
  double dim = static_cast<double>(factor.rows());
  return 0.5 * (ag::sum(ag::square(factor)) + ag::sum(ag::square(mprime)) - dim -
                2.0 * ag::sum(ag::log(ag::diagvec(factor))));
}

// the diagonal extension of the variational family adds
// 1/2 sum_i (d_i - 1 - log d_i) over the tail features
inline ag::Mat kl_diagonal_extension(const ag::Mat& dvec, const std::vector<int>& repeats) {
  ag::Mat acc = ag::Mat::scalar(0.0);
  for (std::size_t lvl = 0; lvl < repeats.size(); ++lvl) {
    ag::Mat d = ag::block(dvec, static_cast<Eigen::Index>(lvl), 0, 1, 1);
    acc = acc + (d - 1.0 - ag::log(d)) * static_cast<double>(repeats[lvl]);
  }
  return acc * 0.5;
}

// ---------------------------------------------------------------------------
// layer interfaces

class ScalarLayer {
 public:
  virtual ~ScalarLayer() = default;
  virtual ScalMoments moments(EvalCtx& ctx, const PointsBatch& pts) const = 0;
  virtual ag::Mat kl(EvalCtx& ctx) const = 0;
  virtual ScalarSample function_sample(const ParameterStore& store, std::uint64_t seed) const = 0;

  struct Posterior {
    Eigen::VectorXd mean, var;
  };
  Posterior posterior(const ParameterStore& store, const std::vector<SpherePoint>& pts) const {
    Eigen::MatrixXd x(pts.size(), pts.front().ambient_dim());
    for (std::size_t i = 0; i < pts.size(); ++i) x.row(i) = pts[i].coords.transpose();
    EvalCtx ctx(nullptr, store);
    PointsBatch batch(ag::Mat::constant(std::move(x)));
    ScalMoments m = moments(ctx, batch);
    return {m.mean.value().col(0), m.var.value().col(0)};
  }
  virtual Eigen::MatrixXd joint_covariance(const ParameterStore& store,
                                           const std::vector<SpherePoint>& pts) const = 0;

  // reparameterised marginal draw at each point: one noise value per point
  Eigen::VectorXd sample_at(const ParameterStore& store, const std::vector<SpherePoint>& pts,
                            const Eigen::MatrixXd& noise) const;
};

class VectorLayer {
 public:
  virtual ~VectorLayer() = default;
  virtual VecMoments moments(EvalCtx& ctx, const PointsBatch& pts) const = 0;
  virtual ag::Mat kl(EvalCtx& ctx) const = 0;
  virtual FieldSample function_sample(const ParameterStore& store, std::uint64_t seed) const = 0;

  struct Posterior {
    Eigen::MatrixXd mean;              // n x D
    std::vector<Eigen::MatrixXd> cov;  // per-point D x D tangent-supported covariance
  };
  Posterior posterior(const ParameterStore& store, const std::vector<SpherePoint>& pts) const {
    const int D = pts.front().ambient_dim();
    Eigen::MatrixXd x(pts.size(), D);
    for (std::size_t i = 0; i < pts.size(); ++i) x.row(i) = pts[i].coords.transpose();
    EvalCtx ctx(nullptr, store);
    PointsBatch batch(ag::Mat::constant(std::move(x)));
    VecMoments m = moments(ctx, batch);
    Posterior post;
    post.mean = m.mean.value();
    const int t = m.tangent_dim();
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
      Eigen::MatrixXd sig = Eigen::MatrixXd::Zero(D, D);
      for (int a = 0; a < t; ++a)
        for (int b = 0; b <= a; ++b) {
          Eigen::VectorXd ba = m.basis[a].value().row(i), bb = m.basis[b].value().row(i);
          double v = m.cov[a][b].value()(i, 0);
          if (a == b)
            sig += v * ba * ba.transpose();
          else
            sig += v * (ba * bb.transpose() + bb * ba.transpose());
        }
      post.cov.push_back(sig);
    }
    return post;
  }
  // joint covariance over stacked components (component-major: index c*n + i)
  virtual Eigen::MatrixXd joint_covariance(const ParameterStore& store,
                                           const std::vector<SpherePoint>& pts) const = 0;

  // reparameterised marginal draw at each point: one tangent-basis noise
  // block (D-1 values) per point; rows of the result are tangent vectors
  Eigen::MatrixXd sample_at(const ParameterStore& store, const std::vector<SpherePoint>& pts,
                            const Eigen::MatrixXd& noise) const;
};

// ---------------------------------------------------------------------------
// interdomain (IV) machinery

namespace detail {

// per-degree scale nodes sqrt(sigma^2 Phi_k / C) for scalar features
inline std::vector<ag::Mat> scalar_scale_nodes(const SpectrumAg& s) {
  std::vector<ag::Mat> out;
  for (int k = 0; k <= s.K; ++k) out.push_back(ag::sqrt(s.sigma2 * s.phi[k] / s.scalar_norm));
  return out;
}

// per-degree scale nodes sqrt(4 pi sigma^2 Phi_k / C_part) for Hodge features
inline std::vector<ag::Mat> hodge_scale_nodes(const SpectrumAg& s) {
  std::vector<ag::Mat> out;
  for (int k = 1; k <= s.K; ++k)
    out.push_back(ag::sqrt(s.sigma2 * s.phi[k] * (4.0 * M_PI) / s.hodge_norm));
  return out;
}

// scaled scalar feature matrix, n x total, degree-major
inline ag::Mat scalar_feature_matrix(const PointsBatch& pts, const SpectrumAg& s) {
  std::vector<ag::Mat> blocks;
  auto scales = scalar_scale_nodes(s);
  if (s.d == 2) {
    const auto& basis = pts.s2_basis(s.K, false);
    for (int k = 0; k <= s.K; ++k) blocks.push_back(ag::mul(scales[k], basis.value[k]));
  } else {
    const auto& basis = pts.sd_basis(s.d, s.K);
    for (int k = 0; k <= s.K; ++k) blocks.push_back(ag::mul(scales[k], basis.value[k]));
  }
  return ag::concat_cols(blocks);
}

struct TailSpec {
  std::vector<int> repeats;  // features per tail degree level
  int count = 0;
};

}  // namespace detail

// Scalar GP with interdomain inducing features: the whitened posterior is a
// finite basis expansion, mean Psi_head m' and covariance
// Psi_head S' Psi_head + Psi_tail D' Psi_tail.
class IvScalarLayer : public ScalarLayer {
 public:
  IvScalarLayer(ParameterStore& store, const std::string& prefix, const MaternSpec& init,
                int num_features, bool diag_extension, bool train_nu)
      : K_(init.K), d_(init.d), inf_nu_(std::isinf(init.nu)) {
    init.validate();
    total_ = total_harmonic_count(K_, d_);
    M_ = num_features <= 0 ? total_ : num_features;
    if (M_ > total_)
      throw std::invalid_argument("IvScalarLayer: more features than truncation allows");
    use_dprime_ = diag_extension && M_ < total_;
    if (!inf_nu_) {
      s_nu_ = store.add_scalar(prefix + ".nu", Transform::SoftplusShift, init.nu, 0.25);
      store.set_trainable(s_nu_, train_nu);
    }
    s_kappa_ = store.add_scalar(prefix + ".kappa", Transform::Softplus, init.kappa);
    s_sigma2_ = store.add_scalar(prefix + ".sigma2", Transform::Softplus, init.sigma2);
    s_mean_ = store.add_vector(prefix + ".mean", M_, Transform::Identity, 0.0);
    s_factor_ = store.add_tril(prefix + ".factor", M_);
    int at = 0;
    for (int k = 0; k <= K_; ++k) {
      int width = harmonic_count(k, d_);
      int excess = std::min(width, std::max(0, at + width - M_));
      if (excess > 0) tail_.repeats.push_back(excess);
      tail_.count += excess;
      at += width;
    }
    if (use_dprime_)
      s_dprime_ = store.add_vector(prefix + ".dprime", static_cast<int>(tail_.repeats.size()),
                                   Transform::Softplus, 1.0);
  }

  MaternParamsAg matern_params(EvalCtx& ctx) const {
    MaternParamsAg p;
    p.K = K_;
    p.d = d_;
    p.inf_nu = inf_nu_;
    if (!inf_nu_) p.nu = ctx.param(s_nu_);
    p.kappa = ctx.param(s_kappa_);
    p.sigma2 = ctx.param(s_sigma2_);
    return p;
  }

  ScalMoments moments(EvalCtx& ctx, const PointsBatch& pts) const override {
    SpectrumAg spec = make_spectrum(matern_params(ctx));
    ag::Mat F = detail::scalar_feature_matrix(pts, spec);
    ag::Mat Fh = M_ == total_ ? F : ag::cols(F, 0, M_);
    ScalMoments m;
    m.mean = ag::matmul(Fh, ctx.param(s_mean_));
    ag::Mat FL = ag::matmul(Fh, ctx.param(s_factor_));
    m.var = ag::rowsum(ag::square(FL));
    if (M_ < total_) {
      ag::Mat Ft = ag::cols(F, M_, total_ - M_);
      if (use_dprime_) {
        ag::Mat drow = tail_weights_row(ctx);
        m.var = m.var + ag::rowsum(ag::mul(ag::square(Ft), ag::bcast_rows(drow, pts.size())));
      } else {
        m.var = m.var + ag::rowsum(ag::square(Ft));
      }
    }
    return m;
  }

  ag::Mat kl(EvalCtx& ctx) const override {
    ag::Mat base = kl_whitened(ctx.param(s_mean_), ctx.param(s_factor_));
    if (use_dprime_) base = base + kl_diagonal_extension(ctx.param(s_dprime_), tail_.repeats);
    return base;
  }

  // one posterior weight draw, already multiplied by the feature scales, so
  // that the function sample is sw . phi(x)
  Eigen::VectorXd scaled_weight_sample(const ParameterStore& store, std::uint64_t seed) const {
    EvalCtx ctx(nullptr, store);
    rng::Rng gen(rng::mix(seed, 0x69767363ULL));
    Eigen::VectorXd mprime = ctx.param(s_mean_).value().col(0);
    Eigen::MatrixXd L = ctx.param(s_factor_).value();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(total_);
    w.head(M_) = mprime + L * gen.normal_vector(M_);
    if (M_ < total_) w.tail(total_ - M_) = tail_root(ctx).cwiseProduct(gen.normal_vector(total_ - M_));
    return scalar_feature_scales(current_spec(store)).cwiseProduct(w);
  }

  ScalarSample function_sample(const ParameterStore& store, std::uint64_t seed) const override {
    MaternSpec spec = current_spec(store);
    Eigen::VectorXd sw = scaled_weight_sample(store, seed);
    return [spec, sw](const SpherePoint& x) {
      Eigen::VectorXd phi =
          spec.d == 2 ? scalar_harmonics_s2(x, spec.K) : scalar_harmonics_sd(x, spec.K);
      return sw.dot(phi);
    };
  }

  Eigen::MatrixXd joint_covariance(const ParameterStore& store,
                                   const std::vector<SpherePoint>& pts) const override {
    EvalCtx ctx(nullptr, store);
    Eigen::MatrixXd x(pts.size(), d_ + 1);
    for (std::size_t i = 0; i < pts.size(); ++i) x.row(i) = pts[i].coords.transpose();
    PointsBatch batch(ag::Mat::constant(std::move(x)));
    SpectrumAg spec = make_spectrum(matern_params(ctx));
    Eigen::MatrixXd F = detail::scalar_feature_matrix(batch, spec).value();
    Eigen::MatrixXd L = ctx.param(s_factor_).value();
    Eigen::MatrixXd Fh = F.leftCols(M_);
    Eigen::MatrixXd out = (Fh * L) * (Fh * L).transpose();
    if (M_ < total_) {
      Eigen::MatrixXd Ft = F.rightCols(total_ - M_);
      Eigen::VectorXd droot = tail_root(ctx);
      out += (Ft * droot.asDiagonal()) * (Ft * droot.asDiagonal()).transpose();
    }
    return out;
  }

  MaternSpec current_spec(const ParameterStore& store) const {
    MaternSpec s;
    s.nu = inf_nu_ ? kInfiniteNu : store.scalar_value(s_nu_);
    s.kappa = store.scalar_value(s_kappa_);
    s.sigma2 = store.scalar_value(s_sigma2_);
    s.K = K_;
    s.d = d_;
    return s;
  }

  int num_features() const { return M_; }
  int total_features() const { return total_; }
  int mean_slot() const { return s_mean_; }
  int factor_slot() const { return s_factor_; }

 private:
  ag::Mat tail_weights_row(EvalCtx& ctx) const {
    ag::Mat d = ctx.param(s_dprime_);
    std::vector<ag::Mat> reps;
    for (std::size_t lvl = 0; lvl < tail_.repeats.size(); ++lvl)
      reps.push_back(
          ag::fill(ag::block(d, static_cast<Eigen::Index>(lvl), 0, 1, 1), 1, tail_.repeats[lvl]));
    return ag::concat_cols(reps);
  }

  Eigen::VectorXd tail_root(EvalCtx& ctx) const {
    Eigen::VectorXd droot = Eigen::VectorXd::Ones(total_ - M_);
    if (use_dprime_) {
      Eigen::VectorXd d = ctx.param(s_dprime_).value().col(0);
      int at = 0;
      for (std::size_t lvl = 0; lvl < tail_.repeats.size(); ++lvl)
        for (int r = 0; r < tail_.repeats[lvl]; ++r) droot(at++) = std::sqrt(d(lvl));
    }
    return droot;
  }

  int K_, d_, total_, M_;
  bool inf_nu_ = false, use_dprime_ = false;
  int s_nu_ = -1, s_kappa_ = -1, s_sigma2_ = -1, s_mean_ = -1, s_factor_ = -1, s_dprime_ = -1;
  detail::TailSpec tail_;
};

// Hodge GVF with interdomain features: columns are the scaled divergence-type
// eigenfields followed by the scaled curl-type eigenfields.
class IvHodgeLayer : public VectorLayer {
 public:
  IvHodgeLayer(ParameterStore& store, const std::string& prefix, const HodgeSpec& init,
               int num_features, bool diag_extension, bool train_nu)
      : K_(init.div.K) {
    init.validate();
    per_kind_ = total_harmonic_count(K_, 2) - 1;
    total_ = 2 * per_kind_;
    M_ = num_features <= 0 ? total_ : num_features;
    if (M_ > total_)
      throw std::invalid_argument("IvHodgeLayer: more features than truncation allows");
    use_dprime_ = diag_extension && M_ < total_;
    inf_nu_div_ = std::isinf(init.div.nu);
    inf_nu_curl_ = std::isinf(init.curl.nu);
    if (!inf_nu_div_) {
      s_nu_div_ = store.add_scalar(prefix + ".div.nu", Transform::SoftplusShift, init.div.nu, 0.25);
      store.set_trainable(s_nu_div_, train_nu);
    }
    s_kappa_div_ = store.add_scalar(prefix + ".div.kappa", Transform::Softplus, init.div.kappa);
    s_sigma2_div_ = store.add_scalar(prefix + ".div.sigma2", Transform::Softplus, init.div.sigma2);
    if (!inf_nu_curl_) {
      s_nu_curl_ =
          store.add_scalar(prefix + ".curl.nu", Transform::SoftplusShift, init.curl.nu, 0.25);
      store.set_trainable(s_nu_curl_, train_nu);
    }
    s_kappa_curl_ = store.add_scalar(prefix + ".curl.kappa", Transform::Softplus, init.curl.kappa);
    s_sigma2_curl_ =
        store.add_scalar(prefix + ".curl.sigma2", Transform::Softplus, init.curl.sigma2);
    s_mean_ = store.add_vector(prefix + ".mean", M_, Transform::Identity, 0.0);
    s_factor_ = store.add_tril(prefix + ".factor", M_);
    int at = 0;
    for (int part = 0; part < 2; ++part)
      for (int k = 1; k <= K_; ++k) {
        int width = 2 * k + 1;
        int excess = std::min(width, std::max(0, at + width - M_));
        if (excess > 0) tail_.repeats.push_back(excess);
        tail_.count += excess;
        at += width;
      }
    if (use_dprime_)
      s_dprime_ = store.add_vector(prefix + ".dprime", static_cast<int>(tail_.repeats.size()),
                                   Transform::Softplus, 1.0);
  }

  VecMoments moments(EvalCtx& ctx, const PointsBatch& pts) const override {
    auto F = feature_components(ctx, pts);
    ag::Mat mprime = ctx.param(s_mean_);
    ag::Mat L = ctx.param(s_factor_);
    const auto& basis = pts.tangent_basis_fields();
    const Eigen::Index n = pts.size();

    VecMoments m;
    m.basis = basis;
    std::vector<ag::Mat> mean_cols;
    for (int c = 0; c < 3; ++c) mean_cols.push_back(ag::matmul(ag::cols(F[c], 0, M_), mprime));
    m.mean = ag::concat_cols(mean_cols);

    ag::Mat p = project_features(F, basis[0]);
    ag::Mat q = project_features(F, basis[1]);
    ag::Mat ph = ag::cols(p, 0, M_), qh = ag::cols(q, 0, M_);
    ag::Mat pL = ag::matmul(ph, L), qL = ag::matmul(qh, L);
    ag::Mat a = ag::rowsum(ag::square(pL));
    ag::Mat b = ag::rowsum(ag::mul(pL, qL));
    ag::Mat c = ag::rowsum(ag::square(qL));
    if (M_ < total_) {
      ag::Mat pt = ag::cols(p, M_, total_ - M_), qt = ag::cols(q, M_, total_ - M_);
      if (use_dprime_) {
        ag::Mat drep = ag::bcast_rows(tail_weights_row(ctx), n);
        a = a + ag::rowsum(ag::mul(ag::square(pt), drep));
        b = b + ag::rowsum(ag::mul(ag::mul(pt, qt), drep));
        c = c + ag::rowsum(ag::mul(ag::square(qt), drep));
      } else {
        a = a + ag::rowsum(ag::square(pt));
        b = b + ag::rowsum(ag::mul(pt, qt));
        c = c + ag::rowsum(ag::square(qt));
      }
    }
    m.cov = {{a}, {b, c}};
    return m;
  }

  ag::Mat kl(EvalCtx& ctx) const override {
    ag::Mat base = kl_whitened(ctx.param(s_mean_), ctx.param(s_factor_));
    if (use_dprime_) base = base + kl_diagonal_extension(ctx.param(s_dprime_), tail_.repeats);
    return base;
  }

  FieldSample function_sample(const ParameterStore& store, std::uint64_t seed) const override {
    EvalCtx ctx(nullptr, store);
    rng::Rng gen(rng::mix(seed, 0x697668ULL));
    Eigen::VectorXd mprime = ctx.param(s_mean_).value().col(0);
    Eigen::MatrixXd L = ctx.param(s_factor_).value();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(total_);
    w.head(M_) = mprime + L * gen.normal_vector(M_);
    if (M_ < total_) w.tail(total_ - M_) = tail_root(ctx).cwiseProduct(gen.normal_vector(total_ - M_));
    HodgeSpec spec = current_spec(store);
    int total = total_;
    return [spec, w, total](const SpherePoint& x) {
      Eigen::MatrixXd psi = vector_feature_map(spec, x, 0, total);
      return TangentVector(x, Vec(psi * w));
    };
  }

  Eigen::MatrixXd joint_covariance(const ParameterStore& store,
                                   const std::vector<SpherePoint>& pts) const override {
    EvalCtx ctx(nullptr, store);
    const int n = static_cast<int>(pts.size());
    Eigen::MatrixXd x(n, 3);
    for (int i = 0; i < n; ++i) x.row(i) = pts[i].coords.transpose();
    PointsBatch batch(ag::Mat::constant(std::move(x)));
    auto F = feature_components(ctx, batch);
    Eigen::MatrixXd stack(3 * n, total_);
    for (int c = 0; c < 3; ++c) stack.middleRows(c * n, n) = F[c].value();
    Eigen::MatrixXd L = ctx.param(s_factor_).value();
    Eigen::MatrixXd Fh = stack.leftCols(M_);
    Eigen::MatrixXd out = (Fh * L) * (Fh * L).transpose();
    if (M_ < total_) {
      Eigen::MatrixXd Ft = stack.rightCols(total_ - M_);
      Eigen::VectorXd droot = tail_root(ctx);
      out += (Ft * droot.asDiagonal()) * (Ft * droot.asDiagonal()).transpose();
    }
    return out;
  }

  HodgeSpec current_spec(const ParameterStore& store) const {
    HodgeSpec s;
    s.div.nu = inf_nu_div_ ? kInfiniteNu : store.scalar_value(s_nu_div_);
    s.div.kappa = store.scalar_value(s_kappa_div_);
    s.div.sigma2 = store.scalar_value(s_sigma2_div_);
    s.div.K = K_;
    s.div.d = 2;
    s.curl.nu = inf_nu_curl_ ? kInfiniteNu : store.scalar_value(s_nu_curl_);
    s.curl.kappa = store.scalar_value(s_kappa_curl_);
    s.curl.sigma2 = store.scalar_value(s_sigma2_curl_);
    s.curl.K = K_;
    s.curl.d = 2;
    return s;
  }

  int num_features() const { return M_; }
  int total_features() const { return total_; }
  int mean_slot() const { return s_mean_; }
  int factor_slot() const { return s_factor_; }

 private:
  std::array<ag::Mat, 3> feature_components(EvalCtx& ctx, const PointsBatch& pts) const {
    MaternParamsAg pd;
    pd.K = K_;
    pd.d = 2;
    pd.inf_nu = inf_nu_div_;
    if (!inf_nu_div_) pd.nu = ctx.param(s_nu_div_);
    pd.kappa = ctx.param(s_kappa_div_);
    pd.sigma2 = ctx.param(s_sigma2_div_);
    MaternParamsAg pc;
    pc.K = K_;
    pc.d = 2;
    pc.inf_nu = inf_nu_curl_;
    if (!inf_nu_curl_) pc.nu = ctx.param(s_nu_curl_);
    pc.kappa = ctx.param(s_kappa_curl_);
    pc.sigma2 = ctx.param(s_sigma2_curl_);
    SpectrumAg sd = make_spectrum(pd);
    SpectrumAg sc = make_spectrum(pc);
    auto div_scales = detail::hodge_scale_nodes(sd);
    auto curl_scales = detail::hodge_scale_nodes(sc);
    const auto& vb = pts.s2_vector_basis(K_);
    std::array<ag::Mat, 3> F;
    for (int c = 0; c < 3; ++c) {
      std::vector<ag::Mat> blocks;
      for (int k = 1; k <= K_; ++k) blocks.push_back(ag::mul(div_scales[k - 1], vb.div[k - 1][c]));
      for (int k = 1; k <= K_; ++k)
        blocks.push_back(ag::mul(curl_scales[k - 1], vb.curl[k - 1][c]));
      F[c] = ag::concat_cols(blocks);
    }
    return F;
  }

  static ag::Mat project_features(const std::array<ag::Mat, 3>& F, const ag::Mat& B) {
    ag::Mat acc = ag::mul(F[0], ag::bcast_cols(ag::cols(B, 0, 1), F[0].cols()));
    for (int c = 1; c < 3; ++c)
      acc = acc + ag::mul(F[c], ag::bcast_cols(ag::cols(B, c, 1), F[c].cols()));
    return acc;
  }

  ag::Mat tail_weights_row(EvalCtx& ctx) const {
    ag::Mat d = ctx.param(s_dprime_);
    std::vector<ag::Mat> reps;
    for (std::size_t lvl = 0; lvl < tail_.repeats.size(); ++lvl)
      reps.push_back(
          ag::fill(ag::block(d, static_cast<Eigen::Index>(lvl), 0, 1, 1), 1, tail_.repeats[lvl]));
    return ag::concat_cols(reps);
  }

  Eigen::VectorXd tail_root(EvalCtx& ctx) const {
    Eigen::VectorXd droot = Eigen::VectorXd::Ones(total_ - M_);
    if (use_dprime_) {
      Eigen::VectorXd d = ctx.param(s_dprime_).value().col(0);
      int at = 0;
      for (std::size_t lvl = 0; lvl < tail_.repeats.size(); ++lvl)
        for (int r = 0; r < tail_.repeats[lvl]; ++r) droot(at++) = std::sqrt(d(lvl));
    }
    return droot;
  }

  int K_, per_kind_, total_, M_;
  bool inf_nu_div_ = false, inf_nu_curl_ = false, use_dprime_ = false;
  int s_nu_div_ = -1, s_kappa_div_ = -1, s_sigma2_div_ = -1;
  int s_nu_curl_ = -1, s_kappa_curl_ = -1, s_sigma2_curl_ = -1;
  int s_mean_ = -1, s_factor_ = -1, s_dprime_ = -1;
  detail::TailSpec tail_;
};

// Projected or coordinate-frame GVF whose components are independent scalar
// GPs, each with its own interdomain variational state.
class IvComponentLayer : public VectorLayer {
 public:
  IvComponentLayer(ParameterStore& store, const std::string& prefix, GvfKind kind, int d,
                   const std::vector<MaternSpec>& inits, int num_features_per_component,
                   bool diag_extension, bool train_nu)
      : kind_(kind), d_(d) {
    if (kind == GvfKind::Hodge)
      throw std::invalid_argument("IvComponentLayer: use IvHodgeLayer for Hodge GVFs");
    if (kind == GvfKind::CoordinateFrame && d != 2)
      throw std::invalid_argument("IvComponentLayer: frame kind is defined on S_2 only");
    int expected = kind == GvfKind::Projected ? d + 1 : 2;
    if (static_cast<int>(inits.size()) != expected)
      throw std::invalid_argument("IvComponentLayer: wrong number of component specs");
    for (int c = 0; c < expected; ++c)
      comps_.push_back(std::make_unique<IvScalarLayer>(store, prefix + ".h" + std::to_string(c),
                                                       inits[c], num_features_per_component,
                                                       diag_extension, train_nu));
  }

  VecMoments moments(EvalCtx& ctx, const PointsBatch& pts) const override {
    auto fields = direction_fields(pts);
    const auto& basis = pts.tangent_basis_fields();
    const int t = static_cast<int>(basis.size());
    VecMoments m;
    m.basis = basis;
    m.cov.resize(t);
    for (int i = 0; i < t; ++i) m.cov[i].resize(i + 1);
    for (std::size_t comp = 0; comp < comps_.size(); ++comp) {
      ScalMoments sm = comps_[comp]->moments(ctx, pts);
      ag::Mat contrib = ag::mul(ag::bcast_cols(sm.mean, m.basis[0].cols()), fields[comp]);
      m.mean = comp == 0 ? contrib : m.mean + contrib;
      std::vector<ag::Mat> dots(t);
      for (int i = 0; i < t; ++i) dots[i] = ag::rowsum(ag::mul(basis[i], fields[comp]));
      for (int i = 0; i < t; ++i)
        for (int j = 0; j <= i; ++j) {
          ag::Mat v = sm.var * ag::mul(dots[i], dots[j]);
          m.cov[i][j] = comp == 0 ? v : m.cov[i][j] + v;
        }
    }
    return m;
  }

  ag::Mat kl(EvalCtx& ctx) const override {
    ag::Mat acc = comps_[0]->kl(ctx);
    for (std::size_t c = 1; c < comps_.size(); ++c) acc = acc + comps_[c]->kl(ctx);
    return acc;
  }

  FieldSample function_sample(const ParameterStore& store, std::uint64_t seed) const override {
    std::vector<ScalarSample> hs;
    for (std::size_t c = 0; c < comps_.size(); ++c)
      hs.push_back(comps_[c]->function_sample(store, rng::mix(seed, c + 1)));
    if (kind_ == GvfKind::Projected) {
      return [hs](const SpherePoint& x) {
        Vec h(hs.size());
        for (std::size_t c = 0; c < hs.size(); ++c) h(c) = hs[c](x);
        return tangent_project(x, h);
      };
    }
    return [hs](const SpherePoint& x) {
      auto [e1, e2] = default_frame_s2(x);
      return TangentVector(x, Vec(hs[0](x) * e1.vec + hs[1](x) * e2.vec));
    };
  }

  Eigen::MatrixXd joint_covariance(const ParameterStore& store,
                                   const std::vector<SpherePoint>& pts) const override {
    const int n = static_cast<int>(pts.size());
    Eigen::MatrixXd x(n, d_ + 1);
    for (int i = 0; i < n; ++i) x.row(i) = pts[i].coords.transpose();
    PointsBatch batch(ag::Mat::constant(std::move(x)));
    auto fields = direction_fields(batch);
    const int D = d_ + 1;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(D * n, D * n);
    for (std::size_t comp = 0; comp < comps_.size(); ++comp) {
      Eigen::MatrixXd scal = comps_[comp]->joint_covariance(store, pts);
      Eigen::MatrixXd e = fields[comp].value();
      for (int c = 0; c < D; ++c)
        for (int c2 = 0; c2 < D; ++c2)
          out.block(c * n, c2 * n, n, n) +=
              e.col(c).asDiagonal() * scal * Eigen::MatrixXd(e.col(c2).asDiagonal());
    }
    return out;
  }

  const IvScalarLayer& component(int c) const { return *comps_[c]; }
  GvfKind kind() const { return kind_; }

 private:
  std::vector<ag::Mat> direction_fields(const PointsBatch& pts) const {
    const int D = d_ + 1;
    std::vector<ag::Mat> fields;
    if (kind_ == GvfKind::Projected) {
      std::vector<ag::Mat> coords;
      for (int c = 0; c < D; ++c) coords.push_back(ag::cols(pts.X, c, 1));
      for (int c = 0; c < D; ++c) {
        std::vector<ag::Mat> colsv;
        for (int j = 0; j < D; ++j) {
          ag::Mat v = ag::neg(ag::mul(coords[c], coords[j]));
          if (j == c) v = v + 1.0;
          colsv.push_back(v);
        }
        fields.push_back(ag::concat_cols(colsv));
      }
      return fields;
    }
    // coordinate frame on S_2
    Eigen::ArrayXd st2 =
        pts.X.value().col(0).array().square() + pts.X.value().col(1).array().square();
    if (st2.minCoeff() < 1e-16)
      throw std::domain_error("coordinate-frame GVF: point too close to a pole");
    ag::Mat x = ag::cols(pts.X, 0, 1), y = ag::cols(pts.X, 1, 1), z = ag::cols(pts.X, 2, 1);
    ag::Mat st = ag::sqrt(ag::square(x) + ag::square(y));
    ag::Mat cp = x / st, sp = y / st;
    fields.push_back(ag::concat_cols({z * cp, z * sp, ag::neg(st)}));
    fields.push_back(ag::concat_cols({ag::neg(sp), cp, st * 0.0}));
    return fields;
  }

  GvfKind kind_;
  int d_;
  std::vector<std::unique_ptr<IvScalarLayer>> comps_;
};

}  // namespace rdgp
