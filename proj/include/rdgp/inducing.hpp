#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "rdgp/variational.hpp"

// Inducing-location (IL) sparse layers in whitened form.  Inducing locations
// are fixed after initialisation (k-means of the training inputs), so all
// geometry attached to them is precomputed; only the spectral weights vary
// with the kernel hyperparameters.
//
// For vector fields the whitened state is the projection parameterisation:
// unconstrained mean mt in R^{mD} and factor St in R^{mD x mD}, with
// effective whitened moments m' = P mt and S' = P St P + (I - P), where P is
// the block-diagonal tangent projector at the inducing locations.  The
// normal-space block is pinned to the (whitened) prior, so identity states
// reproduce the prior exactly and the KL reduces to the tangent block.

namespace rdgp {

namespace detail {

inline double pick_jitter(const Eigen::MatrixXd& k, const char* who) {
  for (double j : {1e-8, 1e-7, 1e-6, 1e-5, 1e-4}) {
    Eigen::MatrixXd m = k;
    m.diagonal().array() += j;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return j;
  }
  throw std::runtime_error(std::string(who) +
                           ": Cholesky failed after jitter escalation to 1e-4");
}

struct KernelSlots {
  int nu = -1, kappa = -1, sigma2 = -1;
  bool inf_nu = false;
  int K = 0, d = 2;

  static KernelSlots create(ParameterStore& store, const std::string& prefix,
                            const MaternSpec& init, bool train_nu) {
    KernelSlots s;
    s.K = init.K;
    s.d = init.d;
    s.inf_nu = std::isinf(init.nu);
    if (!s.inf_nu) {
      s.nu = store.add_scalar(prefix + ".nu", Transform::SoftplusShift, init.nu, 0.25);
      store.set_trainable(s.nu, train_nu);
    }
    s.kappa = store.add_scalar(prefix + ".kappa", Transform::Softplus, init.kappa);
    s.sigma2 = store.add_scalar(prefix + ".sigma2", Transform::Softplus, init.sigma2);
    return s;
  }

  MaternParamsAg params(EvalCtx& ctx) const {
    MaternParamsAg p;
    p.K = K;
    p.d = d;
    p.inf_nu = inf_nu;
    if (!inf_nu) p.nu = ctx.param(nu);
    p.kappa = ctx.param(kappa);
    p.sigma2 = ctx.param(sigma2);
    return p;
  }

  MaternSpec spec(const ParameterStore& store) const {
    MaternSpec s;
    s.nu = inf_nu ? kInfiniteNu : store.scalar_value(nu);
    s.kappa = store.scalar_value(kappa);
    s.sigma2 = store.scalar_value(sigma2);
    s.K = K;
    s.d = d;
    return s;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// scalar GP with inducing locations

class IlScalarLayer : public ScalarLayer {
 public:
  IlScalarLayer(ParameterStore& store, const std::string& prefix, const MaternSpec& init,
                std::vector<SpherePoint> inducing, bool train_nu)
      : z_(std::move(inducing)) {
    init.validate();
    if (z_.empty()) throw std::invalid_argument("IlScalarLayer: no inducing locations");
    kernel_ = detail::KernelSlots::create(store, prefix, init, train_nu);
    m_ = static_cast<int>(z_.size());
    s_mean_ = store.add_vector(prefix + ".mean", m_, Transform::Identity, 0.0);
    s_factor_ = store.add_tril(prefix + ".factor", m_);
    zmat_.resize(m_, init.d + 1);
    for (int j = 0; j < m_; ++j) zmat_.row(j) = z_[j].coords.transpose();
    // per-degree Gram structures c_{k,d} C_k(t_zz)
    double alpha = 0.5 * (init.d - 1);
    Eigen::MatrixXd tzz = (zmat_ * zmat_.transpose()).cwiseMin(1.0).cwiseMax(-1.0);
    for (int k = 0; k <= init.K; ++k) {
      Eigen::MatrixXd s(m_, m_);
      for (int i = 0; i < m_; ++i)
        for (int j = 0; j < m_; ++j)
          s(i, j) = addition_constant(k, init.d) * std::get<0>(gegenbauer(k, alpha, tzz(i, j)));
      gram_structs_.push_back(std::move(s));
    }
  }

  ScalMoments moments(EvalCtx& ctx, const PointsBatch& pts) const override {
    SpectrumAg spec = make_spectrum(kernel_.params(ctx));
    const Eigen::Index n = pts.size();
    ag::Mat kzz = gram(spec);
    double jit = detail::pick_jitter(kzz.value(), "IlScalarLayer");
    ag::Mat lz = ag::cholesky(kzz + ag::Mat::constant(jit * Eigen::MatrixXd::Identity(m_, m_)));
    ag::Mat t = ag::matmul(ag::Mat::constant(zmat_), ag::transpose(pts.X));
    ag::Mat kzx = scalar_kernel_from_dots(spec, t);
    ag::Mat A = ag::tri_solve(lz, kzx);
    ag::Mat L = ctx.param(s_factor_);
    ag::Mat U = ag::matmul(ag::transpose(L), A);
    ScalMoments m;
    m.mean = ag::matmul(ag::transpose(A), ctx.param(s_mean_));
    m.var = ag::fill(spec.sigma2, n, 1) - ag::transpose(ag::colsum(ag::square(A))) +
            ag::transpose(ag::colsum(ag::square(U)));
    return m;
  }

  ag::Mat kl(EvalCtx& ctx) const override {
    return kl_whitened(ctx.param(s_mean_), ctx.param(s_factor_));
  }

  ScalarSample function_sample(const ParameterStore& store, std::uint64_t seed) const override {
    rng::Rng gen(rng::mix(seed, 0x696c7363ULL));
    MaternSpec spec = kernel_.spec(store);
    ScalarSample prior = scalar_prior_function_sample(spec, gen);
    EvalCtx ctx(nullptr, store);
    Eigen::MatrixXd kzz = gram(make_spectrum(kernel_.params(ctx))).value();
    double jit = detail::pick_jitter(kzz, "IlScalarLayer::function_sample");
    kzz.diagonal().array() += jit;
    Eigen::LLT<Eigen::MatrixXd> llt(kzz);
    Eigen::MatrixXd lz = llt.matrixL();
    Eigen::VectorXd pz(m_);
    for (int j = 0; j < m_; ++j) pz(j) = prior(z_[j]);
    Eigen::VectorXd mt = ctx.param(s_mean_).value().col(0);
    Eigen::MatrixXd lf = ctx.param(s_factor_).value();
    Eigen::VectorXd uw = mt + lf * gen.normal_vector(m_);
    Eigen::VectorXd resid = uw - lz.triangularView<Eigen::Lower>().solve(pz);
    Eigen::VectorXd coef = lz.transpose().triangularView<Eigen::Upper>().solve(resid);
    auto z = z_;
    return [prior, spec, coef, z](const SpherePoint& x) {
      double f = prior(x);
      for (std::size_t j = 0; j < z.size(); ++j)
        f += scalar_matern_kernel(spec, x, z[j]) * coef(j);
      return f;
    };
  }

  Eigen::MatrixXd joint_covariance(const ParameterStore& store,
                                   const std::vector<SpherePoint>& pts) const override {
    MaternSpec spec = kernel_.spec(store);
    const int n = static_cast<int>(pts.size());
    Eigen::MatrixXd kxx(n, n), kzx(m_, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) kxx(i, j) = scalar_matern_kernel(spec, pts[i], pts[j]);
    for (int j = 0; j < m_; ++j)
      for (int i = 0; i < n; ++i) kzx(j, i) = scalar_matern_kernel(spec, z_[j], pts[i]);
    EvalCtx ctx(nullptr, store);
    Eigen::MatrixXd kzz = gram(make_spectrum(kernel_.params(ctx))).value();
    double jit = detail::pick_jitter(kzz, "IlScalarLayer::joint_covariance");
    kzz.diagonal().array() += jit;
    Eigen::LLT<Eigen::MatrixXd> llt(kzz);
    Eigen::MatrixXd a = Eigen::MatrixXd(llt.matrixL()).triangularView<Eigen::Lower>().solve(kzx);
    Eigen::MatrixXd lf = ctx.param(s_factor_).value();
    Eigen::MatrixXd u = lf.transpose() * a;
    return kxx - a.transpose() * a + u.transpose() * u;
  }

  const std::vector<SpherePoint>& inducing() const { return z_; }
  MaternSpec current_spec(const ParameterStore& store) const { return kernel_.spec(store); }
  int mean_slot() const { return s_mean_; }
  int factor_slot() const { return s_factor_; }

 private:
  ag::Mat gram(const SpectrumAg& spec) const {
    ag::Mat acc = ag::mul(spec.sigma2 * spec.phi[0] / spec.scalar_norm,
                          ag::Mat::constant(gram_structs_[0]));
    for (int k = 1; k <= kernel_.K; ++k)
      acc = acc + ag::mul(spec.sigma2 * spec.phi[k] / spec.scalar_norm,
                          ag::Mat::constant(gram_structs_[k]));
    return acc;
  }

  std::vector<SpherePoint> z_;
  Eigen::MatrixXd zmat_;
  detail::KernelSlots kernel_;
  int m_ = 0;
  int s_mean_ = -1, s_factor_ = -1;
  std::vector<Eigen::MatrixXd> gram_structs_;
};

// ---------------------------------------------------------------------------
// Gaussian vector field with inducing locations (S_2)

class IlVectorLayer : public VectorLayer {
 public:
  IlVectorLayer(ParameterStore& store, const std::string& prefix, const GvfPrior& init,
                std::vector<SpherePoint> inducing, bool train_nu)
      : kind_(init.kind), z_(std::move(inducing)) {
    init.validate();
    if (init.d != 2)
      throw std::invalid_argument("IlVectorLayer: inducing-location GVF layers require S_2");
    if (z_.empty()) throw std::invalid_argument("IlVectorLayer: no inducing locations");
    m_ = static_cast<int>(z_.size());
    K_ = init.truncation();
    if (kind_ == GvfKind::Hodge) {
      parts_.push_back(detail::KernelSlots::create(store, prefix + ".div", init.hodge.div, train_nu));
      parts_.push_back(
          detail::KernelSlots::create(store, prefix + ".curl", init.hodge.curl, train_nu));
    } else {
      for (std::size_t c = 0; c < init.components.size(); ++c)
        parts_.push_back(detail::KernelSlots::create(store, prefix + ".h" + std::to_string(c),
                                                     init.components[c], train_nu));
    }
    s_mean_ = store.add_vector(prefix + ".mean", 3 * m_, Transform::Identity, 0.0);
    s_factor_ = store.add_tril(prefix + ".factor", 3 * m_);

    zmat_.resize(m_, 3);
    for (int j = 0; j < m_; ++j) zmat_.row(j) = z_[j].coords.transpose();
    build_projector();
    build_gram_structures();
  }

  VecMoments moments(EvalCtx& ctx, const PointsBatch& pts) const override {
    const Eigen::Index n = pts.size();
    std::vector<SpectrumAg> spectra;
    for (const auto& p : parts_) spectra.push_back(make_spectrum(p.params(ctx)));

    ag::Mat kzz = gram(spectra);
    double jit = detail::pick_jitter(kzz.value(), "IlVectorLayer");
    ag::Mat lz =
        ag::cholesky(kzz + ag::Mat::constant(jit * Eigen::MatrixXd::Identity(3 * m_, 3 * m_)));
    ag::Mat kzx = cross_covariance(spectra, pts);
    ag::Mat T = ag::tri_solve(lz, kzx);
    ag::Mat Ap = ag::matmul(ag::Mat::constant(proj_), T);

    ag::Mat mt = ctx.param(s_mean_);
    ag::Mat L = ctx.param(s_factor_);
    ag::Mat mw = ag::matmul(ag::Mat::constant(proj_), mt);
    ag::Mat h = ag::tri_solve_T(lz, mw);
    ag::Mat mean_flat = ag::matmul(ag::transpose(kzx), h);

    VecMoments m;
    m.basis = pts.tangent_basis_fields();
    std::vector<ag::Mat> mean_cols;
    for (int c = 0; c < 3; ++c) mean_cols.push_back(ag::rows(mean_flat, c * n, n));
    m.mean = ag::concat_cols(mean_cols);

    // per-point covariance entries: prior - A'A + (L^T A)'(L^T A)
    ag::Mat U = ag::matmul(ag::transpose(L), Ap);
    ag::Mat covmat[3][3];
    auto prior_entries = pointwise_prior(spectra, pts);
    for (int c = 0; c < 3; ++c)
      for (int c2 = c; c2 < 3; ++c2) {
        ag::Mat ac = ag::cols(Ap, c * n, n), ac2 = ag::cols(Ap, c2 * n, n);
        ag::Mat uc = ag::cols(U, c * n, n), uc2 = ag::cols(U, c2 * n, n);
        ag::Mat v = prior_entries[c][c2] - ag::transpose(ag::colsum(ag::mul(ac, ac2))) +
                    ag::transpose(ag::colsum(ag::mul(uc, uc2)));
        covmat[c][c2] = v;
        covmat[c2][c] = v;
      }
    m.cov.resize(2);
    for (int i = 0; i < 2; ++i) {
      m.cov[i].resize(i + 1);
      for (int j = 0; j <= i; ++j) {
        ag::Mat acc;
        bool first = true;
        for (int c = 0; c < 3; ++c)
          for (int c2 = 0; c2 < 3; ++c2) {
            ag::Mat term = ag::mul(ag::mul(ag::cols(m.basis[i], c, 1), covmat[c][c2]),
                                   ag::cols(m.basis[j], c2, 1));
            acc = first ? term : acc + term;
            first = false;
          }
        m.cov[i][j] = acc;
      }
    }
    return m;
  }

  // KL of the tangent block: the whitened covariance is P St P + (I - P), so
  // tr - dim reduces to tr((St - I) P) and the log-determinant to
  // log det(I + B^T (St - I) B)
  ag::Mat kl(EvalCtx& ctx) const override {
    ag::Mat L = ctx.param(s_factor_);
    ag::Mat st = ag::matmul(L, ag::transpose(L));
    ag::Mat delta = st - ag::Mat::constant(Eigen::MatrixXd::Identity(3 * m_, 3 * m_));
    ag::Mat tr_term = ag::sum(ag::mul(delta, ag::Mat::constant(proj_)));
    ag::Mat mean_term = ag::sum(ag::square(ag::matmul(ag::Mat::constant(proj_), ctx.param(s_mean_))));
    ag::Mat e = ag::Mat::constant(Eigen::MatrixXd::Identity(2 * m_, 2 * m_)) +
                ag::matmul(ag::matmul(ag::Mat::constant(basis_.transpose()), delta),
                           ag::Mat::constant(basis_));
    ag::Mat le = ag::cholesky(e);
    return 0.5 * (tr_term + mean_term - ag::logdet_from_cholesky(le));
  }

  FieldSample function_sample(const ParameterStore& store, std::uint64_t seed) const override {
    rng::Rng gen(rng::mix(seed, 0x696c7666ULL));
    GvfPrior prior_spec = current_prior(store);
    FieldSample prior = gvf_prior_function_sample(prior_spec, gen.next_bits());
    EvalCtx ctx(nullptr, store);
    std::vector<SpectrumAg> spectra;
    for (const auto& p : parts_) spectra.push_back(make_spectrum(p.params(ctx)));
    Eigen::MatrixXd kzz = gram(spectra).value();
    double jit = detail::pick_jitter(kzz, "IlVectorLayer::function_sample");
    kzz.diagonal().array() += jit;
    Eigen::LLT<Eigen::MatrixXd> llt(kzz);
    Eigen::MatrixXd lz = llt.matrixL();

    Eigen::VectorXd pz(3 * m_);
    for (int j = 0; j < m_; ++j) {
      TangentVector v = prior(z_[j]);
      for (int c = 0; c < 3; ++c) pz(c * m_ + j) = v.vec(c);
    }
    Eigen::VectorXd mt = ctx.param(s_mean_).value().col(0);
    Eigen::MatrixXd lf = ctx.param(s_factor_).value();
    Eigen::VectorXd uw = proj_ * (mt + lf * gen.normal_vector(3 * m_)) +
                         (Eigen::MatrixXd::Identity(3 * m_, 3 * m_) - proj_) *
                             gen.normal_vector(3 * m_);
    Eigen::VectorXd resid = uw - lz.triangularView<Eigen::Lower>().solve(pz);
    Eigen::VectorXd coef = lz.transpose().triangularView<Eigen::Upper>().solve(resid);
    auto z = z_;
    int m = m_;
    return [prior, prior_spec, coef, z, m](const SpherePoint& x) {
      Vec f = prior(x).vec;
      for (int j = 0; j < m; ++j) {
        Eigen::Matrix3d kj = gvf_cov(prior_spec, x, z[j]);
        Eigen::Vector3d cj(coef(j), coef(m + j), coef(2 * m + j));
        f += kj * cj;
      }
      return TangentVector(x, f);
    };
  }

  Eigen::MatrixXd joint_covariance(const ParameterStore& store,
                                   const std::vector<SpherePoint>& pts) const override {
    GvfPrior spec = current_prior(store);
    const int n = static_cast<int>(pts.size());
    auto fill_blocks = [&](const std::vector<SpherePoint>& a, const std::vector<SpherePoint>& b) {
      Eigen::MatrixXd out(3 * a.size(), 3 * b.size());
      for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) {
          Eigen::Matrix3d k = gvf_cov(spec, a[i], b[j]);
          for (int c = 0; c < 3; ++c)
            for (int c2 = 0; c2 < 3; ++c2) out(c * a.size() + i, c2 * b.size() + j) = k(c, c2);
        }
      return out;
    };
    Eigen::MatrixXd kxx = fill_blocks(pts, pts);
    Eigen::MatrixXd kzx = fill_blocks(z_, pts);
    EvalCtx ctx(nullptr, store);
    std::vector<SpectrumAg> spectra;
    for (const auto& p : parts_) spectra.push_back(make_spectrum(p.params(ctx)));
    Eigen::MatrixXd kzz = gram(spectra).value();
    double jit = detail::pick_jitter(kzz, "IlVectorLayer::joint_covariance");
    kzz.diagonal().array() += jit;
    Eigen::LLT<Eigen::MatrixXd> llt(kzz);
    Eigen::MatrixXd a = Eigen::MatrixXd(llt.matrixL()).triangularView<Eigen::Lower>().solve(kzx);
    Eigen::MatrixXd ap = proj_ * a;
    Eigen::MatrixXd lf = ctx.param(s_factor_).value();
    Eigen::MatrixXd u = lf.transpose() * ap;
    return kxx - ap.transpose() * ap + u.transpose() * u;
  }

  GvfPrior current_prior(const ParameterStore& store) const {
    GvfPrior p;
    p.kind = kind_;
    p.d = 2;
    if (kind_ == GvfKind::Hodge) {
      p.hodge.div = parts_[0].spec(store);
      p.hodge.curl = parts_[1].spec(store);
    } else {
      for (const auto& part : parts_) p.components.push_back(part.spec(store));
    }
    return p;
  }

  const std::vector<SpherePoint>& inducing() const { return z_; }
  int mean_slot() const { return s_mean_; }
  int factor_slot() const { return s_factor_; }

 private:
  void build_projector() {
    proj_ = Eigen::MatrixXd::Zero(3 * m_, 3 * m_);
    basis_ = Eigen::MatrixXd::Zero(3 * m_, 2 * m_);
    for (int j = 0; j < m_; ++j) {
      Eigen::Vector3d x = zmat_.row(j);
      Eigen::Matrix3d p = Eigen::Matrix3d::Identity() - x * x.transpose();
      Eigen::Vector3d b1, b2;
      tangent_basis_s2(x, b1, b2);
      for (int c = 0; c < 3; ++c) {
        for (int c2 = 0; c2 < 3; ++c2) proj_(c * m_ + j, c2 * m_ + j) = p(c, c2);
        basis_(c * m_ + j, j) = b1(c);
        basis_(c * m_ + j, m_ + j) = b2(c);
      }
    }
  }

  // constant per-part, per-degree Gram structures so that
  // K(z,z) = sum_parts sum_k w_{part,k} * struct_{part,k}
  void build_gram_structures() {
    gram_structs_.assign(parts_.size(), {});
    Eigen::MatrixXd tzz = (zmat_ * zmat_.transpose()).cwiseMin(1.0).cwiseMax(-1.0);
    if (kind_ == GvfKind::Hodge) {
      const double alpha = 0.5;
      for (int part = 0; part < 2; ++part) {
        for (int k = 1; k <= K_; ++k) {
          double lam = laplace_eigenvalue(k, 2);
          Eigen::MatrixXd s = Eigen::MatrixXd::Zero(3 * m_, 3 * m_);
          for (int i = 0; i < m_; ++i)
            for (int j = 0; j < m_; ++j) {
              Eigen::Vector3d zi = zmat_.row(i), zj = zmat_.row(j);
              auto [v, d1, d2] = gegenbauer(k, alpha, tzz(i, j));
              Eigen::Matrix3d pi = Eigen::Matrix3d::Identity() - zi * zi.transpose();
              Eigen::Matrix3d pj = Eigen::Matrix3d::Identity() - zj * zj.transpose();
              Eigen::Matrix3d g =
                  d2 * (pi * zj) * (pj * zi).transpose() + d1 * pi * pj;
              g *= (k + alpha) / (alpha * lam);
              if (part == 1) {
                Eigen::Matrix3d ri = detail::cross_matrix(zi), rj = detail::cross_matrix(zj);
                g = ri * g * rj.transpose();
              }
              for (int c = 0; c < 3; ++c)
                for (int c2 = 0; c2 < 3; ++c2) s(c * m_ + i, c2 * m_ + j) = g(c, c2);
            }
          gram_structs_[part].push_back(std::move(s));
        }
      }
      return;
    }
    const double alpha = 0.5;
    const int nparts = static_cast<int>(parts_.size());
    for (int a = 0; a < nparts; ++a) {
      for (int k = 0; k <= K_; ++k) {
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(3 * m_, 3 * m_);
        for (int i = 0; i < m_; ++i)
          for (int j = 0; j < m_; ++j) {
            double ck = addition_constant(k, 2) * std::get<0>(gegenbauer(k, alpha, tzz(i, j)));
            Eigen::Vector3d ei = direction_at(a, zmat_.row(i));
            Eigen::Vector3d ej = direction_at(a, zmat_.row(j));
            Eigen::Matrix3d g = ck * ei * ej.transpose();
            for (int c = 0; c < 3; ++c)
              for (int c2 = 0; c2 < 3; ++c2) s(c * m_ + i, c2 * m_ + j) = g(c, c2);
          }
        gram_structs_[a].push_back(std::move(s));
      }
    }
  }

  // direction field of component a at a point (projected: P_x e_a; frame:
  // spherical-coordinate direction)
  Eigen::Vector3d direction_at(int a, const Eigen::Vector3d& x) const {
    if (kind_ == GvfKind::Projected) {
      Eigen::Vector3d e = Eigen::Vector3d::Unit(a);
      return e - x(a) * x;
    }
    auto [e1, e2] = default_frame_s2(SpherePoint::normalized(x));
    return a == 0 ? Eigen::Vector3d(e1.vec) : Eigen::Vector3d(e2.vec);
  }

  ag::Mat part_weight(const SpectrumAg& s, int k) const {
    if (kind_ == GvfKind::Hodge) return s.sigma2 * s.phi[k] / s.hodge_norm;
    return s.sigma2 * s.phi[k] / s.scalar_norm;
  }

  ag::Mat gram(const std::vector<SpectrumAg>& spectra) const {
    ag::Mat acc;
    bool first = true;
    for (std::size_t part = 0; part < parts_.size(); ++part) {
      int k0 = kind_ == GvfKind::Hodge ? 1 : 0;
      for (int k = k0; k <= K_; ++k) {
        ag::Mat term = ag::mul(part_weight(spectra[part], k),
                               ag::Mat::constant(gram_structs_[part][k - k0]));
        acc = first ? term : acc + term;
        first = false;
      }
    }
    return acc;
  }

  // k(z, X): 3m x 3n with component-major blocks, on the graph
  ag::Mat cross_covariance(const std::vector<SpectrumAg>& spectra, const PointsBatch& pts) const {
    const Eigen::Index n = pts.size();
    ag::Mat t = ag::matmul(ag::Mat::constant(zmat_), ag::transpose(pts.X));
    std::vector<ag::Mat> xc, zc;
    for (int c = 0; c < 3; ++c) {
      xc.push_back(ag::transpose(ag::cols(pts.X, c, 1)));            // 1 x n
      zc.push_back(ag::Mat::constant(zmat_.col(c)));                 // m x 1
    }
    auto zbc = [&](int c) { return ag::bcast_cols(zc[c], n); };
    auto xbc = [&](int c) { return ag::bcast_rows(xc[c], m_); };

    ag::Mat blocks[3][3];
    auto add_block = [&](int c, int c2, const ag::Mat& v) {
      blocks[c][c2] = blocks[c][c2].defined() ? blocks[c][c2] + v : v;
    };

    if (kind_ == GvfKind::Hodge) {
      const double alpha = 0.5;
      auto c1seq = gegenbauer_sequence(K_ - 1, alpha + 1.0, t);
      auto c2seq = K_ >= 2 ? gegenbauer_sequence(K_ - 2, alpha + 2.0, t) : std::vector<ag::Mat>{};
      for (int part = 0; part < 2; ++part) {
        ag::Mat a1, a2;
        bool first = true;
        for (int k = 1; k <= K_; ++k) {
          double lam = laplace_eigenvalue(k, 2);
          ag::Mat w = part_weight(spectra[part], k) * ((k + alpha) / (alpha * lam));
          ag::Mat d1 = ag::mul(w * (2.0 * alpha), c1seq[k - 1]);
          a1 = first ? d1 : a1 + d1;
          if (k >= 2) {
            ag::Mat d2 = ag::mul(w * (4.0 * alpha * (alpha + 1.0)), c2seq[k - 2]);
            a2 = first || !a2.defined() ? d2 : a2 + d2;
          }
          first = false;
        }
        if (!a2.defined()) a2 = ag::Mat::constant(Eigen::MatrixXd::Zero(m_, n));
        // u = P_z x, v = P_x z, componentwise over the (z, x) grid
        std::array<ag::Mat, 3> u, v;
        for (int c = 0; c < 3; ++c) {
          u[c] = xbc(c) - ag::mul(t, zbc(c));
          v[c] = zbc(c) - ag::mul(t, xbc(c));
        }
        if (part == 0) {
          for (int c = 0; c < 3; ++c)
            for (int c2 = 0; c2 < 3; ++c2) {
              ag::Mat proj = ag::neg(ag::mul(zbc(c), zbc(c2))) - ag::mul(xbc(c), xbc(c2)) +
                             ag::mul(t, ag::mul(zbc(c), xbc(c2)));
              if (c == c2) proj = proj + 1.0;
              add_block(c, c2, ag::mul(a2, ag::mul(u[c], v[c2])) + ag::mul(a1, proj));
            }
        } else {
          // curl part: rotate both arguments by 90 degrees;
          // R_z P_z P_x R_x^T = (z . x) I - x z^T
          std::array<ag::Mat, 3> ru, rv;
          ru[0] = ag::mul(zbc(1), u[2]) - ag::mul(zbc(2), u[1]);
          ru[1] = ag::mul(zbc(2), u[0]) - ag::mul(zbc(0), u[2]);
          ru[2] = ag::mul(zbc(0), u[1]) - ag::mul(zbc(1), u[0]);
          rv[0] = ag::mul(xbc(1), v[2]) - ag::mul(xbc(2), v[1]);
          rv[1] = ag::mul(xbc(2), v[0]) - ag::mul(xbc(0), v[2]);
          rv[2] = ag::mul(xbc(0), v[1]) - ag::mul(xbc(1), v[0]);
          for (int c = 0; c < 3; ++c)
            for (int c2 = 0; c2 < 3; ++c2) {
              ag::Mat proj = ag::neg(ag::mul(xbc(c), zbc(c2)));
              if (c == c2) proj = proj + t;
              add_block(c, c2, ag::mul(a2, ag::mul(ru[c], rv[c2])) + ag::mul(a1, proj));
            }
        }
      }
    } else {
      const double alpha = 0.5;
      auto cseq = gegenbauer_sequence(K_, alpha, t);
      std::vector<ag::Mat> ka;
      for (std::size_t a = 0; a < parts_.size(); ++a) {
        ag::Mat acc;
        for (int k = 0; k <= K_; ++k) {
          ag::Mat term =
              ag::mul(part_weight(spectra[a], k) * addition_constant(k, 2), cseq[k]);
          acc = k == 0 ? term : acc + term;
        }
        ka.push_back(acc);
      }
      if (kind_ == GvfKind::Projected) {
        for (int c = 0; c < 3; ++c)
          for (int c2 = 0; c2 < 3; ++c2) {
            ag::Mat acc;
            bool first = true;
            for (int a = 0; a < 3; ++a) {
              // (P_z e_a)_c over rows and (P_x e_a)_{c2} over columns
              ag::Mat zf = ag::neg(ag::mul(zbc(c), zbc(a)));
              if (a == c) zf = zf + 1.0;
              ag::Mat xf = ag::neg(ag::mul(xbc(a), xbc(c2)));
              if (a == c2) xf = xf + 1.0;
              ag::Mat term = ag::mul(ka[a], ag::mul(zf, xf));
              acc = first ? term : acc + term;
              first = false;
            }
            blocks[c][c2] = acc;
          }
      } else {
        // coordinate frame: constant directions at z, batched directions at x
        Eigen::ArrayXd st2 =
            pts.X.value().col(0).array().square() + pts.X.value().col(1).array().square();
        if (st2.minCoeff() < 1e-16)
          throw std::domain_error("coordinate-frame GVF: point too close to a pole");
        ag::Mat x = ag::cols(pts.X, 0, 1), y = ag::cols(pts.X, 1, 1), zcol = ag::cols(pts.X, 2, 1);
        ag::Mat st = ag::sqrt(ag::square(x) + ag::square(y));
        ag::Mat cp = x / st, sp = y / st;
        std::array<std::array<ag::Mat, 3>, 2> ex;
        ex[0] = {ag::transpose(zcol * cp), ag::transpose(zcol * sp), ag::transpose(ag::neg(st))};
        ex[1] = {ag::transpose(ag::neg(sp)), ag::transpose(cp),
                 ag::transpose(st * 0.0)};
        for (int c = 0; c < 3; ++c)
          for (int c2 = 0; c2 < 3; ++c2) {
            ag::Mat acc;
            for (int a = 0; a < 2; ++a) {
              Eigen::VectorXd ezc(m_);
              for (int j = 0; j < m_; ++j) ezc(j) = direction_at(a, zmat_.row(j))(c);
              ag::Mat term = ag::mul(ka[a], ag::mul(ag::bcast_cols(ag::Mat::constant(ezc), n),
                                                    ag::bcast_rows(ex[a][c2], m_)));
              acc = a == 0 ? term : acc + term;
            }
            blocks[c][c2] = acc;
          }
      }
    }

    std::vector<ag::Mat> rows_;
    for (int c = 0; c < 3; ++c)
      rows_.push_back(ag::concat_cols({blocks[c][0], blocks[c][1], blocks[c][2]}));
    return ag::concat_rows(rows_);
  }

  // k(x, x) entries per point, as n x 1 nodes indexed [c][c2]
  std::array<std::array<ag::Mat, 3>, 3> pointwise_prior(const std::vector<SpectrumAg>& spectra,
                                                        const PointsBatch& pts) const {
    const Eigen::Index n = pts.size();
    std::array<std::array<ag::Mat, 3>, 3> out;
    std::vector<ag::Mat> coords;
    for (int c = 0; c < 3; ++c) coords.push_back(ag::cols(pts.X, c, 1));
    if (kind_ == GvfKind::Hodge) {
      // isotropic in the tangent plane: (sigma_div^2 + sigma_curl^2)/2 P_x
      ag::Mat s = (spectra[0].sigma2 + spectra[1].sigma2) * 0.5;
      for (int c = 0; c < 3; ++c)
        for (int c2 = 0; c2 < 3; ++c2) {
          ag::Mat v = ag::neg(ag::mul(coords[c], coords[c2]));
          if (c == c2) v = v + 1.0;
          out[c][c2] = ag::mul(s, v);
        }
      return out;
    }
    if (kind_ == GvfKind::Projected) {
      ag::Mat qsum;
      for (int a = 0; a < 3; ++a) {
        ag::Mat term = ag::mul(spectra[a].sigma2, ag::square(coords[a]));
        qsum = a == 0 ? term : qsum + term;
      }
      for (int c = 0; c < 3; ++c)
        for (int c2 = 0; c2 < 3; ++c2) {
          ag::Mat xx = ag::mul(coords[c], coords[c2]);
          ag::Mat v = ag::mul(xx, qsum) - ag::mul(spectra[c].sigma2, xx) -
                      ag::mul(spectra[c2].sigma2, xx);
          if (c == c2) v = v + ag::fill(spectra[c].sigma2, n, 1);
          out[c][c2] = v;
        }
      return out;
    }
    // frame
    Eigen::ArrayXd st2 =
        pts.X.value().col(0).array().square() + pts.X.value().col(1).array().square();
    if (st2.minCoeff() < 1e-16)
      throw std::domain_error("coordinate-frame GVF: point too close to a pole");
    ag::Mat x = coords[0], y = coords[1], z = coords[2];
    ag::Mat st = ag::sqrt(ag::square(x) + ag::square(y));
    ag::Mat cp = x / st, sp = y / st;
    std::array<std::array<ag::Mat, 3>, 2> e;
    e[0] = {z * cp, z * sp, ag::neg(st)};
    e[1] = {ag::neg(sp), cp, st * 0.0};
    for (int c = 0; c < 3; ++c)
      for (int c2 = 0; c2 < 3; ++c2) {
        ag::Mat acc;
        for (int a = 0; a < 2; ++a) {
          ag::Mat term = ag::mul(spectra[a].sigma2, ag::mul(e[a][c], e[a][c2]));
          acc = a == 0 ? term : acc + term;
        }
        out[c][c2] = acc;
      }
    return out;
  }

  GvfKind kind_;
  std::vector<SpherePoint> z_;
  Eigen::MatrixXd zmat_;
  int m_ = 0, K_ = 0;
  std::vector<detail::KernelSlots> parts_;
  int s_mean_ = -1, s_factor_ = -1;
  Eigen::MatrixXd proj_;   // 3m x 3m block-diagonal tangent projector
  Eigen::MatrixXd basis_;  // 3m x 2m orthonormal tangent basis
  std::vector<std::vector<Eigen::MatrixXd>> gram_structs_;
};

}  // namespace rdgp
