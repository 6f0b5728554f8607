#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rdgp/inducing.hpp"
#include "rdgp/variational.hpp"

// Residual deep Gaussian processes: a stack of exp-map GVF hidden layers with
// a scalar-GP or GVF last layer and Gaussian observation noise.

namespace rdgp {

enum class Family { InducingLocations, Interdomain };
enum class HeadKind { Scalar, Vector };

struct ModelSpec {
  int d = 2;           // sphere dimension
  int layers = 1;      // total layers L; hidden layers are L-1 GVFs
  GvfKind gvf = GvfKind::Hodge;
  Family family = Family::Interdomain;        // hidden-layer family
  HeadKind head = HeadKind::Scalar;
  Family head_family = Family::Interdomain;
  int truncation = 5;       // hidden kernel truncation degree
  int head_truncation = 6;  // head kernel truncation degree
  int features = 0;         // interdomain features (0 = all up to truncation)
  int head_features = 0;
  int inducing = 49;        // inducing locations (IL family)
  int head_inducing = 49;
  double nu = 1.5;
  bool train_nu = true;
  bool diag_extension = false;  // extended variational family on the feature tail
  double kappa = 1.0;
  double head_sigma2 = 1.0;
  double noise_var = 1e-2;

  double hidden_sigma2() const { return layers > 1 ? 1e-4 / (layers - 1) : 1e-4; }

  void validate() const {
    if (layers < 1) throw std::invalid_argument("ModelSpec: need at least one layer");
    if (d < 2) throw std::invalid_argument("ModelSpec: sphere dimension must be >= 2");
    if ((gvf != GvfKind::Projected || head == HeadKind::Vector) && d != 2 && layers > 1)
      throw std::invalid_argument("ModelSpec: only projected hidden layers support d > 2");
    if (head == HeadKind::Vector && d != 2)
      throw std::invalid_argument("ModelSpec: vector heads are supported on S_2 only");
  }
};

struct Dataset {
  std::vector<SpherePoint> inputs;
  Eigen::MatrixXd targets;  // n x 1 (scalar) or n x D (tangent vectors)

  int size() const { return static_cast<int>(inputs.size()); }
  Eigen::MatrixXd input_matrix() const {
    Eigen::MatrixXd x(inputs.size(), inputs.front().ambient_dim());
    for (std::size_t i = 0; i < inputs.size(); ++i) x.row(i) = inputs[i].coords.transpose();
    return x;
  }
};

class ResidualDeepGP {
 public:
  ModelSpec spec;
  ParameterStore store;
  std::vector<std::unique_ptr<VectorLayer>> hidden;
  std::unique_ptr<ScalarLayer> scalar_head;
  std::unique_ptr<VectorLayer> vector_head;
  int s_noise = -1;

  bool is_scalar() const { return scalar_head != nullptr; }
  double noise_var() const { return store.scalar_value(s_noise); }
  int num_layers() const { return static_cast<int>(hidden.size()) + 1; }
  int tangent_dim() const { return spec.d; }

  ag::Mat kl_total(EvalCtx& ctx) const {
    ag::Mat acc = is_scalar() ? scalar_head->kl(ctx) : vector_head->kl(ctx);
    for (const auto& l : hidden) acc = acc + l->kl(ctx);
    return acc;
  }
};

// initialisation protocol: kappa = 1, head sigma^2 = 1, hidden sigma^2 =
// 1e-4/(L-1), whitened-identity variational states, k-means inducing
// locations projected back onto the sphere
inline ResidualDeepGP build_model(const ModelSpec& spec,
                                  const std::vector<SpherePoint>& train_inputs,
                                  std::uint64_t seed) {
  spec.validate();
  ResidualDeepGP model;
  model.spec = spec;

  auto matern = [&](double sigma2, int K) {
    MaternSpec m;
    m.nu = spec.nu;
    m.kappa = spec.kappa;
    m.sigma2 = sigma2;
    m.K = K;
    m.d = spec.d;
    return m;
  };

  std::vector<SpherePoint> centers;
  auto inducing_points = [&](int count) {
    if (centers.empty()) {
      int k = std::min<int>(count, static_cast<int>(train_inputs.size()));
      centers = spherical_kmeans(train_inputs, k, 50, rng::mix(seed, 0x6b6dULL));
    }
    return centers;
  };

  const int L = spec.layers;
  for (int l = 0; l + 1 < L; ++l) {
    std::string prefix = "layer" + std::to_string(l + 1);
    double s2 = spec.hidden_sigma2();
    if (spec.family == Family::Interdomain) {
      if (spec.gvf == GvfKind::Hodge) {
        HodgeSpec h{matern(s2, spec.truncation), matern(s2, spec.truncation)};
        model.hidden.push_back(std::make_unique<IvHodgeLayer>(
            model.store, prefix, h, spec.features, spec.diag_extension, spec.train_nu));
      } else {
        int ncomp = spec.gvf == GvfKind::Projected ? spec.d + 1 : 2;
        std::vector<MaternSpec> comps(ncomp, matern(s2, spec.truncation));
        model.hidden.push_back(std::make_unique<IvComponentLayer>(
            model.store, prefix, spec.gvf, spec.d, comps, spec.features, spec.diag_extension,
            spec.train_nu));
      }
    } else {
      GvfPrior prior;
      prior.kind = spec.gvf;
      prior.d = spec.d;
      if (spec.gvf == GvfKind::Hodge)
        prior.hodge = HodgeSpec{matern(s2, spec.truncation), matern(s2, spec.truncation)};
      else {
        int ncomp = spec.gvf == GvfKind::Projected ? spec.d + 1 : 2;
        prior.components.assign(ncomp, matern(s2, spec.truncation));
      }
      model.hidden.push_back(std::make_unique<IlVectorLayer>(
          model.store, prefix, prior, inducing_points(spec.inducing), spec.train_nu));
    }
  }

  if (spec.head == HeadKind::Scalar) {
    MaternSpec h = matern(spec.head_sigma2, spec.head_truncation);
    if (spec.head_family == Family::Interdomain)
      model.scalar_head = std::make_unique<IvScalarLayer>(
          model.store, "head", h, spec.head_features, spec.diag_extension, spec.train_nu);
    else
      model.scalar_head = std::make_unique<IlScalarLayer>(
          model.store, "head", h, inducing_points(spec.head_inducing), spec.train_nu);
  } else {
    if (spec.head_family == Family::Interdomain) {
      HodgeSpec h{matern(spec.head_sigma2, spec.head_truncation),
                  matern(spec.head_sigma2, spec.head_truncation)};
      if (spec.gvf == GvfKind::Hodge || true) {
        // the vector head defaults to a Hodge GVF, the canonical choice on S_2
        model.vector_head = std::make_unique<IvHodgeLayer>(
            model.store, "head", h, spec.head_features, spec.diag_extension, spec.train_nu);
      }
    } else {
      GvfPrior prior;
      prior.kind = spec.gvf == GvfKind::Projected ? GvfKind::Projected : GvfKind::Hodge;
      prior.d = 2;
      if (prior.kind == GvfKind::Hodge)
        prior.hodge = HodgeSpec{matern(spec.head_sigma2, spec.head_truncation),
                                matern(spec.head_sigma2, spec.head_truncation)};
      else
        prior.components.assign(3, matern(spec.head_sigma2, spec.head_truncation));
      model.vector_head = std::make_unique<IlVectorLayer>(
          model.store, "head", prior, inducing_points(spec.head_inducing), spec.train_nu);
    }
  }

  model.s_noise = model.store.add_scalar("noise_var", Transform::Softplus, spec.noise_var);
  return model;
}

// ---------------------------------------------------------------------------
// sequential sampling through the hidden stack

namespace detail {

inline Eigen::MatrixXd keyed_noise(std::uint64_t seed, std::uint64_t stream, std::uint64_t sample,
                                   const std::vector<std::int64_t>& ids, int dims) {
  Eigen::MatrixXd eps(ids.size(), dims);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int k = 0; k < dims; ++k)
      eps(i, k) = rng::normal_at(seed, stream, sample, static_cast<std::uint64_t>(ids[i]), k);
  return eps;
}

}  // namespace detail

inline ag::Mat exp_map_batch(const ag::Mat& x, const ag::Mat& g) {
  ag::Mat s = ag::rowsum(ag::square(g));
  const Eigen::Index D = x.cols();
  return ag::mul(ag::bcast_cols(ag::cos_sqrt(s), D), x) +
         ag::mul(ag::bcast_cols(ag::sinc_sqrt(s), D), g);
}

// x_hat^l = exp_{x_hat^{l-1}}(g^l(x_hat^{l-1})), sampled marginally per input.
// The first layer may reuse a caller-held PointsBatch, whose harmonic bases
// are constants and survive across samples and optimisation steps.
inline ag::Mat propagate_hidden(EvalCtx& ctx, const ResidualDeepGP& model,
                                const PointsBatch& first, std::uint64_t seed,
                                std::uint64_t sample, const std::vector<std::int64_t>& ids) {
  const int t = model.tangent_dim();
  ag::Mat x = first.X;
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    ag::Mat eps = ag::Mat::constant(detail::keyed_noise(seed, 100 + l, sample, ids, t));
    ag::Mat g;
    if (l == 0) {
      g = sample_tangent(model.hidden[l]->moments(ctx, first), eps);
    } else {
      PointsBatch batch(x);
      g = sample_tangent(model.hidden[l]->moments(ctx, batch), eps);
    }
    x = exp_map_batch(x, g);
  }
  return x;
}

inline ag::Mat propagate_hidden(EvalCtx& ctx, const ResidualDeepGP& model, ag::Mat x,
                                std::uint64_t seed, std::uint64_t sample,
                                const std::vector<std::int64_t>& ids) {
  PointsBatch first(std::move(x));
  return propagate_hidden(ctx, model, first, seed, sample, ids);
}

// one full forward sample, head included; returns head values per input
// (n x 1 for scalar heads, n x D for vector heads)
inline Eigen::MatrixXd forward_sample(const ResidualDeepGP& model,
                                      const Eigen::MatrixXd& inputs, std::uint64_t seed,
                                      std::uint64_t sample = 0) {
  EvalCtx ctx(nullptr, model.store);
  std::vector<std::int64_t> ids(inputs.rows());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) ids[i] = i;
  ag::Mat x = propagate_hidden(ctx, model, ag::Mat::constant(inputs), seed, sample, ids);
  PointsBatch batch(x);
  if (model.is_scalar()) {
    ScalMoments m = model.scalar_head->moments(ctx, batch);
    ag::Mat eps = ag::Mat::constant(detail::keyed_noise(seed, 200, sample, ids, 1));
    return sample_scalar(m, eps).value();
  }
  VecMoments m = model.vector_head->moments(ctx, batch);
  ag::Mat eps = ag::Mat::constant(detail::keyed_noise(seed, 200, sample, ids, model.tangent_dim()));
  return sample_tangent(m, eps).value();
}

// ---------------------------------------------------------------------------
// evidence lower bound

// Doubly stochastic estimate: Monte-Carlo over the hidden path (S samples,
// common random numbers keyed by dataset index), analytic integration over
// the head's own Gaussian, minibatch scaling on the likelihood term only.
inline ag::Mat elbo_graph(EvalCtx& ctx, const ResidualDeepGP& model, const Eigen::MatrixXd& bx,
                          const Eigen::MatrixXd& by, const std::vector<std::int64_t>& ids,
                          double n_total, int samples, std::uint64_t seed,
                          const PointsBatch* base = nullptr) {
  if (samples < 1) throw std::invalid_argument("elbo: need at least one sample");
  // without hidden layers the path is deterministic, so one sample is exact
  if (model.hidden.empty()) samples = 1;
  const Eigen::Index nb = bx.rows();
  ag::Mat noise = ctx.param(model.s_noise);
  std::optional<PointsBatch> local;
  if (!base) {
    local.emplace(ag::Mat::constant(bx));
    base = &*local;
  }
  ag::Mat ell;
  for (int s = 0; s < samples; ++s) {
    ag::Mat xs = propagate_hidden(ctx, model, *base, seed, s, ids);
    PointsBatch sample_batch(xs);
    const PointsBatch& batch = model.hidden.empty() ? *base : sample_batch;
    ag::Mat contrib;
    if (model.is_scalar()) {
      ScalMoments m = model.scalar_head->moments(ctx, batch);
      ag::Mat y = ag::Mat::constant(by);
      ag::Mat resid2 = ag::square(y - m.mean);
      contrib = ag::sum((resid2 + m.var) / (noise * (-2.0))) -
                (0.5 * nb) * ag::log(noise * (2.0 * M_PI));
    } else {
      VecMoments m = model.vector_head->moments(ctx, batch);
      ag::Mat y = ag::Mat::constant(by);
      ag::Mat r = y - m.mean;
      ag::Mat quad, trace;
      const int t = m.tangent_dim();
      for (int i = 0; i < t; ++i) {
        ag::Mat ri = ag::rowsum(ag::mul(r, m.basis[i]));
        quad = i == 0 ? ag::square(ri) : quad + ag::square(ri);
        trace = i == 0 ? m.cov[0][0] : trace + m.cov[i][i];
      }
      contrib = ag::sum((quad + trace) / (noise * (-2.0))) -
                (0.5 * t * nb) * ag::log(noise * (2.0 * M_PI));
    }
    ell = s == 0 ? contrib : ell + contrib;
  }
  ag::Mat scaled = ell * (n_total / (static_cast<double>(nb) * samples));
  return scaled - model.kl_total(ctx);
}

inline double elbo(const ResidualDeepGP& model, const Dataset& data,
                   const std::vector<std::int64_t>& batch_ids, double n_total, int samples,
                   std::uint64_t seed, const PointsBatch* base = nullptr) {
  Eigen::MatrixXd bx(batch_ids.size(), data.inputs.front().ambient_dim());
  Eigen::MatrixXd by(batch_ids.size(), data.targets.cols());
  for (std::size_t i = 0; i < batch_ids.size(); ++i) {
    bx.row(i) = data.inputs[batch_ids[i]].coords.transpose();
    by.row(i) = data.targets.row(batch_ids[i]);
  }
  EvalCtx ctx(nullptr, model.store);
  double v = elbo_graph(ctx, model, bx, by, batch_ids, n_total, samples, seed, base).scalar_value();
  if (!std::isfinite(v))
    throw std::runtime_error("elbo: non-finite value (noise_var=" +
                             std::to_string(model.noise_var()) + ")");
  return v;
}

// ---------------------------------------------------------------------------
// prediction and metrics

struct ScalarPrediction {
  Eigen::MatrixXd means, vars;   // S x n
  Eigen::VectorXd mixture_mean;  // n
  Eigen::VectorXd uncertainty;   // n: mean Frobenius norm of head covariance
  double noise_var = 0.0;
  int samples = 0;
};

struct VectorPrediction {
  std::vector<Eigen::MatrixXd> means;                 // per sample, n x 3
  std::vector<std::array<Eigen::VectorXd, 3>> cov;    // per sample, (a, b, c)
  std::vector<std::array<Eigen::MatrixXd, 2>> bases;  // per sample, {B1, B2}
  Eigen::MatrixXd mixture_mean;                       // n x 3
  Eigen::VectorXd uncertainty;                        // n
  double noise_var = 0.0;
  int samples = 0;
};

inline ScalarPrediction predict_scalar(const ResidualDeepGP& model,
                                       const std::vector<SpherePoint>& stars, int samples,
                                       std::uint64_t seed) {
  if (!model.is_scalar()) throw std::logic_error("predict_scalar: model has a vector head");
  if (samples < 1) throw std::invalid_argument("predict: need at least one sample");
  const int n = static_cast<int>(stars.size());
  Eigen::MatrixXd x(n, stars.front().ambient_dim());
  for (int i = 0; i < n; ++i) x.row(i) = stars[i].coords.transpose();
  std::vector<std::int64_t> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;

  ScalarPrediction out;
  out.samples = samples;
  out.noise_var = model.noise_var();
  out.means.resize(samples, n);
  out.vars.resize(samples, n);
  EvalCtx ctx(nullptr, model.store);
  PointsBatch base(ag::Mat::constant(x));
  for (int s = 0; s < samples; ++s) {
    ag::Mat xs = propagate_hidden(ctx, model, base, seed, s, ids);
    PointsBatch sample_batch(xs);
    const PointsBatch& batch = model.hidden.empty() ? base : sample_batch;
    ScalMoments m = model.scalar_head->moments(ctx, batch);
    out.means.row(s) = m.mean.value().col(0).transpose();
    out.vars.row(s) = m.var.value().col(0).transpose();
  }
  out.mixture_mean = out.means.colwise().mean().transpose();
  out.uncertainty = out.vars.array().abs().colwise().mean().transpose();
  return out;
}

inline VectorPrediction predict_vector(const ResidualDeepGP& model,
                                       const std::vector<SpherePoint>& stars, int samples,
                                       std::uint64_t seed) {
  if (model.is_scalar()) throw std::logic_error("predict_vector: model has a scalar head");
  if (samples < 1) throw std::invalid_argument("predict: need at least one sample");
  const int n = static_cast<int>(stars.size());
  Eigen::MatrixXd x(n, 3);
  for (int i = 0; i < n; ++i) x.row(i) = stars[i].coords.transpose();
  std::vector<std::int64_t> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;

  VectorPrediction out;
  out.samples = samples;
  out.noise_var = model.noise_var();
  out.mixture_mean = Eigen::MatrixXd::Zero(n, 3);
  out.uncertainty = Eigen::VectorXd::Zero(n);
  EvalCtx ctx(nullptr, model.store);
  PointsBatch base(ag::Mat::constant(x));
  for (int s = 0; s < samples; ++s) {
    ag::Mat xs = propagate_hidden(ctx, model, base, seed, s, ids);
    PointsBatch sample_batch(xs);
    const PointsBatch& batch = model.hidden.empty() ? base : sample_batch;
    VecMoments m = model.vector_head->moments(ctx, batch);
    out.means.push_back(m.mean.value());
    out.cov.push_back({m.cov[0][0].value().col(0), m.cov[1][0].value().col(0),
                       m.cov[1][1].value().col(0)});
    out.bases.push_back({m.basis[0].value(), m.basis[1].value()});
    out.mixture_mean += m.mean.value();
    out.uncertainty += (m.cov[0][0].value().col(0).array().square() +
                        2.0 * m.cov[1][0].value().col(0).array().square() +
                        m.cov[1][1].value().col(0).array().square())
                           .sqrt()
                           .matrix();
  }
  out.mixture_mean /= samples;
  out.uncertainty /= samples;
  return out;
}

// negative log predictive density of the Gaussian-mixture predictive
inline double nlpd(const ResidualDeepGP& model, const std::vector<SpherePoint>& stars,
                   const Eigen::MatrixXd& targets, int samples, std::uint64_t seed) {
  const int n = static_cast<int>(stars.size());
  double acc = 0.0;
  if (model.is_scalar()) {
    ScalarPrediction p = predict_scalar(model, stars, samples, seed);
    for (int i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      Eigen::VectorXd logp(samples);
      for (int s = 0; s < samples; ++s) {
        double v = p.vars(s, i) + p.noise_var;
        double r = targets(i, 0) - p.means(s, i);
        logp(s) = -0.5 * (std::log(2.0 * M_PI * v) + r * r / v);
        mx = std::max(mx, logp(s));
      }
      acc -= mx + std::log((logp.array() - mx).exp().sum() / samples);
    }
    return acc / n;
  }
  VectorPrediction p = predict_vector(model, stars, samples, seed);
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd logp(samples);
    for (int s = 0; s < samples; ++s) {
      Eigen::Vector3d r = targets.row(i).transpose() - p.means[s].row(i).transpose();
      double r1 = r.dot(p.bases[s][0].row(i));
      double r2 = r.dot(p.bases[s][1].row(i));
      double a = p.cov[s][0](i) + p.noise_var;
      double b = p.cov[s][1](i);
      double c = p.cov[s][2](i) + p.noise_var;
      double det = a * c - b * b;
      double quad = (c * r1 * r1 - 2.0 * b * r1 * r2 + a * r2 * r2) / det;
      logp(s) = -std::log(2.0 * M_PI) - 0.5 * std::log(det) - 0.5 * quad;
      mx = std::max(mx, logp(s));
    }
    acc -= mx + std::log((logp.array() - mx).exp().sum() / samples);
  }
  return acc / n;
}

// mean squared error of the mixture mean (embedded residual for vectors)
inline double mse(const ResidualDeepGP& model, const std::vector<SpherePoint>& stars,
                  const Eigen::MatrixXd& targets, int samples, std::uint64_t seed) {
  const int n = static_cast<int>(stars.size());
  if (model.is_scalar()) {
    ScalarPrediction p = predict_scalar(model, stars, samples, seed);
    return (p.mixture_mean - targets.col(0)).squaredNorm() / n;
  }
  VectorPrediction p = predict_vector(model, stars, samples, seed);
  return (p.mixture_mean - targets).squaredNorm() / n;
}

// ---------------------------------------------------------------------------
// pathwise function samples through the whole model

inline ScalarSample deep_function_sample_scalar(const ResidualDeepGP& model, std::uint64_t seed) {
  if (!model.is_scalar())
    throw std::logic_error("deep_function_sample_scalar: model has a vector head");
  std::vector<FieldSample> layers;
  for (std::size_t l = 0; l < model.hidden.size(); ++l)
    layers.push_back(model.hidden[l]->function_sample(model.store, rng::mix(seed, l + 1)));
  ScalarSample headfn = model.scalar_head->function_sample(model.store, rng::mix(seed, 0x68ULL));
  return [layers, headfn](const SpherePoint& x0) {
    SpherePoint x = x0;
    for (const auto& g : layers) x = exp_map(x, g(x));
    return headfn(x);
  };
}

inline FieldSample deep_function_sample_vector(const ResidualDeepGP& model, std::uint64_t seed) {
  if (model.is_scalar())
    throw std::logic_error("deep_function_sample_vector: model has a scalar head");
  std::vector<FieldSample> layers;
  for (std::size_t l = 0; l < model.hidden.size(); ++l)
    layers.push_back(model.hidden[l]->function_sample(model.store, rng::mix(seed, l + 1)));
  FieldSample headfn = model.vector_head->function_sample(model.store, rng::mix(seed, 0x68ULL));
  return [layers, headfn](const SpherePoint& x0) {
    SpherePoint x = x0;
    for (const auto& g : layers) x = exp_map(x, g(x));
    return headfn(x);
  };
}

}  // namespace rdgp
