#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rdgp/deep_model.hpp"

// Gradient-based training: reverse-mode ELBO gradients over the parameter
// store, the Adam optimiser, the training loop, and a finite-difference
// verifier for the gradient contract.

namespace rdgp {

struct ElboGradient {
  double value = 0.0;
  Eigen::VectorXd gradient;  // with respect to the unconstrained raw vector
};

inline ElboGradient elbo_gradient(const ResidualDeepGP& model, const Dataset& data,
                                  const std::vector<std::int64_t>& batch_ids, double n_total,
                                  int samples, std::uint64_t seed,
                                  const PointsBatch* base = nullptr) {
  Eigen::MatrixXd bx(batch_ids.size(), data.inputs.front().ambient_dim());
  Eigen::MatrixXd by(batch_ids.size(), data.targets.cols());
  for (std::size_t i = 0; i < batch_ids.size(); ++i) {
    bx.row(i) = data.inputs[batch_ids[i]].coords.transpose();
    by.row(i) = data.targets.row(batch_ids[i]);
  }
  ag::Tape tape;
  EvalCtx ctx(&tape, model.store);
  ag::Mat obj = elbo_graph(ctx, model, bx, by, batch_ids, n_total, samples, seed, base);
  ElboGradient out;
  out.value = obj.scalar_value();
  if (!std::isfinite(out.value)) throw std::runtime_error("elbo_gradient: non-finite objective");
  tape.backward(obj);
  out.gradient = ctx.gather_gradient();
  for (int i = 0; i < out.gradient.size(); ++i)
    if (!std::isfinite(out.gradient(i)))
      throw std::runtime_error("elbo_gradient: non-finite gradient for parameter '" +
                               model.store.name_of(i) + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  int step = 0;
  Eigen::VectorXd m, v;
  double lr = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamState(int n, double lr_ = 0.01) : m(Eigen::VectorXd::Zero(n)),
                                                 v(Eigen::VectorXd::Zero(n)), lr(lr_) {}
};

// standard bias-corrected update minimising the objective whose gradient is
// passed in
inline void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (params.size() != grad.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: size mismatch");
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  double c1 = 1.0 - std::pow(state.beta1, state.step);
  double c2 = 1.0 - std::pow(state.beta2, state.step);
  Eigen::VectorXd mhat = state.m / c1;
  Eigen::VectorXd vhat = state.v / c2;
  params -= state.lr * mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                                          Eigen::VectorXd::Constant(params.size(), state.eps));
}

// ---------------------------------------------------------------------------
// training loop

struct TrainConfig {
  int iters = 1000;
  double lr = 0.01;
  int batch_size = 0;  // 0 = full batch
  int samples = 3;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> elbo_trace;
};

inline TrainResult train(ResidualDeepGP& model, const Dataset& data, const TrainConfig& cfg) {
  TrainResult res;
  const int n = data.size();
  Eigen::VectorXd mask = model.store.trainable_mask();
  AdamState adam(model.store.size(), cfg.lr);
  std::vector<std::int64_t> full(n);
  for (int i = 0; i < n; ++i) full[i] = i;
  // constant input batch: its harmonic bases are shared across iterations
  PointsBatch full_base(ag::Mat::constant(data.input_matrix()));
  bool full_batch = cfg.batch_size <= 0 || cfg.batch_size >= n;

  for (int it = 0; it < cfg.iters; ++it) {
    std::vector<std::int64_t> batch;
    if (cfg.batch_size <= 0 || cfg.batch_size >= n) {
      batch = full;
    } else {
      rng::Rng gen(rng::mix(cfg.seed, 0xba7c4 + static_cast<std::uint64_t>(it)));
      batch.resize(cfg.batch_size);
      for (int i = 0; i < cfg.batch_size; ++i) batch[i] = static_cast<std::int64_t>(gen.uniform_index(n));
    }
    std::uint64_t step_seed = rng::mix(cfg.seed, 0x5eed + static_cast<std::uint64_t>(it));
    ElboGradient eg;
    try {
      eg = elbo_gradient(model, data, batch, n, cfg.samples, step_seed,
                         full_batch ? &full_base : nullptr);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(e.what()) + " at iteration " + std::to_string(it) +
                               " (trace length " + std::to_string(res.elbo_trace.size()) + ")");
    }
    res.elbo_trace.push_back(eg.value);
    Eigen::VectorXd grad = (-eg.gradient).cwiseProduct(mask);  // ascend the ELBO
    Eigen::VectorXd params = model.store.raw();
    adam_step(adam, params, grad);
    // restore non-trainable coordinates exactly
    Eigen::VectorXd old = model.store.raw();
    params = params.cwiseProduct(mask) + old.cwiseProduct(Eigen::VectorXd::Ones(mask.size()) - mask);
    model.store.set_raw(params);
  }
  return res;
}

// ---------------------------------------------------------------------------
// finite-difference verification of the gradient contract

struct FdReport {
  Eigen::VectorXd analytic, numeric, rel_error;
  double worst = 0.0;
  int worst_index = -1;
  std::string worst_name;
};

// Central differences of the ELBO under a fixed seed versus the reverse-mode
// gradient.  Relative error uses max(|a|, |b|, 1e-6) in the denominator to
// keep quiet coordinates from amplifying finite-difference roundoff.
inline FdReport finite_difference_check(ResidualDeepGP& model, const Dataset& data, double step,
                                        std::uint64_t seed, int samples = 3) {
  if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be positive");
  const int n = data.size();
  std::vector<std::int64_t> batch(n);
  for (int i = 0; i < n; ++i) batch[i] = i;
  ElboGradient eg = elbo_gradient(model, data, batch, n, samples, seed);
  Eigen::VectorXd mask = model.store.trainable_mask();

  FdReport rep;
  rep.analytic = eg.gradient;
  rep.numeric = Eigen::VectorXd::Zero(eg.gradient.size());
  rep.rel_error = Eigen::VectorXd::Zero(eg.gradient.size());
  Eigen::VectorXd base = model.store.raw();
  for (int i = 0; i < base.size(); ++i) {
    if (mask(i) == 0.0) continue;
    Eigen::VectorXd p = base;
    p(i) = base(i) + step;
    model.store.set_raw(p);
    double up = elbo(model, data, batch, n, samples, seed);
    p(i) = base(i) - step;
    model.store.set_raw(p);
    double dn = elbo(model, data, batch, n, samples, seed);
    rep.numeric(i) = (up - dn) / (2.0 * step);
    double denom = std::max({std::abs(rep.analytic(i)), std::abs(rep.numeric(i)), 1e-6});
    rep.rel_error(i) = std::abs(rep.analytic(i) - rep.numeric(i)) / denom;
    if (rep.rel_error(i) > rep.worst) {
      rep.worst = rep.rel_error(i);
      rep.worst_index = i;
      rep.worst_name = model.store.name_of(i);
    }
  }
  model.store.set_raw(base);
  return rep;
}

}  // namespace rdgp
