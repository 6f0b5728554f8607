#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "rdgp/kernels.hpp"
#include "rdgp/rng.hpp"
#include "rdgp/sphere.hpp"

// Gaussian vector field priors: projected, coordinate-frame, and Hodge
// constructions, with a uniform covariance and prior-sampling interface.

namespace rdgp {

enum class GvfKind { Projected, CoordinateFrame, Hodge };

struct GvfPrior {
  GvfKind kind = GvfKind::Hodge;
  int d = 2;
  std::vector<MaternSpec> components;  // Projected: d+1 specs; CoordinateFrame: d specs
  HodgeSpec hodge;                     // Hodge kind only

  void validate() const {
    switch (kind) {
      case GvfKind::Projected:
        if (static_cast<int>(components.size()) != d + 1)
          throw std::invalid_argument("GvfPrior: projected kind needs d+1 component specs");
        for (const auto& c : components) {
          c.validate();
          if (c.d != d) throw std::invalid_argument("GvfPrior: component dimension mismatch");
        }
        break;
      case GvfKind::CoordinateFrame:
        if (d != 2)
          throw std::invalid_argument("GvfPrior: coordinate-frame kind is defined on S_2 only");
        if (components.size() != 2)
          throw std::invalid_argument("GvfPrior: frame kind needs d component specs");
        for (const auto& c : components) c.validate();
        break;
      case GvfKind::Hodge:
        if (d != 2) throw std::invalid_argument("GvfPrior: Hodge kind requires d = 2");
        hodge.validate();
        break;
    }
  }

  int truncation() const {
    return kind == GvfKind::Hodge ? hodge.div.K : components.front().K;
  }
};

// Normalised colatitude/longitude coordinate directions at x on S_2.
// Undefined at the poles; callers must perturb or use another GVF kind.
inline std::pair<TangentVector, TangentVector> default_frame_s2(const SpherePoint& x) {
  if (x.dim() != 2) throw std::invalid_argument("default_frame_s2: point not on S_2");
  double st = std::hypot(x.coords(0), x.coords(1));  // sin(colatitude)
  if (st < 1e-8)
    throw std::domain_error("default_frame_s2: coordinate frame is singular at the poles");
  double cp = x.coords(0) / st, sp = x.coords(1) / st, ct = x.coords(2);
  Vec e_colat(3), e_lon(3);
  e_colat << ct * cp, ct * sp, -st;
  e_lon << -sp, cp, 0.0;
  return {TangentVector(x, e_colat), TangentVector(x, e_lon)};
}

inline Eigen::MatrixXd gvf_cov(const GvfPrior& prior, const SpherePoint& x,
                               const SpherePoint& x2) {
  prior.validate();
  if (x.dim() != prior.d || x2.dim() != prior.d)
    throw std::invalid_argument("gvf_cov: dimension mismatch");
  const int D = prior.d + 1;
  switch (prior.kind) {
    case GvfKind::Projected: {
      Eigen::VectorXd diag(D);
      for (int c = 0; c < D; ++c) diag(c) = scalar_matern_kernel(prior.components[c], x, x2);
      Eigen::MatrixXd px = Eigen::MatrixXd::Identity(D, D) - x.coords * x.coords.transpose();
      Eigen::MatrixXd px2 = Eigen::MatrixXd::Identity(D, D) - x2.coords * x2.coords.transpose();
      return px * diag.asDiagonal() * px2;
    }
    case GvfKind::CoordinateFrame: {
      auto [e1x, e2x] = default_frame_s2(x);
      auto [e1y, e2y] = default_frame_s2(x2);
      return scalar_matern_kernel(prior.components[0], x, x2) * e1x.vec * e1y.vec.transpose() +
             scalar_matern_kernel(prior.components[1], x, x2) * e2x.vec * e2y.vec.transpose();
    }
    case GvfKind::Hodge:
      return hodge_compositional_kernel(prior.hodge, x, x2);
  }
  throw std::logic_error("gvf_cov: unreachable");
}

// A function-space draw from the prior: deterministic given the seed,
// smooth, and evaluable at arbitrary points.
using FieldSample = std::function<TangentVector(const SpherePoint&)>;
using ScalarSample = std::function<double(const SpherePoint&)>;

// weight draw over the explicit scalar features of one Matern spec
inline ScalarSample scalar_prior_function_sample(const MaternSpec& spec, rng::Rng& gen) {
  spec.validate();
  int total = total_harmonic_count(spec.K, spec.d);
  Eigen::VectorXd w = gen.normal_vector(total);
  Eigen::VectorXd scales = scalar_feature_scales(spec);
  Eigen::VectorXd sw = (w.array() * scales.array()).matrix();
  MaternSpec s = spec;
  return [s, sw](const SpherePoint& x) {
    Eigen::VectorXd phi =
        s.d == 2 ? scalar_harmonics_s2(x, s.K) : scalar_harmonics_sd(x, s.K);
    return sw.dot(phi);
  };
}

inline FieldSample gvf_prior_function_sample(const GvfPrior& prior, std::uint64_t seed) {
  prior.validate();
  rng::Rng gen(rng::mix(seed, 0x677666ULL));
  switch (prior.kind) {
    case GvfKind::Hodge: {
      const HodgeSpec spec = prior.hodge;
      int per_kind = total_harmonic_count(spec.div.K, 2) - 1;
      Eigen::VectorXd w = gen.normal_vector(2 * per_kind);
      return [spec, w, per_kind](const SpherePoint& x) {
        Eigen::MatrixXd psi = vector_feature_map(spec, x, 0, 2 * per_kind);
        return TangentVector(x, Vec(psi * w));
      };
    }
    case GvfKind::Projected: {
      std::vector<ScalarSample> comps;
      for (const auto& c : prior.components) comps.push_back(scalar_prior_function_sample(c, gen));
      return [comps](const SpherePoint& x) {
        Vec h(comps.size());
        for (std::size_t c = 0; c < comps.size(); ++c) h(c) = comps[c](x);
        return tangent_project(x, h);
      };
    }
    case GvfKind::CoordinateFrame: {
      std::vector<ScalarSample> comps;
      for (const auto& c : prior.components) comps.push_back(scalar_prior_function_sample(c, gen));
      return [comps](const SpherePoint& x) {
        auto [e1, e2] = default_frame_s2(x);
        return TangentVector(x, Vec(comps[0](x) * e1.vec + comps[1](x) * e2.vec));
      };
    }
  }
  throw std::logic_error("gvf_prior_function_sample: unreachable");
}

}  // namespace rdgp
