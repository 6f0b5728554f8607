#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "rdgp/rng.hpp"

// Embedded hypersphere primitives.  S_d is represented as the unit sphere in
// R^{d+1}; tangent vectors live in the embedding space and are orthogonal to
// their base point.  All functions are pure; randomised ones take a seed.

namespace rdgp {

using Vec = Eigen::VectorXd;

struct SpherePoint {
  Vec coords;

  SpherePoint() = default;
  explicit SpherePoint(Vec c) : coords(std::move(c)) {
    double n = coords.norm();
    if (std::abs(n - 1.0) > 1e-9)
      throw std::invalid_argument("SpherePoint: coordinates are not unit norm");
    coords /= n;
  }

  static SpherePoint normalized(const Vec& v) {
    double n = v.norm();
    if (n == 0.0) throw std::invalid_argument("SpherePoint: zero vector");
    return SpherePoint(Vec(v / n));
  }

  // sphere dimension d (embedding dimension is d+1)
  int dim() const { return static_cast<int>(coords.size()) - 1; }
  int ambient_dim() const { return static_cast<int>(coords.size()); }
};

struct TangentVector {
  SpherePoint base;
  Vec vec;

  TangentVector() = default;
  TangentVector(SpherePoint b, Vec v) : base(std::move(b)), vec(std::move(v)) {
    if (vec.size() != base.coords.size())
      throw std::invalid_argument("TangentVector: dimension mismatch");
    double n = vec.norm();
    if (n > 0.0 && std::abs(vec.dot(base.coords)) > 1e-8 * n)
      throw std::invalid_argument("TangentVector: not tangent to base point");
  }

  double norm() const { return vec.norm(); }
};

inline Vec tangent_project_vec(const Vec& x, const Vec& h) {
  return h - h.dot(x) * x;
}

inline TangentVector tangent_project(const SpherePoint& x, const Vec& h) {
  if (h.size() != x.coords.size())
    throw std::invalid_argument("tangent_project: dimension mismatch");
  return TangentVector(x, tangent_project_vec(x.coords, h));
}

inline SpherePoint exp_map(const SpherePoint& x, const TangentVector& v) {
  double r = v.vec.norm();
  if (r < 1e-12) return x;
  Vec out = std::cos(r) * x.coords + (std::sin(r) / r) * v.vec;
  return SpherePoint::normalized(out);
}

// Hodge star on tangent vectors of S_2: rotation by 90 degrees in the
// tangent plane, realised as the cross product x × v.
inline TangentVector rotate90(const TangentVector& v) {
  if (v.base.dim() != 2)
    throw std::invalid_argument("rotate90: only defined on S_2");
  Eigen::Vector3d x = v.base.coords, w = v.vec;
  return TangentVector(v.base, Vec(x.cross(w)));
}

inline double geodesic_distance(const SpherePoint& x, const SpherePoint& y) {
  if (x.coords.size() != y.coords.size())
    throw std::invalid_argument("geodesic_distance: dimension mismatch");
  double t = x.coords.dot(y.coords);
  return std::acos(std::min(1.0, std::max(-1.0, t)));
}

// Near-uniform deterministic point set on S_2.  Point i has colatitude
// arccos(1 - (2i+1)/n) and longitude 2*pi*i/golden_ratio.
inline std::vector<SpherePoint> fibonacci_lattice(int n) {
  if (n < 1) throw std::invalid_argument("fibonacci_lattice: n must be at least 1");
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<SpherePoint> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) {
    double ct = 1.0 - (2.0 * i + 1.0) / n;
    double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    double lon = 2.0 * M_PI * i / golden;
    Vec c(3);
    c << st * std::cos(lon), st * std::sin(lon), ct;
    pts.push_back(SpherePoint::normalized(c));
  }
  return pts;
}

inline SpherePoint riemannian_gradient_step(const SpherePoint& x, const Vec& euclid_grad,
                                            double step) {
  if (step <= 0.0) throw std::invalid_argument("riemannian_gradient_step: step must be positive");
  return exp_map(x, tangent_project(x, Vec(-step * euclid_grad)));
}

// Lloyd iterations in the embedding space; centroids are renormalised onto
// the sphere after every update.  Empty clusters are reseeded from a random
// data point.
inline std::vector<SpherePoint> spherical_kmeans(const std::vector<SpherePoint>& points,
                                                 int k, int iters, std::uint64_t seed) {
  if (k < 1 || k > static_cast<int>(points.size()))
    throw std::invalid_argument("spherical_kmeans: need 1 <= k <= number of points");
  rng::Rng gen(rng::mix(seed, 0x6b6d65616e73ULL));
  const int n = static_cast<int>(points.size());
  const int D = points[0].ambient_dim();

  // initial centroids: k distinct data points
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[gen.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
  std::vector<Vec> centroids(k);
  for (int c = 0; c < k; ++c) centroids[c] = points[perm[c]].coords;

  std::vector<int> assign(n, 0);
  for (int it = 0; it < iters; ++it) {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (points[i].coords - centroids[0]).squaredNorm();
      for (int c = 1; c < k; ++c) {
        double d = (points[i].coords - centroids[c]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[i] = best;
    }
    std::vector<Vec> sums(k, Vec::Zero(D));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums[assign[i]] += points[i].coords;
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        centroids[c] = points[gen.uniform_index(n)].coords;
        continue;
      }
      Vec mean = sums[c] / counts[c];
      double nm = mean.norm();
      centroids[c] = nm > 1e-14 ? Vec(mean / nm) : points[gen.uniform_index(n)].coords;
    }
  }
  std::vector<SpherePoint> out;
  out.reserve(k);
  for (int c = 0; c < k; ++c) out.push_back(SpherePoint::normalized(centroids[c]));
  return out;
}

// Smooth local orthonormal tangent basis at x on S_2, built by crossing with
// a fixed auxiliary axis chosen away from x.
inline void tangent_basis_s2(const Eigen::Vector3d& x, Eigen::Vector3d& b1,
                             Eigen::Vector3d& b2) {
  Eigen::Vector3d axis = std::abs(x.z()) < 0.9 ? Eigen::Vector3d::UnitZ()
                                               : Eigen::Vector3d::UnitX();
  b1 = axis.cross(x).normalized();
  b2 = x.cross(b1);
}

}  // namespace rdgp
