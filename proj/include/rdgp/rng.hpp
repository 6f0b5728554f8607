#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

// Seeded randomness.  All stochastic code in the library draws through these
// helpers so that runs are reproducible bit-for-bit for a given seed.  Normal
// variates are generated by an explicit Box-Muller transform rather than
// std::normal_distribution, whose output is implementation-defined.

namespace rdgp::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2)));
}

// uniform in (0, 1); never returns 0 or 1
inline double uniform_from_bits(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

// Stateful generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0x2545f4914f6cdd1dULL)) {}

  std::uint64_t next_bits() {
    state_ = splitmix64(state_);
    return state_;
  }

  double uniform() { return uniform_from_bits(next_bits()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal();
    return m;
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stateless keyed normal: the same key always yields the same variate,
// independent of evaluation order.  Used for the Monte-Carlo noise of the
// training objective so its value is a deterministic function of the
// parameters, the seed, and the data indices (common random numbers).
inline double normal_at(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2,
                        std::uint64_t k3, std::uint64_t k4) {
  std::uint64_t h = mix(mix(mix(mix(seed, k1), k2), k3), k4);
  double u1 = uniform_from_bits(h);
  double u2 = uniform_from_bits(splitmix64(h ^ 0xa0761d6478bd642fULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace rdgp::rng
