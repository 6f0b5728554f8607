#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rdgp/config.hpp"
#include "rdgp/deep_model.hpp"
#include "rdgp/report.hpp"
#include "rdgp/training.hpp"

// Experiment harness: benchmark targets, data ingestion, and the synthetic
// regression, vector-field regression, Bayesian optimisation, and
// Euclidean-embedding protocols.

namespace rdgp {

// ---------------------------------------------------------------------------
// benchmark targets on S_2

namespace detail {
inline double clamp1(double t) { return std::min(1.0, std::max(-1.0, t)); }
inline double y23(double theta, double phi) {
  double st = std::sin(theta);
  return std::sqrt(105.0 / (32.0 * M_PI)) * st * st * st * std::sin(3.0 * phi);
}
inline double y12(double theta, double phi) {
  return std::sqrt(15.0 / (8.0 * M_PI)) * std::sin(theta) * std::sin(2.0 * phi);
}
}  // namespace detail

// Irregular benchmark: spherical harmonics composed with the swapped
// Cartesian-to-spherical map (atan2(x2, x1), arccos(x3)), which places
// singularities at the poles and around the equator image.
inline double benchmark_f(const SpherePoint& x) {
  if (x.dim() != 2) throw std::invalid_argument("benchmark_f: point not on S_2");
  const Vec& c = x.coords;
  double a1 = std::atan2(c(1), c(0));
  double b1 = std::acos(detail::clamp1(c(2)));
  // R(x) = (x1, -x3, x2)
  double a2 = std::atan2(-c(2), c(0));
  double b2 = std::acos(detail::clamp1(c(1)));
  return detail::y23(a1, b1) + detail::y12(a2, b2);
}

// single-global-minimum variant used as the optimisation target
inline double bo_target(const SpherePoint& x) {
  if (x.dim() != 2) throw std::invalid_argument("bo_target: point not on S_2");
  const Vec& c = x.coords;
  double a1 = std::atan2(c(1), c(0));
  double b1 = std::acos(detail::clamp1(c(2)));
  return detail::y23(a1, b1) * (c(2) + 1.0) * (1.0 - std::acos(detail::clamp1(c(2))));
}

// Monte-Carlo expected improvement for minimisation
inline double expected_improvement(const std::vector<double>& samples, double f_best) {
  if (samples.empty()) throw std::invalid_argument("expected_improvement: no samples");
  double acc = 0.0;
  for (double f : samples) acc += std::max(f_best - f, 0.0);
  return acc / samples.size();
}

// map R^d to the unit sphere S_d in R^{d+1} by appending a bias coordinate
inline SpherePoint embed_euclidean(const Eigen::VectorXd& x, double b = 1.0) {
  Eigen::VectorXd v(x.size() + 1);
  v.head(x.size()) = x;
  v(x.size()) = b;
  double n = v.norm();
  if (n == 0.0) throw std::invalid_argument("embed_euclidean: zero vector");
  return SpherePoint::normalized(v);
}

// ---------------------------------------------------------------------------
// vector-field CSV ingestion

struct VectorFieldRecord {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
  double u = 0.0;    // eastward component
  double v = 0.0;    // northward component
};

inline std::vector<VectorFieldRecord> parse_vector_field_csv(std::istream& in) {
  std::vector<VectorFieldRecord> out;
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw std::runtime_error("vector-field csv: empty file");
  ++lineno;
  auto strip_cr = [](std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
  };
  if (strip_cr(line) != "lat,lon,u,v")
    throw std::runtime_error("vector-field csv: expected header 'lat,lon,u,v'");
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = strip_cr(line);
    if (s.empty()) continue;
    std::stringstream ss(s);
    std::string tok;
    double vals[4];
    for (int i = 0; i < 4; ++i) {
      if (!std::getline(ss, tok, ','))
        throw std::runtime_error("vector-field csv line " + std::to_string(lineno) +
                                 ": expected 4 comma-separated fields");
      std::size_t pos = 0;
      try {
        vals[i] = std::stod(tok, &pos);
      } catch (...) {
        pos = std::string::npos;
      }
      if (pos != tok.size())
        throw std::runtime_error("vector-field csv line " + std::to_string(lineno) +
                                 ": malformed number '" + tok + "'");
    }
    if (std::getline(ss, tok, ','))
      throw std::runtime_error("vector-field csv line " + std::to_string(lineno) +
                               ": too many fields");
    VectorFieldRecord r{vals[0], vals[1], vals[2], vals[3]};
    if (std::abs(r.lat) > 90.0 || r.lon < -180.0 || r.lon >= 180.0 || !std::isfinite(r.u) ||
        !std::isfinite(r.v))
      throw std::runtime_error("vector-field csv line " + std::to_string(lineno) +
                               ": record out of range");
    out.push_back(r);
  }
  return out;
}

inline std::vector<VectorFieldRecord> read_vector_field_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vector-field csv: cannot open '" + path + "'");
  return parse_vector_field_csv(in);
}

// local east/north orthonormal frame away from the poles
inline void east_north_frame(const SpherePoint& x, Eigen::Vector3d& east,
                             Eigen::Vector3d& north) {
  double st = std::hypot(x.coords(0), x.coords(1));
  if (st < 1e-12) throw std::domain_error("east_north_frame: undefined at the poles");
  double cp = x.coords(0) / st, sp = x.coords(1) / st, ct = x.coords(2);
  east << -sp, cp, 0.0;
  north << -ct * cp, -ct * sp, st;
}

inline SpherePoint latlon_to_point(double lat_deg, double lon_deg) {
  double theta = (90.0 - lat_deg) * M_PI / 180.0;
  double lam = lon_deg * M_PI / 180.0;
  Vec c(3);
  c << std::sin(theta) * std::cos(lam), std::sin(theta) * std::sin(lam), std::cos(theta);
  return SpherePoint::normalized(c);
}

struct VectorFieldData {
  Dataset data;
  int rejected_poles = 0;
};

inline VectorFieldData vector_field_dataset(const std::vector<VectorFieldRecord>& records) {
  VectorFieldData out;
  std::vector<Eigen::Vector3d> targets;
  for (const auto& r : records) {
    if (std::abs(r.lat) >= 90.0 - 1e-9) {
      ++out.rejected_poles;
      continue;
    }
    SpherePoint p = latlon_to_point(r.lat, r.lon);
    Eigen::Vector3d east, north;
    east_north_frame(p, east, north);
    out.data.inputs.push_back(p);
    targets.push_back(r.u * east + r.v * north);
  }
  out.data.targets.resize(targets.size(), 3);
  for (std::size_t i = 0; i < targets.size(); ++i) out.data.targets.row(i) = targets[i];
  return out;
}

// back-conversion of a tangent vector to (u, v) components
inline std::pair<double, double> tangent_to_uv(const SpherePoint& x, const Vec& t) {
  Eigen::Vector3d east, north;
  east_north_frame(x, east, north);
  return {t.dot(east), t.dot(north)};
}

// ---------------------------------------------------------------------------
// config parsing

inline GvfKind parse_gvf_kind(const std::string& s) {
  if (s == "projected") return GvfKind::Projected;
  if (s == "frame") return GvfKind::CoordinateFrame;
  if (s == "hodge") return GvfKind::Hodge;
  throw std::runtime_error("config: unknown gvf kind '" + s + "'");
}

inline Family parse_family(const std::string& s) {
  if (s == "il") return Family::InducingLocations;
  if (s == "iv") return Family::Interdomain;
  throw std::runtime_error("config: unknown variational family '" + s + "'");
}

inline ModelSpec parse_model_spec(const Config& cfg, const std::string& section = "model") {
  ModelSpec m;
  auto key = [&](const char* k) { return section + "." + k; };
  m.d = cfg.get_int(key("d"), 2);
  m.layers = cfg.get_int(key("layers"), 1);
  m.gvf = parse_gvf_kind(cfg.get_string(key("gvf"), "hodge"));
  m.family = parse_family(cfg.get_string(key("family"), "iv"));
  std::string head = cfg.get_string(key("head"), "scalar");
  if (head != "scalar" && head != "vector")
    throw std::runtime_error("config: unknown head kind '" + head + "'");
  m.head = head == "scalar" ? HeadKind::Scalar : HeadKind::Vector;
  m.head_family = parse_family(
      cfg.get_string(key("head_family"), m.family == Family::Interdomain ? "iv" : "il"));
  m.truncation = cfg.get_int(key("truncation"), 5);
  m.head_truncation = cfg.get_int(key("head_truncation"), m.head == HeadKind::Vector ? 5 : 6);
  m.features = cfg.get_int(key("features"), 0);
  m.head_features = cfg.get_int(key("head_features"), 0);
  m.inducing = cfg.get_int(key("inducing"), 49);
  m.head_inducing = cfg.get_int(key("head_inducing"), 49);
  m.nu = cfg.get_double(key("nu"), 1.5);
  m.train_nu = cfg.get_bool(key("train_nu"), true);
  m.diag_extension = cfg.get_bool(key("diag_extension"), false);
  m.kappa = cfg.get_double(key("kappa"), 1.0);
  m.head_sigma2 = cfg.get_double(key("head_sigma2"), 1.0);
  m.noise_var = cfg.get_double(key("noise_var"), 1e-2);
  return m;
}

inline TrainConfig parse_train_config(const Config& cfg, std::uint64_t seed) {
  TrainConfig t;
  t.iters = cfg.get_int("training.iters", 1000);
  t.lr = cfg.get_double("training.lr", 0.01);
  t.batch_size = cfg.get_int("training.batch", 0);
  t.samples = cfg.get_int("training.samples", 3);
  t.seed = seed;
  return t;
}

inline constexpr int kDefaultPredictSamples = 10;

// ---------------------------------------------------------------------------
// synthetic regression (benchmark function on Fibonacci lattices)

inline void run_synthetic_regression(Config cfg, const std::string& out_dir,
                                     std::uint64_t base_seed) {
  (void)cfg.get_u64("experiment.seed", base_seed);
  std::vector<int> n_grid = cfg.get_int_list("data.n_grid", {100});
  std::vector<int> layer_grid = cfg.get_int_list("model.layers_grid", {1});
  int seeds = cfg.get_int("experiment.seeds", 1);
  int n_test = cfg.get_int("data.n_test", 5000);
  double noise_var = cfg.get_double("data.noise_var", 1e-4);
  int predict_samples = cfg.get_int("experiment.predict_samples", kDefaultPredictSamples);
  ModelSpec base_spec = parse_model_spec(cfg);
  TrainConfig base_train = parse_train_config(cfg, 0);
  cfg.ensure_all_consumed();

  auto test_points = fibonacci_lattice(n_test);
  Eigen::MatrixXd test_targets(n_test, 1);
  for (int i = 0; i < n_test; ++i) test_targets(i, 0) = benchmark_f(test_points[i]);

  RunReport report;
  std::vector<std::string> rows;
  double last_final_elbo = 0.0;
  for (int n : n_grid) {
    auto train_points = fibonacci_lattice(n);
    for (int L : layer_grid) {
      for (int s = 0; s < seeds; ++s) {
        std::uint64_t seed = rng::mix(base_seed, 1000 * n + 10 * L + s);
        Dataset data;
        data.inputs = train_points;
        data.targets.resize(n, 1);
        rng::Rng noise(rng::mix(seed, 0x5eedda7aULL));
        for (int i = 0; i < n; ++i)
          data.targets(i, 0) = benchmark_f(train_points[i]) + std::sqrt(noise_var) * noise.normal();

        ModelSpec spec = base_spec;
        spec.layers = L;
        ResidualDeepGP model = build_model(spec, data.inputs, seed);
        TrainConfig tc = base_train;
        tc.seed = seed;
        TrainResult tr = train(model, data, tc);

        double nl = nlpd(model, test_points, test_targets, predict_samples, rng::mix(seed, 1));
        double ms = mse(model, test_points, test_targets, predict_samples, rng::mix(seed, 1));
        std::ostringstream row;
        row << n << "," << L << ","
            << (spec.family == Family::Interdomain ? "iv" : "il") << ","
            << (spec.gvf == GvfKind::Hodge ? "hodge"
                                           : spec.gvf == GvfKind::Projected ? "projected" : "frame")
            << "," << s << "," << std::setprecision(17) << nl << "," << ms << ","
            << tr.elbo_trace.back();
        rows.push_back(row.str());
        last_final_elbo = tr.elbo_trace.back();
        if (n == n_grid.back() && L == layer_grid.back() && s == seeds - 1)
          report.add_trace("elbo_trace", tr.elbo_trace);
      }
    }
  }
  report.add_table("nlpd_table", "n,layers,family,gvf,seed,nlpd,mse,final_elbo", rows);
  report.add_scalar("noise_var", noise_var);
  report.add_scalar("final_elbo", last_final_elbo);
  report.add_scalar("seed", static_cast<double>(base_seed));
  report.write(out_dir, cfg);
}

// ---------------------------------------------------------------------------
// vector-field regression from CSV

inline void run_vectorfield_regression(Config cfg, const std::string& out_dir,
                                       std::uint64_t seed) {
  (void)cfg.get_u64("experiment.seed", seed);
  std::string csv = cfg.require_string("data.csv");
  double test_fraction = cfg.get_double("data.test_fraction", 0.2);
  int predict_samples = cfg.get_int("experiment.predict_samples", kDefaultPredictSamples);
  if (!cfg.has("model.head")) cfg.set("model.head", "vector");
  ModelSpec spec = parse_model_spec(cfg);
  TrainConfig tc = parse_train_config(cfg, seed);
  cfg.ensure_all_consumed();
  if (spec.head != HeadKind::Vector)
    throw std::runtime_error("regress-vectorfield: model.head must be 'vector'");

  VectorFieldData vf = vector_field_dataset(read_vector_field_csv(csv));
  const int n = vf.data.size();
  if (n < 4) throw std::runtime_error("regress-vectorfield: not enough usable records");

  // seeded split
  rng::Rng gen(rng::mix(seed, 0x51717ULL));
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[gen.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
  int n_test = std::max(1, static_cast<int>(n * test_fraction));
  Dataset train_set, test_set;
  train_set.targets.resize(n - n_test, 3);
  test_set.targets.resize(n_test, 3);
  for (int i = 0; i < n; ++i) {
    if (i < n_test) {
      test_set.inputs.push_back(vf.data.inputs[perm[i]]);
      test_set.targets.row(test_set.inputs.size() - 1) = vf.data.targets.row(perm[i]);
    } else {
      train_set.inputs.push_back(vf.data.inputs[perm[i]]);
      train_set.targets.row(train_set.inputs.size() - 1) = vf.data.targets.row(perm[i]);
    }
  }

  ResidualDeepGP model = build_model(spec, train_set.inputs, seed);
  TrainResult tr = train(model, train_set, tc);

  double nl = nlpd(model, test_set.inputs, test_set.targets, predict_samples, rng::mix(seed, 1));
  double ms = mse(model, test_set.inputs, test_set.targets, predict_samples, rng::mix(seed, 1));
  VectorPrediction pred =
      predict_vector(model, test_set.inputs, predict_samples, rng::mix(seed, 1));

  RunReport report;
  report.add_scalar("nlpd", nl);
  report.add_scalar("mse", ms);
  report.add_scalar("rejected_pole_rows", vf.rejected_poles);
  report.add_scalar("n_train", train_set.size());
  report.add_scalar("n_test", test_set.size());
  report.add_scalar("seed", static_cast<double>(seed));
  report.add_trace("elbo_trace", tr.elbo_trace);
  std::vector<double> unc(pred.uncertainty.data(), pred.uncertainty.data() + n_test);
  report.add_trace("uncertainty", unc);
  report.write(out_dir, cfg);
}

// ---------------------------------------------------------------------------
// Bayesian optimisation

struct BoConfig {
  int iterations = 200;
  int switch_at = 180;  // iterations before this index use the shallow surrogate
  int initial = 5;
  int train_iters = 500;
  double lr = 0.01;
  int ei_samples = 32;
  int starts = 20;
  int descent_steps = 100;
  double step_size = 0.05;
  ModelSpec shallow, deep;
  double reference_min = 0.0;
};

struct BoResult {
  std::vector<double> observed;     // per evaluation (initial draws included)
  std::vector<double> best_so_far;  // per iteration, after the initial draws
  std::vector<double> regret;
  std::vector<double> log_regret;
};

// ensemble of pathwise posterior samples; single-layer interdomain models
// share one basis evaluation per point
class ScalarSampleEnsemble {
 public:
  ScalarSampleEnsemble(const ResidualDeepGP& model, int count, std::uint64_t seed) {
    const auto* iv = dynamic_cast<const IvScalarLayer*>(model.scalar_head.get());
    if (model.hidden.empty() && iv != nullptr) {
      spec_ = iv->current_spec(model.store);
      weights_.resize(count, iv->total_features());
      for (int s = 0; s < count; ++s)
        weights_.row(s) = iv->scaled_weight_sample(model.store, rng::mix(seed, s)).transpose();
      fast_ = true;
      return;
    }
    for (int s = 0; s < count; ++s)
      handles_.push_back(deep_function_sample_scalar(model, rng::mix(seed, s)));
  }

  std::vector<double> evaluate(const SpherePoint& x) const {
    if (fast_) {
      Eigen::VectorXd phi =
          spec_.d == 2 ? scalar_harmonics_s2(x, spec_.K) : scalar_harmonics_sd(x, spec_.K);
      Eigen::VectorXd vals = weights_ * phi;
      return std::vector<double>(vals.data(), vals.data() + vals.size());
    }
    std::vector<double> vals;
    vals.reserve(handles_.size());
    for (const auto& h : handles_) vals.push_back(h(x));
    return vals;
  }

 private:
  bool fast_ = false;
  MaternSpec spec_;
  Eigen::MatrixXd weights_;
  std::vector<ScalarSample> handles_;
};

inline SpherePoint uniform_sphere_point(rng::Rng& gen, int D) {
  for (;;) {
    Vec v = gen.normal_vector(D);
    if (v.norm() > 1e-8) return SpherePoint::normalized(v);
  }
}

inline BoResult bayesopt_run(const std::function<double(const SpherePoint&)>& target,
                             const BoConfig& cfg, std::uint64_t seed) {
  const int D = cfg.shallow.d + 1;
  rng::Rng gen(rng::mix(seed, 0xb0b0ULL));
  Dataset data;
  std::vector<double> observed;
  for (int i = 0; i < cfg.initial; ++i) {
    SpherePoint x = uniform_sphere_point(gen, D);
    data.inputs.push_back(x);
    observed.push_back(target(x));
  }

  BoResult result;
  result.observed = observed;
  auto lattice = cfg.shallow.d == 2 ? fibonacci_lattice(cfg.starts) : std::vector<SpherePoint>{};

  for (int it = 0; it < cfg.iterations; ++it) {
    const ModelSpec& spec = it < cfg.switch_at ? cfg.shallow : cfg.deep;
    data.targets.resize(data.size(), 1);
    for (int i = 0; i < data.size(); ++i) data.targets(i, 0) = observed[i];

    // refit from scratch
    ResidualDeepGP model = build_model(spec, data.inputs, rng::mix(seed, 7000 + it));
    TrainConfig tc;
    tc.iters = cfg.train_iters;
    tc.lr = cfg.lr;
    tc.samples = 3;
    tc.seed = rng::mix(seed, 8000 + it);
    train(model, data, tc);

    double f_best = *std::min_element(observed.begin(), observed.end());
    ScalarSampleEnsemble ensemble(model, cfg.ei_samples, rng::mix(seed, 9000 + it));
    auto acquisition = [&](const SpherePoint& x) {
      double ei = expected_improvement(ensemble.evaluate(x), f_best);
      if (!std::isfinite(ei))
        throw std::runtime_error("bayesopt: non-finite acquisition at iteration " +
                                 std::to_string(it));
      return ei;
    };

    // multi-start first-order ascent with halving on non-increase
    SpherePoint best_x = data.inputs.front();
    double best_ei = -1.0;
    for (int s = 0; s < cfg.starts; ++s) {
      SpherePoint x = cfg.shallow.d == 2 ? lattice[s] : uniform_sphere_point(gen, D);
      double cur = acquisition(x);
      double step = cfg.step_size;
      const double fd = 1e-4;
      for (int k = 0; k < cfg.descent_steps && step > 1e-5; ++k) {
        Vec grad(D);
        for (int c = 0; c < D; ++c) {
          Vec up = x.coords, dn = x.coords;
          up(c) += fd;
          dn(c) -= fd;
          grad(c) = (acquisition(SpherePoint::normalized(up)) -
                     acquisition(SpherePoint::normalized(dn))) /
                    (2.0 * fd);
        }
        // ascend the acquisition
        SpherePoint cand = riemannian_gradient_step(x, Vec(-grad), step);
        double v = acquisition(cand);
        if (v > cur) {
          x = cand;
          cur = v;
        } else {
          step *= 0.5;
        }
      }
      if (cur > best_ei) {
        best_ei = cur;
        best_x = x;
      }
    }
    // the Monte-Carlo acquisition can be exactly zero everywhere when no
    // pathwise sample beats the incumbent; fall back to exploration
    if (best_ei <= 0.0) best_x = uniform_sphere_point(gen, D);

    data.inputs.push_back(best_x);
    observed.push_back(target(best_x));
    result.observed.push_back(observed.back());
    double best = *std::min_element(observed.begin(), observed.end());
    result.best_so_far.push_back(best);
    result.regret.push_back(best - cfg.reference_min);
    result.log_regret.push_back(std::log10(std::max(best - cfg.reference_min, 1e-16)));
  }
  return result;
}

// brute-force lattice reference for the global minimum on S_2
inline double lattice_minimum(const std::function<double(const SpherePoint&)>& f, int n) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : fibonacci_lattice(n)) best = std::min(best, f(p));
  return best;
}

// the smooth comparison target: Ackley evaluated on the scaled embedding
inline double ackley_on_sphere(const SpherePoint& x) {
  const Eigen::VectorXd z = M_PI * x.coords;
  const double n = static_cast<double>(z.size());
  double sq = z.squaredNorm() / n;
  double cs = 0.0;
  for (int i = 0; i < z.size(); ++i) cs += std::cos(2.0 * M_PI * z(i));
  cs /= n;
  return -20.0 * std::exp(-0.2 * std::sqrt(sq)) - std::exp(cs) + 20.0 + std::exp(1.0);
}

inline void run_bayesopt(Config cfg, const std::string& out_dir, std::uint64_t base_seed) {
  (void)cfg.get_u64("experiment.seed", base_seed);
  BoConfig bo;
  bo.iterations = cfg.get_int("bo.iterations", 200);
  bo.switch_at = cfg.get_int("bo.switch_at", 180);
  bo.initial = cfg.get_int("bo.initial", 5);
  bo.train_iters = cfg.get_int("bo.train_iters", 500);
  bo.lr = cfg.get_double("bo.lr", 0.01);
  bo.ei_samples = cfg.get_int("bo.ei_samples", 32);
  bo.starts = cfg.get_int("bo.starts", 20);
  bo.descent_steps = cfg.get_int("bo.descent_steps", 100);
  bo.step_size = cfg.get_double("bo.step_size", 0.05);
  int seeds = cfg.get_int("experiment.seeds", 1);
  std::string target_name = cfg.get_string("bo.target", "irregular");

  std::function<double(const SpherePoint&)> target;
  int d = 2;
  if (target_name == "irregular") {
    target = bo_target;
  } else if (target_name == "ackley") {
    target = ackley_on_sphere;
    d = cfg.get_int("bo.d", 3);
  } else if (target_name == "dot") {
    // easy smoke target <x, x0> minimised at -x0
    Vec x0 = Vec::Zero(3);
    x0(2) = 1.0;
    target = [x0](const SpherePoint& x) { return x.coords.dot(x0); };
  } else {
    throw std::runtime_error("bayesopt: unknown target '" + target_name + "'");
  }

  // shallow surrogate: a 1-layer scalar model; smoothness fixed for this protocol
  if (!cfg.has("model.nu")) cfg.set("model.nu", "2.5");
  if (!cfg.has("model.train_nu")) cfg.set("model.train_nu", "false");
  bo.shallow = parse_model_spec(cfg);
  bo.shallow.layers = 1;
  bo.shallow.d = d;
  bo.shallow.head = HeadKind::Scalar;
  // deep surrogate defaults: projected GVF with inducing locations
  bo.deep = bo.shallow;
  bo.deep.layers = cfg.get_int("bo.deep_layers", 2);
  bo.deep.gvf = parse_gvf_kind(cfg.get_string("bo.deep_gvf", "projected"));
  bo.deep.family = parse_family(cfg.get_string("bo.deep_family", "il"));
  bo.deep.inducing = cfg.get_int("bo.deep_inducing", 30);
  bo.deep.truncation = cfg.get_int("bo.deep_truncation", 4);

  if (cfg.has("bo.reference_min")) {
    bo.reference_min = cfg.get_double("bo.reference_min", 0.0);
  } else if (target_name == "irregular") {
    bo.reference_min = lattice_minimum(target, 1000000);
  } else if (target_name == "dot") {
    bo.reference_min = -1.0;
  } else {
    // no closed form: coarse random search as a documented approximation
    rng::Rng gen(12345);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 200000; ++i)
      best = std::min(best, target(uniform_sphere_point(gen, d + 1)));
    bo.reference_min = best;
  }
  cfg.ensure_all_consumed();

  RunReport report;
  std::vector<std::string> rows;
  std::vector<double> final_log_regret;
  for (int s = 0; s < seeds; ++s) {
    std::uint64_t seed = rng::mix(base_seed, 31 + s);
    BoResult res = bayesopt_run(target, bo, seed);
    for (int it = 0; it < bo.iterations; ++it) {
      std::ostringstream row;
      row << s << "," << it << "," << std::setprecision(17) << res.best_so_far[it] << ","
          << res.regret[it] << "," << res.log_regret[it];
      rows.push_back(row.str());
    }
    final_log_regret.push_back(res.log_regret.empty() ? 0.0 : res.log_regret.back());
    if (s == 0) {
      report.add_trace("regret_trace", res.regret);
      report.add_trace("best_so_far", res.best_so_far);
    }
  }
  report.add_table("regret_matrix", "seed,iteration,best,regret,log_regret", rows);
  report.add_scalar("reference_min", bo.reference_min);
  report.add_scalar("seed", static_cast<double>(base_seed));
  report.add_trace("final_log_regret", final_log_regret);
  report.write(out_dir, cfg);
}

// ---------------------------------------------------------------------------
// Euclidean-embedding regression (numeric CSV, last column is the target)

inline void run_embed_regression(Config cfg, const std::string& out_dir, std::uint64_t seed) {
  (void)cfg.get_u64("experiment.seed", seed);
  std::string csv = cfg.require_string("data.csv");
  double test_fraction = cfg.get_double("data.test_fraction", 0.2);
  double bias = cfg.get_double("data.bias", 1.0);
  bool standardize = cfg.get_bool("data.standardize", true);
  int predict_samples = cfg.get_int("experiment.predict_samples", kDefaultPredictSamples);

  std::ifstream in(csv);
  if (!in) throw std::runtime_error("embed-regress: cannot open '" + csv + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string tok;
    bool numeric = true;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t pos = 0;
        row.push_back(std::stod(tok, &pos));
        if (pos != tok.size()) numeric = false;
      } catch (...) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (lineno == 1) continue;  // header row
      throw std::runtime_error("embed-regress csv line " + std::to_string(lineno) +
                               ": malformed number");
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() < 5) throw std::runtime_error("embed-regress: not enough rows");
  const int nf = static_cast<int>(rows.front().size()) - 1;
  if (nf < 1) throw std::runtime_error("embed-regress: need at least one feature column");

  if (!cfg.has("model.d")) cfg.set("model.d", std::to_string(nf));
  if (!cfg.has("model.gvf")) cfg.set("model.gvf", "projected");
  if (!cfg.has("model.truncation")) cfg.set("model.truncation", "3");
  if (!cfg.has("model.head_truncation")) cfg.set("model.head_truncation", "3");
  ModelSpec spec = parse_model_spec(cfg);
  TrainConfig tc = parse_train_config(cfg, seed);
  cfg.ensure_all_consumed();
  if (spec.d != nf)
    throw std::runtime_error("embed-regress: model.d must equal the feature count");

  const int n = static_cast<int>(rows.size());
  Eigen::MatrixXd feats(n, nf);
  Eigen::VectorXd targets(n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[i].size()) != nf + 1)
      throw std::runtime_error("embed-regress: ragged csv rows");
    for (int j = 0; j < nf; ++j) feats(i, j) = rows[i][j];
    targets(i) = rows[i][nf];
  }

  rng::Rng gen(rng::mix(seed, 0x51717ULL));
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[gen.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
  int n_test = std::max(1, static_cast<int>(n * test_fraction));

  Eigen::VectorXd fmean = Eigen::VectorXd::Zero(nf), fstd = Eigen::VectorXd::Ones(nf);
  double ymean = 0.0, ystd = 1.0;
  if (standardize) {
    int ntr = n - n_test;
    Eigen::MatrixXd tf(ntr, nf);
    Eigen::VectorXd ty(ntr);
    for (int i = 0; i < ntr; ++i) {
      tf.row(i) = feats.row(perm[n_test + i]);
      ty(i) = targets(perm[n_test + i]);
    }
    fmean = tf.colwise().mean();
    for (int j = 0; j < nf; ++j) {
      double v = (tf.col(j).array() - fmean(j)).square().mean();
      fstd(j) = std::sqrt(std::max(v, 1e-12));
    }
    ymean = ty.mean();
    ystd = std::sqrt(std::max((ty.array() - ymean).square().mean(), 1e-12));
  }

  Dataset train_set, test_set;
  std::vector<double> test_raw;
  train_set.targets.resize(n - n_test, 1);
  test_set.targets.resize(n_test, 1);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd f = ((feats.row(perm[i]).transpose() - fmean).array() / fstd.array());
    double y = (targets(perm[i]) - ymean) / ystd;
    SpherePoint p = embed_euclidean(f, bias);
    if (i < n_test) {
      test_set.inputs.push_back(p);
      test_set.targets(test_set.inputs.size() - 1, 0) = y;
      test_raw.push_back(targets(perm[i]));
    } else {
      train_set.inputs.push_back(p);
      train_set.targets(train_set.inputs.size() - 1, 0) = y;
    }
  }

  ResidualDeepGP model = build_model(spec, train_set.inputs, seed);
  TrainResult tr = train(model, train_set, tc);

  // metrics on the original target scale
  ScalarPrediction pred =
      predict_scalar(model, test_set.inputs, predict_samples, rng::mix(seed, 1));
  double nl = 0.0, ms = 0.0;
  for (std::size_t i = 0; i < test_raw.size(); ++i) {
    Eigen::VectorXd logp(pred.samples);
    double mx = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < pred.samples; ++s) {
      double mean = pred.means(s, i) * ystd + ymean;
      double var = (pred.vars(s, i) + pred.noise_var) * ystd * ystd;
      double r = test_raw[i] - mean;
      logp(s) = -0.5 * (std::log(2.0 * M_PI * var) + r * r / var);
      mx = std::max(mx, logp(s));
    }
    nl -= mx + std::log((logp.array() - mx).exp().sum() / pred.samples);
    double mixture = pred.mixture_mean(i) * ystd + ymean;
    ms += (test_raw[i] - mixture) * (test_raw[i] - mixture);
  }
  nl /= test_raw.size();
  ms /= test_raw.size();

  RunReport report;
  report.add_scalar("nlpd", nl);
  report.add_scalar("mse", ms);
  report.add_scalar("n_train", train_set.size());
  report.add_scalar("n_test", test_set.size());
  report.add_scalar("bias", bias);
  report.add_scalar("seed", static_cast<double>(seed));
  report.add_trace("elbo_trace", tr.elbo_trace);
  report.write(out_dir, cfg);
}

// ---------------------------------------------------------------------------
// gradient verification harness

inline void run_gradcheck(Config cfg, const std::string& out_dir, std::uint64_t seed) {
  (void)cfg.get_u64("experiment.seed", seed);
  int n = cfg.get_int("data.n_train", 16);
  double step = cfg.get_double("experiment.fd_step", 1e-5);
  double tol = cfg.get_double("experiment.fd_tolerance", 1e-4);
  if (!cfg.has("model.layers")) cfg.set("model.layers", "2");
  if (!cfg.has("model.family")) cfg.set("model.family", "il");
  if (!cfg.has("model.head_family")) cfg.set("model.head_family", "il");
  if (!cfg.has("model.inducing")) cfg.set("model.inducing", "8");
  if (!cfg.has("model.head_inducing")) cfg.set("model.head_inducing", "8");
  if (!cfg.has("model.truncation")) cfg.set("model.truncation", "3");
  if (!cfg.has("model.head_truncation")) cfg.set("model.head_truncation", "3");
  ModelSpec spec = parse_model_spec(cfg);
  cfg.ensure_all_consumed();

  rng::Rng gen(rng::mix(seed, 0xdadaULL));
  Dataset data;
  data.targets.resize(n, spec.head == HeadKind::Vector ? 3 : 1);
  for (int i = 0; i < n; ++i) {
    SpherePoint p = uniform_sphere_point(gen, spec.d + 1);
    data.inputs.push_back(p);
    if (spec.head == HeadKind::Vector)
      data.targets.row(i) = tangent_project(p, Vec(gen.normal_vector(3))).vec.transpose();
    else
      data.targets(i, 0) = gen.normal();
  }
  ResidualDeepGP model = build_model(spec, data.inputs, seed);
  // nudge away from the stationary identity initialisation
  Eigen::VectorXd raw = model.store.raw();
  for (int i = 0; i < raw.size(); ++i) raw(i) += 0.1 * gen.normal();
  model.store.set_raw(raw);

  FdReport rep = finite_difference_check(model, data, step, rng::mix(seed, 3));
  std::printf("gradcheck: %d coordinates, worst relative error %.3e at '%s'\n",
              static_cast<int>(rep.analytic.size()), rep.worst, rep.worst_name.c_str());
  std::printf("gradcheck: %s (tolerance %.1e)\n", rep.worst < tol ? "PASS" : "FAIL", tol);
  if (!out_dir.empty()) {
    RunReport report;
    report.add_scalar("worst_rel_error", rep.worst);
    report.add_scalar("tolerance", tol);
    report.add_scalar("passed", rep.worst < tol ? 1.0 : 0.0);
    report.add_text("worst_parameter", rep.worst_name);
    report.write(out_dir, cfg);
  }
  if (rep.worst >= tol) throw std::runtime_error("gradcheck failed");
}

}  // namespace rdgp
