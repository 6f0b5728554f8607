#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rdgp/deep_model.hpp"
#include "rdgp/rng.hpp"
#include "rdgp/training.hpp"

using namespace rdgp;

namespace {

SpherePoint random_point(rng::Rng& gen) {
  return SpherePoint::normalized(Vec(gen.normal_vector(3)));
}

std::vector<SpherePoint> random_points(rng::Rng& gen, int n) {
  std::vector<SpherePoint> out;
  for (int i = 0; i < n; ++i) out.push_back(random_point(gen));
  return out;
}

void randomize_slots(ParameterStore& store, const std::string& prefix, double scale,
                     std::uint64_t seed) {
  rng::Rng gen(seed);
  Eigen::VectorXd raw = store.raw();
  for (int s = 0; s < store.num_slots(); ++s) {
    const auto& slot = store.slot(s);
    if (slot.name.rfind(prefix, 0) != 0) continue;
    for (int i = 0; i < slot.raw_size; ++i) raw(slot.offset + i) += scale * gen.normal();
  }
  store.set_raw(raw);
}

// copy raw parameters between stores by slot name
void copy_by_name(const ParameterStore& src, ParameterStore& dst) {
  Eigen::VectorXd raw = dst.raw();
  for (int s = 0; s < src.num_slots(); ++s) {
    const auto& slot = src.slot(s);
    int d = dst.find_slot(slot.name);
    if (d < 0) continue;
    const auto& dslot = dst.slot(d);
    REQUIRE(dslot.raw_size == slot.raw_size);
    raw.segment(dslot.offset, dslot.raw_size) = src.raw().segment(slot.offset, slot.raw_size);
  }
  dst.set_raw(raw);
}

void set_hidden_sigma2(ResidualDeepGP& model, double value) {
  for (int s = 0; s < model.store.num_slots(); ++s) {
    const auto& slot = model.store.slot(s);
    if (slot.name.rfind("layer", 0) == 0 && slot.name.find("sigma2") != std::string::npos)
      model.store.set_scalar(s, value);
  }
}

ModelSpec scalar_spec(int layers, Family family = Family::Interdomain,
                      GvfKind gvf = GvfKind::Hodge) {
  ModelSpec s;
  s.layers = layers;
  s.gvf = gvf;
  s.family = family;
  s.head = HeadKind::Scalar;
  s.head_family = family;
  s.truncation = 3;
  s.head_truncation = 4;
  s.inducing = 8;
  s.head_inducing = 8;
  s.noise_var = 0.01;
  return s;
}

Dataset toy_dataset(int n, std::uint64_t seed) {
  rng::Rng gen(seed);
  Dataset d;
  d.inputs = random_points(gen, n);
  d.targets.resize(n, 1);
  for (int i = 0; i < n; ++i)
    d.targets(i, 0) = std::sin(3.0 * d.inputs[i].coords(0)) + 0.3 * gen.normal();
  return d;
}

}  // namespace

TEST_CASE("forward sampling") {
  rng::Rng gen(81);
  Dataset data = toy_dataset(12, 5);

  SECTION("near-zero hidden variance leaves inputs unmoved") {
    ResidualDeepGP deep = build_model(scalar_spec(3), data.inputs, 1);
    set_hidden_sigma2(deep, 1e-300);
    randomize_slots(deep.store, "head", 0.3, 7);
    auto stars = random_points(gen, 10);
    ScalarPrediction p = predict_scalar(deep, stars, 3, 99);
    auto head_post = deep.scalar_head->posterior(deep.store, stars);
    for (int i = 0; i < 10; ++i)
      for (int s = 0; s < 3; ++s)
        REQUIRE(p.means(s, i) == Catch::Approx(head_post.mean(i)).margin(1e-10));
  }

  SECTION("one layer is a plain sparse GP and has no hidden randomness") {
    ResidualDeepGP m1 = build_model(scalar_spec(1), data.inputs, 1);
    randomize_slots(m1.store, "head", 0.3, 8);
    auto stars = random_points(gen, 15);
    ScalarPrediction p = predict_scalar(m1, stars, 5, 3);
    auto head_post = m1.scalar_head->posterior(m1.store, stars);
    for (int i = 0; i < 15; ++i)
      for (int s = 0; s < 5; ++s) {
        REQUIRE(p.means(s, i) == head_post.mean(i));
        REQUIRE(p.vars(s, i) == head_post.var(i));
      }
  }

  SECTION("full forward samples include head noise with the right variance") {
    ResidualDeepGP m1 = build_model(scalar_spec(1), data.inputs, 1);
    randomize_slots(m1.store, "head", 0.3, 11);
    Eigen::MatrixXd x(6, 3);
    for (int i = 0; i < 6; ++i) x.row(i) = random_point(gen).coords.transpose();
    std::vector<SpherePoint> pts;
    for (int i = 0; i < 6; ++i) pts.push_back(SpherePoint::normalized(Vec(x.row(i).transpose())));
    auto post = m1.scalar_head->posterior(m1.store, pts);
    const int N = 20000;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(6), acc2 = Eigen::VectorXd::Zero(6);
    for (int s = 0; s < N; ++s) {
      Eigen::MatrixXd v = forward_sample(m1, x, 1234, s);
      acc += v.col(0);
      acc2 += v.col(0).cwiseProduct(v.col(0));
    }
    for (int i = 0; i < 6; ++i) {
      double mean = acc(i) / N;
      double var = acc2(i) / N - mean * mean;
      REQUIRE(std::abs(mean - post.mean(i)) <= 3.0 * std::sqrt(post.var(i) / N) + 1e-12);
      REQUIRE(std::abs(var - post.var(i)) <= 3.0 * post.var(i) * std::sqrt(2.0 / N) + 1e-12);
    }
  }

  SECTION("intermediate points stay on the sphere") {
    ResidualDeepGP deep = build_model(scalar_spec(3), data.inputs, 2);
    randomize_slots(deep.store, "layer", 0.5, 9);
    Eigen::MatrixXd x(200, 3);
    rng::Rng g2(10);
    for (int i = 0; i < 200; ++i) x.row(i) = random_point(g2).coords.transpose();
    EvalCtx ctx(nullptr, deep.store);
    std::vector<std::int64_t> ids(200);
    for (int i = 0; i < 200; ++i) ids[i] = i;
    // 500 forward passes x 200 points = 1e5 sampled trajectories
    for (int s = 0; s < 500; ++s) {
      ag::Mat xs = propagate_hidden(ctx, deep, ag::Mat::constant(x), 1234, s, ids);
      for (int i = 0; i < 200; ++i)
        REQUIRE(std::abs(xs.value().row(i).norm() - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("elbo properties") {
  Dataset data = toy_dataset(10, 15);
  std::vector<std::int64_t> ids(10);
  for (int i = 0; i < 10; ++i) ids[i] = i;

  SECTION("identity variational states contribute zero KL") {
    ResidualDeepGP deep = build_model(scalar_spec(2), data.inputs, 1);
    EvalCtx ctx(nullptr, deep.store);
    REQUIRE(deep.kl_total(ctx).scalar_value() == 0.0);
  }

  SECTION("single-layer ELBO lower-bounds the exact log marginal likelihood") {
    for (int trial = 0; trial < 5; ++trial) {
      ResidualDeepGP m1 = build_model(scalar_spec(1), data.inputs, 1);
      randomize_slots(m1.store, "", 0.4, 20 + trial);
      double lower = elbo(m1, data, ids, 10, 1, 77);
      ExactGp gp;
      gp.kernel = dynamic_cast<const IvScalarLayer&>(*m1.scalar_head).current_spec(m1.store);
      gp.inputs = data.inputs;
      gp.targets = data.targets.col(0);
      gp.noise_diag = Eigen::VectorXd::Constant(10, m1.noise_var());
      REQUIRE(lower <= exact_log_marginal(gp) + 1e-8);
    }
  }

  SECTION("estimator deviation shrinks like the square root of the sample count") {
    ResidualDeepGP deep = build_model(scalar_spec(2), data.inputs, 1);
    randomize_slots(deep.store, "", 0.4, 33);
    auto stddev_for = [&](int samples) {
      std::vector<double> vals;
      for (int r = 0; r < 48; ++r) vals.push_back(elbo(deep, data, ids, 10, samples, 1000 + r));
      double mean = 0.0, var = 0.0;
      for (double v : vals) mean += v;
      mean /= vals.size();
      for (double v : vals) var += (v - mean) * (v - mean);
      return std::sqrt(var / (vals.size() - 1));
    };
    double s1 = stddev_for(1), s16 = stddev_for(16);
    REQUIRE(s1 / s16 > 2.2);
    REQUIRE(s1 / s16 < 7.0);
  }

  SECTION("value is invariant to batch ordering") {
    ResidualDeepGP deep = build_model(scalar_spec(2), data.inputs, 1);
    randomize_slots(deep.store, "", 0.4, 44);
    std::vector<std::int64_t> perm = {7, 2, 9, 0, 5, 1, 8, 3, 6, 4};
    double a = elbo(deep, data, ids, 10, 3, 55);
    double b = elbo(deep, data, perm, 10, 3, 55);
    REQUIRE(a == Catch::Approx(b).margin(1e-12));
  }
}

TEST_CASE("prediction and metrics") {
  rng::Rng gen(90);
  Dataset data = toy_dataset(15, 25);
  auto stars = random_points(gen, 20);

  SECTION("uncertainty is nonnegative") {
    ResidualDeepGP deep = build_model(scalar_spec(2), data.inputs, 1);
    randomize_slots(deep.store, "", 0.4, 26);
    ScalarPrediction p = predict_scalar(deep, stars, 10, 1);
    REQUIRE(p.uncertainty.minCoeff() >= 0.0);
  }

  SECTION("nlpd of a deterministic perfect predictor is the Gaussian entropy term") {
    ResidualDeepGP m1 = build_model(scalar_spec(1), data.inputs, 1);
    randomize_slots(m1.store, "head.mean", 0.5, 27);
    // collapse the variational covariance so predictions are deterministic
    Eigen::VectorXd raw = m1.store.raw();
    int fslot = m1.store.find_slot("head.factor");
    const auto& slot = m1.store.slot(fslot);
    int n = m1.store.slot(fslot).rows;
    int at = 0;
    for (int j = 0; j < n; ++j)
      for (int i = j; i < n; ++i) {
        raw(slot.offset + at) = i == j ? -745.0 : 0.0;
        ++at;
      }
    m1.store.set_raw(raw);
    auto post = m1.scalar_head->posterior(m1.store, stars);
    REQUIRE(post.var.maxCoeff() < 1e-300);
    Eigen::MatrixXd targets = post.mean;
    double got = nlpd(m1, stars, targets, 1, 5);
    REQUIRE(got == Catch::Approx(0.5 * std::log(2.0 * M_PI * m1.noise_var())).margin(1e-9));
    REQUIRE(mse(m1, stars, targets, 1, 5) < 1e-20);
  }

  SECTION("single-sample nlpd is the plain Gaussian score") {
    ResidualDeepGP deep = build_model(scalar_spec(2), data.inputs, 1);
    randomize_slots(deep.store, "", 0.3, 28);
    Eigen::MatrixXd targets(20, 1);
    for (int i = 0; i < 20; ++i) targets(i, 0) = gen.normal();
    ScalarPrediction p = predict_scalar(deep, stars, 1, 91);
    double direct = 0.0;
    for (int i = 0; i < 20; ++i) {
      double v = p.vars(0, i) + p.noise_var;
      double r = targets(i, 0) - p.means(0, i);
      direct += 0.5 * (std::log(2.0 * M_PI * v) + r * r / v);
    }
    REQUIRE(nlpd(deep, stars, targets, 1, 91) == Catch::Approx(direct / 20.0).margin(1e-12));
  }

  SECTION("mixture nlpd is bounded by the worst component") {
    ResidualDeepGP deep = build_model(scalar_spec(3), data.inputs, 1);
    randomize_slots(deep.store, "", 0.5, 29);
    Eigen::MatrixXd targets(20, 1);
    for (int i = 0; i < 20; ++i) targets(i, 0) = gen.normal();
    const int S = 6;
    ScalarPrediction p = predict_scalar(deep, stars, S, 92);
    double mixture = nlpd(deep, stars, targets, S, 92);
    double worst_total = 0.0;
    for (int i = 0; i < 20; ++i) {
      double worst = -std::numeric_limits<double>::infinity();
      for (int s = 0; s < S; ++s) {
        double v = p.vars(s, i) + p.noise_var;
        double r = targets(i, 0) - p.means(s, i);
        worst = std::max(worst, 0.5 * (std::log(2.0 * M_PI * v) + r * r / v));
      }
      worst_total += worst;
    }
    REQUIRE(mixture <= worst_total / 20.0 + 1e-12);
  }

  SECTION("mse arithmetic") {
    ResidualDeepGP m1 = build_model(scalar_spec(1), data.inputs, 1);
    // identity state: predictive mean is zero
    Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(20, 1);
    REQUIRE(mse(m1, stars, ones, 4, 3) == Catch::Approx(1.0));
    randomize_slots(m1.store, "head", 0.4, 30);
    std::vector<SpherePoint> three(stars.begin(), stars.begin() + 3);
    Eigen::MatrixXd t3(3, 1);
    t3 << 0.2, -1.1, 0.7;
    ScalarPrediction p = predict_scalar(m1, three, 4, 3);
    double hand = ((p.mixture_mean(0) - 0.2) * (p.mixture_mean(0) - 0.2) +
                   (p.mixture_mean(1) + 1.1) * (p.mixture_mean(1) + 1.1) +
                   (p.mixture_mean(2) - 0.7) * (p.mixture_mean(2) - 0.7)) /
                  3.0;
    REQUIRE(mse(m1, three, t3, 4, 3) == Catch::Approx(hand).margin(1e-14));
  }
}

TEST_CASE("pathwise deep function samples") {
  rng::Rng gen(100);
  Dataset data = toy_dataset(12, 35);

  SECTION("identity hidden layers reduce to the head's own sample") {
    ResidualDeepGP deep = build_model(scalar_spec(2), data.inputs, 1);
    set_hidden_sigma2(deep, 1e-300);
    randomize_slots(deep.store, "head", 0.4, 36);
    ScalarSample whole = deep_function_sample_scalar(deep, 555);
    ScalarSample head = deep.scalar_head->function_sample(deep.store, rng::mix(555, 0x68ULL));
    for (int i = 0; i < 10; ++i) {
      SpherePoint x = random_point(gen);
      REQUIRE(whole(x) == Catch::Approx(head(x)).margin(1e-12));
    }
  }

  SECTION("handle ensemble mean matches predictive mean") {
    ResidualDeepGP deep = build_model(scalar_spec(2), data.inputs, 1);
    randomize_slots(deep.store, "", 0.3, 37);
    SpherePoint x = random_point(gen);
    const int N = 10000;
    double acc = 0.0, acc2 = 0.0;
    for (int s = 0; s < N; ++s) {
      double v = deep_function_sample_scalar(deep, 40000 + s)(x);
      acc += v;
      acc2 += v * v;
    }
    double mean = acc / N;
    double sd = std::sqrt(std::max(0.0, acc2 / N - mean * mean));
    ScalarPrediction p = predict_scalar(deep, {x}, 2000, 7);
    REQUIRE(std::abs(mean - p.mixture_mean(0)) <= 3.0 * sd / std::sqrt(static_cast<double>(N)) +
                                                      3.0 * sd / std::sqrt(2000.0));
  }

  SECTION("evaluations along a geodesic are continuous") {
    ResidualDeepGP deep = build_model(scalar_spec(2), data.inputs, 1);
    randomize_slots(deep.store, "", 0.3, 38);
    ScalarSample f = deep_function_sample_scalar(deep, 808);
    SpherePoint x = random_point(gen);
    TangentVector dir = tangent_project(x, Vec(gen.normal_vector(3)));
    Vec u = dir.vec.normalized();
    auto max_step = [&](int segments) {
      double worst = 0.0, prev = f(x);
      for (int i = 1; i <= segments; ++i) {
        SpherePoint p = exp_map(x, TangentVector(x, Vec(u * (1.0 * i / segments))));
        double v = f(p);
        worst = std::max(worst, std::abs(v - prev));
        prev = v;
      }
      return worst;
    };
    double coarse = max_step(100), fine = max_step(200);
    REQUIRE(fine <= 0.75 * coarse + 1e-9);
  }
}

TEST_CASE("depth degeneracy: vanishing hidden variance reverts to the shallow model") {
  rng::Rng gen(110);
  Dataset data = toy_dataset(15, 45);
  auto stars = random_points(gen, 40);
  Eigen::MatrixXd targets(40, 1);
  for (int i = 0; i < 40; ++i) targets(i, 0) = gen.normal();

  ResidualDeepGP shallow = build_model(scalar_spec(1), data.inputs, 1);
  randomize_slots(shallow.store, "head", 0.4, 46);
  ResidualDeepGP deep = build_model(scalar_spec(3), data.inputs, 1);
  copy_by_name(shallow.store, deep.store);
  set_hidden_sigma2(deep, 1e-12);

  const int S = 10;
  double nl_shallow = nlpd(shallow, stars, targets, S, 9);
  double nl_deep = nlpd(deep, stars, targets, S, 9);
  double ms_shallow = mse(shallow, stars, targets, S, 9);
  double ms_deep = mse(deep, stars, targets, S, 9);
  REQUIRE(std::abs(nl_shallow - nl_deep) < 1e-6);
  REQUIRE(std::abs(ms_shallow - ms_deep) < 1e-6);
}
