#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "rdgp/inducing.hpp"
#include "rdgp/rng.hpp"
#include "rdgp/variational.hpp"

using namespace rdgp;

namespace {

SpherePoint random_point(rng::Rng& gen, int D = 3) {
  return SpherePoint::normalized(Vec(gen.normal_vector(D)));
}

MaternSpec spec32(double sigma2 = 1.0, int K = 4, double kappa = 1.0) {
  MaternSpec s;
  s.nu = 1.5;
  s.kappa = kappa;
  s.sigma2 = sigma2;
  s.K = K;
  s.d = 2;
  return s;
}

std::vector<SpherePoint> random_points(rng::Rng& gen, int n) {
  std::vector<SpherePoint> out;
  for (int i = 0; i < n; ++i) out.push_back(random_point(gen));
  return out;
}

void randomize(ParameterStore& store, double scale, std::uint64_t seed) {
  rng::Rng gen(seed);
  Eigen::VectorXd raw = store.raw();
  for (int i = 0; i < raw.size(); ++i) raw(i) += scale * gen.normal();
  store.set_raw(raw);
}

}  // namespace

TEST_CASE("exact GP posterior") {
  rng::Rng gen(61);

  SECTION("interpolates the targets as noise vanishes") {
    ExactGp gp;
    gp.kernel = spec32(1.0, 6);
    gp.inputs = random_points(gen, 8);
    gp.targets = gen.normal_vector(8);
    gp.noise_diag = Eigen::VectorXd::Constant(8, 1e-12);
    GpPosterior post = exact_posterior(gp, gp.inputs);
    REQUIRE((post.mean - gp.targets).cwiseAbs().maxCoeff() < 1e-6);
  }

  SECTION("no data reduces to the prior") {
    ExactGp gp;
    gp.kernel = spec32(1.4, 6);
    gp.targets = Eigen::VectorXd(0);
    gp.noise_diag = Eigen::VectorXd(0);
    auto stars = random_points(gen, 5);
    GpPosterior post = exact_posterior(gp, stars);
    REQUIRE(post.mean.cwiseAbs().maxCoeff() == 0.0);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j)
        REQUIRE(post.cov(i, j) ==
                Catch::Approx(scalar_matern_kernel(gp.kernel, stars[i], stars[j])).margin(1e-14));
  }

  SECTION("single observation matches the rank-one formula") {
    ExactGp gp;
    gp.kernel = spec32(0.9, 6);
    gp.inputs = {random_point(gen)};
    gp.targets = Eigen::VectorXd::Constant(1, 1.3);
    gp.noise_diag = Eigen::VectorXd::Constant(1, 0.2);
    SpherePoint s = random_point(gen);
    GpPosterior post = exact_posterior(gp, {s});
    double kxs = scalar_matern_kernel(gp.kernel, s, gp.inputs[0]);
    double kxx = gp.kernel.sigma2 + 0.2 + 1e-8;  // jittered Gram
    REQUIRE(post.mean(0) == Catch::Approx(kxs / kxx * 1.3).epsilon(1e-10));
    REQUIRE(post.cov(0, 0) ==
            Catch::Approx(scalar_matern_kernel(gp.kernel, s, s) - kxs * kxs / kxx).epsilon(1e-8));
  }
}

TEST_CASE("whitened KL") {
  SECTION("closed-form values") {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(4);
    ag::Mat mm = ag::Mat::constant(m);
    ag::Mat ll = ag::Mat::constant(Eigen::MatrixXd::Identity(4, 4));
    REQUIRE(kl_whitened(mm, ll).scalar_value() == 0.0);
    m(0) = 1.0;
    REQUIRE(kl_whitened(ag::Mat::constant(m), ll).scalar_value() == 0.5);
  }

  SECTION("nonnegative for random states") {
    rng::Rng gen(62);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::MatrixXd l = Eigen::MatrixXd::Zero(5, 5);
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j <= i; ++j) l(i, j) = i == j ? std::exp(gen.normal()) : gen.normal();
      Eigen::VectorXd m = gen.normal_vector(5);
      REQUIRE(kl_whitened(ag::Mat::constant(m), ag::Mat::constant(l)).scalar_value() >= 0.0);
    }
  }

  SECTION("invariant under joint permutation") {
    rng::Rng gen(63);
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j <= i; ++j) l(i, j) = i == j ? std::exp(0.3 * gen.normal()) : gen.normal();
    Eigen::VectorXd m = gen.normal_vector(5);
    Eigen::MatrixXd s = l * l.transpose();
    // permute jointly and refactor
    std::vector<int> perm = {3, 1, 4, 0, 2};
    Eigen::MatrixXd sp(5, 5);
    Eigen::VectorXd mp(5);
    for (int i = 0; i < 5; ++i) {
      mp(i) = m(perm[i]);
      for (int j = 0; j < 5; ++j) sp(i, j) = s(perm[i], perm[j]);
    }
    Eigen::MatrixXd lp = Eigen::LLT<Eigen::MatrixXd>(sp).matrixL();
    double a = kl_whitened(ag::Mat::constant(m), ag::Mat::constant(l)).scalar_value();
    double b = kl_whitened(ag::Mat::constant(mp), ag::Mat::constant(lp)).scalar_value();
    REQUIRE(a == Catch::Approx(b).margin(1e-10));
  }
}

TEST_CASE("interdomain scalar layer") {
  rng::Rng gen(64);
  auto stars = random_points(gen, 50);

  SECTION("whitened identity reproduces the prior and zero KL") {
    ParameterStore store;
    IvScalarLayer layer(store, "gp", spec32(1.3, 5), 0, false, true);
    EvalCtx ctx(nullptr, store);
    REQUIRE(layer.kl(ctx).scalar_value() == 0.0);
    auto post = layer.posterior(store, stars);
    MaternSpec s = layer.current_spec(store);
    for (int i = 0; i < 50; ++i) {
      REQUIRE(std::abs(post.mean(i)) < 1e-10);
      REQUIRE(std::abs(post.var(i) - scalar_matern_kernel(s, stars[i], stars[i])) < 1e-10);
    }
    Eigen::MatrixXd joint = layer.joint_covariance(store, stars);
    for (int i = 0; i < 50; ++i)
      for (int j = 0; j < 50; ++j)
        REQUIRE(std::abs(joint(i, j) - scalar_matern_kernel(s, stars[i], stars[j])) < 1e-10);
  }

  SECTION("one-hot mean picks out a single scaled feature") {
    ParameterStore store;
    IvScalarLayer layer(store, "gp", spec32(0.8, 4), 0, false, true);
    Eigen::VectorXd raw = store.raw();
    const auto& slot = store.slot(layer.mean_slot());
    int pick = 7;
    raw(slot.offset + pick) = 1.0;
    store.set_raw(raw);
    MaternSpec s = layer.current_spec(store);
    auto post = layer.posterior(store, stars);
    for (int i = 0; i < 10; ++i) {
      Eigen::VectorXd psi = scalar_feature_map(s, stars[i], pick, pick + 1);
      REQUIRE(post.mean(i) == Catch::Approx(psi(0)).margin(1e-12));
    }
  }

  SECTION("truncated features with identity tail reproduce the full prior variance") {
    ParameterStore store;
    IvScalarLayer layer(store, "gp", spec32(1.1, 5), 12, false, true);
    auto post = layer.posterior(store, stars);
    MaternSpec s = layer.current_spec(store);
    for (int i = 0; i < 20; ++i)
      REQUIRE(std::abs(post.var(i) - s.sigma2) < 1e-10);
  }

  SECTION("diagonal extension with unit values is bit-identical") {
    ParameterStore plain_store, ext_store;
    IvScalarLayer plain(plain_store, "gp", spec32(1.0, 5), 12, false, true);
    IvScalarLayer ext(ext_store, "gp", spec32(1.0, 5), 12, true, true);
    randomize(plain_store, 0.2, 99);
    // copy the shared prefix of raw parameters (extension slots come last)
    Eigen::VectorXd raw = ext_store.raw();
    raw.head(plain_store.size()) = plain_store.raw();
    ext_store.set_raw(raw);
    auto a = plain.posterior(plain_store, stars);
    auto b = ext.posterior(ext_store, stars);
    for (int i = 0; i < 50; ++i) {
      REQUIRE(a.mean(i) == b.mean(i));
      REQUIRE(a.var(i) == b.var(i));
    }
    EvalCtx ca(nullptr, plain_store), cb(nullptr, ext_store);
    REQUIRE(plain.kl(ca).scalar_value() == ext.kl(cb).scalar_value());
  }

  SECTION("posterior Gram stays positive semidefinite under random states") {
    ParameterStore store;
    IvScalarLayer layer(store, "gp", spec32(1.0, 5), 0, false, true);
    randomize(store, 0.5, 101);
    auto pts = random_points(gen, 30);
    Eigen::MatrixXd joint = layer.joint_covariance(store, pts);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (joint + joint.transpose()));
    REQUIRE(es.eigenvalues().minCoeff() >= -1e-8);
  }
}

TEST_CASE("interdomain scalar sampling and function samples") {
  rng::Rng gen(65);
  ParameterStore store;
  IvScalarLayer layer(store, "gp", spec32(0.9, 4), 0, false, true);
  randomize(store, 0.3, 66);

  auto stars = random_points(gen, 5);
  auto post = layer.posterior(store, stars);

  SECTION("zero covariance returns the mean exactly") {
    ScalMoments m;
    m.mean = ag::Mat::constant(Eigen::MatrixXd::Constant(3, 1, 1.7));
    m.var = ag::Mat::constant(Eigen::MatrixXd::Zero(3, 1));
    ag::Mat out = sample_scalar(m, ag::Mat::constant(Eigen::MatrixXd::Constant(3, 1, 2.0)));
    REQUIRE((out.value().array() == 1.7).all());
  }

  SECTION("empirical marginal variance matches the posterior") {
    Eigen::MatrixXd x(stars.size(), 3);
    for (std::size_t i = 0; i < stars.size(); ++i) x.row(i) = stars[i].coords.transpose();
    EvalCtx ctx(nullptr, store);
    PointsBatch batch(ag::Mat::constant(x));
    ScalMoments m = layer.moments(ctx, batch);
    const int N = 10000;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(5), acc2 = Eigen::VectorXd::Zero(5);
    rng::Rng noise(67);
    for (int s = 0; s < N; ++s) {
      ag::Mat eps = ag::Mat::constant(noise.normal_matrix(5, 1));
      Eigen::VectorXd draw = sample_scalar(m, eps).value().col(0);
      acc += draw;
      acc2 += draw.cwiseProduct(draw);
    }
    for (int i = 0; i < 5; ++i) {
      double var = acc2(i) / N - (acc(i) / N) * (acc(i) / N);
      double se = post.var(i) * std::sqrt(2.0 / N);
      REQUIRE(std::abs(var - post.var(i)) <= 3.0 * se);
    }
  }

  SECTION("function-sample ensemble matches the joint covariance") {
    const int N = 10000;
    Eigen::MatrixXd vals(N, 2);
    for (int s = 0; s < N; ++s) {
      ScalarSample f = layer.function_sample(store, 5000 + s);
      vals(s, 0) = f(stars[0]);
      vals(s, 1) = f(stars[1]);
    }
    Eigen::MatrixXd joint = layer.joint_covariance(store, {stars[0], stars[1]});
    Eigen::Vector2d mean = vals.colwise().mean();
    REQUIRE(std::abs(mean(0) - post.mean(0)) <= 3.0 * std::sqrt(joint(0, 0) / N));
    REQUIRE(std::abs(mean(1) - post.mean(1)) <= 3.0 * std::sqrt(joint(1, 1) / N));
    Eigen::MatrixXd centered = vals.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / N;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        double se = std::sqrt((joint(a, a) * joint(b, b) + joint(a, b) * joint(a, b)) / N);
        REQUIRE(std::abs(cov(a, b) - joint(a, b)) <= 3.0 * se + 1e-12);
      }
  }

  SECTION("collapsing the factor makes handles the posterior mean") {
    ParameterStore tight;
    IvScalarLayer tlayer(tight, "gp", spec32(0.9, 4), 0, false, true);
    Eigen::VectorXd raw = tight.raw();
    const auto& mslot = tight.slot(tlayer.mean_slot());
    rng::Rng g2(68);
    for (int i = 0; i < mslot.raw_size; ++i) raw(mslot.offset + i) = 0.4 * g2.normal();
    const auto& fslot = tight.slot(tlayer.factor_slot());
    for (int i = 0; i < fslot.raw_size; ++i) raw(fslot.offset + i) = 0.0;
    // softplus-diagonal raw value of -60 makes the factor numerically zero
    int at = 0;
    for (int j = 0; j < 25; ++j)
      for (int i2 = j; i2 < 25; ++i2) {
        if (i2 == j) raw(fslot.offset + at) = -60.0;
        ++at;
      }
    tight.set_raw(raw);
    auto tpost = tlayer.posterior(tight, stars);
    ScalarSample f = tlayer.function_sample(tight, 77);
    for (int i = 0; i < 5; ++i) REQUIRE(f(stars[i]) == Catch::Approx(tpost.mean(i)).margin(1e-10));
  }
}

TEST_CASE("inducing-location scalar layer") {
  rng::Rng gen(70);
  auto z = random_points(gen, 10);
  auto stars = random_points(gen, 50);

  SECTION("whitened identity reproduces the prior exactly") {
    ParameterStore store;
    IlScalarLayer layer(store, "gp", spec32(1.2, 5), z, true);
    EvalCtx ctx(nullptr, store);
    REQUIRE(layer.kl(ctx).scalar_value() == 0.0);
    auto post = layer.posterior(store, stars);
    MaternSpec s = layer.current_spec(store);
    for (int i = 0; i < 50; ++i) {
      REQUIRE(std::abs(post.mean(i)) < 1e-10);
      REQUIRE(std::abs(post.var(i) - scalar_matern_kernel(s, stars[i], stars[i])) < 1e-10);
    }
  }

  SECTION("Matheron function samples match the posterior moments") {
    ParameterStore store;
    IlScalarLayer layer(store, "gp", spec32(1.0, 4), z, true);
    randomize(store, 0.3, 71);
    auto post = layer.posterior(store, {stars[0], stars[1]});
    Eigen::MatrixXd joint = layer.joint_covariance(store, {stars[0], stars[1]});
    const int N = 10000;
    Eigen::MatrixXd vals(N, 2);
    for (int s = 0; s < N; ++s) {
      ScalarSample f = layer.function_sample(store, 9000 + s);
      vals(s, 0) = f(stars[0]);
      vals(s, 1) = f(stars[1]);
    }
    Eigen::Vector2d mean = vals.colwise().mean();
    Eigen::MatrixXd centered = vals.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / N;
    for (int a = 0; a < 2; ++a) {
      REQUIRE(std::abs(mean(a) - post.mean(a)) <= 3.0 * std::sqrt(joint(a, a) / N));
      for (int b = 0; b < 2; ++b) {
        double se = std::sqrt((joint(a, a) * joint(b, b) + joint(a, b) * joint(a, b)) / N);
        REQUIRE(std::abs(cov(a, b) - joint(a, b)) <= 3.0 * se + 1e-12);
      }
    }
  }
}

TEST_CASE("vector layers") {
  rng::Rng gen(72);
  auto z = random_points(gen, 8);
  auto stars = random_points(gen, 50);

  auto hodge_init = [&]() { return HodgeSpec{spec32(0.8, 4), spec32(1.1, 4)}; };

  SECTION("interdomain Hodge layer: whitened identity reproduces the prior") {
    ParameterStore store;
    IvHodgeLayer layer(store, "gvf", hodge_init(), 0, false, true);
    EvalCtx ctx(nullptr, store);
    REQUIRE(layer.kl(ctx).scalar_value() == 0.0);
    auto post = layer.posterior(store, stars);
    HodgeSpec s = layer.current_spec(store);
    for (int i = 0; i < 50; ++i) {
      REQUIRE(post.mean.row(i).norm() < 1e-10);
      Eigen::Matrix3d want = hodge_compositional_kernel(s, stars[i], stars[i]);
      REQUIRE((post.cov[i] - want).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  SECTION("inducing-location layers: whitened identity reproduces the prior") {
    for (GvfKind kind : {GvfKind::Hodge, GvfKind::Projected, GvfKind::CoordinateFrame}) {
      GvfPrior prior;
      prior.kind = kind;
      prior.d = 2;
      if (kind == GvfKind::Hodge)
        prior.hodge = hodge_init();
      else
        prior.components.assign(kind == GvfKind::Projected ? 3 : 2, spec32(0.7, 4));
      ParameterStore store;
      IlVectorLayer layer(store, "gvf", prior, z, true);
      EvalCtx ctx(nullptr, store);
      REQUIRE(layer.kl(ctx).scalar_value() == 0.0);
      std::vector<SpherePoint> pts;
      rng::Rng g2(73);
      while (static_cast<int>(pts.size()) < 25) {
        SpherePoint p = random_point(g2);
        if (kind == GvfKind::CoordinateFrame && std::abs(p.coords(2)) > 0.95) continue;
        pts.push_back(p);
      }
      auto post = layer.posterior(store, pts);
      GvfPrior cur = layer.current_prior(store);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        REQUIRE(post.mean.row(i).norm() < 1e-10);
        Eigen::MatrixXd want = gvf_cov(cur, pts[i], pts[i]);
        REQUIRE((post.cov[i] - want).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }

  SECTION("samples are tangent and match marginal variances") {
    ParameterStore store;
    IvHodgeLayer layer(store, "gvf", hodge_init(), 0, false, true);
    randomize(store, 0.25, 74);
    Eigen::MatrixXd x(10, 3);
    for (int i = 0; i < 10; ++i) x.row(i) = stars[i].coords.transpose();
    EvalCtx ctx(nullptr, store);
    PointsBatch batch(ag::Mat::constant(x));
    VecMoments m = layer.moments(ctx, batch);
    auto post = layer.posterior(store, std::vector<SpherePoint>(stars.begin(), stars.begin() + 10));

    const int N = 10000;
    rng::Rng noise(75);
    std::vector<Eigen::Matrix3d> acc(10, Eigen::Matrix3d::Zero());
    Eigen::MatrixXd accm = Eigen::MatrixXd::Zero(10, 3);
    for (int s = 0; s < N; ++s) {
      ag::Mat eps = ag::Mat::constant(noise.normal_matrix(10, 2));
      Eigen::MatrixXd g = sample_tangent(m, eps).value();
      for (int i = 0; i < 10; ++i) {
        REQUIRE(std::abs(g.row(i).dot(x.row(i))) < 1e-10 * (1.0 + g.row(i).norm()));
        acc[i] += g.row(i).transpose() * g.row(i);
        accm.row(i) += g.row(i);
      }
    }
    for (int i = 0; i < 10; ++i) {
      Eigen::Vector3d mean = accm.row(i) / N;
      Eigen::Matrix3d cov = acc[i] / N - mean * mean.transpose();
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          double se = std::sqrt((post.cov[i](a, a) * post.cov[i](b, b) +
                                 post.cov[i](a, b) * post.cov[i](a, b)) /
                                N);
          REQUIRE(std::abs(cov(a, b) - post.cov[i](a, b)) <= 3.0 * se + 1e-12);
        }
    }
  }

  SECTION("interdomain handles match the vector joint covariance") {
    ParameterStore store;
    IvHodgeLayer layer(store, "gvf", hodge_init(), 0, false, true);
    randomize(store, 0.25, 76);
    std::vector<SpherePoint> two = {stars[0], stars[1]};
    Eigen::MatrixXd joint = layer.joint_covariance(store, two);
    auto post = layer.posterior(store, two);
    const int N = 10000;
    Eigen::MatrixXd vals(N, 6);  // component-major
    for (int s = 0; s < N; ++s) {
      FieldSample f = layer.function_sample(store, 100000 + s);
      TangentVector v0 = f(two[0]), v1 = f(two[1]);
      for (int c = 0; c < 3; ++c) {
        vals(s, c * 2 + 0) = v0.vec(c);
        vals(s, c * 2 + 1) = v1.vec(c);
      }
    }
    Eigen::VectorXd mean = vals.colwise().mean();
    for (int c = 0; c < 3; ++c) {
      REQUIRE(std::abs(mean(2 * c) - post.mean(0, c)) <=
              3.0 * std::sqrt(std::abs(joint(2 * c, 2 * c)) / N) + 1e-9);
    }
    Eigen::MatrixXd centered = vals.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / N;
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b) {
        double se =
            std::sqrt((joint(a, a) * joint(b, b) + joint(a, b) * joint(a, b)) / N) + 1e-12;
        REQUIRE(std::abs(cov(a, b) - joint(a, b)) <= 3.0 * se);
      }
  }

  SECTION("inducing-location KL matches a direct tangent-basis evaluation") {
    GvfPrior prior;
    prior.kind = GvfKind::Hodge;
    prior.d = 2;
    prior.hodge = hodge_init();
    ParameterStore store;
    IlVectorLayer layer(store, "gvf", prior, z, true);
    randomize(store, 0.3, 77);
    EvalCtx ctx(nullptr, store);
    double got = layer.kl(ctx).scalar_value();
    // direct: KL(N(B' P mt, B' St B) || N(0, I)) over the tangent basis
    const int m = static_cast<int>(z.size());
    Eigen::MatrixXd basis(3 * m, 2 * m);
    basis.setZero();
    for (int j = 0; j < m; ++j) {
      Eigen::Vector3d b1, b2;
      tangent_basis_s2(Eigen::Vector3d(z[j].coords), b1, b2);
      for (int c = 0; c < 3; ++c) {
        basis(c * m + j, j) = b1(c);
        basis(c * m + j, m + j) = b2(c);
      }
    }
    Eigen::MatrixXd lf = ctx.param(layer.factor_slot()).value();
    Eigen::VectorXd mt = ctx.param(layer.mean_slot()).value().col(0);
    Eigen::MatrixXd s2 = basis.transpose() * lf * lf.transpose() * basis;
    Eigen::VectorXd m2 = basis.transpose() * mt;
    Eigen::LLT<Eigen::MatrixXd> llt(s2);
    double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    double want = 0.5 * (s2.trace() + m2.squaredNorm() - 2.0 * m - logdet);
    REQUIRE(got == Catch::Approx(want).margin(1e-7));
    REQUIRE(got >= 0.0);
  }
}
