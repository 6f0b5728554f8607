#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rdgp/rng.hpp"
#include "rdgp/sphere.hpp"

using namespace rdgp;

namespace {

SpherePoint pt(double x, double y, double z) {
  Vec v(3);
  v << x, y, z;
  return SpherePoint::normalized(v);
}

SpherePoint random_point(rng::Rng& gen, int D = 3) {
  Vec v = gen.normal_vector(D);
  return SpherePoint::normalized(v);
}

TangentVector random_tangent(rng::Rng& gen, const SpherePoint& x, double scale = 1.0) {
  Vec h = gen.normal_vector(x.ambient_dim());
  TangentVector t = tangent_project(x, h);
  if (t.norm() < 1e-12) return t;
  return TangentVector(x, Vec(t.vec * (scale / t.vec.norm() * gen.uniform())));
}

}  // namespace

TEST_CASE("exp_map handles the degenerate and quarter-circle cases") {
  SpherePoint north = pt(0, 0, 1);
  Vec zero = Vec::Zero(3);
  REQUIRE((exp_map(north, TangentVector(north, zero)).coords - north.coords).norm() == 0.0);

  Vec v(3);
  v << M_PI / 2.0, 0, 0;
  SpherePoint out = exp_map(north, TangentVector(north, v));
  REQUIRE((out.coords - pt(1, 0, 0).coords).norm() < 1e-12);

  v << M_PI, 0, 0;
  out = exp_map(north, TangentVector(north, v));
  REQUIRE((out.coords - pt(0, 0, -1).coords).norm() < 1e-12);
}

TEST_CASE("exp_map stays on the sphere for large velocities") {
  rng::Rng gen(11);
  for (int i = 0; i < 200; ++i) {
    SpherePoint x = random_point(gen);
    TangentVector t = tangent_project(x, Vec(gen.normal_vector(3)));
    if (t.norm() < 1e-12) continue;
    double r = gen.uniform() * 10.0 * M_PI;
    TangentVector v(x, Vec(t.vec * (r / t.norm())));
    REQUIRE(std::abs(exp_map(x, v).coords.norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("geodesic distance of an exponential step equals the step length") {
  rng::Rng gen(12);
  for (int i = 0; i < 200; ++i) {
    SpherePoint x = random_point(gen);
    TangentVector t = tangent_project(x, Vec(gen.normal_vector(3)));
    if (t.norm() < 1e-12) continue;
    double r = gen.uniform() * M_PI;
    TangentVector v(x, Vec(t.vec * (r / t.norm())));
    REQUIRE(geodesic_distance(x, exp_map(x, v)) == Catch::Approx(r).margin(1e-10));
  }
}

TEST_CASE("geodesic distance basics") {
  SpherePoint a = pt(0, 0, 1), b = pt(1, 0, 0);
  REQUIRE(geodesic_distance(a, a) == 0.0);
  REQUIRE(geodesic_distance(a, b) == Catch::Approx(M_PI / 2.0));
}

TEST_CASE("tangent projection is linear, idempotent, and annihilates the normal") {
  SpherePoint north = pt(0, 0, 1);
  Vec h(3);
  h << 0, 0, 1;
  REQUIRE(tangent_project(north, h).vec.norm() == 0.0);
  h << 1, 0, 0;
  REQUIRE((tangent_project(north, h).vec - h).norm() == 0.0);

  SpherePoint x = pt(1.0 / std::sqrt(2.0), 0, 1.0 / std::sqrt(2.0));
  h << 1, 0, 0;
  Vec expected(3);
  expected << 0.5, 0, -0.5;
  REQUIRE((tangent_project(x, h).vec - expected).norm() < 1e-12);

  rng::Rng gen(13);
  for (int i = 0; i < 100; ++i) {
    SpherePoint p = random_point(gen);
    Vec v = gen.normal_vector(3);
    Vec once = tangent_project_vec(p.coords, v);
    Vec twice = tangent_project_vec(p.coords, once);
    REQUIRE((once - twice).norm() < 1e-12);
  }
}

TEST_CASE("rotate90 is a quarter turn of the tangent plane") {
  SpherePoint north = pt(0, 0, 1);
  Vec e1(3), e2(3);
  e1 << 1, 0, 0;
  e2 << 0, 1, 0;
  REQUIRE((rotate90(TangentVector(north, e1)).vec - e2).norm() == 0.0);
  REQUIRE((rotate90(TangentVector(north, e2)).vec + e1).norm() == 0.0);

  rng::Rng gen(14);
  for (int i = 0; i < 100; ++i) {
    SpherePoint x = random_point(gen);
    TangentVector v = tangent_project(x, Vec(gen.normal_vector(3)));
    TangentVector r = rotate90(v);
    REQUIRE(r.norm() == Catch::Approx(v.norm()).margin(1e-12));
    REQUIRE(std::abs(r.vec.dot(x.coords)) < 1e-12);
    REQUIRE(std::abs(r.vec.dot(v.vec)) < 1e-12);
    REQUIRE((rotate90(r).vec + v.vec).norm() < 1e-12);
  }

  Vec v4 = Vec::Zero(4);
  SpherePoint s3 = SpherePoint::normalized(Vec(Vec::Unit(4, 0)));
  REQUIRE_THROWS_AS(rotate90(TangentVector(s3, v4)), std::invalid_argument);
}

TEST_CASE("fibonacci lattice matches the colatitude formula") {
  REQUIRE_THROWS_AS(fibonacci_lattice(0), std::invalid_argument);
  auto one = fibonacci_lattice(1);
  REQUIRE(std::acos(one[0].coords(2)) == Catch::Approx(M_PI / 2.0));
  auto two = fibonacci_lattice(2);
  REQUIRE(std::acos(two[0].coords(2)) == Catch::Approx(M_PI / 3.0));
  auto many = fibonacci_lattice(500);
  for (const auto& p : many) REQUIRE(std::abs(p.coords.norm() - 1.0) < 1e-12);
}

TEST_CASE("riemannian gradient step") {
  SpherePoint north = pt(0, 0, 1);
  Vec g(3);
  g << 0, 0, 5.0;  // parallel to x: no motion
  REQUIRE((riemannian_gradient_step(north, g, 0.7).coords - north.coords).norm() < 1e-12);

  g << -1, 0, 0;
  SpherePoint out = riemannian_gradient_step(north, g, M_PI / 2.0);
  REQUIRE((out.coords - pt(1, 0, 0).coords).norm() < 1e-12);

  rng::Rng gen(15);
  for (int i = 0; i < 50; ++i) {
    SpherePoint x = random_point(gen);
    Vec grad = gen.normal_vector(3);
    REQUIRE(std::abs(riemannian_gradient_step(x, grad, 0.1).coords.norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("spherical k-means") {
  rng::Rng gen(16);
  std::vector<SpherePoint> pts;
  for (int i = 0; i < 6; ++i) pts.push_back(random_point(gen));

  SECTION("k equal to the number of points returns the points") {
    auto cs = spherical_kmeans(pts, 6, 20, 1);
    for (const auto& p : pts) {
      double best = 10.0;
      for (const auto& c : cs) best = std::min(best, (p.coords - c.coords).norm());
      REQUIRE(best < 1e-10);
    }
  }

  SECTION("identical points collapse to that point") {
    std::vector<SpherePoint> same(5, pt(0, 1, 0));
    auto cs = spherical_kmeans(same, 1, 10, 2);
    REQUIRE((cs[0].coords - pt(0, 1, 0).coords).norm() < 1e-12);
  }

  SECTION("two antipodal jittered clusters are recovered") {
    std::vector<SpherePoint> data;
    rng::Rng jit(17);
    for (int i = 0; i < 10; ++i) {
      Vec v(3);
      v << jit.normal() * 0.03, jit.normal() * 0.03, 1.0;
      data.push_back(SpherePoint::normalized(v));
      Vec w(3);
      w << jit.normal() * 0.03, jit.normal() * 0.03, -1.0;
      data.push_back(SpherePoint::normalized(w));
    }
    auto cs = spherical_kmeans(data, 2, 30, 3);
    // brute-force best 2-partition on this small instance: the hemispheres
    double d0 = geodesic_distance(cs[0], pt(0, 0, 1));
    double d1 = geodesic_distance(cs[1], pt(0, 0, 1));
    double north_d = std::min(d0, d1);
    double south_d = std::min(geodesic_distance(cs[0], pt(0, 0, -1)),
                              geodesic_distance(cs[1], pt(0, 0, -1)));
    REQUIRE(north_d < 0.1);
    REQUIRE(south_d < 0.1);
  }

  SECTION("k greater than the number of points fails") {
    REQUIRE_THROWS_AS(spherical_kmeans(pts, 7, 5, 1), std::invalid_argument);
  }

  SECTION("deterministic given the seed") {
    auto a = spherical_kmeans(pts, 3, 25, 42);
    auto b = spherical_kmeans(pts, 3, 25, 42);
    for (std::size_t i = 0; i < a.size(); ++i)
      REQUIRE((a[i].coords - b[i].coords).norm() == 0.0);
  }
}
