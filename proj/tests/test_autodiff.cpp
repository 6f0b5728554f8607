#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "rdgp/autodiff.hpp"
#include "rdgp/rng.hpp"

using namespace rdgp::ag;
using Md = Eigen::MatrixXd;

namespace {

// Central-difference check of a scalar-valued graph function of several
// matrix leaves.
void check_gradient(const std::function<Mat(std::vector<Mat>&)>& f,
                    const std::vector<Md>& inits, double tol = 2e-6, double h = 1e-6) {
  Tape tape;
  std::vector<Mat> leaves;
  for (const auto& m : inits) leaves.push_back(tape.leaf(m));
  Mat out = f(leaves);
  REQUIRE(out.rows() == 1);
  REQUIRE(out.cols() == 1);
  tape.backward(out);

  for (std::size_t li = 0; li < inits.size(); ++li) {
    Md analytic = tape.adjoint(leaves[li]);
    for (Eigen::Index i = 0; i < inits[li].rows(); ++i) {
      for (Eigen::Index j = 0; j < inits[li].cols(); ++j) {
        auto eval = [&](double delta) {
          std::vector<Mat> ls;
          for (std::size_t k = 0; k < inits.size(); ++k) {
            Md m = inits[k];
            if (k == li) m(i, j) += delta;
            ls.push_back(Mat::constant(m));
          }
          return f(ls).scalar_value();
        };
        double num = (eval(h) - eval(-h)) / (2.0 * h);
        double denom = std::max({std::abs(num), std::abs(analytic(i, j)), 1.0});
        INFO("leaf " << li << " entry (" << i << "," << j << ")");
        REQUIRE(std::abs(num - analytic(i, j)) / denom < tol);
      }
    }
  }
}

Md randm(int r, int c, std::uint64_t seed) {
  rdgp::rng::Rng gen(seed);
  return gen.normal_matrix(r, c);
}

}  // namespace

TEST_CASE("elementwise arithmetic gradients") {
  Md a = randm(3, 2, 1), b = randm(3, 2, 2);
  check_gradient([](std::vector<Mat>& l) { return sum(l[0] + l[1]); }, {a, b});
  check_gradient([](std::vector<Mat>& l) { return sum(l[0] - l[1]); }, {a, b});
  check_gradient([](std::vector<Mat>& l) { return sum(mul(l[0], l[1])); }, {a, b});
  Md bpos = b.array().abs() + 1.0;
  check_gradient([](std::vector<Mat>& l) { return sum(div(l[0], l[1])); }, {a, bpos});
  check_gradient([](std::vector<Mat>& l) { return sum(neg(l[0]) * 3.0 + 1.5); }, {a});
}

TEST_CASE("scalar broadcast gradients") {
  Md a = randm(3, 4, 3);
  Md s = randm(1, 1, 4);
  check_gradient([](std::vector<Mat>& l) { return sum(l[1] + l[0]); }, {a, s});
  check_gradient([](std::vector<Mat>& l) { return sum(mul(l[1], l[0])); }, {a, s});
  Md spos = s.array().abs() + 0.5;
  check_gradient([](std::vector<Mat>& l) { return sum(div(l[0], l[1])); }, {a, spos});
  check_gradient([](std::vector<Mat>& l) { return sum(div(l[1], exp(l[0]))); }, {a, spos});
  check_gradient([](std::vector<Mat>& l) { return sum(fill(l[1], 4, 5) * 0.3); }, {a, s});
}

TEST_CASE("unary gradients") {
  Md a = randm(2, 3, 5);
  Md apos = a.array().abs() + 0.5;
  check_gradient([](std::vector<Mat>& l) { return sum(exp(l[0])); }, {a});
  check_gradient([](std::vector<Mat>& l) { return sum(log(l[0])); }, {apos});
  check_gradient([](std::vector<Mat>& l) { return sum(sqrt(l[0])); }, {apos});
  check_gradient([](std::vector<Mat>& l) { return sum(square(l[0])); }, {a});
  check_gradient([](std::vector<Mat>& l) { return sum(sin(l[0]) + cos(l[0])); }, {a});
  check_gradient([](std::vector<Mat>& l) { return sum(softplus(l[0])); }, {a});
  check_gradient([](std::vector<Mat>& l) { return sum(pow_const(l[0], 2.5)); }, {apos});
  check_gradient(
      [](std::vector<Mat>& l) { return rdgp::ag::pow(l[0], l[1]); },
      {Md::Constant(1, 1, 1.7), Md::Constant(1, 1, -2.3)});
}

TEST_CASE("max0 gradient away from the kink") {
  Md a(2, 2);
  a << 1.3, -0.7, 0.4, -2.0;
  check_gradient([](std::vector<Mat>& l) { return sum(max0(l[0])); }, {a});
}

TEST_CASE("cos_sqrt and sinc_sqrt are smooth through zero") {
  for (double s : {1e-12, 1e-9, 1e-7, 1e-4, 0.5, 4.0}) {
    Md m = Md::Constant(1, 1, s);
    check_gradient([](std::vector<Mat>& l) { return cos_sqrt(l[0]); }, {m}, 5e-5, 1e-8);
    check_gradient([](std::vector<Mat>& l) { return sinc_sqrt(l[0]); }, {m}, 5e-5, 1e-8);
  }
  // series and direct formulas agree near the branch switch
  double s0 = 0.99e-8;
  REQUIRE(rdgp::ag::detail::cos_sqrt_val(s0) ==
          Catch::Approx(std::cos(std::sqrt(s0))).epsilon(1e-14));
  REQUIRE(rdgp::ag::detail::sinc_sqrt_val(s0) ==
          Catch::Approx(std::sin(std::sqrt(s0)) / std::sqrt(s0)).epsilon(1e-14));
}

TEST_CASE("matmul, transpose and reductions") {
  Md a = randm(3, 4, 7), b = randm(4, 2, 8), w = randm(3, 2, 9);
  check_gradient(
      [&](std::vector<Mat>& l) { return sum(mul(matmul(l[0], l[1]), Mat::constant(w))); },
      {a, b});
  check_gradient([](std::vector<Mat>& l) { return sum(square(transpose(l[0]))); }, {a});
  check_gradient([](std::vector<Mat>& l) { return sum(square(rowsum(l[0]))); }, {a});
  check_gradient([](std::vector<Mat>& l) { return sum(square(colsum(l[0]))); }, {a});
  check_gradient([](std::vector<Mat>& l) { return dot(l[0], l[0]); }, {a});
}

TEST_CASE("broadcast helpers") {
  Md v = randm(3, 1, 10), r = randm(1, 4, 11), a = randm(3, 4, 12);
  check_gradient(
      [&](std::vector<Mat>& l) { return sum(mul(bcast_cols(l[0], 4), Mat::constant(a))); }, {v});
  check_gradient(
      [&](std::vector<Mat>& l) { return sum(mul(bcast_rows(l[0], 3), Mat::constant(a))); }, {r});
}

TEST_CASE("blocks, concat, diagonal, packing") {
  Md a = randm(4, 5, 13);
  check_gradient([](std::vector<Mat>& l) { return sum(square(block(l[0], 1, 2, 2, 3))); }, {a});
  Md p = randm(2, 2, 14), q = randm(2, 3, 15);
  check_gradient(
      [](std::vector<Mat>& l) { return sum(square(concat_cols({l[0], l[1]}))); }, {p, q});
  Md u = randm(2, 3, 16), w = randm(4, 3, 17);
  check_gradient(
      [](std::vector<Mat>& l) { return sum(square(concat_rows({l[0], l[1]}))); }, {u, w});
  Md sq = randm(4, 4, 18);
  check_gradient([](std::vector<Mat>& l) { return sum(square(diagvec(l[0]))); }, {sq});
  Md dv = randm(4, 1, 19);
  check_gradient([](std::vector<Mat>& l) { return sum(square(diagmat(l[0]) + 1.0)); }, {dv});
  Md packed = randm(6, 1, 20);
  check_gradient(
      [](std::vector<Mat>& l) { return sum(square(tril_from_packed(l[0], 3) + 0.4)); }, {packed});
  check_gradient([](std::vector<Mat>& l) { return sum(square(tril(l[0]))); }, {sq});
}

TEST_CASE("select gradient") {
  Md a = randm(2, 3, 21), b = randm(2, 3, 22);
  Md mask(2, 3);
  mask << 1, 0, 1, 0, 1, 0;
  check_gradient(
      [&](std::vector<Mat>& l) { return sum(square(select(mask, l[0], l[1]))); }, {a, b});
}

TEST_CASE("cholesky and triangular solve gradients") {
  Md g = randm(4, 4, 23);
  Md base = g * g.transpose() + 4.0 * Md::Identity(4, 4);
  Md b = randm(4, 2, 24);
  // A = M M^T + c I keeps the leaf unconstrained while A stays PD
  auto spd = [](const Mat& m) {
    return matmul(m, transpose(m)) + Mat::constant(4.0 * Md::Identity(4, 4));
  };
  check_gradient(
      [&](std::vector<Mat>& l) { return sum(square(cholesky(spd(l[0])))); }, {g}, 5e-6);
  check_gradient(
      [&](std::vector<Mat>& l) {
        return sum(square(tri_solve(cholesky(spd(l[0])), l[1])));
      },
      {g, b}, 5e-6);
  check_gradient(
      [&](std::vector<Mat>& l) {
        return sum(square(tri_solve_T(cholesky(spd(l[0])), l[1])));
      },
      {g, b}, 5e-6);
  check_gradient(
      [&](std::vector<Mat>& l) { return logdet_from_cholesky(cholesky(spd(l[0]))); }, {g}, 5e-6);
}

TEST_CASE("untracked evaluation records nothing") {
  Tape tape;
  Mat a = Mat::constant(randm(3, 3, 25));
  Mat b = Mat::constant(randm(3, 3, 26));
  std::size_t before = tape.size();
  Mat c = matmul(a, b) + exp(a);
  REQUIRE_FALSE(c.tracked());
  REQUIRE(tape.size() == before);
}

TEST_CASE("values match Eigen arithmetic") {
  Md a = randm(3, 3, 27), b = randm(3, 3, 28);
  Mat ma = Mat::constant(a), mb = Mat::constant(b);
  REQUIRE((matmul(ma, mb).value() - a * b).norm() == 0.0);
  REQUIRE((mul(ma, mb).value() - a.cwiseProduct(b).eval()).norm() == 0.0);
  REQUIRE(sum(ma).scalar_value() == Catch::Approx(a.sum()));
  Eigen::LLT<Md> llt(a * a.transpose() + 4.0 * Md::Identity(3, 3));
  Mat l = cholesky(Mat::constant(a * a.transpose() + 4.0 * Md::Identity(3, 3)));
  REQUIRE((l.value() - Md(llt.matrixL())).norm() < 1e-12);
}
