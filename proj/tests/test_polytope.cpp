#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "polyrom/errors.hpp"
#include "polyrom/netcore.hpp"
#include "polyrom/polytope.hpp"

using namespace polyrom;
using testutil::random_matrix;
using testutil::random_spd;
using testutil::random_vector;
using testutil::simplex_ls_oracle;

TEST_SUITE("polytope") {

TEST_CASE("simplex projection fixed points and dominant coordinate") {
  Vector on{0.2, 0.3, 0.5};
  Vector p = simplex_project(on);
  for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(on[i]).epsilon(1e-14));

  Vector q = simplex_project({2.0, 0.0});
  CHECK(q[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("simplex projection beats a fine grid search") {
  auto gen = testutil::rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Vector y = random_vector(gen, 4, -1.5, 1.5);
    Vector p = simplex_project(y);
    double sum = 0.0;
    for (double v : p) {
      CHECK(v >= -1e-15);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    const double best = norm2(vsub(p, y));
    // Exhaustive 1e-2 barycentric grid over the 3-simplex in R^4; the true
    // projection can beat a grid point by at most the grid diameter.
    const int G = 100;
    double grid_best = 1e300;
    for (int a = 0; a <= G; ++a) {
      for (int b = 0; a + b <= G; ++b) {
        for (int c = 0; a + b + c <= G; ++c) {
          const int d = G - a - b - c;
          Vector cand{static_cast<double>(a) / G, static_cast<double>(b) / G,
                      static_cast<double>(c) / G, static_cast<double>(d) / G};
          grid_best = std::min(grid_best, norm2(vsub(cand, y)));
        }
      }
    }
    CHECK(best <= grid_best + 1e-12);
    CHECK(grid_best <= best + 2.0 / G);
  }
}

static Polytope segment_polytope() {
  DenseMatrix u(2, 2);
  u(0, 0) = 1.0;  // e1
  u(1, 1) = 1.0;  // e2
  return Polytope{u, SpdWeight::diag({1.0, 1.0})};
}

TEST_CASE("polytope error analytic midpoint case") {
  Polytope p = segment_polytope();
  BestApprox best = polytope_error({1.0, 1.0}, p, 1e-10);
  CHECK(best.point[0] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(best.point[1] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(best.error == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));
  CHECK(best.kkt_residual <= 1e-9);
  double sum = 0.0;
  for (double r : best.rho) {
    CHECK(r >= -1e-10);
    sum += r;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("vertices and interior points have zero error") {
  auto gen = testutil::rng(10);
  DenseMatrix u = random_matrix(gen, 6, 4);
  Polytope p{u, SpdWeight::dense(random_spd(gen, 6))};
  for (int j = 0; j < 4; ++j) {
    BestApprox best = polytope_error(u.col(j), p, 1e-10);
    CHECK(best.error <= 1e-8);
    CHECK(contains(p, u.col(j), 1e-6));
  }
  Vector mix(6, 0.0);
  axpy(0.3, u.col(0), mix);
  axpy(0.7, u.col(1), mix);
  BestApprox best = polytope_error(mix, p, 1e-10);
  CHECK(best.error <= 1e-8);
  CHECK(contains(p, mix, 1e-6));

  CHECK_FALSE(contains(p, {10.0, 0.0, 0.0, 0.0, 0.0, 0.0}, 1e-6));
  Vector bad(6, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS(polytope_error(bad, p, 1e-10));
}

TEST_CASE("offset from a segment is measured in the M norm") {
  Polytope p = segment_polytope();
  // Point at Euclidean distance 1 from the segment midpoint, along the normal.
  const double s = 1.0 / std::sqrt(2.0);
  Vector v{0.5 + s, 0.5 + s};  // = midpoint + 1 * unit normal (s, s)
  BestApprox best = polytope_error(v, p, 1e-10);
  CHECK(best.error == doctest::Approx(1.0).epsilon(1e-8));
  CHECK_FALSE(contains(p, v, 1e-6));
}

TEST_CASE("solver agrees with the active-set oracle on random instances") {
  auto gen = testutil::rng(2025);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 3 + static_cast<int>(gen() % 10);  // up to 12
    const int m = 1 + static_cast<int>(gen() % 6);   // up to 6
    DenseMatrix u = random_matrix(gen, n, m, -2.0, 2.0);
    SpdWeight w = (trial % 2 == 0) ? SpdWeight::dense(random_spd(gen, n))
                                   : SpdWeight::diag(random_vector(gen, n, 0.2, 3.0));
    Polytope p{u, w};
    Vector v = random_vector(gen, n, -2.0, 2.0);
    BestApprox got = polytope_error(v, p, 1e-10);
    auto oracle = simplex_ls_oracle(u, v, w);
    CHECK(std::abs(got.error - oracle.error) <= 1e-8);
  }
}

TEST_CASE("KKT conditions hold at the reported solution") {
  auto gen = testutil::rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 8, m = 5;
    DenseMatrix u = random_matrix(gen, n, m);
    Polytope p{u, SpdWeight::diag(random_vector(gen, n, 0.5, 2.0))};
    Vector v = random_vector(gen, n, -2.0, 2.0);
    const double tol = 1e-10;
    BestApprox best = polytope_error(v, p, tol);
    // gradient of 0.5 || U rho - v ||_M^2 at rho*.
    Vector resid = vsub(matvec(u, best.rho), v);
    Vector grad = matvec_transposed(u, p.weight.apply(resid));
    // Active components share a common multiplier; inactive ones sit above it.
    double mu = 0.0;
    int active = 0;
    for (int i = 0; i < m; ++i) {
      if (best.rho[i] > 1e-10) {
        mu += grad[i];
        ++active;
      }
    }
    REQUIRE(active > 0);
    mu /= active;
    for (int i = 0; i < m; ++i) {
      if (best.rho[i] > 1e-10) {
        CHECK(std::abs(grad[i] - mu) <= 1e-6);
      } else {
        CHECK(grad[i] >= mu - 1e-6);
      }
    }
  }
}

TEST_CASE("objective is 1-Lipschitz in the M norm") {
  auto gen = testutil::rng(53);
  const int n = 7, m = 4;
  DenseMatrix u = random_matrix(gen, n, m);
  SpdWeight w = SpdWeight::dense(random_spd(gen, n));
  Polytope p{u, w};
  for (int trial = 0; trial < 30; ++trial) {
    Vector a = random_vector(gen, n, -2.0, 2.0);
    Vector b = random_vector(gen, n, -2.0, 2.0);
    const double ea = polytope_error(a, p, 1e-10).error;
    const double eb = polytope_error(b, p, 1e-10).error;
    CHECK(std::abs(ea - eb) <= m_norm(vsub(a, b), w) + 1e-8);
  }
}

TEST_CASE("multistart solutions coincide, even with duplicated vertices") {
  auto gen = testutil::rng(67);
  {
    DenseMatrix u(3, 2);
    u(0, 0) = 1.0;
    u(1, 1) = 1.0;
    Polytope p{u, SpdWeight::diag({1.0, 1.0, 1.0})};
    CHECK(uniqueness_probe(p, {2.0, 2.0, 1.0}, 8, 0) <= 1e-8);
    // Interior point: all starts return the point itself.
    CHECK(uniqueness_probe(p, scaled(vadd(u.col(0), u.col(1)), 0.5), 4, 1) <= 1e-8);
  }
  {
    // Duplicated column: coordinates are non-unique, the best point is.
    DenseMatrix u(4, 3);
    for (int i = 0; i < 4; ++i) {
      u(i, 0) = 1.0 + i;
      u(i, 1) = 1.0 + i;  // duplicate of column 0
      u(i, 2) = -2.0 * i;
    }
    Polytope p{u, SpdWeight::diag(random_vector(gen, 4, 0.5, 2.0))};
    Vector v = random_vector(gen, 4, -1.0, 1.0);
    CHECK(uniqueness_probe(p, v, 8, 2) <= 1e-8);
  }
}

TEST_CASE("midpoints of distinct polytope points shrink strictly under the norm") {
  auto gen = testutil::rng(71);
  const int n = 5, m = 4;
  DenseMatrix u = random_matrix(gen, n, m);
  SpdWeight w = SpdWeight::dense(random_spd(gen, n));
  for (int trial = 0; trial < 20; ++trial) {
    Vector ra = msoftmax(random_vector(gen, m, -1.0, 1.0));
    Vector rb = msoftmax(random_vector(gen, m, -1.0, 1.0));
    Vector a = matvec(u, ra), b = matvec(u, rb);
    if (m_norm(vsub(a, b), w) < 1e-8) continue;
    Vector mid = scaled(vadd(a, b), 0.5);
    const double worst = std::max(m_norm(a, w), m_norm(b, w));
    CHECK(m_norm(mid, w) < worst + 1e-12);
  }
}

TEST_CASE("averaged relative polytope error matches a loop oracle") {
  auto gen = testutil::rng(83);
  const int n = 6, m = 3, T = 9;
  DenseMatrix u = random_matrix(gen, n, m);
  SpdWeight w = SpdWeight::diag(random_vector(gen, n, 0.5, 2.0));
  Polytope p{u, w};
  DenseMatrix snaps(n, T);
  for (int t = 0; t < T; ++t) snaps.set_col(t, random_vector(gen, n, -1.0, 1.0));
  std::vector<std::string> warnings;
  const double got = averaged_relative_polytope_error(snaps, p, 1e-10, &warnings);
  double oracle = 0.0;
  for (int t = 0; t < T; ++t) {
    Vector v = snaps.col(t);
    oracle += polytope_error(v, p, 1e-10).error / m_norm(v, w);
  }
  oracle /= T;
  CHECK(got == doctest::Approx(oracle).epsilon(1e-10));
  CHECK(warnings.empty());

  // Snapshots inside the polytope give exactly zero.
  DenseMatrix inside(n, 4);
  for (int t = 0; t < 4; ++t) {
    inside.set_col(t, matvec(u, msoftmax(random_vector(gen, m, -1.0, 1.0))));
  }
  CHECK(averaged_relative_polytope_error(inside, p, 1e-10, nullptr) <= 1e-8);

  // A zero snapshot is skipped with a warning; all-zero input errors out.
  DenseMatrix with_zero = snaps;
  with_zero.set_col(0, Vector(n, 0.0));
  std::vector<std::string> warn2;
  const double partial = averaged_relative_polytope_error(with_zero, p, 1e-10, &warn2);
  CHECK(std::isfinite(partial));
  CHECK(!warn2.empty());
  DenseMatrix zeros(n, 3);
  CHECK_THROWS(averaged_relative_polytope_error(zeros, p, 1e-10, nullptr));
}

TEST_CASE("warm-started solver object reproduces the free function") {
  auto gen = testutil::rng(97);
  const int n = 8, m = 5;
  DenseMatrix u = random_matrix(gen, n, m);
  Polytope p{u, SpdWeight::diag(random_vector(gen, n, 0.5, 1.5))};
  PolytopeErrorSolver solver(p);
  for (int trial = 0; trial < 10; ++trial) {
    Vector v = random_vector(gen, n, -1.0, 1.0);
    Vector start = msoftmax(random_vector(gen, m, -1.0, 1.0));
    BestApprox a = solver.solve(v, 1e-10, &start);
    BestApprox b = polytope_error(v, p, 1e-10);
    CHECK(std::abs(a.error - b.error) <= 1e-8);
  }
}

}  // TEST_SUITE
