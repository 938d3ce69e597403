#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "polyrom/errors.hpp"
#include "polyrom/linalg.hpp"

using namespace polyrom;
using testutil::jacobi_svd;
using testutil::random_matrix;
using testutil::random_spd;
using testutil::random_vector;

TEST_SUITE("linalg") {

TEST_CASE("m_norm euclidean and diagonal cases") {
  SpdWeight eye = SpdWeight::diag({1.0, 1.0});
  CHECK(m_norm({3.0, 4.0}, eye) == doctest::Approx(5.0).epsilon(1e-14));
  SpdWeight d2 = SpdWeight::diag({2.0, 2.0});
  CHECK(m_norm({1.0, 0.0}, d2) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  CHECK(m_norm({0.0, 0.0}, d2) == 0.0);
  CHECK_THROWS_AS(m_norm({1.0, 2.0, 3.0}, d2), DimensionError);
}

TEST_CASE("m_norm equals euclidean norm of cholesky-transformed vector") {
  auto gen = testutil::rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 5;
    DenseMatrix m = random_spd(gen, n);
    SpdWeight w = SpdWeight::dense(m);
    Vector v = random_vector(gen, n);
    // Oracle: chol(M) = L L^T, ||v||_M = ||L^T v||_2.
    DenseMatrix l = cholesky(m);
    Vector ltv(n, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) ltv[i] += l(j, i) * v[j];
    }
    CHECK(m_norm(v, w) == doctest::Approx(norm2(ltv)).epsilon(1e-12));
  }
}

TEST_CASE("m_norm triangle inequality and homogeneity") {
  auto gen = testutil::rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 6;
    SpdWeight w = SpdWeight::dense(random_spd(gen, n));
    Vector a = random_vector(gen, n), b = random_vector(gen, n);
    CHECK(m_norm(vadd(a, b), w) <= m_norm(a, w) + m_norm(b, w) + 1e-10);
    const double c = -2.7;
    CHECK(m_norm(scaled(a, c), w) ==
          doctest::Approx(std::abs(c) * m_norm(a, w)).epsilon(1e-10));
  }
}

TEST_CASE("spd weight rejects asymmetric or indefinite input") {
  DenseMatrix bad(2, 2);
  bad(0, 0) = 1.0; bad(0, 1) = 0.5; bad(1, 0) = -0.5; bad(1, 1) = 1.0;
  CHECK_THROWS(SpdWeight::dense(bad));
  DenseMatrix indef(2, 2);
  indef(0, 0) = 1.0; indef(0, 1) = 2.0; indef(1, 0) = 2.0; indef(1, 1) = 1.0;
  CHECK_THROWS_AS(SpdWeight::dense(indef), NumericalError);
}

TEST_CASE("sparse matrix CSR applies like the dense equivalent") {
  auto gen = testutil::rng(11);
  const int n = 12;
  std::vector<std::tuple<int, int, double>> trips;
  DenseMatrix dense(n, n);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int t = 0; t < 30; ++t) {
    int i = pick(gen), j = pick(gen);
    double v = dist(gen);
    trips.emplace_back(i, j, v);
    dense(i, j) += v;  // duplicate triplets accumulate
  }
  SparseMatrix s = SparseMatrix::from_triplets(n, n, trips);
  Vector x = random_vector(gen, n);
  Vector yd(n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) yd[i] += dense(i, j) * x[j];
  }
  Vector ys = s.apply(x);
  for (int i = 0; i < n; ++i) CHECK(ys[i] == doctest::Approx(yd[i]).epsilon(1e-12));
  CHECK(s.sparsity() < 1.0);
}

TEST_CASE("truncated_svd rank-1 and identity cases") {
  Vector a{1.0, 2.0, -1.0};
  Vector b{0.5, -0.25};
  DenseMatrix x(3, 2);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) x(i, j) = a[i] * b[j];
  }
  auto svd1 = truncated_svd(x, 1);
  CHECK(svd1.s[0] == doctest::Approx(norm2(a) * norm2(b)).epsilon(1e-12));
  // Residual of the rank-1 reconstruction is zero.
  double resid = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double rec = svd1.U(i, 0) * svd1.s[0] * svd1.V(j, 0);
      resid = std::max(resid, std::abs(rec - x(i, j)));
    }
  }
  CHECK(resid < 1e-10);

  auto svd2 = truncated_svd(DenseMatrix::identity(3), 2);
  CHECK(svd2.s[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(svd2.s[1] == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(truncated_svd(x, 3), Error);
}

TEST_CASE("truncated_svd matches jacobi oracle on random 8x6 matrices") {
  auto gen = testutil::rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    DenseMatrix x = random_matrix(gen, 8, 6);
    auto oracle = jacobi_svd(x);
    for (int r = 1; r <= 6; ++r) {
      auto svd = truncated_svd(x, r);
      // Singular values agree and are sorted.
      for (int i = 0; i < r; ++i) {
        CHECK(svd.s[i] == doctest::Approx(oracle.sigma[i]).epsilon(1e-9));
        if (i > 0) CHECK(svd.s[i] <= svd.s[i - 1] + 1e-14);
      }
      // Eckart-Young: residual of the rank-r approximation equals the tail.
      double fro2 = 0.0;
      for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 6; ++j) {
          double rec = 0.0;
          for (int l = 0; l < r; ++l) rec += svd.U(i, l) * svd.s[l] * svd.V(j, l);
          const double d = rec - x(i, j);
          fro2 += d * d;
        }
      }
      double tail2 = 0.0;
      for (int i = r; i < 6; ++i) tail2 += oracle.sigma[i] * oracle.sigma[i];
      CHECK(std::sqrt(fro2) == doctest::Approx(std::sqrt(tail2)).epsilon(1e-9));
      // Orthonormality of the returned factors.
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
          double uu = 0.0, vv = 0.0;
          for (int l = 0; l < 8; ++l) uu += svd.U(l, i) * svd.U(l, j);
          for (int l = 0; l < 6; ++l) vv += svd.V(l, i) * svd.V(l, j);
          const double want = i == j ? 1.0 : 0.0;
          CHECK(std::abs(uu - want) < 1e-10);
          CHECK(std::abs(vv - want) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("pod_basis constant snapshots and unit weight") {
  const int n = 6;
  auto gen = testutil::rng(5);
  Vector v0 = random_vector(gen, n);
  DenseMatrix states(n, 4);
  for (int t = 0; t < 4; ++t) states.set_col(t, v0);
  SpdWeight w = SpdWeight::diag(Vector(n, 2.0));
  DenseMatrix basis = pod_basis(states, w, 1);
  const double scale = m_norm(v0, w);
  for (int i = 0; i < n; ++i) {
    CHECK(std::abs(std::abs(basis(i, 0)) - std::abs(v0[i] / scale)) < 1e-10);
  }

  // With M = I the basis spans the same space as the plain SVD's left factors.
  SpdWeight eye = SpdWeight::diag(Vector(n, 1.0));
  DenseMatrix randstates = random_matrix(gen, n, 5);
  DenseMatrix b2 = pod_basis(randstates, eye, 3);
  auto oracle = jacobi_svd(randstates);
  for (int j = 0; j < n; ++j) {
    // Compare the projectors, not the (sign-ambiguous) vectors.
    for (int i = 0; i < n; ++i) {
      double proj_lib = 0.0, proj_orc = 0.0;
      for (int l = 0; l < 3; ++l) {
        proj_lib += b2(i, l) * b2(j, l);
        proj_orc += oracle.u(i, l) * oracle.u(j, l);
      }
      CHECK(std::abs(proj_lib - proj_orc) < 1e-10);
    }
  }

  DenseMatrix zero(n, 3);
  CHECK_THROWS(pod_basis(zero, eye, 1));
}

TEST_CASE("pod basis M-orthonormal and projection optimal") {
  auto gen = testutil::rng(99);
  const int n = 10;
  SpdWeight w = SpdWeight::dense(random_spd(gen, n));
  DenseMatrix states = random_matrix(gen, n, 7);
  DenseMatrix v = pod_basis(states, w, 4);
  // V^T M V = I
  for (int i = 0; i < 4; ++i) {
    Vector mvi = w.apply(v.col(i));
    for (int j = 0; j < 4; ++j) {
      const double want = i == j ? 1.0 : 0.0;
      CHECK(std::abs(dot(v.col(j), mvi) - want) < 1e-10);
    }
  }
  Vector x = random_vector(gen, n);
  auto proj = pod_project_reconstruct(v, w, x);
  // Residual M-orthogonal to every basis column.
  Vector resid = vsub(x, proj.reconstruction);
  for (int j = 0; j < 4; ++j) {
    CHECK(std::abs(dot(w.apply(v.col(j)), resid)) < 1e-10);
  }
  // Idempotent.
  auto proj2 = pod_project_reconstruct(v, w, proj.reconstruction);
  for (int i = 0; i < n; ++i) {
    CHECK(proj2.reconstruction[i] == doctest::Approx(proj.reconstruction[i]).epsilon(1e-12));
  }
  // Optimality against random coefficients.
  const double best = m_norm(resid, w);
  for (int trial = 0; trial < 100; ++trial) {
    Vector c = random_vector(gen, 4, -2.0, 2.0);
    Vector cand = matvec(v, c);
    CHECK(m_norm(vsub(x, cand), w) + 1e-12 >= best);
  }
  // Exact reproduction inside the range.
  Vector inr = matvec(v, Vector{0.3, -0.2, 0.9, 0.1});
  auto proj3 = pod_project_reconstruct(v, w, inr);
  for (int i = 0; i < n; ++i) {
    CHECK(proj3.reconstruction[i] == doctest::Approx(inr[i]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(pod_project_reconstruct(v, w, Vector(n + 1, 1.0)), DimensionError);
}

TEST_CASE("cholesky solve round-trips") {
  auto gen = testutil::rng(3);
  const int n = 7;
  DenseMatrix m = random_spd(gen, n);
  Vector x = random_vector(gen, n);
  Vector b(n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) b[i] += m(i, j) * x[j];
  }
  DenseMatrix l = cholesky(m);
  Vector got = chol_solve(l, b);
  for (int i = 0; i < n; ++i) CHECK(got[i] == doctest::Approx(x[i]).epsilon(1e-9));
}

}  // TEST_SUITE
