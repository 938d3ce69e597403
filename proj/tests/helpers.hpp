#pragma once

// Shared test utilities. Everything here is deliberately independent of the
// library's own algorithms so it can serve as an oracle: the SVD is a
// one-sided Jacobi sweep, the simplex least-squares solver enumerates active
// sets, and gradients come from central differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "polyrom/linalg.hpp"

namespace testutil {

using polyrom::DenseMatrix;
using polyrom::Vector;

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline Vector random_vector(std::mt19937_64& gen, std::size_t n, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vector v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

inline DenseMatrix random_matrix(std::mt19937_64& gen, int rows, int cols, double lo = -1.0,
                                 double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  DenseMatrix a(rows, cols);
  for (auto& x : a.a) x = dist(gen);
  return a;
}

// Random symmetric positive-definite matrix A = B^T B + c I.
inline DenseMatrix random_spd(std::mt19937_64& gen, int n, double shift = 0.5) {
  DenseMatrix b = random_matrix(gen, n, n);
  DenseMatrix a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < n; ++l) s += b(l, i) * b(l, j);
      a(i, j) = s + (i == j ? shift : 0.0);
    }
  }
  return a;
}

// Central-difference gradient of a scalar function of a flat vector.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-6) {
  Vector g(x.size());
  Vector p = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double save = p[i];
    p[i] = save + h;
    const double fp = f(p);
    p[i] = save - h;
    const double fm = f(p);
    p[i] = save;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Largest relative component mismatch between two gradients, with an absolute
// floor so near-zero entries do not blow up the ratio.
inline double max_rel_diff(const Vector& a, const Vector& b, double floor_ = 1e-6) {
  if (a.size() != b.size()) throw std::runtime_error("max_rel_diff: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor_});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// ---- one-sided Jacobi SVD oracle -------------------------------------------

struct SvdOracle {
  DenseMatrix u;   // rows x rank_cols, orthonormal columns (zero where sigma = 0)
  Vector sigma;    // descending
  DenseMatrix v;   // cols x rank_cols, orthonormal columns
};

// One-sided Jacobi on the columns of A (rows >= cols is not required; the
// sweep works either way, though tall matrices converge faster).
inline SvdOracle jacobi_svd(const DenseMatrix& a_in) {
  DenseMatrix a = a_in;
  const int m = a.rows;
  const int n = a.cols;
  DenseMatrix v = DenseMatrix::identity(n);
  const double eps = 1e-14;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int i = 0; i < m; ++i) {
          app += a(i, p) * a(i, p);
          aqq += a(i, q) * a(i, q);
          apq += a(i, p) * a(i, q);
        }
        off = std::max(off, std::abs(apq) / std::max(std::sqrt(app * aqq), 1e-300));
        if (std::abs(apq) <= eps * std::sqrt(app * aqq)) continue;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (int i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (off < 1e-15) break;
  }
  // Column norms are the singular values; sort descending.
  std::vector<int> order(n);
  Vector norms(n);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += a(i, j) * a(i, j);
    norms[static_cast<std::size_t>(j)] = std::sqrt(s);
    order[static_cast<std::size_t>(j)] = j;
  }
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    return norms[static_cast<std::size_t>(x)] > norms[static_cast<std::size_t>(y)];
  });
  SvdOracle out;
  out.sigma.resize(n);
  out.u = DenseMatrix(m, n);
  out.v = DenseMatrix(n, n);
  for (int jj = 0; jj < n; ++jj) {
    const int j = order[static_cast<std::size_t>(jj)];
    const double s = norms[static_cast<std::size_t>(j)];
    out.sigma[static_cast<std::size_t>(jj)] = s;
    for (int i = 0; i < m; ++i) out.u(i, jj) = s > 1e-300 ? a(i, j) / s : 0.0;
    for (int i = 0; i < n; ++i) out.v(i, jj) = v(i, j);
  }
  return out;
}

// ---- small dense linear solve (partial pivoting) ---------------------------

// Returns false if the system is numerically singular.
inline bool solve_dense(DenseMatrix a, Vector b, Vector& x) {
  const int n = a.rows;
  if (a.cols != n || static_cast<int>(b.size()) != n) {
    throw std::runtime_error("solve_dense: shape mismatch");
  }
  std::vector<int> piv(n);
  for (int i = 0; i < n; ++i) piv[static_cast<std::size_t>(i)] = i;
  for (int col = 0; col < n; ++col) {
    int best = col;
    for (int i = col + 1; i < n; ++i) {
      if (std::abs(a(i, col)) > std::abs(a(best, col))) best = i;
    }
    if (std::abs(a(best, col)) < 1e-12) return false;
    if (best != col) {
      for (int j = 0; j < n; ++j) std::swap(a(col, j), a(best, j));
      std::swap(b[static_cast<std::size_t>(col)], b[static_cast<std::size_t>(best)]);
    }
    for (int i = col + 1; i < n; ++i) {
      const double f = a(i, col) / a(col, col);
      if (f == 0.0) continue;
      for (int j = col; j < n; ++j) a(i, j) -= f * a(col, j);
      b[static_cast<std::size_t>(i)] -= f * b[static_cast<std::size_t>(col)];
    }
  }
  x.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = n - 1; i >= 0; --i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < n; ++j) s -= a(i, j) * x[static_cast<std::size_t>(j)];
    x[static_cast<std::size_t>(i)] = s / a(i, i);
  }
  return true;
}

// ---- simplex-constrained least squares by active-set enumeration -----------

struct SimplexLsOracle {
  Vector w;      // minimizer on the simplex
  double error;  // M-norm of the residual U w - v
};

// Minimize || U w - v ||_M over the simplex by trying every nonempty support:
// for each support solve the equality-constrained problem (sum w = 1) via its
// KKT system and keep the best candidate whose entries are all nonnegative.
// The optimal active set yields a feasible candidate, so the best feasible
// candidate over all supports is the global minimizer of this convex problem.
inline SimplexLsOracle simplex_ls_oracle(const DenseMatrix& u, const Vector& v,
                                         const polyrom::SpdWeight& m) {
  const int n = u.rows;
  const int cols = u.cols;
  if (cols > 20) throw std::runtime_error("simplex_ls_oracle: too many columns");
  // Precompute Gram pieces in the M inner product.
  DenseMatrix g(cols, cols);
  Vector b(static_cast<std::size_t>(cols));
  for (int j = 0; j < cols; ++j) {
    Vector muj = m.apply(u.col(j));
    for (int i = 0; i < cols; ++i) {
      double s = 0.0;
      for (int row = 0; row < n; ++row) s += u(row, i) * muj[static_cast<std::size_t>(row)];
      g(i, j) = s;
    }
    double s = 0.0;
    for (int row = 0; row < n; ++row) s += v[static_cast<std::size_t>(row)] * muj[static_cast<std::size_t>(row)];
    b[static_cast<std::size_t>(j)] = s;
  }
  SimplexLsOracle best;
  best.error = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 1; mask < (1u << cols); ++mask) {
    std::vector<int> idx;
    for (int j = 0; j < cols; ++j) {
      if (mask & (1u << j)) idx.push_back(j);
    }
    const int s = static_cast<int>(idx.size());
    // KKT system: [2 G_S, 1; 1^T, 0] [w; lambda] = [2 b_S; 1]
    DenseMatrix kkt(s + 1, s + 1);
    Vector rhs(static_cast<std::size_t>(s + 1), 0.0);
    for (int i = 0; i < s; ++i) {
      for (int j = 0; j < s; ++j) kkt(i, j) = 2.0 * g(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      kkt(i, s) = 1.0;
      kkt(s, i) = 1.0;
      rhs[static_cast<std::size_t>(i)] = 2.0 * b[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    }
    kkt(s, s) = 0.0;
    rhs[static_cast<std::size_t>(s)] = 1.0;
    Vector sol;
    if (!solve_dense(kkt, rhs, sol)) continue;
    bool feasible = true;
    for (int i = 0; i < s; ++i) {
      if (sol[static_cast<std::size_t>(i)] < -1e-11) {
        feasible = false;
        break;
      }
    }
    if (!feasible) continue;
    Vector w(static_cast<std::size_t>(cols), 0.0);
    for (int i = 0; i < s; ++i) {
      w[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] =
          std::max(0.0, sol[static_cast<std::size_t>(i)]);
    }
    // Renormalize the clipped tiny negatives away.
    double total = 0.0;
    for (double x : w) total += x;
    if (total <= 0.0) continue;
    for (double& x : w) x /= total;
    Vector resid(static_cast<std::size_t>(n));
    for (int row = 0; row < n; ++row) {
      double acc = -v[static_cast<std::size_t>(row)];
      for (int j = 0; j < cols; ++j) acc += u(row, j) * w[static_cast<std::size_t>(j)];
      resid[static_cast<std::size_t>(row)] = acc;
    }
    const double err = polyrom::m_norm(resid, m);
    if (err < best.error) {
      best.error = err;
      best.w = w;
    }
  }
  if (!std::isfinite(best.error)) throw std::runtime_error("simplex_ls_oracle: no feasible support");
  return best;
}

// Materialize a linear operator as a dense matrix by applying it to unit vectors.
inline DenseMatrix dense_from_operator(const std::function<Vector(const Vector&)>& apply, int n) {
  DenseMatrix a(n, n);
  Vector e(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    e[static_cast<std::size_t>(j)] = 1.0;
    Vector col = apply(e);
    for (int i = 0; i < n; ++i) a(i, j) = col[static_cast<std::size_t>(i)];
    e[static_cast<std::size_t>(j)] = 0.0;
  }
  return a;
}

}  // namespace testutil
