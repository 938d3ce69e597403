#include "polyrom/polytope.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

namespace polyrom {

Vector simplex_project(const Vector& y) {
  const int m = static_cast<int>(y.size());
  if (m < 1) throw DimensionError("simplex_project: empty input");
  Vector u(y);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  int rho = 0;
  double acc = 0.0;
  for (int j = 0; j < m; ++j) {
    acc += u[j];
    const double t = (acc - 1.0) / (j + 1);
    if (u[j] - t > 0.0) {
      rho = j + 1;
      css = acc;
      theta = t;
    }
  }
  (void)rho;
  (void)css;
  Vector out(m);
  for (int i = 0; i < m; ++i) out[i] = std::max(y[i] - theta, 0.0);
  return out;
}

namespace {

// Gaussian elimination with partial pivoting for the small KKT systems of the
// face polish.
bool solve_small(DenseMatrix A, Vector b, Vector& x) {
  const int n = A.rows;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(A(r, col)) > std::abs(A(piv, col))) piv = r;
    if (std::abs(A(piv, col)) < 1e-14) return false;
    if (piv != col) {
      for (int c = col; c < n; ++c) std::swap(A(piv, c), A(col, c));
      std::swap(b[piv], b[col]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = A(r, col) / A(col, col);
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) A(r, c) -= f * A(col, c);
      b[r] -= f * b[col];
    }
  }
  x.assign(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= A(r, c) * x[c];
    x[r] = s / A(r, r);
  }
  return true;
}

double quad_obj(const DenseMatrix& H, const Vector& b, const Vector& rho) {
  const Vector Hr = matvec(H, rho);
  return 0.5 * dot(rho, Hr) - dot(b, rho);
}

}  // namespace

PolytopeErrorSolver::PolytopeErrorSolver(const Polytope& p) : poly_(&p) {
  const int n = p.vertices.rows, m = p.vertices.cols;
  if (m < 1 || n < 1) throw DimensionError("PolytopeErrorSolver: empty vertex set");
  if (p.weight.dim() != n)
    throw DimensionError("PolytopeErrorSolver: weight dimension mismatch");
  mu_ = DenseMatrix(n, m);
  for (int j = 0; j < m; ++j) mu_.set_col(j, p.weight.apply(p.vertices.col(j)));
  h_ = DenseMatrix(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) {
      double s = 0.0;
      for (int l = 0; l < n; ++l) s += p.vertices(l, i) * mu_(l, j);
      h_(i, j) = h_(j, i) = s;
    }
  lipschitz_ = power_iteration_sym(h_);
}

BestApprox PolytopeErrorSolver::solve(const Vector& v, double tol, const Vector* rho0) const {
  if (!(tol > 0.0)) throw InvalidArgument("polytope_error: tolerance must be positive");
  const int n = poly_->vertices.rows, m = poly_->vertices.cols;
  if (static_cast<int>(v.size()) != n)
    throw DimensionError("polytope_error: state dimension mismatch");

  auto finish = [&](Vector rho, int iters) {
    BestApprox best;
    best.rho = std::move(rho);
    best.point = matvec(poly_->vertices, best.rho);
    best.error = m_norm(vsub(best.point, v), poly_->weight);
    // KKT residual from the full-space gradient U^T M (U rho - v).
    const Vector resid = vsub(best.point, v);
    const Vector g = matvec_transposed(poly_->vertices, poly_->weight.apply(resid));
    double nu = 0.0;
    int active = 0;
    for (int i = 0; i < m; ++i)
      if (best.rho[i] > 1e-10) {
        nu += g[i];
        active++;
      }
    nu = active > 0 ? nu / active : 0.0;
    double res = 0.0;
    for (int i = 0; i < m; ++i) {
      if (best.rho[i] > 1e-10)
        res = std::max(res, std::abs(g[i] - nu));
      else
        res = std::max(res, std::max(0.0, nu - g[i]));
    }
    best.kkt_residual = res;
    best.iterations = iters;
    return best;
  };

  const Vector b = matvec_transposed(mu_, v);
  if (lipschitz_ <= 1e-300) {
    // All vertices vanish (or coincide at zero); every simplex point is
    // optimal.
    return finish(Vector(m, 1.0 / m), 0);
  }
  const double step = 1.0 / (lipschitz_ * 1.02);

  Vector rho = rho0 ? simplex_project(*rho0) : Vector(m, 1.0 / m);
  Vector z = rho;
  double tk = 1.0;
  double f_prev = quad_obj(h_, b, rho);
  Vector best_rho = rho;
  double best_f = f_prev;
  const long cap = 100000;
  long it = 0;
  for (; it < cap; ++it) {
    // Gradient mapping at rho decides convergence.
    Vector g = matvec(h_, rho);
    for (int i = 0; i < m; ++i) g[i] -= b[i];
    Vector fwd(m);
    for (int i = 0; i < m; ++i) fwd[i] = rho[i] - step * g[i];
    Vector proj = simplex_project(fwd);
    double gm = 0.0;
    for (int i = 0; i < m; ++i) {
      const double d = (rho[i] - proj[i]) / step;
      gm += d * d;
    }
    if (std::sqrt(gm) <= tol) break;

    // Accelerated step from the extrapolated point.
    Vector gz = matvec(h_, z);
    for (int i = 0; i < m; ++i) gz[i] -= b[i];
    Vector cand(m);
    for (int i = 0; i < m; ++i) cand[i] = z[i] - step * gz[i];
    Vector rho_next = simplex_project(cand);
    const double f_next = quad_obj(h_, b, rho_next);
    if (f_next > f_prev) {
      // Objective increased: restart the momentum from the last iterate.
      z = rho;
      tk = 1.0;
      Vector gr = matvec(h_, rho);
      for (int i = 0; i < m; ++i) gr[i] = rho[i] - step * (gr[i] - b[i]);
      rho_next = simplex_project(gr);
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    const double beta = (tk - 1.0) / t_next;
    for (int i = 0; i < m; ++i) z[i] = rho_next[i] + beta * (rho_next[i] - rho[i]);
    tk = t_next;
    rho = std::move(rho_next);
    f_prev = quad_obj(h_, b, rho);
    if (f_prev < best_f) {
      best_f = f_prev;
      best_rho = rho;
    }
  }
  if (it >= cap) {
    throw IterationCapError("polytope_error: iteration cap reached before tolerance " +
                                std::to_string(tol),
                            finish(best_rho, static_cast<int>(cap)));
  }

  // Exact solve on the identified active face; keeps machine-precision
  // optima when the face is correct, otherwise the iterate stands.
  std::vector<int> act;
  for (int i = 0; i < m; ++i)
    if (rho[i] > 1e-10) act.push_back(i);
  if (!act.empty()) {
    const int a = static_cast<int>(act.size());
    DenseMatrix K(a + 1, a + 1);
    Vector rhs(a + 1, 0.0);
    for (int i = 0; i < a; ++i) {
      for (int j = 0; j < a; ++j) K(i, j) = h_(act[i], act[j]);
      K(i, a) = K(a, i) = 1.0;
      rhs[i] = b[act[i]];
    }
    rhs[a] = 1.0;
    Vector sol;
    if (solve_small(K, rhs, sol)) {
      bool feasible = true;
      for (int i = 0; i < a; ++i)
        if (sol[i] < -1e-12) feasible = false;
      if (feasible) {
        Vector polished(m, 0.0);
        double s = 0.0;
        for (int i = 0; i < a; ++i) {
          polished[act[i]] = std::max(sol[i], 0.0);
          s += polished[act[i]];
        }
        if (s > 0.0) {
          for (double& x : polished) x /= s;
          if (quad_obj(h_, b, polished) <= f_prev + 1e-15 * (1.0 + std::abs(f_prev)))
            rho = polished;
        }
      }
    }
  }
  return finish(rho, static_cast<int>(it));
}

BestApprox polytope_error(const Vector& v, const Polytope& p, double tol) {
  PolytopeErrorSolver solver(p);
  return solver.solve(v, tol);
}

bool contains(const Polytope& p, const Vector& v, double tol) {
  if (!(tol > 0.0)) throw InvalidArgument("contains: tolerance must be positive");
  return polytope_error(v, p).error <= tol;
}

double uniqueness_probe(const Polytope& p, const Vector& v, int starts, unsigned seed,
                        double tol) {
  if (starts < 2) throw InvalidArgument("uniqueness_probe: need at least 2 starts");
  PolytopeErrorSolver solver(p);
  const int m = p.vertices.cols;
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  std::vector<Vector> points;
  points.reserve(starts);
  for (int s = 0; s < starts; ++s) {
    Vector rho0(m);
    double sum = 0.0;
    for (int i = 0; i < m; ++i) {
      rho0[i] = expo(rng);
      sum += rho0[i];
    }
    for (double& x : rho0) x /= sum;  // uniform Dirichlet start
    points.push_back(solver.solve(v, tol, &rho0).point);
  }
  double spread = 0.0;
  for (int i = 0; i < starts; ++i)
    for (int j = i + 1; j < starts; ++j)
      spread = std::max(spread, m_norm(vsub(points[i], points[j]), p.weight));
  return spread;
}

double averaged_relative_polytope_error(const DenseMatrix& snapshots, const Polytope& p,
                                        double tol, std::vector<std::string>* warnings,
                                        int threads) {
  const int T = snapshots.cols;
  if (T < 1) throw DimensionError("averaged_relative_polytope_error: no snapshots");
  if (snapshots.rows != p.vertices.rows)
    throw DimensionError("averaged_relative_polytope_error: dimension mismatch");
  PolytopeErrorSolver solver(p);
  std::vector<double> rel(T, std::numeric_limits<double>::quiet_NaN());
  auto worker = [&](int lo, int hi) {
    for (int t = lo; t < hi; ++t) {
      const Vector v = snapshots.col(t);
      const double nrm = m_norm(v, p.weight);
      if (nrm == 0.0) continue;
      rel[t] = solver.solve(v, tol).error / nrm;
    }
  };
  threads = std::max(1, threads);
  if (threads == 1 || T < 2 * threads) {
    worker(0, T);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (T + threads - 1) / threads;
    for (int w = 0; w < threads; ++w) {
      const int lo = w * chunk, hi = std::min(T, lo + chunk);
      if (lo < hi) pool.emplace_back(worker, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  double sum = 0.0;
  int used = 0;
  for (int t = 0; t < T; ++t) {
    if (std::isnan(rel[t])) {
      if (warnings)
        warnings->push_back("snapshot " + std::to_string(t) +
                            " has zero norm; skipped in the polytope-error average");
      continue;
    }
    sum += rel[t];
    used++;
  }
  if (used == 0)
    throw NumericalError("averaged_relative_polytope_error: every snapshot has zero norm");
  return sum / used;
}

}  // namespace polyrom
