#include "polyrom/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "polyrom/errors.hpp"

namespace polyrom {

DenseMatrix DenseMatrix::identity(int n) {
  DenseMatrix I(n, n);
  for (int i = 0; i < n; ++i) I(i, i) = 1.0;
  return I;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix T(cols, rows);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) T(j, i) = (*this)(i, j);
  return T;
}

Vector DenseMatrix::col(int j) const {
  Vector v(rows);
  for (int i = 0; i < rows; ++i) v[i] = (*this)(i, j);
  return v;
}

void DenseMatrix::set_col(int j, const Vector& v) {
  if (static_cast<int>(v.size()) != rows)
    throw DimensionError("set_col: length " + std::to_string(v.size()) + " vs rows " +
                         std::to_string(rows));
  for (int i = 0; i < rows; ++i) (*this)(i, j) = v[i];
}

DenseMatrix matmul(const DenseMatrix& A, const DenseMatrix& B) {
  if (A.cols != B.rows) throw DimensionError("matmul: inner dimensions disagree");
  DenseMatrix C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = &A.a[static_cast<std::size_t>(i) * A.cols];
    double* crow = &C.a[static_cast<std::size_t>(i) * C.cols];
    for (int l = 0; l < A.cols; ++l) {
      const double ail = arow[l];
      if (ail == 0.0) continue;
      const double* brow = &B.a[static_cast<std::size_t>(l) * B.cols];
      for (int j = 0; j < B.cols; ++j) crow[j] += ail * brow[j];
    }
  }
  return C;
}

Vector matvec(const DenseMatrix& A, const Vector& x) {
  if (A.cols != static_cast<int>(x.size())) throw DimensionError("matvec: size mismatch");
  Vector y(A.rows, 0.0);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = &A.a[static_cast<std::size_t>(i) * A.cols];
    double acc = 0.0;
    for (int j = 0; j < A.cols; ++j) acc += arow[j] * x[j];
    y[i] = acc;
  }
  return y;
}

Vector matvec_transposed(const DenseMatrix& A, const Vector& x) {
  if (A.rows != static_cast<int>(x.size()))
    throw DimensionError("matvec_transposed: size mismatch");
  Vector y(A.cols, 0.0);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = &A.a[static_cast<std::size_t>(i) * A.cols];
    const double xi = x[i];
    if (xi == 0.0) continue;
    for (int j = 0; j < A.cols; ++j) y[j] += arow[j] * xi;
  }
  return y;
}

double frobenius_norm(const DenseMatrix& A) {
  double s = 0.0;
  for (double v : A.a) s += v * v;
  return std::sqrt(s);
}

double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vector& v) { return std::sqrt(dot(v, v)); }

void axpy(double a, const Vector& x, Vector& y) {
  if (x.size() != y.size()) throw DimensionError("axpy: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

Vector scaled(const Vector& x, double a) {
  Vector y(x);
  for (double& v : y) v *= a;
  return y;
}

Vector vadd(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("vadd: size mismatch");
  Vector c(a);
  for (std::size_t i = 0; i < b.size(); ++i) c[i] += b[i];
  return c;
}

Vector vsub(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("vsub: size mismatch");
  Vector c(a);
  for (std::size_t i = 0; i < b.size(); ++i) c[i] -= b[i];
  return c;
}

SparseMatrix SparseMatrix::from_triplets(int rows, int cols,
                                         std::vector<std::tuple<int, int, double>> triplets) {
  for (const auto& [i, j, v] : triplets) {
    (void)v;
    if (i < 0 || i >= rows || j < 0 || j >= cols)
      throw DimensionError("from_triplets: index out of range");
  }
  std::sort(triplets.begin(), triplets.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return std::get<1>(a) < std::get<1>(b);
  });
  SparseMatrix S;
  S.rows = rows;
  S.cols = cols;
  S.row_ptr.assign(rows + 1, 0);
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto [i, j, v] = triplets[t];
    if (t > 0 && std::get<0>(triplets[t - 1]) == i && std::get<1>(triplets[t - 1]) == j) {
      S.vals.back() += v;  // merge duplicates
      continue;
    }
    S.col_ind.push_back(j);
    S.vals.push_back(v);
    S.row_ptr[i + 1]++;
  }
  for (int i = 0; i < rows; ++i) S.row_ptr[i + 1] += S.row_ptr[i];
  return S;
}

Vector SparseMatrix::apply(const Vector& x) const {
  if (cols != static_cast<int>(x.size())) throw DimensionError("sparse apply: size mismatch");
  Vector y(rows, 0.0);
  for (int i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (int p = row_ptr[i]; p < row_ptr[i + 1]; ++p) acc += vals[p] * x[col_ind[p]];
    y[i] = acc;
  }
  return y;
}

double SparseMatrix::sparsity() const {
  if (rows == 0 || cols == 0) return 0.0;
  return static_cast<double>(vals.size()) /
         (static_cast<double>(rows) * static_cast<double>(cols));
}

DenseMatrix cholesky(const DenseMatrix& A) {
  if (A.rows != A.cols) throw DimensionError("cholesky: matrix not square");
  const int n = A.rows;
  DenseMatrix L(n, n);
  for (int j = 0; j < n; ++j) {
    double d = A(j, j);
    for (int l = 0; l < j; ++l) d -= L(j, l) * L(j, l);
    if (!(d > 0.0)) throw NumericalError("cholesky: matrix not positive definite");
    L(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      double s = A(i, j);
      for (int l = 0; l < j; ++l) s -= L(i, l) * L(j, l);
      L(i, j) = s / L(j, j);
    }
  }
  return L;
}

Vector tri_lower_solve(const DenseMatrix& L, const Vector& b) {
  const int n = L.rows;
  if (static_cast<int>(b.size()) != n) throw DimensionError("tri_lower_solve: size mismatch");
  Vector x(b);
  for (int i = 0; i < n; ++i) {
    double s = x[i];
    for (int j = 0; j < i; ++j) s -= L(i, j) * x[j];
    x[i] = s / L(i, i);
  }
  return x;
}

Vector tri_upper_solve_transposed(const DenseMatrix& L, const Vector& b) {
  const int n = L.rows;
  if (static_cast<int>(b.size()) != n)
    throw DimensionError("tri_upper_solve_transposed: size mismatch");
  Vector x(b);
  for (int i = n - 1; i >= 0; --i) {
    double s = x[i];
    for (int j = i + 1; j < n; ++j) s -= L(j, i) * x[j];
    x[i] = s / L(i, i);
  }
  return x;
}

Vector chol_solve(const DenseMatrix& L, const Vector& b) {
  return tri_upper_solve_transposed(L, tri_lower_solve(L, b));
}

SpdWeight SpdWeight::diag(Vector d) {
  SpdWeight w;
  w.n_ = static_cast<int>(d.size());
  w.diagonal_ = true;
  for (double v : d)
    if (!(v > 0.0)) throw NumericalError("SpdWeight: diagonal entries must be positive");
  w.sqrt_d_.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) w.sqrt_d_[i] = std::sqrt(d[i]);
  w.d_ = std::move(d);
  return w;
}

SpdWeight SpdWeight::dense(DenseMatrix m) {
  if (m.rows != m.cols) throw DimensionError("SpdWeight: matrix not square");
  double scale = 0.0, asym = 0.0;
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) {
      scale = std::max(scale, std::abs(m(i, j)));
      asym = std::max(asym, std::abs(m(i, j) - m(j, i)));
    }
  if (scale > 0.0 && asym > 1e-12 * scale)
    throw NumericalError("SpdWeight: matrix not symmetric within 1e-12 relative");
  SpdWeight w;
  w.n_ = m.rows;
  w.diagonal_ = false;
  w.chol_ = cholesky(m);  // throws if not positive definite
  w.m_ = std::move(m);
  return w;
}

Vector SpdWeight::apply(const Vector& v) const {
  if (static_cast<int>(v.size()) != n_) throw DimensionError("SpdWeight::apply: size mismatch");
  if (diagonal_) {
    Vector y(v);
    for (int i = 0; i < n_; ++i) y[i] *= d_[i];
    return y;
  }
  return matvec(m_, v);
}

double SpdWeight::inner(const Vector& u, const Vector& v) const {
  if (static_cast<int>(u.size()) != n_ || static_cast<int>(v.size()) != n_)
    throw DimensionError("SpdWeight::inner: size mismatch");
  if (diagonal_) {
    double s = 0.0;
    for (int i = 0; i < n_; ++i) s += u[i] * d_[i] * v[i];
    return s;
  }
  return dot(u, matvec(m_, v));
}

Vector SpdWeight::weight(const Vector& v) const {
  if (static_cast<int>(v.size()) != n_) throw DimensionError("SpdWeight::weight: size mismatch");
  if (diagonal_) {
    Vector y(v);
    for (int i = 0; i < n_; ++i) y[i] *= sqrt_d_[i];
    return y;
  }
  // L^T v
  Vector y(n_, 0.0);
  for (int i = 0; i < n_; ++i) {
    double acc = 0.0;
    for (int j = i; j < n_; ++j) acc += chol_(j, i) * v[j];
    y[i] = acc;
  }
  return y;
}

Vector SpdWeight::unweight(const Vector& v) const {
  if (static_cast<int>(v.size()) != n_)
    throw DimensionError("SpdWeight::unweight: size mismatch");
  if (diagonal_) {
    Vector y(v);
    for (int i = 0; i < n_; ++i) y[i] /= sqrt_d_[i];
    return y;
  }
  return tri_upper_solve_transposed(chol_, v);
}

const Vector& SpdWeight::diag_values() const {
  if (!diagonal_) throw InvalidArgument("SpdWeight: not a diagonal weight");
  return d_;
}

const DenseMatrix& SpdWeight::dense_values() const {
  if (diagonal_) throw InvalidArgument("SpdWeight: not a dense weight");
  return m_;
}

double m_norm(const Vector& v, const SpdWeight& M) {
  const double q = M.inner(v, v);
  return std::sqrt(std::max(q, 0.0));
}

namespace {

// One cyclic Jacobi sweep over the strict upper triangle; returns the largest
// off-diagonal magnitude seen before rotating.
double jacobi_sweep(DenseMatrix& A, DenseMatrix& V) {
  const int n = A.rows;
  double off = 0.0;
  for (int p = 0; p < n - 1; ++p) {
    for (int q = p + 1; q < n; ++q) {
      const double apq = A(p, q);
      off = std::max(off, std::abs(apq));
      if (apq == 0.0) continue;
      const double app = A(p, p), aqq = A(q, q);
      if (std::abs(apq) < 1e-300) continue;
      const double tau = (aqq - app) / (2.0 * apq);
      const double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                    : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
      const double c = 1.0 / std::sqrt(1.0 + t * t);
      const double s = t * c;
      for (int l = 0; l < n; ++l) {
        const double alp = A(l, p), alq = A(l, q);
        A(l, p) = c * alp - s * alq;
        A(l, q) = s * alp + c * alq;
      }
      for (int l = 0; l < n; ++l) {
        const double apl = A(p, l), aql = A(q, l);
        A(p, l) = c * apl - s * aql;
        A(q, l) = s * apl + c * aql;
      }
      for (int l = 0; l < n; ++l) {
        const double vlp = V(l, p), vlq = V(l, q);
        V(l, p) = c * vlp - s * vlq;
        V(l, q) = s * vlp + c * vlq;
      }
    }
  }
  return off;
}

}  // namespace

EigenResult symmetric_eigen(const DenseMatrix& A) {
  if (A.rows != A.cols) throw DimensionError("symmetric_eigen: matrix not square");
  const int n = A.rows;
  DenseMatrix B(A);
  DenseMatrix V = DenseMatrix::identity(n);
  double scale = 0.0;
  for (double v : B.a) scale = std::max(scale, std::abs(v));
  const double tol = (scale > 0.0) ? 1e-14 * scale : 0.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    const double off = jacobi_sweep(B, V);
    if (off <= tol) break;
  }
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Vector lam(n);
  for (int i = 0; i < n; ++i) lam[i] = B(i, i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return lam[a] > lam[b]; });
  EigenResult res;
  res.values.resize(n);
  res.vectors = DenseMatrix(n, n);
  for (int j = 0; j < n; ++j) {
    res.values[j] = lam[idx[j]];
    for (int i = 0; i < n; ++i) res.vectors(i, j) = V(i, idx[j]);
  }
  return res;
}

namespace {

// Gram-Schmidt a fresh column orthogonal to the leading j columns of U; used
// only when trailing singular values vanish and a factor column cannot be
// recovered by division.
Vector orthonormal_fill(const DenseMatrix& U, int j, int dim) {
  for (int basis = 0; basis < dim; ++basis) {
    Vector cand(dim, 0.0);
    cand[basis] = 1.0;
    for (int c = 0; c < j; ++c) {
      double proj = 0.0;
      for (int i = 0; i < dim; ++i) proj += U(i, c) * cand[i];
      for (int i = 0; i < dim; ++i) cand[i] -= proj * U(i, c);
    }
    const double nrm = norm2(cand);
    if (nrm > 1e-8) return scaled(cand, 1.0 / nrm);
  }
  throw NumericalError("truncated_svd: unable to complete orthonormal factor");
}

}  // namespace

SvdResult truncated_svd(const DenseMatrix& X, int r) {
  const int m = X.rows, n = X.cols;
  if (r < 1 || r > std::min(m, n))
    throw DimensionError("truncated_svd: rank must satisfy 1 <= r <= min(rows, cols)");
  const bool tall = m >= n;
  // Gram matrix of the smaller side.
  const int g = tall ? n : m;
  DenseMatrix G(g, g);
  if (tall) {
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        double s = 0.0;
        for (int l = 0; l < m; ++l) s += X(l, i) * X(l, j);
        G(i, j) = G(j, i) = s;
      }
  } else {
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j) {
        double s = 0.0;
        for (int l = 0; l < n; ++l) s += X(i, l) * X(j, l);
        G(i, j) = G(j, i) = s;
      }
  }
  EigenResult eig = symmetric_eigen(G);
  SvdResult out;
  out.s.resize(r);
  out.U = DenseMatrix(m, r);
  out.V = DenseMatrix(n, r);
  const double lead = std::sqrt(std::max(eig.values[0], 0.0));
  for (int j = 0; j < r; ++j) {
    const double sigma = std::sqrt(std::max(eig.values[j], 0.0));
    out.s[j] = sigma;
    Vector w = eig.vectors.col(j);  // eigenvector of the Gram side
    if (tall) {
      out.V.set_col(j, w);
      if (sigma > lead * 1e-13 && sigma > 0.0) {
        Vector u = matvec(X, w);
        out.U.set_col(j, scaled(u, 1.0 / sigma));
      } else {
        out.U.set_col(j, orthonormal_fill(out.U, j, m));
      }
    } else {
      out.U.set_col(j, w);
      if (sigma > lead * 1e-13 && sigma > 0.0) {
        Vector v = matvec_transposed(X, w);
        out.V.set_col(j, scaled(v, 1.0 / sigma));
      } else {
        out.V.set_col(j, orthonormal_fill(out.V, j, n));
      }
    }
  }
  return out;
}

DenseMatrix pod_basis(const DenseMatrix& snapshots, const SpdWeight& M, int r) {
  const int n = snapshots.rows, T = snapshots.cols;
  if (M.dim() != n) throw DimensionError("pod_basis: weight dimension mismatch");
  if (r < 1 || r > std::min(n, T))
    throw DimensionError("pod_basis: rank must satisfy 1 <= r <= min(n, T)");
  bool all_zero = true;
  for (double x : snapshots.a) {
    if (x != 0.0) {
      all_zero = false;
      break;
    }
  }
  if (all_zero) throw NumericalError("pod_basis: snapshot set is identically zero");
  // Work on the weighted snapshots L^T X so that Euclidean geometry there is
  // the M geometry here.
  DenseMatrix Y(n, T);
  for (int j = 0; j < T; ++j) Y.set_col(j, M.weight(snapshots.col(j)));
  SvdResult svd = truncated_svd(Y, r);
  DenseMatrix V(n, r);
  for (int j = 0; j < r; ++j) V.set_col(j, M.unweight(svd.U.col(j)));
  return V;
}

PodProjection pod_project_reconstruct(const DenseMatrix& V, const SpdWeight& M,
                                      const Vector& v) {
  if (V.rows != static_cast<int>(v.size()) || V.rows != M.dim())
    throw DimensionError("pod_project_reconstruct: dimension mismatch");
  PodProjection p;
  p.coords = matvec_transposed(V, M.apply(v));
  p.reconstruction = matvec(V, p.coords);
  return p;
}

double power_iteration_sym(const DenseMatrix& A, int iters, unsigned seed) {
  if (A.rows != A.cols) throw DimensionError("power_iteration_sym: matrix not square");
  const int n = A.rows;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Vector x(n);
  for (double& v : x) v = unif(rng);
  double nrm = norm2(x);
  if (nrm == 0.0) x[0] = 1.0, nrm = 1.0;
  for (double& v : x) v /= nrm;
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    Vector y = matvec(A, x);
    const double ny = norm2(y);
    if (ny == 0.0) return 0.0;
    for (int i = 0; i < n; ++i) x[i] = y[i] / ny;
    lambda = dot(x, matvec(A, x));
  }
  return lambda;
}

}  // namespace polyrom
