#ifndef POLYROM_LINALG_HPP
#define POLYROM_LINALG_HPP

#include <cstddef>
#include <tuple>
#include <vector>

namespace polyrom {

using Vector = std::vector<double>;

// Row-major dense matrix. Kept deliberately small; everything at desk scale
// fits comfortably in plain loops.
struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  DenseMatrix() = default;
  DenseMatrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

  static DenseMatrix identity(int n);
  DenseMatrix transposed() const;
  Vector col(int j) const;
  void set_col(int j, const Vector& v);
};

DenseMatrix matmul(const DenseMatrix& A, const DenseMatrix& B);
Vector matvec(const DenseMatrix& A, const Vector& x);
Vector matvec_transposed(const DenseMatrix& A, const Vector& x);
double frobenius_norm(const DenseMatrix& A);

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& v);
void axpy(double a, const Vector& x, Vector& y);  // y += a*x
Vector scaled(const Vector& x, double a);
Vector vadd(const Vector& a, const Vector& b);
Vector vsub(const Vector& a, const Vector& b);

// Compressed sparse row matrix, used for the state-to-grid interpolation map.
struct SparseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr;
  std::vector<int> col_ind;
  std::vector<double> vals;

  static SparseMatrix from_triplets(int rows, int cols,
                                    std::vector<std::tuple<int, int, double>> triplets);
  Vector apply(const Vector& x) const;
  std::size_t nnz() const { return vals.size(); }
  double sparsity() const;  // nnz / (rows*cols)
};

// Dense Cholesky A = L L^T; returns lower triangular L.
// Throws NumericalError when A is not positive definite.
DenseMatrix cholesky(const DenseMatrix& A);
Vector tri_lower_solve(const DenseMatrix& L, const Vector& b);         // L x = b
Vector tri_upper_solve_transposed(const DenseMatrix& L, const Vector& b);  // L^T x = b
Vector chol_solve(const DenseMatrix& L, const Vector& b);              // L L^T x = b

// Symmetric positive definite weight matrix with a cached Cholesky factor,
// M = L L^T. Diagonal weights are stored as such; the dense path validates
// symmetry (1e-12 relative) and factors once at construction.
class SpdWeight {
 public:
  SpdWeight() = default;
  static SpdWeight diag(Vector d);
  static SpdWeight dense(DenseMatrix m);

  int dim() const { return n_; }
  bool is_diagonal() const { return diagonal_; }

  Vector apply(const Vector& v) const;                    // M v
  double inner(const Vector& u, const Vector& v) const;   // u^T M v
  Vector weight(const Vector& v) const;                   // L^T v
  Vector unweight(const Vector& v) const;                 // L^-T v
  const Vector& diag_values() const;
  const DenseMatrix& dense_values() const;

 private:
  int n_ = 0;
  bool diagonal_ = true;
  Vector d_;
  Vector sqrt_d_;
  DenseMatrix m_;
  DenseMatrix chol_;
};

// |v|_M = sqrt(v^T M v)
double m_norm(const Vector& v, const SpdWeight& M);

// Symmetric eigendecomposition by cyclic Jacobi sweeps.
// Eigenvalues returned in descending order, vectors as matching columns.
struct EigenResult {
  Vector values;
  DenseMatrix vectors;
};
EigenResult symmetric_eigen(const DenseMatrix& A);

// Rank-r truncated SVD, X ~ U diag(s) V^T, computed through the Gram matrix
// of the smaller side. Singular values descending, factors orthonormal.
struct SvdResult {
  DenseMatrix U;
  Vector s;
  DenseMatrix V;
};
SvdResult truncated_svd(const DenseMatrix& X, int r);

// POD basis in the geometry induced by M: returns V (n x r) with V^T M V = I,
// columns ordered by decreasing captured energy.
DenseMatrix pod_basis(const DenseMatrix& snapshots, const SpdWeight& M, int r);

struct PodProjection {
  Vector coords;          // V^T M v
  Vector reconstruction;  // V coords
};
PodProjection pod_project_reconstruct(const DenseMatrix& V, const SpdWeight& M,
                                      const Vector& v);

// Largest eigenvalue of a symmetric PSD matrix by power iteration.
double power_iteration_sym(const DenseMatrix& A, int iters = 300, unsigned seed = 13u);

}  // namespace polyrom

#endif
