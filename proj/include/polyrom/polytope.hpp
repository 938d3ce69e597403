#ifndef POLYROM_POLYTOPE_HPP
#define POLYROM_POLYTOPE_HPP

#include <string>
#include <vector>

#include "polyrom/errors.hpp"
#include "polyrom/linalg.hpp"

namespace polyrom {

// Convex hull of the columns of `vertices`, measured in the geometry of
// `weight`.
struct Polytope {
  DenseMatrix vertices;  // n x m, one vertex per column
  SpdWeight weight;
};

struct BestApprox {
  Vector rho;           // simplex coefficients, length m
  Vector point;         // vertices * rho, the closest point
  double error = 0.0;   // |point - v|_M
  double kkt_residual = 0.0;
  int iterations = 0;
};

// Thrown when the projected-gradient loop hits its iteration cap; carries the
// best iterate found so far.
struct IterationCapError : Error {
  BestApprox best;
  IterationCapError(const std::string& msg, BestApprox b) : Error(msg), best(std::move(b)) {}
};

// Euclidean projection onto the probability simplex by the sorted-threshold
// rule.
Vector simplex_project(const Vector& y);

// Distance from v to the polytope: accelerated projected gradient on
// min_rho |U rho - v|^2_M over the simplex, followed by an exact solve on the
// identified active face. The tolerance bounds the gradient-mapping norm.
BestApprox polytope_error(const Vector& v, const Polytope& p, double tol = 1e-9);

bool contains(const Polytope& p, const Vector& v, double tol);

// Max pairwise M-distance between closest points found from `starts` random
// simplex starts; small values certify that the closest point is unique.
double uniqueness_probe(const Polytope& p, const Vector& v, int starts, unsigned seed,
                        double tol = 1e-9);

// Mean of polytope_error(v)/|v|_M over the snapshot columns. Zero-norm
// snapshots are skipped with a warning; throws when all are zero.
double averaged_relative_polytope_error(const DenseMatrix& snapshots, const Polytope& p,
                                        double tol = 1e-9,
                                        std::vector<std::string>* warnings = nullptr,
                                        int threads = 1);

// Shared precomputation (Gram matrix, Lipschitz constant) for repeated
// distance queries against one polytope. solve() is const and thread-safe.
class PolytopeErrorSolver {
 public:
  explicit PolytopeErrorSolver(const Polytope& p);
  BestApprox solve(const Vector& v, double tol = 1e-9, const Vector* rho0 = nullptr) const;

 private:
  const Polytope* poly_;
  DenseMatrix mu_;   // M U, n x m
  DenseMatrix h_;    // U^T M U, m x m
  double lipschitz_ = 0.0;
};

}  // namespace polyrom

#endif
