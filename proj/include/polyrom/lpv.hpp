#ifndef POLYROM_LPV_HPP
#define POLYROM_LPV_HPP

#include <vector>

#include "polyrom/datagen.hpp"
#include "polyrom/linalg.hpp"
#include "polyrom/pae.hpp"
#include "polyrom/polytope.hpp"

namespace polyrom {

// State-dependent coefficient form of a quadratic ODE: the dynamics read
// M dv/dt + A(v) v = f(t) with A(v) = A_const + N(v). The state-dependent
// part N is linear in v, which makes A affine; evaluated on convex
// combinations it therefore matches the convex combination of its vertex
// evaluations.
struct SdcSystem {
  QuadraticOde ode;    // source system; supplies M, A_const, N, forcing
  bool linear = true;  // N verified linear in its argument

  int n() const { return ode.n; }
  const SpdWeight& mass() const { return ode.M; }
  DenseMatrix coefficient(const Vector& v) const;  // A_const + N(v)
};

// Coefficient matrices frozen at the polytope vertices: A_i = A(u_i).
struct LpvSystem {
  std::vector<DenseMatrix> vertex_matrices;
  DenseMatrix vertices;  // the polytope columns the matrices were built from
};

// Wraps a quadratic ODE whose convection is linear in the state. Probes
// linearity on random samples and rejects systems that fail it.
SdcSystem sdc_from_burgers(const QuadraticOde& sys);

// One coefficient matrix per polytope column.
LpvSystem build_vertices(const SdcSystem& sdc, const Polytope& p);

// Sum zeta_i A_i for simplex coordinates zeta; equals A(U zeta) exactly
// (up to rounding) because A is affine and the weights sum to one.
DenseMatrix lpv_coefficient(const LpvSystem& lpv, const Vector& zeta);

struct LpvSimResult {
  DenseMatrix trajectory;  // n x (steps+1), quasi-LPV states
  DenseMatrix reference;   // n x (steps+1), full-model states
  Vector deviation;        // M-norm distance per step
  Vector times;
};

// Quasi-LPV closure: integrates M dv/dt + A(v~(t)) v = f(t) where the
// parameter state v~ = decode(encode(v)) is refreshed from the running state
// every step, using the same semi-implicit scheme as the snapshot
// integrator (implicit constant part, explicit state-dependent part).
// Reports the per-step M-norm deviation from the full model trajectory.
LpvSimResult lpv_simulate(const SdcSystem& sdc, const PaeModel& model, const Vector& v0,
                          double dt, int steps);

// Convex bounding-box coordinates for a POD basis are intentionally not
// provided; this always throws a not-implemented error pointing at
// vertex_count, which covers the 2^r counting claim.
Vector bounding_box_coords(const DenseMatrix& basis, const Vector& v);

}  // namespace polyrom

#endif
