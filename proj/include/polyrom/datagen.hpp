#ifndef POLYROM_DATAGEN_HPP
#define POLYROM_DATAGEN_HPP

#include <array>
#include <functional>
#include <vector>

#include "polyrom/linalg.hpp"

namespace polyrom {

// Semi-discrete quadratic ODE  M dv/dt + N(v) v + A v = f(t), with N(.)
// linear in its argument.
struct QuadraticOde {
  int n = 0;
  SpdWeight M;
  DenseMatrix A;                                // constant (diffusion) part
  std::function<DenseMatrix(const Vector&)> N;  // state-dependent part
  // Optional fast path evaluating N(v) w without forming the matrix.
  std::function<Vector(const Vector&, const Vector&)> N_apply;
  std::function<Vector(double)> forcing;        // f(t); empty means zero

  Vector apply_convection(const Vector& v, const Vector& w) const;
  Vector force_at(double t) const;
};

struct SnapshotSet {
  DenseMatrix states;  // n x T, one column per snapshot
  Vector times;        // T entries, uniform step
  SpdWeight weight;
  int split = 0;       // leading `split` snapshots form the training half

  int dim() const { return states.rows; }
  int count() const { return states.cols; }
  void validate() const;
};

// Sparse interpolation from the state layout onto a C x H x W tensor grid.
// Each row holds the convex weights of one grid node; rows sum to one.
struct GridMap {
  SparseMatrix op;  // (C*H*W) x (C*S)
  int channels = 0;
  int height = 0;
  int width = 0;

  Vector apply_flat(const Vector& v) const;
  void validate() const;
};

// Periodic viscous Burgers on [0, length), n nodes, mass h*I. The convection
// uses the energy-conserving skew form of the central difference, so
// v^T N(v) v = 0 exactly.
QuadraticOde assemble_burgers(int n, double viscosity, double length);

// Semi-implicit march: implicit in A, explicit in N(v) v and f. Returns
// steps+1 snapshots including the initial state.
SnapshotSet integrate(const QuadraticOde& ode, const Vector& v0, double dt, int steps,
                      double train_fraction = 0.6);

struct LimitCycleConfig {
  double amplitude = 1.0;
  double bump_sigma = 0.15;       // Gaussian bump width, domain units
  double orbit_radius = 0.18;     // post-transient orbit radius
  double transient_decay = 45.0;  // time constant of the radial transient, in steps
  double transient_depth = 0.5;   // initial radius deficit, fraction of orbit_radius
  double jitter = 0.25;           // source node jitter, fraction of lattice spacing
  unsigned jitter_seed = 2401u;
  double train_fraction = 0.6;
};

struct LimitCycleData {
  SnapshotSet snapshots;          // n = 2*H*W entries per state
  std::vector<double> source_xy;  // S = H*W nodes, (x, y) interleaved, unit square
  int source_h = 0;
  int source_w = 0;
};

// Two-channel Gaussian bump rotating on a closed loop with a radial
// transient. The bump angle advances by 2*pi/phases per snapshot and is
// reduced exactly, so phase regions repeat bit-for-bit once the transient
// has died out.
LimitCycleData generate_limit_cycle_2d(int h, int w, int count, int phases,
                                       const LimitCycleConfig& cfg = {});

// Direct field evaluation behind the generator (angle in radians, current
// orbit radius); useful for probing periodicity without snapshot bookkeeping.
Vector limit_cycle_field(const std::vector<double>& source_xy, double theta, double radius,
                         const LimitCycleConfig& cfg);

// Barycentric interpolation weights from scattered source nodes onto a
// channel-replicated tensor grid over extent = {x0, x1, y0, y1}. Throws when
// a grid node falls outside the source hull, naming the node.
GridMap build_grid_interpolator(const std::vector<double>& source_xy, int channels, int h,
                                int w, const std::array<double, 4>& extent);

// Encoder grid matching the source lattice resolution, with the extent inset
// from the source bounding box far enough that every grid node stays inside
// the jittered convex hull.
GridMap cycle_grid_from_sources(const std::vector<double>& source_xy, int src_h, int src_w,
                                int channels = 2);

}  // namespace polyrom

#endif
