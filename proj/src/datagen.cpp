#include "polyrom/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "polyrom/errors.hpp"

namespace polyrom {

Vector QuadraticOde::apply_convection(const Vector& v, const Vector& w) const {
  if (N_apply) return N_apply(v, w);
  if (N) return matvec(N(v), w);
  throw InvalidArgument("QuadraticOde: convection map not set");
}

Vector QuadraticOde::force_at(double t) const {
  if (forcing) return forcing(t);
  return Vector(n, 0.0);
}

void SnapshotSet::validate() const {
  if (states.cols != static_cast<int>(times.size()))
    throw DimensionError("SnapshotSet: times do not match snapshot count");
  if (weight.dim() != states.rows)
    throw DimensionError("SnapshotSet: weight dimension does not match states");
  if (split < 0 || split > states.cols)
    throw DimensionError("SnapshotSet: split index out of range");
  if (times.size() >= 3) {
    const double dt = times[1] - times[0];
    for (std::size_t i = 2; i < times.size(); ++i)
      if (std::abs((times[i] - times[i - 1]) - dt) > 1e-9 * std::max(1.0, std::abs(dt)))
        throw NumericalError("SnapshotSet: time step is not uniform");
  }
}

Vector GridMap::apply_flat(const Vector& v) const { return op.apply(v); }

void GridMap::validate() const {
  if (op.rows != channels * height * width)
    throw DimensionError("GridMap: row count does not match grid dims");
  for (int i = 0; i < op.rows; ++i) {
    double s = 0.0;
    for (int p = op.row_ptr[i]; p < op.row_ptr[i + 1]; ++p) s += op.vals[p];
    if (std::abs(s - 1.0) > 1e-12)
      throw NumericalError("GridMap: row " + std::to_string(i) + " does not sum to one");
  }
}

QuadraticOde assemble_burgers(int n, double viscosity, double length) {
  if (n < 3) throw InvalidArgument("assemble_burgers: need at least 3 nodes");
  if (!(viscosity > 0.0)) throw InvalidArgument("assemble_burgers: viscosity must be positive");
  if (!(length > 0.0)) throw InvalidArgument("assemble_burgers: length must be positive");
  const double h = length / n;
  QuadraticOde ode;
  ode.n = n;
  ode.M = SpdWeight::diag(Vector(n, h));
  ode.A = DenseMatrix(n, n);
  const double nu_h = viscosity / h;
  for (int i = 0; i < n; ++i) {
    const int ip = (i + 1) % n, im = (i + n - 1) % n;
    ode.A(i, i) = 2.0 * nu_h;
    ode.A(i, ip) -= nu_h;
    ode.A(i, im) -= nu_h;
  }
  // Skew form of the convection: N(v) w at node i is
  //   (1/6) [ (v_i + v_{i+1}) w_{i+1} - (v_i + v_{i-1}) w_{i-1} ],
  // linear in v and energy conserving for periodic states.
  ode.N_apply = [n](const Vector& v, const Vector& w) {
    if (static_cast<int>(v.size()) != n || static_cast<int>(w.size()) != n)
      throw DimensionError("burgers convection: size mismatch");
    Vector out(n);
    for (int i = 0; i < n; ++i) {
      const int ip = (i + 1) % n, im = (i + n - 1) % n;
      out[i] = ((v[i] + v[ip]) * w[ip] - (v[i] + v[im]) * w[im]) / 6.0;
    }
    return out;
  };
  ode.N = [n](const Vector& v) {
    if (static_cast<int>(v.size()) != n)
      throw DimensionError("burgers convection: size mismatch");
    DenseMatrix Nv(n, n);
    for (int i = 0; i < n; ++i) {
      const int ip = (i + 1) % n, im = (i + n - 1) % n;
      Nv(i, ip) += (v[i] + v[ip]) / 6.0;
      Nv(i, im) -= (v[i] + v[im]) / 6.0;
    }
    return Nv;
  };
  return ode;
}

SnapshotSet integrate(const QuadraticOde& ode, const Vector& v0, double dt, int steps,
                      double train_fraction) {
  if (static_cast<int>(v0.size()) != ode.n)
    throw DimensionError("integrate: initial state dimension mismatch");
  if (!(dt > 0.0)) throw InvalidArgument("integrate: dt must be positive");
  if (steps < 1) throw InvalidArgument("integrate: need at least one step");
  const int n = ode.n;
  // System matrix M + dt A, factored once.
  DenseMatrix S(n, n);
  if (ode.M.is_diagonal()) {
    const Vector& d = ode.M.diag_values();
    for (int i = 0; i < n; ++i) S(i, i) = d[i];
  } else {
    S = ode.M.dense_values();
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) S(i, j) += dt * ode.A(i, j);
  DenseMatrix L;
  try {
    L = cholesky(S);
  } catch (const NumericalError&) {
    throw NumericalError("integrate: system matrix M + dt*A is singular or indefinite");
  }
  SnapshotSet out;
  out.states = DenseMatrix(n, steps + 1);
  out.times.resize(steps + 1);
  out.weight = ode.M;
  Vector v = v0;
  out.states.set_col(0, v);
  out.times[0] = 0.0;
  for (int k = 0; k < steps; ++k) {
    Vector rhs = ode.M.apply(v);
    const Vector conv = ode.apply_convection(v, v);
    const Vector f = ode.force_at(k * dt);
    for (int i = 0; i < n; ++i) rhs[i] += dt * (f[i] - conv[i]);
    v = chol_solve(L, rhs);
    for (double x : v)
      if (!std::isfinite(x))
        throw NumericalError("integrate: non-finite state at step " + std::to_string(k + 1));
    out.states.set_col(k + 1, v);
    out.times[k + 1] = (k + 1) * dt;
  }
  const int T = steps + 1;
  int split = static_cast<int>(std::lround(train_fraction * T));
  split = std::max(1, std::min(T - 1, split));
  out.split = split;
  return out;
}

Vector limit_cycle_field(const std::vector<double>& source_xy, double theta, double radius,
                         const LimitCycleConfig& cfg) {
  if (source_xy.size() % 2 != 0)
    throw DimensionError("limit_cycle_field: coordinate list must be (x, y) pairs");
  const std::size_t S = source_xy.size() / 2;
  const double cx = 0.5, cy = 0.5;
  const double twoSigma2 = 2.0 * cfg.bump_sigma * cfg.bump_sigma;
  const double b1x = cx + radius * std::cos(theta);
  const double b1y = cy + radius * std::sin(theta);
  // Second channel trails by a quarter turn.
  const double b2x = cx + radius * std::cos(theta + M_PI / 2.0);
  const double b2y = cy + radius * std::sin(theta + M_PI / 2.0);
  Vector v(2 * S);
  for (std::size_t s = 0; s < S; ++s) {
    const double x = source_xy[2 * s], y = source_xy[2 * s + 1];
    const double d1 = (x - b1x) * (x - b1x) + (y - b1y) * (y - b1y);
    const double d2 = (x - b2x) * (x - b2x) + (y - b2y) * (y - b2y);
    v[s] = cfg.amplitude * std::exp(-d1 / twoSigma2);
    v[S + s] = cfg.amplitude * std::exp(-d2 / twoSigma2);
  }
  return v;
}

LimitCycleData generate_limit_cycle_2d(int h, int w, int count, int phases,
                                       const LimitCycleConfig& cfg) {
  if (h < 2 || w < 2) throw InvalidArgument("generate_limit_cycle_2d: grid too small");
  if (count < 2) throw InvalidArgument("generate_limit_cycle_2d: need at least 2 snapshots");
  if (phases < 1) throw InvalidArgument("generate_limit_cycle_2d: phases must be positive");
  LimitCycleData out;
  out.source_h = h;
  out.source_w = w;
  const int S = h * w;
  out.source_xy.resize(2 * static_cast<std::size_t>(S));
  std::mt19937_64 rng(cfg.jitter_seed);
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  const double dx = 1.0 / w, dy = 1.0 / h;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const int s = i * w + j;
      out.source_xy[2 * s] = (j + 0.5) * dx + cfg.jitter * dx * unif(rng);
      out.source_xy[2 * s + 1] = (i + 0.5) * dy + cfg.jitter * dy * unif(rng);
    }
  }
  const int n = 2 * S;
  out.snapshots.states = DenseMatrix(n, count);
  out.snapshots.times.resize(count);
  out.snapshots.weight = SpdWeight::diag(Vector(n, 1.0 / S));
  for (int t = 0; t < count; ++t) {
    // Exact phase reduction keeps post-transient snapshots bit-identical
    // across revolutions.
    const int phase_index = t % phases;
    const double theta = 2.0 * M_PI * phase_index / phases;
    double decay = std::exp(-static_cast<double>(t) / cfg.transient_decay);
    if (decay < 1e-16) decay = 0.0;
    const double radius = cfg.orbit_radius * (1.0 - cfg.transient_depth * decay);
    out.snapshots.states.set_col(t, limit_cycle_field(out.source_xy, theta, radius, cfg));
    out.snapshots.times[t] = static_cast<double>(t);
  }
  int split = static_cast<int>(std::lround(cfg.train_fraction * count));
  split = std::max(1, std::min(count - 1, split));
  out.snapshots.split = split;
  return out;
}

namespace {

struct Bary {
  int a, b, c;
  double wa, wb, wc;
};

bool barycentric_inside(const std::vector<double>& xy, int a, int b, int c, double px,
                        double py, Bary& out) {
  const double x1 = xy[2 * a], y1 = xy[2 * a + 1];
  const double x2 = xy[2 * b], y2 = xy[2 * b + 1];
  const double x3 = xy[2 * c], y3 = xy[2 * c + 1];
  const double det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3);
  if (std::abs(det) < 1e-14) return false;
  const double l1 = ((y2 - y3) * (px - x3) + (x3 - x2) * (py - y3)) / det;
  const double l2 = ((y3 - y1) * (px - x3) + (x1 - x3) * (py - y3)) / det;
  const double l3 = 1.0 - l1 - l2;
  const double tol = -1e-10;
  if (l1 < tol || l2 < tol || l3 < tol) return false;
  out = {a, b, c, l1, l2, l3};
  return true;
}

}  // namespace

GridMap build_grid_interpolator(const std::vector<double>& source_xy, int channels, int h,
                                int w, const std::array<double, 4>& extent) {
  if (source_xy.size() % 2 != 0 || source_xy.size() < 6)
    throw InvalidArgument("build_grid_interpolator: need at least 3 (x, y) source nodes");
  if (channels < 1 || h < 2 || w < 2)
    throw InvalidArgument("build_grid_interpolator: bad grid dimensions");
  const double x0 = extent[0], x1 = extent[1], y0 = extent[2], y1 = extent[3];
  if (!(x1 > x0) || !(y1 > y0))
    throw InvalidArgument("build_grid_interpolator: empty extent");
  const int S = static_cast<int>(source_xy.size() / 2);
  const double scale = std::max(x1 - x0, y1 - y0);

  std::vector<std::tuple<int, int, double>> triplets;  // spatial block only
  std::vector<int> order(S);
  std::vector<double> dist2(S);
  for (int gi = 0; gi < h; ++gi) {
    for (int gj = 0; gj < w; ++gj) {
      const double px = x0 + (x1 - x0) * (w == 1 ? 0.5 : static_cast<double>(gj) / (w - 1));
      const double py = y0 + (y1 - y0) * (h == 1 ? 0.5 : static_cast<double>(gi) / (h - 1));
      for (int s = 0; s < S; ++s) {
        const double ddx = source_xy[2 * s] - px, ddy = source_xy[2 * s + 1] - py;
        dist2[s] = ddx * ddx + ddy * ddy;
      }
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return dist2[a] < dist2[b]; });
      const int row = gi * w + gj;
      if (dist2[order[0]] < 1e-24 * scale * scale) {
        triplets.emplace_back(row, order[0], 1.0);
        continue;
      }
      bool found = false;
      Bary bary{};
      for (int K = std::min(12, S); !found && K <= S; K = std::min(S, K * 2)) {
        for (int a = 0; a < K && !found; ++a)
          for (int b = a + 1; b < K && !found; ++b)
            for (int c = b + 1; c < K && !found; ++c)
              found = barycentric_inside(source_xy, order[a], order[b], order[c], px, py,
                                         bary);
        if (K == S) break;
      }
      if (!found)
        throw Error("build_grid_interpolator: grid node (" + std::to_string(gi) + ", " +
                    std::to_string(gj) + ") lies outside the source hull");
      triplets.emplace_back(row, bary.a, bary.wa);
      triplets.emplace_back(row, bary.b, bary.wb);
      triplets.emplace_back(row, bary.c, bary.wc);
    }
  }
  // Replicate the spatial block across channels.
  std::vector<std::tuple<int, int, double>> all;
  all.reserve(triplets.size() * channels);
  const int hw = h * w;
  for (int c = 0; c < channels; ++c)
    for (const auto& [row, col, val] : triplets)
      all.emplace_back(c * hw + row, c * S + col, val);
  GridMap map;
  map.op = SparseMatrix::from_triplets(channels * hw, channels * S, std::move(all));
  map.channels = channels;
  map.height = h;
  map.width = w;
  return map;
}

GridMap cycle_grid_from_sources(const std::vector<double>& source_xy, int src_h, int src_w,
                                int channels) {
  if (src_h < 2 || src_w < 2) throw InvalidArgument("cycle_grid_from_sources: lattice too small");
  if (source_xy.size() != 2 * static_cast<std::size_t>(src_h) * src_w)
    throw DimensionError("cycle_grid_from_sources: coordinate count does not match the lattice");
  double xmin = source_xy[0], xmax = source_xy[0];
  double ymin = source_xy[1], ymax = source_xy[1];
  for (std::size_t s = 0; s < source_xy.size() / 2; ++s) {
    xmin = std::min(xmin, source_xy[2 * s]);
    xmax = std::max(xmax, source_xy[2 * s]);
    ymin = std::min(ymin, source_xy[2 * s + 1]);
    ymax = std::max(ymax, source_xy[2 * s + 1]);
  }
  // Jitter moves boundary nodes at most a quarter spacing inward, so an
  // inset of 0.6 spacings keeps every grid node inside the hull.
  const double sx = (xmax - xmin) / (src_w - 1);
  const double sy = (ymax - ymin) / (src_h - 1);
  const std::array<double, 4> extent{xmin + 0.6 * sx, xmax - 0.6 * sx, ymin + 0.6 * sy,
                                     ymax - 0.6 * sy};
  return build_grid_interpolator(source_xy, channels, src_h, src_w, extent);
}

}  // namespace polyrom
