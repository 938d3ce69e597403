#include "polyrom/lpv.hpp"

#include <cmath>
#include <random>
#include <string>

#include "polyrom/errors.hpp"

namespace polyrom {

namespace {

void check_simplex_coords(const Vector& zeta) {
  double sum = 0.0;
  for (double z : zeta) {
    if (!std::isfinite(z) || z < -1e-8) {
      throw InvalidArgument("lpv_coefficient: coordinates must lie on the probability simplex");
    }
    sum += z;
  }
  if (std::abs(sum - 1.0) > 1e-8) {
    throw InvalidArgument("lpv_coefficient: coordinates must lie on the probability simplex");
  }
}

}  // namespace

DenseMatrix SdcSystem::coefficient(const Vector& v) const {
  if (static_cast<int>(v.size()) != ode.n) {
    throw DimensionError("SdcSystem::coefficient: state dimension mismatch");
  }
  // Assemble N(v) column by column through the same application path the
  // integrator uses, then add the constant part.
  DenseMatrix A(ode.n, ode.n);
  Vector unit(static_cast<std::size_t>(ode.n), 0.0);
  for (int j = 0; j < ode.n; ++j) {
    unit[static_cast<std::size_t>(j)] = 1.0;
    Vector column = ode.apply_convection(v, unit);
    unit[static_cast<std::size_t>(j)] = 0.0;
    for (int i = 0; i < ode.n; ++i) A(i, j) = column[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < ode.n; ++i) {
    for (int j = 0; j < ode.n; ++j) A(i, j) += ode.A(i, j);
  }
  return A;
}

SdcSystem sdc_from_burgers(const QuadraticOde& sys) {
  if (sys.n < 1) throw InvalidArgument("sdc_from_burgers: empty system");
  if (!sys.N && !sys.N_apply) {
    throw InvalidArgument("sdc_from_burgers: system has no state-dependent part");
  }
  // Probe linearity of the state-dependent part on random triples:
  // N(a v + b w) z must equal a N(v) z + b N(w) z.
  std::mt19937_64 rng(0x5dc5dc5dull);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    Vector v(static_cast<std::size_t>(sys.n)), w(v), z(v);
    for (int i = 0; i < sys.n; ++i) {
      v[static_cast<std::size_t>(i)] = dist(rng);
      w[static_cast<std::size_t>(i)] = dist(rng);
      z[static_cast<std::size_t>(i)] = dist(rng);
    }
    const double a = dist(rng), b = dist(rng);
    Vector mixed(static_cast<std::size_t>(sys.n));
    for (int i = 0; i < sys.n; ++i) {
      mixed[static_cast<std::size_t>(i)] =
          a * v[static_cast<std::size_t>(i)] + b * w[static_cast<std::size_t>(i)];
    }
    Vector lhs = sys.apply_convection(mixed, z);
    Vector rv = sys.apply_convection(v, z);
    Vector rw = sys.apply_convection(w, z);
    double scale = 1.0;
    for (int i = 0; i < sys.n; ++i) {
      scale = std::max({scale, std::abs(lhs[static_cast<std::size_t>(i)]),
                        std::abs(rv[static_cast<std::size_t>(i)]),
                        std::abs(rw[static_cast<std::size_t>(i)])});
    }
    for (int i = 0; i < sys.n; ++i) {
      double rhs = a * rv[static_cast<std::size_t>(i)] + b * rw[static_cast<std::size_t>(i)];
      if (std::abs(lhs[static_cast<std::size_t>(i)] - rhs) > 1e-12 * scale) {
        throw InvalidArgument(
            "sdc_from_burgers: state-dependent part is not linear in the state");
      }
    }
  }
  SdcSystem sdc;
  sdc.ode = sys;
  sdc.linear = true;
  return sdc;
}

LpvSystem build_vertices(const SdcSystem& sdc, const Polytope& p) {
  if (!sdc.linear) {
    throw InvalidArgument("build_vertices: coefficient map must have a linear state part");
  }
  if (p.vertices.rows != sdc.n()) {
    throw DimensionError("build_vertices: polytope vertices do not match the system dimension");
  }
  LpvSystem lpv;
  lpv.vertices = p.vertices;
  lpv.vertex_matrices.reserve(static_cast<std::size_t>(p.vertices.cols));
  for (int j = 0; j < p.vertices.cols; ++j) {
    lpv.vertex_matrices.push_back(sdc.coefficient(p.vertices.col(j)));
  }
  return lpv;
}

DenseMatrix lpv_coefficient(const LpvSystem& lpv, const Vector& zeta) {
  if (lpv.vertex_matrices.empty()) throw InvalidArgument("lpv_coefficient: no vertex matrices");
  if (zeta.size() != lpv.vertex_matrices.size()) {
    throw DimensionError("lpv_coefficient: coordinate count does not match vertex count");
  }
  check_simplex_coords(zeta);
  const DenseMatrix& first = lpv.vertex_matrices.front();
  DenseMatrix out(first.rows, first.cols);
  for (std::size_t i = 0; i < zeta.size(); ++i) {
    const DenseMatrix& Ai = lpv.vertex_matrices[i];
    const double zi = zeta[i];
    if (zi == 0.0) continue;
    for (std::size_t p = 0; p < out.a.size(); ++p) out.a[p] += zi * Ai.a[p];
  }
  return out;
}

LpvSimResult lpv_simulate(const SdcSystem& sdc, const PaeModel& model, const Vector& v0,
                          double dt, int steps) {
  const int n = sdc.n();
  if (static_cast<int>(v0.size()) != n) {
    throw DimensionError("lpv_simulate: initial state dimension mismatch");
  }
  if (!(dt > 0.0)) throw InvalidArgument("lpv_simulate: dt must be positive");
  if (steps < 1) throw InvalidArgument("lpv_simulate: need at least one step");
  model.validate();
  if (model.n != n) {
    throw DimensionError("lpv_simulate: model dimension does not match the system");
  }
  PaeModel m = model;  // forward passes mutate layer caches

  LpvSimResult out;
  out.reference = integrate(sdc.ode, v0, dt, steps).states;

  // Same factorization as the reference integrator: implicit in the constant
  // part, explicit in the state-dependent part and the forcing.
  DenseMatrix S(n, n);
  if (sdc.ode.M.is_diagonal()) {
    const Vector& d = sdc.ode.M.diag_values();
    for (int i = 0; i < n; ++i) S(i, i) = d[i];
  } else {
    S = sdc.ode.M.dense_values();
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) S(i, j) += dt * sdc.ode.A(i, j);
  }
  DenseMatrix L = cholesky(S);

  out.trajectory = DenseMatrix(n, steps + 1);
  out.times.resize(static_cast<std::size_t>(steps) + 1);
  out.trajectory.set_col(0, v0);
  out.times[0] = 0.0;
  Vector v = v0;
  for (int s = 0; s < steps; ++s) {
    Vector vtilde = reconstruct(m, v);
    Vector rhs = sdc.ode.M.apply(v);
    const Vector conv = sdc.ode.apply_convection(vtilde, v);
    const Vector f = sdc.ode.force_at(s * dt);
    for (int i = 0; i < n; ++i) {
      rhs[static_cast<std::size_t>(i)] +=
          dt * (f[static_cast<std::size_t>(i)] - conv[static_cast<std::size_t>(i)]);
    }
    v = chol_solve(L, rhs);
    for (double x : v) {
      if (!std::isfinite(x)) {
        throw NumericalError("lpv_simulate: non-finite state at step " + std::to_string(s + 1));
      }
    }
    out.trajectory.set_col(s + 1, v);
    out.times[static_cast<std::size_t>(s) + 1] = (s + 1) * dt;
  }
  out.deviation.resize(static_cast<std::size_t>(steps) + 1);
  for (int s = 0; s <= steps; ++s) {
    out.deviation[static_cast<std::size_t>(s)] =
        m_norm(vsub(out.trajectory.col(s), out.reference.col(s)), sdc.ode.M);
  }
  return out;
}

Vector bounding_box_coords(const DenseMatrix& basis, const Vector& v) {
  (void)v;
  throw NotImplementedError(
      "bounding_box_coords: convex coordinates over the 2^" + std::to_string(basis.cols) +
      " bounding-box corners are not implemented; vertex_count(pod, r) covers the counting");
}

}  // namespace polyrom
