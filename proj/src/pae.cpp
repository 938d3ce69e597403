#include "polyrom/pae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <utility>

#include "polyrom/clustering.hpp"
#include "polyrom/errors.hpp"
#include "polyrom/polytope.hpp"

namespace polyrom {

namespace {

constexpr double kSimplexTol = 1e-8;

void check_simplex(const char* name, const Vector& v) {
  if (v.empty()) throw InvalidArgument(std::string(name) + " is empty");
  double sum = 0.0;
  for (double x : v) {
    if (!std::isfinite(x) || x < -kSimplexTol) {
      throw InvalidArgument(std::string(name) + " must lie on the probability simplex");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > kSimplexTol) {
    throw InvalidArgument(std::string(name) + " must lie on the probability simplex");
  }
}

// Stable stream splitting: one base seed, one stream id, splitmix-style mix.
unsigned sub_seed(unsigned seed, unsigned stream) {
  std::uint64_t z = static_cast<std::uint64_t>(seed) * 0x9E3779B97F4A7C15ull +
                    static_cast<std::uint64_t>(stream) * 0xBF58476D1CE4E5B9ull +
                    0x94D049BB133111EBull;
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return static_cast<unsigned>(z & 0xFFFFFFFFull);
}

// Fisher-Yates with explicit draws, so shuffles do not depend on the
// standard library's std::shuffle implementation.
void shuffle_in_place(std::vector<int>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

std::vector<int> iota_indices(int count) {
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

Tensor input_tensor(const GridMap* grid, const Vector& v) {
  if (grid != nullptr) {
    Tensor t({grid->channels, grid->height, grid->width});
    t.data = grid->apply_flat(v);
    return t;
  }
  Tensor t({static_cast<int>(v.size())});
  t.data = v;
  return t;
}

Vector run_encoder(Network& enc, const GridMap* grid, const Vector& v) {
  return enc.forward(input_tensor(grid, v)).data;
}

Vector raw_kron(const Vector& alpha, const Vector& rho) {
  Vector w(alpha.size() * rho.size());
  std::size_t p = 0;
  for (double a : alpha) {
    for (double x : rho) w[p++] = a * x;
  }
  return w;
}

double mean_skipping_nan(const Vector& v, int begin, int end) {
  double sum = 0.0;
  int count = 0;
  for (int i = begin; i < end; ++i) {
    double x = v[static_cast<std::size_t>(i)];
    if (std::isnan(x)) continue;
    sum += x;
    ++count;
  }
  return count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

// Mean M-norm residual of the plain autoencoder v -> Ubar rho over the
// training columns.
double cae_full_loss(Network& enc, const GridMap* grid, const DenseMatrix& Ubar,
                     const SnapshotSet& data, int count) {
  double sum = 0.0;
  for (int t = 0; t < count; ++t) {
    Vector v = data.states.col(t);
    Vector rho = run_encoder(enc, grid, v);
    Vector vt = matvec(Ubar, rho);
    sum += m_norm(vsub(vt, v), data.weight);
  }
  return sum / count;
}

struct JointLoss {
  double rec = 0.0;
  double clt = 0.0;
};

// Full-training-set reconstruction and clustering losses of the assembled
// model; the clustering term averages over every pseudo-labeled snapshot.
JointLoss assembled_full_loss(Network& enc, Network& cnet, const GridMap* grid,
                              const DenseMatrix& U, const SnapshotSet& data, int count,
                              const std::vector<int>& label_row, const DenseMatrix& labels) {
  JointLoss out;
  int labeled = 0;
  for (int t = 0; t < count; ++t) {
    Vector v = data.states.col(t);
    Vector rho = run_encoder(enc, grid, v);
    Vector alpha = cnet.forward_vec(rho);
    Vector vt = matvec(U, raw_kron(alpha, rho));
    out.rec += m_norm(vsub(vt, v), data.weight);
    int row = label_row[static_cast<std::size_t>(t)];
    if (row >= 0) {
      double ce = 0.0;
      for (int i = 0; i < labels.cols; ++i) {
        double l = labels(row, i);
        if (l > 0.0) ce -= l * std::log(std::max(alpha[static_cast<std::size_t>(i)], 1e-12));
      }
      out.clt += ce;
      ++labeled;
    }
  }
  out.rec /= count;
  if (labeled > 0) out.clt /= labeled;
  return out;
}

// One sample of the joint objective. Runs the assembled forward pass, then
// accumulates parameter gradients into the encoder and cluster-net grad
// buffers and into gradU. rec_scale multiplies the reconstruction gradient
// and ce_scale the label gradient, so callers bake the batch and
// labeled-count normalization into the accumulation. Returns the M-norm
// residual and the cross entropy of the label (zero when label is null).
std::pair<double, double> joint_sample_backward(Network& enc, Network& cnet, const GridMap* grid,
                                                const DenseMatrix& U, const SpdWeight& M,
                                                const Vector& v, const double* label, int k, int r,
                                                double rec_scale, double ce_scale,
                                                DenseMatrix& gradU) {
  Vector rho = run_encoder(enc, grid, v);
  Vector alpha = cnet.forward_vec(rho);
  Vector w = raw_kron(alpha, rho);
  Vector resid = vsub(matvec(U, w), v);
  double err = m_norm(resid, M);
  Vector g_alpha(static_cast<std::size_t>(k), 0.0);
  Vector g_rho(static_cast<std::size_t>(r), 0.0);
  if (err > 0.0 && rec_scale != 0.0) {
    Vector gvt = M.apply(resid);
    double scale = rec_scale / err;
    for (double& g : gvt) g *= scale;
    for (int i = 0; i < U.rows; ++i) {
      double gi = gvt[static_cast<std::size_t>(i)];
      if (gi == 0.0) continue;
      for (int j = 0; j < U.cols; ++j) gradU(i, j) += gi * w[static_cast<std::size_t>(j)];
    }
    Vector gw = matvec_transposed(U, gvt);
    for (int c = 0; c < k; ++c) {
      for (int j = 0; j < r; ++j) {
        double g = gw[static_cast<std::size_t>(c * r + j)];
        g_alpha[static_cast<std::size_t>(c)] += g * rho[static_cast<std::size_t>(j)];
        g_rho[static_cast<std::size_t>(j)] += g * alpha[static_cast<std::size_t>(c)];
      }
    }
  }
  double ce = 0.0;
  if (label != nullptr) {
    for (int c = 0; c < k; ++c) {
      double l = label[c];
      if (l <= 0.0) continue;
      double a = alpha[static_cast<std::size_t>(c)];
      ce -= l * std::log(std::max(a, 1e-12));
      if (a > 1e-12 && ce_scale != 0.0) g_alpha[static_cast<std::size_t>(c)] -= ce_scale * l / a;
    }
  }
  Vector g_rho_c = cnet.backward_vec(g_alpha, true);
  axpy(1.0, g_rho_c, g_rho);
  enc.backward_vec(g_rho, true);
  return {err, ce};
}

void require_finite_epoch_loss(double loss, int step, int epoch) {
  if (!std::isfinite(loss)) {
    throw NumericalError("training diverged: non-finite loss at step " + std::to_string(step) +
                         ", epoch " + std::to_string(epoch));
  }
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::pod: return "pod";
    case ModelKind::cae: return "cae";
    case ModelKind::pae: return "pae";
  }
  throw InvalidArgument("unknown model kind");
}

ModelKind model_kind_from(const std::string& name) {
  if (name == "pod") return ModelKind::pod;
  if (name == "cae") return ModelKind::cae;
  if (name == "pae") return ModelKind::pae;
  throw InvalidArgument("unknown model kind '" + name + "' (expected pod, cae, or pae)");
}

std::size_t vertex_count(ModelKind kind, int r, int k) {
  if (r < 1) throw InvalidArgument("vertex_count: r must be at least 1");
  if (k < 1) throw InvalidArgument("vertex_count: k must be at least 1");
  switch (kind) {
    case ModelKind::pod:
      if (r > 62) throw InvalidArgument("vertex_count: 2^r overflows for r > 62");
      return static_cast<std::size_t>(1) << r;
    case ModelKind::cae:
      return static_cast<std::size_t>(r);
    case ModelKind::pae:
      return static_cast<std::size_t>(k) * static_cast<std::size_t>(r);
  }
  throw InvalidArgument("unknown model kind");
}

PodModel fit_pod(const SnapshotSet& data, int r) {
  data.validate();
  if (r < 1 || r > data.dim()) throw InvalidArgument("fit_pod: r out of range");
  DenseMatrix train(data.dim(), data.split);
  for (int t = 0; t < data.split; ++t) train.set_col(t, data.states.col(t));
  PodModel model;
  model.basis = pod_basis(train, data.weight, r);
  return model;
}

void PaeModel::validate() const {
  if (encoder.empty() || clusternet.empty() || vertices.a.empty()) {
    throw InvalidArgument("model is unfinished: encoder, clustering net, and vertex matrix "
                          "must all be initialized");
  }
  if (n < 1 || r < 1 || k < 1) throw InvalidArgument("model dimensions must be positive");
  if (vertices.rows != n || vertices.cols != k * r) {
    throw DimensionError("vertex matrix must be n x (k*r)");
  }
  if (grid && grid->op.cols != n) {
    throw DimensionError("grid map input dimension does not match the state dimension");
  }
  for (double x : vertices.a) {
    if (!std::isfinite(x)) throw NumericalError("vertex matrix contains non-finite entries");
  }
}

Vector encode(PaeModel& model, const Vector& v) {
  model.validate();
  if (static_cast<int>(v.size()) != model.n) {
    throw DimensionError("encode: state vector has wrong dimension");
  }
  return run_encoder(model.encoder, model.grid ? &*model.grid : nullptr, v);
}

Vector cluster_coeffs(PaeModel& model, const Vector& rho) {
  model.validate();
  if (static_cast<int>(rho.size()) != model.r) {
    throw DimensionError("cluster_coeffs: latent vector has wrong dimension");
  }
  check_simplex("cluster_coeffs: rho", rho);
  return model.clusternet.forward_vec(rho);
}

Vector kron_coeffs(const Vector& alpha, const Vector& rho) {
  check_simplex("kron_coeffs: alpha", alpha);
  check_simplex("kron_coeffs: rho", rho);
  return raw_kron(alpha, rho);
}

Vector decode(PaeModel& model, const Vector& rho) {
  Vector alpha = cluster_coeffs(model, rho);
  return matvec(model.vertices, kron_coeffs(alpha, rho));
}

Vector reconstruct(PaeModel& model, const Vector& v) {
  Vector rho = encode(model, v);
  Vector alpha = model.clusternet.forward_vec(rho);
  return matvec(model.vertices, raw_kron(alpha, rho));
}

Vector reconstruction_jvp(PaeModel& model, const Vector& v, const Vector& vdot) {
  model.validate();
  if (v.size() != vdot.size() || static_cast<int>(v.size()) != model.n) {
    throw DimensionError("reconstruction_jvp: dimension mismatch");
  }
  const GridMap* grid = model.grid ? &*model.grid : nullptr;
  Vector rho = run_encoder(model.encoder, grid, v);
  Vector alpha = model.clusternet.forward_vec(rho);
  Vector din = grid != nullptr ? grid->apply_flat(vdot) : vdot;

  // One vector-Jacobian product per output component; the caches from the
  // single forward pass stay valid across repeated backward calls.
  Vector drho(static_cast<std::size_t>(model.r), 0.0);
  for (int j = 0; j < model.r; ++j) {
    Vector unit(static_cast<std::size_t>(model.r), 0.0);
    unit[static_cast<std::size_t>(j)] = 1.0;
    Vector g = model.encoder.backward_vec(unit, false);
    drho[static_cast<std::size_t>(j)] = dot(g, din);
  }
  Vector dalpha(static_cast<std::size_t>(model.k), 0.0);
  for (int i = 0; i < model.k; ++i) {
    Vector unit(static_cast<std::size_t>(model.k), 0.0);
    unit[static_cast<std::size_t>(i)] = 1.0;
    Vector g = model.clusternet.backward_vec(unit, false);
    dalpha[static_cast<std::size_t>(i)] = dot(g, drho);
  }
  // d(alpha (x) rho) = dalpha (x) rho + alpha (x) drho
  Vector dw(static_cast<std::size_t>(model.k) * model.r);
  std::size_t p = 0;
  for (int i = 0; i < model.k; ++i) {
    for (int j = 0; j < model.r; ++j) {
      dw[p++] = dalpha[static_cast<std::size_t>(i)] * rho[static_cast<std::size_t>(j)] +
                alpha[static_cast<std::size_t>(i)] * drho[static_cast<std::size_t>(j)];
    }
  }
  return matvec(model.vertices, dw);
}

double loss_rec(PaeModel& model, const std::vector<Vector>& batch, const SpdWeight& M) {
  if (batch.empty()) throw InvalidArgument("loss_rec: empty batch");
  double sum = 0.0;
  for (const Vector& v : batch) {
    Vector vt = reconstruct(model, v);
    sum += m_norm(vsub(vt, v), M);
  }
  return sum / static_cast<double>(batch.size());
}

double loss_joint(PaeModel& model, const std::vector<Vector>& batch, const SpdWeight& M,
                  const BatchLabels& labels, double lambda) {
  if (batch.empty()) throw InvalidArgument("loss_joint: empty batch");
  if (lambda < 0.0) throw InvalidArgument("loss_joint: lambda must be nonnegative");
  if (labels.positions.size() != static_cast<std::size_t>(std::max(labels.onehot.rows, 0)) &&
      !(labels.positions.empty() && labels.onehot.rows == 0)) {
    throw DimensionError("loss_joint: one label row per labeled position required");
  }
  std::vector<int> row_of(batch.size(), -1);
  for (std::size_t p = 0; p < labels.positions.size(); ++p) {
    int pos = labels.positions[p];
    if (pos < 0 || pos >= static_cast<int>(batch.size())) {
      throw InvalidArgument("loss_joint: label position outside the batch");
    }
    if (labels.onehot.cols != model.k) {
      throw DimensionError("loss_joint: label width must equal the cluster count");
    }
    row_of[static_cast<std::size_t>(pos)] = static_cast<int>(p);
  }
  double rec = 0.0;
  double clt = 0.0;
  int labeled = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Vector rho = encode(model, batch[b]);
    Vector alpha = model.clusternet.forward_vec(rho);
    Vector vt = matvec(model.vertices, raw_kron(alpha, rho));
    rec += m_norm(vsub(vt, batch[b]), M);
    int row = row_of[b];
    if (row >= 0) {
      Vector label(static_cast<std::size_t>(model.k));
      for (int i = 0; i < model.k; ++i) label[static_cast<std::size_t>(i)] = labels.onehot(row, i);
      clt += cross_entropy(label, alpha);
      ++labeled;
    }
  }
  rec /= static_cast<double>(batch.size());
  if (labeled > 0) clt /= labeled;
  return rec + lambda * clt;
}

JointGrads joint_loss_gradients(PaeModel& model, const std::vector<Vector>& batch,
                                const SpdWeight& M, const BatchLabels& labels, double lambda) {
  if (batch.empty()) throw InvalidArgument("joint_loss_gradients: empty batch");
  if (lambda < 0.0) throw InvalidArgument("joint_loss_gradients: lambda must be nonnegative");
  if (labels.positions.size() != static_cast<std::size_t>(std::max(labels.onehot.rows, 0)) &&
      !(labels.positions.empty() && labels.onehot.rows == 0)) {
    throw DimensionError("joint_loss_gradients: one label row per labeled position required");
  }
  std::vector<int> row_of(batch.size(), -1);
  for (std::size_t p = 0; p < labels.positions.size(); ++p) {
    int pos = labels.positions[p];
    if (pos < 0 || pos >= static_cast<int>(batch.size())) {
      throw InvalidArgument("joint_loss_gradients: label position outside the batch");
    }
    if (labels.onehot.cols != model.k) {
      throw DimensionError("joint_loss_gradients: label width must equal the cluster count");
    }
    row_of[static_cast<std::size_t>(pos)] = static_cast<int>(p);
  }
  int labeled = 0;
  for (int row : row_of) {
    if (row >= 0) ++labeled;
  }
  const GridMap* grid = model.grid ? &*model.grid : nullptr;
  model.encoder.zero_grads();
  model.clusternet.zero_grads();
  JointGrads out;
  out.g_vertices = DenseMatrix(model.vertices.rows, model.vertices.cols);
  double rec_scale = 1.0 / static_cast<double>(batch.size());
  double ce_scale = (labeled > 0 && lambda > 0.0) ? lambda / labeled : 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    int row = row_of[b];
    const double* label =
        row >= 0
            ? &labels.onehot.a[static_cast<std::size_t>(row) * static_cast<std::size_t>(model.k)]
            : nullptr;
    auto [err, ce] = joint_sample_backward(model.encoder, model.clusternet, grid, model.vertices,
                                           M, batch[b], label, model.k, model.r, rec_scale,
                                           ce_scale, out.g_vertices);
    out.rec += err;
    out.clt += ce;
  }
  out.rec /= static_cast<double>(batch.size());
  if (labeled > 0) out.clt /= labeled;
  out.loss = out.rec + lambda * out.clt;
  out.g_encoder = model.encoder.flatten_grads();
  out.g_clusternet = model.clusternet.flatten_grads();
  return out;
}

void TrainConfig::validate() const {
  if (epochs1 < 1 || epochs2 < 1 || epochs3 < 1) {
    throw InvalidArgument("TrainConfig: epoch counts must be positive");
  }
  if (batch_size < 1) throw InvalidArgument("TrainConfig: batch size must be positive");
  if (!(lr > 0.0)) throw InvalidArgument("TrainConfig: learning rate must be positive");
  if (lambda < 0.0) throw InvalidArgument("TrainConfig: lambda must be nonnegative");
}

TrainResult train_three_step(const SnapshotSet& data, const TrainConfig& cfg, int k, int r,
                             const std::optional<GridMap>& grid) {
  cfg.validate();
  data.validate();
  if (k < 1) throw InvalidArgument("train_three_step: k must be at least 1");
  if (r < 1) throw InvalidArgument("train_three_step: r must be at least 1");
  if (data.split < 1) throw InvalidArgument("train_three_step: no training snapshots");
  const int n = data.dim();
  const int train_count = data.split;
  const GridMap* gp = grid ? &*grid : nullptr;
  if (gp != nullptr) {
    gp->validate();
    if (gp->op.cols != n) {
      throw DimensionError("train_three_step: grid map does not match the state dimension");
    }
  }

  TrainResult out;
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};

  // ---- step 1: autoencoder with a single decoder matrix -------------------
  Network encoder = gp != nullptr
                        ? make_conv_encoder(gp->channels, gp->height, gp->width, r,
                                            sub_seed(cfg.seed, 1))
                        : make_mlp_encoder(n, r, sub_seed(cfg.seed, 1));
  // Decoder columns start as evenly spaced training snapshots, so the very
  // first reconstructions are already convex combinations of real states.
  DenseMatrix Ubar(n, r);
  for (int j = 0; j < r; ++j) {
    int src = r == 1 ? 0
                     : static_cast<int>(std::lround(static_cast<double>(j) * (train_count - 1) /
                                                    (r - 1)));
    Ubar.set_col(j, data.states.col(src));
  }

  std::mt19937_64 shuffle1(sub_seed(cfg.seed, 2));
  AdamState enc_state, dec_state;
  std::vector<int> order = iota_indices(train_count);
  DenseMatrix gradU(n, r);
  for (int epoch = 1; epoch <= cfg.epochs1; ++epoch) {
    shuffle_in_place(order, shuffle1);
    for (int start = 0; start < train_count; start += cfg.batch_size) {
      int stop = std::min(start + cfg.batch_size, train_count);
      double bsize = stop - start;
      encoder.zero_grads();
      std::fill(gradU.a.begin(), gradU.a.end(), 0.0);
      for (int b = start; b < stop; ++b) {
        Vector v = data.states.col(order[static_cast<std::size_t>(b)]);
        Vector rho = run_encoder(encoder, gp, v);
        Vector vt = matvec(Ubar, rho);
        Vector resid = vsub(vt, v);
        double err = m_norm(resid, data.weight);
        if (err <= 0.0) continue;  // flat spot of the norm, zero subgradient
        Vector gvt = data.weight.apply(resid);
        double scale = 1.0 / (err * bsize);
        for (double& g : gvt) g *= scale;
        for (int i = 0; i < n; ++i) {
          double gi = gvt[static_cast<std::size_t>(i)];
          if (gi == 0.0) continue;
          for (int j = 0; j < r; ++j) gradU(i, j) += gi * rho[static_cast<std::size_t>(j)];
        }
        encoder.backward_vec(matvec_transposed(Ubar, gvt), true);
      }
      Vector flat = encoder.flatten_params();
      adam_step(flat, encoder.flatten_grads(), enc_state, adam);
      encoder.load_params(flat);
      adam_step(Ubar.a, gradU.a, dec_state, adam);
    }
    double loss = cae_full_loss(encoder, gp, Ubar, data, train_count);
    require_finite_epoch_loss(loss, 1, epoch);
    out.history1.push_back(loss);
  }
  out.step1_loss = out.history1.back();
  Network encoder_step1 = encoder;  // kept for the embedded fallback checkpoint

  // ---- step 2: cluster the frozen latents, fit one decoder per cluster ----
  DenseMatrix latents(train_count, r);
  for (int t = 0; t < train_count; ++t) {
    Vector rho = run_encoder(encoder, gp, data.states.col(t));
    for (int j = 0; j < r; ++j) latents(t, j) = rho[static_cast<std::size_t>(j)];
  }
  KmeansResult km = kmeans(latents, k, sub_seed(cfg.seed, 3));
  PseudoLabelSet plabels = select_pseudo_labels(latents, km);
  out.warnings.insert(out.warnings.end(), plabels.warnings.begin(), plabels.warnings.end());

  std::vector<std::vector<int>> members(static_cast<std::size_t>(k));
  for (std::size_t p = 0; p < plabels.indices.size(); ++p) {
    members[static_cast<std::size_t>(plabels.cluster_of[p])].push_back(plabels.indices[p]);
  }

  std::vector<DenseMatrix> decoders(static_cast<std::size_t>(k), Ubar);
  std::vector<AdamState> dec_states(static_cast<std::size_t>(k));
  std::mt19937_64 shuffle2(sub_seed(cfg.seed, 6));
  auto latent_row = [&](int t) {
    Vector rho(static_cast<std::size_t>(r));
    for (int j = 0; j < r; ++j) rho[static_cast<std::size_t>(j)] = latents(t, j);
    return rho;
  };
  for (int epoch = 1; epoch <= cfg.epochs2; ++epoch) {
    for (int c = 0; c < k; ++c) {
      auto& pts = members[static_cast<std::size_t>(c)];
      if (pts.empty()) continue;
      shuffle_in_place(pts, shuffle2);
      DenseMatrix& U = decoders[static_cast<std::size_t>(c)];
      int count = static_cast<int>(pts.size());
      for (int start = 0; start < count; start += cfg.batch_size) {
        int stop = std::min(start + cfg.batch_size, count);
        double bsize = stop - start;
        std::fill(gradU.a.begin(), gradU.a.end(), 0.0);
        for (int b = start; b < stop; ++b) {
          int t = pts[static_cast<std::size_t>(b)];
          Vector v = data.states.col(t);
          Vector rho = latent_row(t);
          Vector resid = vsub(matvec(U, rho), v);
          double err = m_norm(resid, data.weight);
          if (err <= 0.0) continue;
          Vector gvt = data.weight.apply(resid);
          double scale = 1.0 / (err * bsize);
          for (int i = 0; i < n; ++i) {
            double gi = gvt[static_cast<std::size_t>(i)] * scale;
            if (gi == 0.0) continue;
            for (int j = 0; j < r; ++j) gradU(i, j) += gi * rho[static_cast<std::size_t>(j)];
          }
        }
        adam_step(U.a, gradU.a, dec_states[static_cast<std::size_t>(c)], adam);
      }
    }
    double loss = 0.0;
    int active = 0;
    for (int c = 0; c < k; ++c) {
      const auto& pts = members[static_cast<std::size_t>(c)];
      if (pts.empty()) continue;
      const DenseMatrix& U = decoders[static_cast<std::size_t>(c)];
      double s = 0.0;
      for (int t : pts) s += m_norm(vsub(matvec(U, latent_row(t)), data.states.col(t)), data.weight);
      loss += s / static_cast<double>(pts.size());
      ++active;
    }
    loss = active > 0 ? loss / active : 0.0;
    require_finite_epoch_loss(loss, 2, epoch);
    out.history2.push_back(loss);
  }
  if (plabels.indices.empty()) {
    out.warnings.push_back("no pseudo-labels selected; step-2 decoders kept their warm start "
                           "and the clustering loss has no labeled points");
  }

  // ---- step 3: assemble U, attach the clustering net, fine-tune jointly ---
  const int m = k * r;
  DenseMatrix U(n, m);
  for (int c = 0; c < k; ++c) {
    const DenseMatrix& D = decoders[static_cast<std::size_t>(c)];
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < r; ++j) U(i, c * r + j) = D(i, j);
    }
  }
  Network clusternet = make_cluster_net(r, k, sub_seed(cfg.seed, 4));

  std::vector<int> label_row(static_cast<std::size_t>(train_count), -1);
  for (std::size_t p = 0; p < plabels.indices.size(); ++p) {
    label_row[static_cast<std::size_t>(plabels.indices[p])] = static_cast<int>(p);
  }

  // Fallback checkpoint: the step-1 model embedded as U = [Ubar ... Ubar].
  DenseMatrix U_embedded(n, m);
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < r; ++j) U_embedded(i, c * r + j) = Ubar(i, j);
    }
  }
  Network clusternet_init = clusternet;
  double best_rec = assembled_full_loss(encoder_step1, clusternet_init, gp, U_embedded, data,
                                        train_count, label_row, plabels.labels)
                        .rec;
  Network best_encoder = encoder_step1;
  Network best_clusternet = clusternet_init;
  DenseMatrix best_U = U_embedded;

  std::mt19937_64 shuffle3(sub_seed(cfg.seed, 5));
  AdamState enc_state3, dec_state3, clu_state3;
  DenseMatrix gradU3(n, m);
  for (int epoch = 1; epoch <= cfg.epochs3; ++epoch) {
    shuffle_in_place(order, shuffle3);
    for (int start = 0; start < train_count; start += cfg.batch_size) {
      int stop = std::min(start + cfg.batch_size, train_count);
      double bsize = stop - start;
      int labeled_in_batch = 0;
      for (int b = start; b < stop; ++b) {
        if (label_row[static_cast<std::size_t>(order[static_cast<std::size_t>(b)])] >= 0) {
          ++labeled_in_batch;
        }
      }
      encoder.zero_grads();
      clusternet.zero_grads();
      std::fill(gradU3.a.begin(), gradU3.a.end(), 0.0);
      double lscale =
          (cfg.lambda > 0.0 && labeled_in_batch > 0) ? cfg.lambda / labeled_in_batch : 0.0;
      for (int b = start; b < stop; ++b) {
        int t = order[static_cast<std::size_t>(b)];
        int row = label_row[static_cast<std::size_t>(t)];
        const double* label =
            (row >= 0 && lscale != 0.0)
                ? &plabels.labels.a[static_cast<std::size_t>(row) * static_cast<std::size_t>(k)]
                : nullptr;
        joint_sample_backward(encoder, clusternet, gp, U, data.weight, data.states.col(t), label,
                              k, r, 1.0 / bsize, lscale, gradU3);
      }
      Vector flat = encoder.flatten_params();
      adam_step(flat, encoder.flatten_grads(), enc_state3, adam);
      encoder.load_params(flat);
      Vector cflat = clusternet.flatten_params();
      adam_step(cflat, clusternet.flatten_grads(), clu_state3, adam);
      clusternet.load_params(cflat);
      adam_step(U.a, gradU3.a, dec_state3, adam);
    }
    JointLoss loss = assembled_full_loss(encoder, clusternet, gp, U, data, train_count,
                                         label_row, plabels.labels);
    double joint = loss.rec + cfg.lambda * loss.clt;
    require_finite_epoch_loss(joint, 3, epoch);
    out.history3.push_back(joint);
    if (loss.rec < best_rec) {
      best_rec = loss.rec;
      best_encoder = encoder;
      best_clusternet = clusternet;
      best_U = U;
    }
  }
  if (best_U.a == U_embedded.a && cfg.epochs3 > 0) {
    out.warnings.push_back("step 3 never improved on the embedded step-1 model; "
                           "returning the step-1 checkpoint");
  }

  out.model.n = n;
  out.model.r = r;
  out.model.k = k;
  out.model.grid = grid;
  out.model.encoder = std::move(best_encoder);
  out.model.clusternet = std::move(best_clusternet);
  out.model.vertices = std::move(best_U);
  out.final_loss = best_rec;
  return out;
}

namespace {

void snapshot_worker(const PaeModel& proto, const SnapshotSet& data, double tol, int begin,
                     int end, SnapshotErrors& out) {
  PaeModel model = proto;  // private copy; forward passes mutate layer caches
  Polytope poly{model.vertices, data.weight};
  PolytopeErrorSolver solver(poly);
  for (int t = begin; t < end; ++t) {
    Vector v = data.states.col(t);
    Vector rho = encode(model, v);
    Vector alpha = model.clusternet.forward_vec(rho);
    Vector w = raw_kron(alpha, rho);
    Vector vt = matvec(model.vertices, w);
    double vn = m_norm(v, data.weight);
    double rec = m_norm(vsub(vt, v), data.weight);
    BestApprox best = solver.solve(v, tol, &w);
    out.vnorm[static_cast<std::size_t>(t)] = vn;
    out.rec_abs[static_cast<std::size_t>(t)] = rec;
    out.poly_abs[static_cast<std::size_t>(t)] = best.error;
    if (vn > 0.0) {
      out.rec_rel[static_cast<std::size_t>(t)] = rec / vn;
      out.poly_rel[static_cast<std::size_t>(t)] = best.error / vn;
    } else {
      out.rec_rel[static_cast<std::size_t>(t)] = std::numeric_limits<double>::quiet_NaN();
      out.poly_rel[static_cast<std::size_t>(t)] = std::numeric_limits<double>::quiet_NaN();
    }
    for (int j = 0; j < model.r; ++j) {
      out.latents(j, t) = rho[static_cast<std::size_t>(j)];
    }
  }
}

}  // namespace

SnapshotErrors per_snapshot_errors(const PaeModel& model, const SnapshotSet& data, double tol,
                                   int threads) {
  model.validate();
  data.validate();
  if (model.n != data.dim()) {
    throw DimensionError("per_snapshot_errors: model and data dimensions differ");
  }
  if (!(tol > 0.0)) throw InvalidArgument("per_snapshot_errors: tolerance must be positive");
  const int total = data.count();
  SnapshotErrors out;
  out.rec_abs.assign(static_cast<std::size_t>(total), 0.0);
  out.rec_rel.assign(static_cast<std::size_t>(total), 0.0);
  out.poly_abs.assign(static_cast<std::size_t>(total), 0.0);
  out.poly_rel.assign(static_cast<std::size_t>(total), 0.0);
  out.vnorm.assign(static_cast<std::size_t>(total), 0.0);
  out.latents = DenseMatrix(model.r, total);

  int workers = std::max(1, std::min(threads, total));
  if (workers == 1) {
    snapshot_worker(model, data, tol, 0, total, out);
  } else {
    std::vector<std::thread> pool;
    int chunk = (total + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      int begin = w * chunk;
      int end = std::min(begin + chunk, total);
      if (begin >= end) break;
      pool.emplace_back(snapshot_worker, std::cref(model), std::cref(data), tol, begin, end,
                        std::ref(out));
    }
    for (auto& th : pool) th.join();
  }
  for (int t = 0; t < total; ++t) {
    if (out.vnorm[static_cast<std::size_t>(t)] <= 0.0) {
      out.warnings.push_back("snapshot " + std::to_string(t) +
                             " has zero norm; relative errors skipped");
    }
  }
  return out;
}

SnapshotErrors pod_snapshot_errors(const PodModel& model, const SnapshotSet& data) {
  data.validate();
  if (model.basis.rows != data.dim()) {
    throw DimensionError("pod_snapshot_errors: basis and data dimensions differ");
  }
  const int total = data.count();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  SnapshotErrors out;
  out.rec_abs.assign(static_cast<std::size_t>(total), 0.0);
  out.rec_rel.assign(static_cast<std::size_t>(total), 0.0);
  out.poly_abs.assign(static_cast<std::size_t>(total), nan);
  out.poly_rel.assign(static_cast<std::size_t>(total), nan);
  out.vnorm.assign(static_cast<std::size_t>(total), 0.0);
  out.latents = DenseMatrix(model.r(), total);
  for (int t = 0; t < total; ++t) {
    Vector v = data.states.col(t);
    PodProjection proj = pod_project_reconstruct(model.basis, data.weight, v);
    double vn = m_norm(v, data.weight);
    double rec = m_norm(vsub(proj.reconstruction, v), data.weight);
    out.vnorm[static_cast<std::size_t>(t)] = vn;
    out.rec_abs[static_cast<std::size_t>(t)] = rec;
    out.rec_rel[static_cast<std::size_t>(t)] = vn > 0.0 ? rec / vn : nan;
    if (vn <= 0.0) {
      out.warnings.push_back("snapshot " + std::to_string(t) +
                             " has zero norm; relative errors skipped");
    }
    for (int j = 0; j < model.r(); ++j) {
      out.latents(j, t) = proj.coords[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

EvalReport evaluate(const PaeModel& model, const SnapshotSet& data, double tol, int threads) {
  SnapshotErrors errs = per_snapshot_errors(model, data, tol, threads);
  EvalReport rep;
  rep.train_error = mean_skipping_nan(errs.rec_rel, 0, data.split);
  rep.test_error = mean_skipping_nan(errs.rec_rel, data.split, data.count());
  rep.poly_error = mean_skipping_nan(errs.poly_rel, 0, data.count());
  rep.activation = activation_rates(errs.latents);
  rep.encoder_params = model.encoder.param_count();
  rep.decoder_params = static_cast<std::size_t>(model.n) * model.k * model.r +
                       (model.k > 1 ? model.clusternet.param_count() : 0);
  rep.vertex_total = vertex_count(model.kind(), model.r, model.k);
  rep.warnings = errs.warnings;
  return rep;
}

EvalReport evaluate_pod(const PodModel& model, const SnapshotSet& data) {
  SnapshotErrors errs = pod_snapshot_errors(model, data);
  EvalReport rep;
  rep.train_error = mean_skipping_nan(errs.rec_rel, 0, data.split);
  rep.test_error = mean_skipping_nan(errs.rec_rel, data.split, data.count());
  rep.poly_error = std::numeric_limits<double>::quiet_NaN();
  rep.encoder_params = static_cast<std::size_t>(model.n()) * model.r();
  rep.decoder_params = rep.encoder_params;
  rep.vertex_total = vertex_count(ModelKind::pod, model.r());
  rep.warnings = errs.warnings;
  return rep;
}

}  // namespace polyrom
