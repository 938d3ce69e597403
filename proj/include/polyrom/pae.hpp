#ifndef POLYROM_PAE_HPP
#define POLYROM_PAE_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "polyrom/datagen.hpp"
#include "polyrom/linalg.hpp"
#include "polyrom/netcore.hpp"

namespace polyrom {

enum class ModelKind { pod, cae, pae };

std::string to_string(ModelKind kind);
ModelKind model_kind_from(const std::string& name);

// Number R of vertices spanning the reduced set: a POD basis spans a
// bounding box with 2^r corners, a CAE decoder a simplex on r vertices,
// a PAE decoder k*r vertices.
std::size_t vertex_count(ModelKind kind, int r, int k = 1);

// Linear reduced model with an M-orthonormal basis; reconstruction is the
// M-orthogonal projection V V^T M v.
struct PodModel {
  DenseMatrix basis;  // n x r

  int n() const { return basis.rows; }
  int r() const { return basis.cols; }
};

// POD basis fitted on the training half of the snapshot set.
PodModel fit_pod(const SnapshotSet& data, int r);

// Encoder -> clustering net -> vertex matrix. The latent rho and the cluster
// weights alpha both live on probability simplices, so the reconstruction
// U (alpha (x) rho) is a convex combination of the columns of U. k == 1 makes
// the model a plain convolutional/MLP autoencoder with a simplex latent.
struct PaeModel {
  int n = 0;  // full state dimension
  int r = 0;  // latent dimension
  int k = 1;  // clusters
  std::optional<GridMap> grid;  // interpolation onto the encoder grid, if any
  Network encoder;              // state (or grid image) -> r-simplex
  Network clusternet;           // r-simplex -> k-simplex
  DenseMatrix vertices;         // n x (k*r), one decoder block per cluster

  ModelKind kind() const { return k == 1 ? ModelKind::cae : ModelKind::pae; }
  void validate() const;
};

// rho = encoder(I_C v). Throws on an unfinished model or dimension mismatch.
Vector encode(PaeModel& model, const Vector& v);

// alpha = clusternet(rho); rho must lie on the simplex.
Vector cluster_coeffs(PaeModel& model, const Vector& rho);

// Blockwise Kronecker product (alpha_1 rho, ..., alpha_k rho). Both inputs
// must lie on their simplices; the result lies on the (k*r)-simplex.
Vector kron_coeffs(const Vector& alpha, const Vector& rho);

// v~ = U (alpha (x) rho); always inside the polytope spanned by U's columns.
Vector decode(PaeModel& model, const Vector& rho);

// decode(encode(v)) convenience.
Vector reconstruct(PaeModel& model, const Vector& v);

// Directional derivative d/dt decode(encode(v + t vdot)) at t = 0, assembled
// from encoder/clusternet Jacobian rows (one vector-Jacobian product per
// latent and cluster component).
Vector reconstruction_jvp(PaeModel& model, const Vector& v, const Vector& vdot);

// Mean M-norm reconstruction residual over the batch.
double loss_rec(PaeModel& model, const std::vector<Vector>& batch, const SpdWeight& M);

// One-hot cluster labels attached to a subset of batch positions.
struct BatchLabels {
  std::vector<int> positions;  // indices into the batch
  DenseMatrix onehot;          // one row per labeled position, k columns
};

// loss_rec plus lambda times the mean cross entropy between cluster weights
// and the labels; the cross-entropy term vanishes when no position is
// labeled.
double loss_joint(PaeModel& model, const std::vector<Vector>& batch, const SpdWeight& M,
                  const BatchLabels& labels, double lambda);

// Joint loss over a batch together with its gradient, split by parameter
// group. g_encoder and g_clusternet follow the flatten_params ordering of the
// respective networks; g_vertices matches the layout of model.vertices. This
// is the same accumulation the fine-tune loop applies between optimizer
// steps, exposed so the assembled gradient can be checked independently.
struct JointGrads {
  double loss = 0.0;
  double rec = 0.0;  // mean M-norm residual
  double clt = 0.0;  // mean cross entropy over labeled positions
  Vector g_encoder;
  Vector g_clusternet;
  DenseMatrix g_vertices;
};

JointGrads joint_loss_gradients(PaeModel& model, const std::vector<Vector>& batch,
                                const SpdWeight& M, const BatchLabels& labels, double lambda);

struct TrainConfig {
  int epochs1 = 200;  // autoencoder pretraining
  int epochs2 = 100;  // per-cluster decoder fitting
  int epochs3 = 200;  // joint fine-tune
  int batch_size = 64;
  double lr = 1e-4;
  double lambda = 1e-4;  // clustering-loss weight
  unsigned seed = 0;

  void validate() const;
};

struct TrainResult {
  PaeModel model;
  Vector history1;  // full-training-set reconstruction loss per epoch
  Vector history2;  // mean per-cluster decoder loss per epoch
  Vector history3;  // full-training-set joint loss per epoch
  double step1_loss = 0.0;  // history1 back, kept for convenience
  double final_loss = 0.0;  // full-train reconstruction loss of the returned model
  std::vector<std::string> warnings;
};

// Three-step fit: (1) train encoder plus a single n x r decoder matrix;
// (2) freeze the encoder, k-means the training latents, keep the points
// strictly inside each cluster's mean-distance radius as pseudo-labeled,
// and fit one decoder per cluster on its selected points, warm-started from
// the step-1 matrix; (3) stack the decoders into U, attach a fresh
// clustering net, and fine-tune everything under the joint loss.
//
// The returned parameters are the best full-training-loss checkpoint seen
// during step 3, including the step-1 model embedded as U = [Ubar ... Ubar]
// (which reproduces the step-1 reconstruction for any cluster weights, since
// they sum to one). A non-finite epoch loss raises an error naming the step
// and epoch.
TrainResult train_three_step(const SnapshotSet& data, const TrainConfig& cfg, int k, int r,
                             const std::optional<GridMap>& grid = std::nullopt);

// Per-snapshot error decomposition; relative entries are NaN for zero-norm
// snapshots (skipped from averages, with a warning).
struct SnapshotErrors {
  Vector rec_abs;    // |v - decode(encode(v))|_M
  Vector rec_rel;    // rec_abs / |v|_M
  Vector poly_abs;   // distance from v to the decoder polytope
  Vector poly_rel;   // poly_abs / |v|_M
  Vector vnorm;      // |v|_M
  DenseMatrix latents;  // r x T, one latent column per snapshot
  std::vector<std::string> warnings;
};

SnapshotErrors per_snapshot_errors(const PaeModel& model, const SnapshotSet& data,
                                   double tol = 1e-9, int threads = 1);
SnapshotErrors pod_snapshot_errors(const PodModel& model, const SnapshotSet& data);

struct EvalReport {
  double train_error = 0.0;  // mean relative reconstruction error, training half
  double test_error = 0.0;   // same, test half
  double poly_error = 0.0;   // mean relative polytope error, all snapshots (NaN for POD)
  Vector activation;         // per-latent-component activation rates (empty for POD)
  std::size_t encoder_params = 0;
  std::size_t decoder_params = 0;
  std::size_t vertex_total = 0;  // R
  std::vector<std::string> warnings;
};

EvalReport evaluate(const PaeModel& model, const SnapshotSet& data, double tol = 1e-9,
                    int threads = 1);
EvalReport evaluate_pod(const PodModel& model, const SnapshotSet& data);

}  // namespace polyrom

#endif
