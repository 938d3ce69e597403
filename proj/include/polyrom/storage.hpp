#ifndef POLYROM_STORAGE_HPP
#define POLYROM_STORAGE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "polyrom/datagen.hpp"
#include "polyrom/errors.hpp"
#include "polyrom/linalg.hpp"
#include "polyrom/lpv.hpp"
#include "polyrom/pae.hpp"
#include "polyrom/polytope.hpp"

namespace polyrom {

// Binary container: "PAEB" magic, a little-endian u32 format version, a
// section table (name, absolute offset, byte length, CRC32), then payload
// sections. Every payload is a shape header (u32 ndim, u64 dims...) followed
// by little-endian IEEE-754 doubles. Integers ride along as exactly
// representable doubles. Unknown sections are ignored by readers.
inline constexpr std::uint32_t kContainerVersion = 1;

struct StorageError : Error {
  using Error::Error;
};
struct TruncatedFileError : StorageError {
  using StorageError::StorageError;
};
struct BadMagicError : StorageError {
  using StorageError::StorageError;
};
struct ChecksumError : StorageError {
  using StorageError::StorageError;
};
struct VersionMismatchError : StorageError {
  using StorageError::StorageError;
};

std::uint32_t crc32_bytes(const unsigned char* data, std::size_t len);

struct ContainerSection {
  std::string name;
  std::vector<std::size_t> dims;
  Vector data;
};

// Collects sections in memory and writes the file atomically (temp file,
// then rename). Identical inputs produce identical bytes.
class ContainerWriter {
 public:
  void add(const std::string& name, std::vector<std::size_t> dims, Vector data);
  void add_scalar(const std::string& name, double value);
  void add_vector(const std::string& name, const Vector& v);
  void add_matrix(const std::string& name, const DenseMatrix& m);
  void write(const std::string& path) const;

 private:
  std::vector<ContainerSection> sections_;
};

class Container {
 public:
  static Container read(const std::string& path);

  bool has(const std::string& name) const;
  std::vector<std::string> names() const;
  const ContainerSection& section(const std::string& name) const;
  double scalar(const std::string& name) const;
  Vector vec(const std::string& name) const;
  DenseMatrix matrix(const std::string& name) const;

 private:
  std::vector<ContainerSection> sections_;
};

// ---- artifact kinds -------------------------------------------------------

// Snapshot data plus whatever provenance later commands need: scattered
// source-node coordinates (for rebuilding the encoder grid) and, for
// simulated systems, the parameters to reassemble the ODE.
struct DatasetArtifact {
  SnapshotSet data;
  std::vector<double> source_xy;  // empty unless the dataset carries node coordinates
  int source_h = 0;
  int source_w = 0;
  bool has_burgers = false;
  double burgers_viscosity = 0.0;
  double burgers_length = 0.0;
};

void save_dataset(const DatasetArtifact& d, const std::string& path);
DatasetArtifact load_dataset(const std::string& path);

void save_pae_model(const PaeModel& model, const std::string& path);
PaeModel load_pae_model(const std::string& path);

void save_pod_model(const PodModel& model, const std::string& path);
PodModel load_pod_model(const std::string& path);

// Generic model loader dispatching on the stored kind tag.
struct StoredModel {
  ModelKind kind = ModelKind::pae;
  PodModel pod;  // set when kind == pod
  PaeModel pae;  // set otherwise
};
StoredModel load_model(const std::string& path);

void save_polytope(const Polytope& p, const std::string& path);
Polytope load_polytope(const std::string& path);

void save_lpv_system(const LpvSystem& lpv, const std::string& path);
LpvSystem load_lpv_system(const std::string& path);

// ---- CSV metrics ----------------------------------------------------------

struct MetricsRow {
  std::string model;
  int r = 0;
  int k = 0;
  std::size_t p_e = 0;
  std::size_t p_d = 0;
  std::size_t vertex_total = 0;
  double train_err = 0.0;
  double test_err = 0.0;
  double poly_err = 0.0;
};

MetricsRow metrics_row(ModelKind kind, int r, int k, const EvalReport& rep);

// Header "model,r,k,P_e,P_d,R,train_err,test_err,poly_err", then one row per
// entry in order, reals printed with 10 significant digits.
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

}  // namespace polyrom

#endif
