#include "polyrom/storage.hpp"

#include <array>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "polyrom/netcore.hpp"

namespace polyrom {

std::uint32_t crc32_bytes(const unsigned char* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int b = 0; b < 8; ++b) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) {
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  }
  return crc ^ 0xFFFFFFFFu;
}

namespace {

using Bytes = std::vector<unsigned char>;

void put_u32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(Bytes& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(Bytes& b, double d) { put_u64(b, std::bit_cast<std::uint64_t>(d)); }

struct Cursor {
  const unsigned char* p = nullptr;
  std::size_t len = 0;
  std::size_t pos = 0;

  void need(std::size_t k, const char* what) const {
    if (pos + k > len) {
      throw TruncatedFileError(std::string("container file is truncated (while reading ") +
                               what + ")");
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t count, const char* what) {
    need(count, what);
    std::string s(reinterpret_cast<const char*>(p + pos), count);
    pos += count;
    return s;
  }
};

Bytes encode_section(const ContainerSection& s) {
  Bytes b;
  put_u32(b, static_cast<std::uint32_t>(s.dims.size()));
  std::size_t count = 1;
  for (std::size_t d : s.dims) {
    put_u64(b, d);
    count *= d;
  }
  if (count != s.data.size()) {
    throw StorageError("section '" + s.name + "' shape does not match its payload size");
  }
  for (double x : s.data) put_f64(b, x);
  return b;
}

std::size_t checked_index(double x, const char* what) {
  if (!(x >= 0.0) || x != std::floor(x) || x > 9e15) {
    throw StorageError(std::string("stored value is not a valid index (") + what + ")");
  }
  return static_cast<std::size_t>(x);
}

void add_weight(ContainerWriter& w, const std::string& prefix, const SpdWeight& wt) {
  if (wt.is_diagonal()) {
    w.add_vector(prefix + "/diag", wt.diag_values());
  } else {
    w.add_matrix(prefix + "/dense", wt.dense_values());
  }
}

SpdWeight load_weight(const Container& c, const std::string& prefix) {
  if (c.has(prefix + "/diag")) return SpdWeight::diag(c.vec(prefix + "/diag"));
  if (c.has(prefix + "/dense")) return SpdWeight::dense(c.matrix(prefix + "/dense"));
  throw StorageError("missing section '" + prefix + "/diag' or '" + prefix + "/dense'");
}

DenseMatrix specs_to_matrix(const std::vector<LayerSpec>& specs) {
  DenseMatrix m(static_cast<int>(specs.size()), 7);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    int row = static_cast<int>(i);
    m(row, 0) = static_cast<double>(static_cast<int>(s.kind));
    m(row, 1) = s.c_in;
    m(row, 2) = s.c_out;
    m(row, 3) = s.k;
    m(row, 4) = s.stride;
    m(row, 5) = s.bias ? 1.0 : 0.0;
    m(row, 6) = s.expand;
  }
  return m;
}

std::vector<LayerSpec> specs_from_matrix(const DenseMatrix& m) {
  if (m.cols != 7) throw StorageError("layer table must have 7 columns");
  std::vector<LayerSpec> specs(static_cast<std::size_t>(m.rows));
  for (int i = 0; i < m.rows; ++i) {
    LayerSpec& s = specs[static_cast<std::size_t>(i)];
    s.kind = static_cast<LayerKind>(static_cast<int>(checked_index(m(i, 0), "layer kind")));
    s.c_in = static_cast<int>(checked_index(m(i, 1), "layer c_in"));
    s.c_out = static_cast<int>(checked_index(m(i, 2), "layer c_out"));
    s.k = static_cast<int>(checked_index(m(i, 3), "layer kernel"));
    s.stride = static_cast<int>(checked_index(m(i, 4), "layer stride"));
    s.bias = m(i, 5) != 0.0;
    s.expand = static_cast<int>(checked_index(m(i, 6), "layer expand"));
  }
  return specs;
}

Network network_from(const Container& c, const std::string& prefix) {
  std::vector<LayerSpec> specs = specs_from_matrix(c.matrix(prefix + "/specs"));
  Network net = build_network(specs, 0);
  net.load_params(c.vec(prefix + "/params"));
  return net;
}

void add_network(ContainerWriter& w, const std::string& prefix, const Network& net) {
  w.add_matrix(prefix + "/specs", specs_to_matrix(net.specs()));
  w.add_vector(prefix + "/params", net.flatten_params());
}

PodModel parse_pod(const Container& c) {
  PodModel model;
  model.basis = c.matrix("model/basis");
  return model;
}

PaeModel parse_pae(const Container& c) {
  Vector dims = c.vec("model/dims");
  if (dims.size() != 3) throw StorageError("section 'model/dims' must hold n, r, k");
  PaeModel model;
  model.n = static_cast<int>(checked_index(dims[0], "model n"));
  model.r = static_cast<int>(checked_index(dims[1], "model r"));
  model.k = static_cast<int>(checked_index(dims[2], "model k"));
  model.encoder = network_from(c, "model/encoder");
  model.clusternet = network_from(c, "model/clusternet");
  model.vertices = c.matrix("model/vertices");
  if (c.has("model/grid/shape")) {
    Vector shape = c.vec("model/grid/shape");
    if (shape.size() != 5) throw StorageError("section 'model/grid/shape' must hold 5 entries");
    GridMap grid;
    grid.channels = static_cast<int>(checked_index(shape[0], "grid channels"));
    grid.height = static_cast<int>(checked_index(shape[1], "grid height"));
    grid.width = static_cast<int>(checked_index(shape[2], "grid width"));
    grid.op.rows = static_cast<int>(checked_index(shape[3], "grid rows"));
    grid.op.cols = static_cast<int>(checked_index(shape[4], "grid cols"));
    for (double x : c.vec("model/grid/rowptr")) {
      grid.op.row_ptr.push_back(static_cast<int>(checked_index(x, "grid row pointer")));
    }
    for (double x : c.vec("model/grid/colind")) {
      grid.op.col_ind.push_back(static_cast<int>(checked_index(x, "grid column index")));
    }
    grid.op.vals = c.vec("model/grid/vals");
    grid.validate();
    model.grid = std::move(grid);
  }
  model.validate();
  return model;
}

}  // namespace

void ContainerWriter::add(const std::string& name, std::vector<std::size_t> dims, Vector data) {
  if (name.empty()) throw StorageError("section name must not be empty");
  for (const auto& s : sections_) {
    if (s.name == name) throw StorageError("duplicate section '" + name + "'");
  }
  std::size_t count = 1;
  for (std::size_t d : dims) count *= d;
  if (count != data.size()) {
    throw StorageError("section '" + name + "' shape does not match its payload size");
  }
  sections_.push_back(ContainerSection{name, std::move(dims), std::move(data)});
}

void ContainerWriter::add_scalar(const std::string& name, double value) {
  add(name, {1}, Vector{value});
}

void ContainerWriter::add_vector(const std::string& name, const Vector& v) {
  add(name, {v.size()}, v);
}

void ContainerWriter::add_matrix(const std::string& name, const DenseMatrix& m) {
  add(name, {static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols)}, m.a);
}

void ContainerWriter::write(const std::string& path) const {
  std::vector<Bytes> payloads;
  payloads.reserve(sections_.size());
  std::size_t table_size = 0;
  for (const auto& s : sections_) {
    payloads.push_back(encode_section(s));
    table_size += 4 + s.name.size() + 8 + 8 + 4;
  }
  std::size_t offset = 4 + 4 + 4 + table_size;

  Bytes file;
  file.reserve(offset);
  file.push_back('P');
  file.push_back('A');
  file.push_back('E');
  file.push_back('B');
  put_u32(file, kContainerVersion);
  put_u32(file, static_cast<std::uint32_t>(sections_.size()));
  for (std::size_t i = 0; i < sections_.size(); ++i) {
    const auto& s = sections_[i];
    const auto& payload = payloads[i];
    put_u32(file, static_cast<std::uint32_t>(s.name.size()));
    file.insert(file.end(), s.name.begin(), s.name.end());
    put_u64(file, offset);
    put_u64(file, payload.size());
    put_u32(file, crc32_bytes(payload.data(), payload.size()));
    offset += payload.size();
  }
  for (const auto& payload : payloads) {
    file.insert(file.end(), payload.begin(), payload.end());
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(file.data()),
              static_cast<std::streamsize>(file.size()));
    if (!out) throw StorageError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw StorageError("cannot move '" + tmp + "' to '" + path + "': " +
                       std::strerror(errno));
  }
}

Container Container::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open '" + path + "' for reading");
  Bytes file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Cursor cur{file.data(), file.size(), 0};
  std::string magic = cur.str(4, "magic");
  if (magic != "PAEB") throw BadMagicError("'" + path + "' is not a PAEB container");
  std::uint32_t version = cur.u32("version");
  if (version != kContainerVersion) {
    throw VersionMismatchError("container version " + std::to_string(version) +
                               " is not supported (this build reads version " +
                               std::to_string(kContainerVersion) + ")");
  }
  std::uint32_t count = cur.u32("section count");

  struct Entry {
    std::string name;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    std::uint32_t crc = 0;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    std::uint32_t name_len = cur.u32("section name length");
    e.name = cur.str(name_len, "section name");
    e.offset = cur.u64("section offset");
    e.length = cur.u64("section length");
    e.crc = cur.u32("section checksum");
  }

  Container c;
  for (const auto& e : entries) {
    if (e.offset + e.length > file.size() || e.offset + e.length < e.offset) {
      throw TruncatedFileError("container file is truncated (section '" + e.name +
                               "' extends past the end)");
    }
    const unsigned char* base = file.data() + e.offset;
    if (crc32_bytes(base, e.length) != e.crc) {
      throw ChecksumError("checksum failure in section '" + e.name + "'");
    }
    Cursor sc{base, static_cast<std::size_t>(e.length), 0};
    ContainerSection section;
    section.name = e.name;
    std::uint32_t ndim = sc.u32("section rank");
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::uint64_t dim = sc.u64("section dimension");
      section.dims.push_back(static_cast<std::size_t>(dim));
      total *= static_cast<std::size_t>(dim);
    }
    if (sc.pos + 8 * total != sc.len) {
      throw StorageError("section '" + e.name + "' length is inconsistent with its shape");
    }
    section.data.resize(total);
    for (std::size_t i = 0; i < total; ++i) section.data[i] = sc.f64("section payload");
    c.sections_.push_back(std::move(section));
  }
  return c;
}

bool Container::has(const std::string& name) const {
  for (const auto& s : sections_) {
    if (s.name == name) return true;
  }
  return false;
}

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  out.reserve(sections_.size());
  for (const auto& s : sections_) out.push_back(s.name);
  return out;
}

const ContainerSection& Container::section(const std::string& name) const {
  for (const auto& s : sections_) {
    if (s.name == name) return s;
  }
  throw StorageError("missing section '" + name + "'");
}

double Container::scalar(const std::string& name) const {
  const ContainerSection& s = section(name);
  if (s.data.size() != 1) throw StorageError("section '" + name + "' is not a scalar");
  return s.data[0];
}

Vector Container::vec(const std::string& name) const {
  const ContainerSection& s = section(name);
  if (s.dims.size() != 1) throw StorageError("section '" + name + "' is not a vector");
  return s.data;
}

DenseMatrix Container::matrix(const std::string& name) const {
  const ContainerSection& s = section(name);
  if (s.dims.size() != 2) throw StorageError("section '" + name + "' is not a matrix");
  DenseMatrix m(static_cast<int>(s.dims[0]), static_cast<int>(s.dims[1]));
  m.a = s.data;
  return m;
}

// ---- artifact kinds -------------------------------------------------------

void save_dataset(const DatasetArtifact& d, const std::string& path) {
  d.data.validate();
  ContainerWriter w;
  w.add_matrix("snapshots/states", d.data.states);
  w.add_vector("snapshots/times", d.data.times);
  w.add_scalar("snapshots/split", static_cast<double>(d.data.split));
  add_weight(w, "snapshots/weight", d.data.weight);
  if (!d.source_xy.empty()) {
    w.add_vector("snapshots/source_xy", d.source_xy);
    w.add_vector("snapshots/source_hw",
                 {static_cast<double>(d.source_h), static_cast<double>(d.source_w)});
  }
  if (d.has_burgers) {
    w.add_vector("system/burgers", {d.burgers_viscosity, d.burgers_length});
  }
  w.write(path);
}

DatasetArtifact load_dataset(const std::string& path) {
  Container c = Container::read(path);
  DatasetArtifact out;
  out.data.states = c.matrix("snapshots/states");
  out.data.times = c.vec("snapshots/times");
  out.data.split = static_cast<int>(checked_index(c.scalar("snapshots/split"), "split"));
  out.data.weight = load_weight(c, "snapshots/weight");
  if (c.has("snapshots/source_xy")) {
    out.source_xy = c.vec("snapshots/source_xy");
    Vector hw = c.vec("snapshots/source_hw");
    if (hw.size() != 2) throw StorageError("section 'snapshots/source_hw' must hold h and w");
    out.source_h = static_cast<int>(checked_index(hw[0], "source grid height"));
    out.source_w = static_cast<int>(checked_index(hw[1], "source grid width"));
  }
  if (c.has("system/burgers")) {
    Vector params = c.vec("system/burgers");
    if (params.size() != 2) {
      throw StorageError("section 'system/burgers' must hold viscosity and length");
    }
    out.has_burgers = true;
    out.burgers_viscosity = params[0];
    out.burgers_length = params[1];
  }
  out.data.validate();
  return out;
}

void save_pae_model(const PaeModel& model, const std::string& path) {
  model.validate();
  ContainerWriter w;
  w.add_scalar("model/kind", static_cast<double>(static_cast<int>(model.kind())));
  w.add_vector("model/dims", {static_cast<double>(model.n), static_cast<double>(model.r),
                              static_cast<double>(model.k)});
  add_network(w, "model/encoder", model.encoder);
  add_network(w, "model/clusternet", model.clusternet);
  w.add_matrix("model/vertices", model.vertices);
  if (model.grid) {
    const GridMap& g = *model.grid;
    w.add_vector("model/grid/shape",
                 {static_cast<double>(g.channels), static_cast<double>(g.height),
                  static_cast<double>(g.width), static_cast<double>(g.op.rows),
                  static_cast<double>(g.op.cols)});
    Vector rowptr(g.op.row_ptr.begin(), g.op.row_ptr.end());
    Vector colind(g.op.col_ind.begin(), g.op.col_ind.end());
    w.add_vector("model/grid/rowptr", rowptr);
    w.add_vector("model/grid/colind", colind);
    w.add_vector("model/grid/vals", g.op.vals);
  }
  w.write(path);
}

PaeModel load_pae_model(const std::string& path) {
  Container c = Container::read(path);
  int kind = static_cast<int>(checked_index(c.scalar("model/kind"), "model kind"));
  if (kind == static_cast<int>(ModelKind::pod)) {
    throw StorageError("'" + path + "' holds a pod model, not an autoencoder");
  }
  return parse_pae(c);
}

void save_pod_model(const PodModel& model, const std::string& path) {
  ContainerWriter w;
  w.add_scalar("model/kind", static_cast<double>(static_cast<int>(ModelKind::pod)));
  w.add_vector("model/dims",
               {static_cast<double>(model.n()), static_cast<double>(model.r())});
  w.add_matrix("model/basis", model.basis);
  w.write(path);
}

PodModel load_pod_model(const std::string& path) {
  Container c = Container::read(path);
  int kind = static_cast<int>(checked_index(c.scalar("model/kind"), "model kind"));
  if (kind != static_cast<int>(ModelKind::pod)) {
    throw StorageError("'" + path + "' does not hold a pod model");
  }
  return parse_pod(c);
}

StoredModel load_model(const std::string& path) {
  Container c = Container::read(path);
  StoredModel out;
  int kind = static_cast<int>(checked_index(c.scalar("model/kind"), "model kind"));
  if (kind == static_cast<int>(ModelKind::pod)) {
    out.kind = ModelKind::pod;
    out.pod = parse_pod(c);
  } else {
    out.pae = parse_pae(c);
    out.kind = out.pae.kind();
  }
  return out;
}

void save_polytope(const Polytope& p, const std::string& path) {
  ContainerWriter w;
  w.add_matrix("polytope/vertices", p.vertices);
  add_weight(w, "polytope/weight", p.weight);
  w.write(path);
}

Polytope load_polytope(const std::string& path) {
  Container c = Container::read(path);
  Polytope p;
  p.vertices = c.matrix("polytope/vertices");
  p.weight = load_weight(c, "polytope/weight");
  return p;
}

void save_lpv_system(const LpvSystem& lpv, const std::string& path) {
  ContainerWriter w;
  w.add_scalar("lpv/count", static_cast<double>(lpv.vertex_matrices.size()));
  w.add_matrix("lpv/vertices", lpv.vertices);
  for (std::size_t i = 0; i < lpv.vertex_matrices.size(); ++i) {
    w.add_matrix("lpv/A/" + std::to_string(i), lpv.vertex_matrices[i]);
  }
  w.write(path);
}

LpvSystem load_lpv_system(const std::string& path) {
  Container c = Container::read(path);
  LpvSystem lpv;
  lpv.vertices = c.matrix("lpv/vertices");
  std::size_t count = checked_index(c.scalar("lpv/count"), "vertex matrix count");
  lpv.vertex_matrices.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    lpv.vertex_matrices.push_back(c.matrix("lpv/A/" + std::to_string(i)));
  }
  return lpv;
}

// ---- CSV metrics ----------------------------------------------------------

MetricsRow metrics_row(ModelKind kind, int r, int k, const EvalReport& rep) {
  MetricsRow row;
  row.model = to_string(kind);
  row.r = r;
  row.k = k;
  row.p_e = rep.encoder_params;
  row.p_d = rep.decoder_params;
  row.vertex_total = rep.vertex_total;
  row.train_err = rep.train_error;
  row.test_err = rep.test_error;
  row.poly_err = rep.poly_error;
  return row;
}

namespace {

std::string fmt10(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

}  // namespace

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "model,r,k,P_e,P_d,R,train_err,test_err,poly_err\n";
  for (const auto& row : rows) {
    out << row.model << ',' << row.r << ',' << row.k << ',' << row.p_e << ',' << row.p_d << ','
        << row.vertex_total << ',' << fmt10(row.train_err) << ',' << fmt10(row.test_err) << ','
        << fmt10(row.poly_err) << '\n';
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw StorageError("cannot open '" + path + "' for writing");
  f << out.str();
  if (!f) throw StorageError("write to '" + path + "' failed");
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw StorageError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(f, line)) throw StorageError("metrics file '" + path + "' is empty");
  if (line != "model,r,k,P_e,P_d,R,train_err,test_err,poly_err") {
    throw StorageError("metrics file '" + path + "' has an unexpected header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9) {
      throw StorageError("metrics file '" + path + "' has a malformed row");
    }
    MetricsRow row;
    row.model = fields[0];
    row.r = std::stoi(fields[1]);
    row.k = std::stoi(fields[2]);
    row.p_e = static_cast<std::size_t>(std::stoull(fields[3]));
    row.p_d = static_cast<std::size_t>(std::stoull(fields[4]));
    row.vertex_total = static_cast<std::size_t>(std::stoull(fields[5]));
    row.train_err = std::strtod(fields[6].c_str(), nullptr);
    row.test_err = std::strtod(fields[7].c_str(), nullptr);
    row.poly_err = std::strtod(fields[8].c_str(), nullptr);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace polyrom
