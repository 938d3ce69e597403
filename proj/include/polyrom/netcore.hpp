#ifndef POLYROM_NETCORE_HPP
#define POLYROM_NETCORE_HPP

#include <cstddef>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "polyrom/linalg.hpp"

namespace polyrom {

// Dense tensor with up to 4 axes, row-major. The gradient buffer is optional
// and, when allocated, mirrors the data layout.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  static Tensor from_vector(const Vector& v);

  int ndim() const { return static_cast<int>(shape.size()); }
  std::size_t size() const { return data.size(); }
  void alloc_grad();
  void check() const;
};

enum class LayerKind {
  Linear,
  Conv3x3,
  Depthwise,
  Pointwise,
  InvertedResidual,
  GlobalAveragePool,
  Elu,
  Msoftmax,
};

// Declarative layer description; networks are built from lists of these and
// round-trip through storage as plain numbers.
struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  int c_in = 0;
  int c_out = 0;
  int k = 0;       // kernel size, odd
  int stride = 1;  // 1 or 2
  bool bias = false;
  int expand = 2;  // inverted-residual expansion factor

  void validate() const;
};

class Layer {
 public:
  virtual ~Layer() = default;
  // Caches whatever backward needs; safe to call backward repeatedly after
  // one forward (Jacobian assembly relies on that).
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& upstream, bool accumulate_param_grads = true) = 0;
  virtual LayerSpec spec() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  virtual std::size_t param_count() const { return 0; }
  virtual Vector* params() { return nullptr; }
  virtual Vector* param_grads() { return nullptr; }
  void zero_grad();
};

using LayerPtr = std::unique_ptr<Layer>;

// Fresh layer with seeded He-style initialization.
LayerPtr make_layer(const LayerSpec& spec, std::mt19937_64& rng);

// Plain layer stack. Copying performs a deep copy so that clones can run
// forward passes on other threads.
class Network {
 public:
  Network() = default;
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  void append(LayerPtr layer);
  bool empty() const { return layers_.empty(); }
  std::size_t depth() const { return layers_.size(); }

  Tensor forward(const Tensor& x);
  Vector forward_vec(const Vector& x);
  Tensor backward(const Tensor& upstream, bool accumulate_param_grads = true);
  Vector backward_vec(const Vector& upstream, bool accumulate_param_grads = true);

  std::size_t param_count() const;
  void zero_grads();
  Vector flatten_params() const;
  Vector flatten_grads() const;
  void load_params(const Vector& flat);
  std::vector<LayerSpec> specs() const;
  const std::vector<LayerPtr>& layers() const { return layers_; }

 private:
  std::vector<LayerPtr> layers_;
};

Network build_network(const std::vector<LayerSpec>& specs, unsigned seed);

// Desk-scale architectures.
Network make_conv_encoder(int c_in, int h, int w, int r, unsigned seed);
Network make_mlp_encoder(int n, int r, unsigned seed);
Network make_cluster_net(int r, int k, unsigned seed);

// Modified softmax: y_i = x_i tanh(10 x_i) / sum_j x_j tanh(10 x_j).
// Every term is nonnegative, zero entries stay exactly zero, and the output
// sums to one. The all-zero input maps to the uniform vector.
Vector msoftmax(const Vector& x);
Vector msoftmax_backward(const Vector& x, const Vector& upstream);

double elu(double x);
double elu_grad(double x);

// Cross entropy -sum(label_i log p_i) with probabilities clamped at 1e-12.
// Both arguments must lie on the probability simplex (1e-8 tolerance).
double cross_entropy(const Vector& label, const Vector& probs);
Vector cross_entropy_grad(const Vector& label, const Vector& probs);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  long t = 0;
};

void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamConfig& cfg);

// Parameter bookkeeping for depthwise-separable versus standard convolutions.
// Ratio (K*K + C_O) / (K*K*C_O), i.e. 1/C_O + 1/K^2.
double depthwise_separable_param_ratio(int k, int c_out);
// {separable, standard} = {K*K*C_I + C_O*C_I, K*K*C_O*C_I}
std::pair<std::size_t, std::size_t> depthwise_separable_param_counts(int k, int c_in, int c_out);

}  // namespace polyrom

#endif
