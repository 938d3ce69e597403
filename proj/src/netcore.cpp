#include "polyrom/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "polyrom/errors.hpp"

namespace polyrom {

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  if (shape.empty() || shape.size() > 4)
    throw DimensionError("Tensor: rank must be between 1 and 4");
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("Tensor: axis lengths must be positive");
    n *= static_cast<std::size_t>(d);
  }
  data.assign(n, 0.0);
}

Tensor Tensor::from_vector(const Vector& v) {
  Tensor t({static_cast<int>(v.size())});
  t.data = v;
  return t;
}

void Tensor::alloc_grad() { grad.assign(data.size(), 0.0); }

void Tensor::check() const {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("Tensor: axis lengths must be positive");
    n *= static_cast<std::size_t>(d);
  }
  if (shape.empty() || shape.size() > 4)
    throw DimensionError("Tensor: rank must be between 1 and 4");
  if (data.size() != n) throw DimensionError("Tensor: data does not match shape");
  if (!grad.empty() && grad.size() != n)
    throw DimensionError("Tensor: gradient buffer does not match shape");
}

void LayerSpec::validate() const {
  auto is_conv = kind == LayerKind::Conv3x3 || kind == LayerKind::Depthwise ||
                 kind == LayerKind::InvertedResidual;
  if (is_conv) {
    if (k < 1 || k % 2 == 0) throw InvalidArgument("LayerSpec: kernel size must be odd");
    if (stride != 1 && stride != 2) throw InvalidArgument("LayerSpec: stride must be 1 or 2");
  }
  if (kind == LayerKind::Pointwise && stride != 1)
    throw InvalidArgument("LayerSpec: pointwise convolutions are stride 1");
  if (kind == LayerKind::InvertedResidual && expand < 1)
    throw InvalidArgument("LayerSpec: expansion factor must be at least 1");
  switch (kind) {
    case LayerKind::Linear:
    case LayerKind::Conv3x3:
    case LayerKind::Pointwise:
    case LayerKind::InvertedResidual:
      if (c_in < 1 || c_out < 1)
        throw InvalidArgument("LayerSpec: channel counts must be positive");
      break;
    case LayerKind::Depthwise:
      if (c_in < 1) throw InvalidArgument("LayerSpec: channel count must be positive");
      break;
    default:
      break;
  }
}

double elu(double x) { return x >= 0.0 ? x : std::exp(x) - 1.0; }
double elu_grad(double x) { return x >= 0.0 ? 1.0 : std::exp(x); }

namespace {

double msoft_g(double x) { return x * std::tanh(10.0 * x); }

double msoft_g_grad(double x) {
  const double th = std::tanh(10.0 * x);
  return th + 10.0 * x * (1.0 - th * th);
}

int conv_out_dim(int in, int k, int stride) { return (in + 2 * (k / 2) - k) / stride + 1; }

// Standard convolution as cross-correlation with zero padding k/2.
// w layout: (c_out, c_in, k, k); bias may be null.
void conv2d_forward(const double* in, int ci_n, int h, int w_n, const double* w,
                    const double* bias, int co_n, int k, int stride, double* out) {
  const int p = k / 2;
  const int ho_n = conv_out_dim(h, k, stride), wo_n = conv_out_dim(w_n, k, stride);
  for (int co = 0; co < co_n; ++co) {
    for (int ho = 0; ho < ho_n; ++ho) {
      for (int wo = 0; wo < wo_n; ++wo) {
        double acc = bias ? bias[co] : 0.0;
        for (int ci = 0; ci < ci_n; ++ci) {
          const double* wbase = w + ((static_cast<std::size_t>(co) * ci_n + ci) * k) * k;
          const double* ibase = in + static_cast<std::size_t>(ci) * h * w_n;
          for (int kh = 0; kh < k; ++kh) {
            const int hi = ho * stride + kh - p;
            if (hi < 0 || hi >= h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int wi = wo * stride + kw - p;
              if (wi < 0 || wi >= w_n) continue;
              acc += wbase[kh * k + kw] * ibase[hi * w_n + wi];
            }
          }
        }
        out[(static_cast<std::size_t>(co) * ho_n + ho) * wo_n + wo] = acc;
      }
    }
  }
}

void conv2d_backward(const double* in, int ci_n, int h, int w_n, const double* w, int co_n,
                     int k, int stride, const double* up, double* din, double* dw,
                     double* dbias) {
  const int p = k / 2;
  const int ho_n = conv_out_dim(h, k, stride), wo_n = conv_out_dim(w_n, k, stride);
  for (int co = 0; co < co_n; ++co) {
    for (int ho = 0; ho < ho_n; ++ho) {
      for (int wo = 0; wo < wo_n; ++wo) {
        const double u = up[(static_cast<std::size_t>(co) * ho_n + ho) * wo_n + wo];
        if (u == 0.0) continue;
        if (dbias) dbias[co] += u;
        for (int ci = 0; ci < ci_n; ++ci) {
          const double* wbase = w + ((static_cast<std::size_t>(co) * ci_n + ci) * k) * k;
          double* dwbase = dw ? dw + ((static_cast<std::size_t>(co) * ci_n + ci) * k) * k
                              : nullptr;
          const double* ibase = in + static_cast<std::size_t>(ci) * h * w_n;
          double* dibase = din ? din + static_cast<std::size_t>(ci) * h * w_n : nullptr;
          for (int kh = 0; kh < k; ++kh) {
            const int hi = ho * stride + kh - p;
            if (hi < 0 || hi >= h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int wi = wo * stride + kw - p;
              if (wi < 0 || wi >= w_n) continue;
              if (dwbase) dwbase[kh * k + kw] += u * ibase[hi * w_n + wi];
              if (dibase) dibase[hi * w_n + wi] += u * wbase[kh * k + kw];
            }
          }
        }
      }
    }
  }
}

// Depthwise convolution; w layout (c, k, k).
void depthwise_forward(const double* in, int c_n, int h, int w_n, const double* w, int k,
                       int stride, double* out) {
  const int p = k / 2;
  const int ho_n = conv_out_dim(h, k, stride), wo_n = conv_out_dim(w_n, k, stride);
  for (int c = 0; c < c_n; ++c) {
    const double* wbase = w + static_cast<std::size_t>(c) * k * k;
    const double* ibase = in + static_cast<std::size_t>(c) * h * w_n;
    double* obase = out + static_cast<std::size_t>(c) * ho_n * wo_n;
    for (int ho = 0; ho < ho_n; ++ho) {
      for (int wo = 0; wo < wo_n; ++wo) {
        double acc = 0.0;
        for (int kh = 0; kh < k; ++kh) {
          const int hi = ho * stride + kh - p;
          if (hi < 0 || hi >= h) continue;
          for (int kw = 0; kw < k; ++kw) {
            const int wi = wo * stride + kw - p;
            if (wi < 0 || wi >= w_n) continue;
            acc += wbase[kh * k + kw] * ibase[hi * w_n + wi];
          }
        }
        obase[ho * wo_n + wo] = acc;
      }
    }
  }
}

void depthwise_backward(const double* in, int c_n, int h, int w_n, const double* w, int k,
                        int stride, const double* up, double* din, double* dw) {
  const int p = k / 2;
  const int ho_n = conv_out_dim(h, k, stride), wo_n = conv_out_dim(w_n, k, stride);
  for (int c = 0; c < c_n; ++c) {
    const double* wbase = w + static_cast<std::size_t>(c) * k * k;
    double* dwbase = dw ? dw + static_cast<std::size_t>(c) * k * k : nullptr;
    const double* ibase = in + static_cast<std::size_t>(c) * h * w_n;
    double* dibase = din ? din + static_cast<std::size_t>(c) * h * w_n : nullptr;
    const double* ubase = up + static_cast<std::size_t>(c) * ho_n * wo_n;
    for (int ho = 0; ho < ho_n; ++ho) {
      for (int wo = 0; wo < wo_n; ++wo) {
        const double u = ubase[ho * wo_n + wo];
        if (u == 0.0) continue;
        for (int kh = 0; kh < k; ++kh) {
          const int hi = ho * stride + kh - p;
          if (hi < 0 || hi >= h) continue;
          for (int kw = 0; kw < k; ++kw) {
            const int wi = wo * stride + kw - p;
            if (wi < 0 || wi >= w_n) continue;
            if (dwbase) dwbase[kh * k + kw] += u * ibase[hi * w_n + wi];
            if (dibase) dibase[hi * w_n + wi] += u * wbase[kh * k + kw];
          }
        }
      }
    }
  }
}

// 1x1 convolution; w layout (c_out, c_in).
void pointwise_forward(const double* in, int ci_n, int hw, const double* w, int co_n,
                       double* out) {
  std::fill(out, out + static_cast<std::size_t>(co_n) * hw, 0.0);
  for (int co = 0; co < co_n; ++co) {
    double* obase = out + static_cast<std::size_t>(co) * hw;
    for (int ci = 0; ci < ci_n; ++ci) {
      const double wv = w[static_cast<std::size_t>(co) * ci_n + ci];
      if (wv == 0.0) continue;
      const double* ibase = in + static_cast<std::size_t>(ci) * hw;
      for (int q = 0; q < hw; ++q) obase[q] += wv * ibase[q];
    }
  }
}

void pointwise_backward(const double* in, int ci_n, int hw, const double* w, int co_n,
                        const double* up, double* din, double* dw) {
  if (din) std::fill(din, din + static_cast<std::size_t>(ci_n) * hw, 0.0);
  for (int co = 0; co < co_n; ++co) {
    const double* ubase = up + static_cast<std::size_t>(co) * hw;
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* ibase = in + static_cast<std::size_t>(ci) * hw;
      const double wv = w[static_cast<std::size_t>(co) * ci_n + ci];
      double acc = 0.0;
      double* dibase = din ? din + static_cast<std::size_t>(ci) * hw : nullptr;
      for (int q = 0; q < hw; ++q) {
        acc += ubase[q] * ibase[q];
        if (dibase) dibase[q] += wv * ubase[q];
      }
      if (dw) dw[static_cast<std::size_t>(co) * ci_n + ci] += acc;
    }
  }
}

void require_rank(const Tensor& t, int rank, const char* who) {
  if (t.ndim() != rank)
    throw DimensionError(std::string(who) + ": expected rank-" + std::to_string(rank) +
                         " input");
}

double he_draw(std::mt19937_64& rng, double fan_in) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  return dist(rng);
}

class LinearLayer final : public Layer {
 public:
  LinearLayer(int in, int out, bool bias, std::mt19937_64& rng)
      : in_(in), out_(out), bias_(bias) {
    w_.resize(static_cast<std::size_t>(out) * in + (bias ? out : 0));
    gw_.assign(w_.size(), 0.0);
    for (int i = 0; i < out * in; ++i) w_[i] = he_draw(rng, in);
  }

  Tensor forward(const Tensor& x) override {
    require_rank(x, 1, "linear");
    if (x.shape[0] != in_) throw DimensionError("linear: input length mismatch");
    in_cache_ = x.data;
    Tensor y({out_});
    for (int o = 0; o < out_; ++o) {
      double acc = bias_ ? w_[static_cast<std::size_t>(out_) * in_ + o] : 0.0;
      const double* wrow = &w_[static_cast<std::size_t>(o) * in_];
      for (int i = 0; i < in_; ++i) acc += wrow[i] * x.data[i];
      y.data[o] = acc;
    }
    return y;
  }

  Tensor backward(const Tensor& up, bool acc_grads) override {
    require_rank(up, 1, "linear backward");
    if (up.shape[0] != out_) throw DimensionError("linear backward: upstream mismatch");
    Tensor dx({in_});
    for (int o = 0; o < out_; ++o) {
      const double u = up.data[o];
      const double* wrow = &w_[static_cast<std::size_t>(o) * in_];
      double* grow = &gw_[static_cast<std::size_t>(o) * in_];
      for (int i = 0; i < in_; ++i) {
        dx.data[i] += wrow[i] * u;
        if (acc_grads) grow[i] += u * in_cache_[i];
      }
      if (acc_grads && bias_) gw_[static_cast<std::size_t>(out_) * in_ + o] += u;
    }
    return dx;
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::Linear;
    s.c_in = in_;
    s.c_out = out_;
    s.bias = bias_;
    return s;
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<LinearLayer>(*this); }
  std::size_t param_count() const override { return w_.size(); }
  Vector* params() override { return &w_; }
  Vector* param_grads() override { return &gw_; }

 private:
  int in_, out_;
  bool bias_;
  Vector w_, gw_;
  Vector in_cache_;
};

class ConvLayer final : public Layer {
 public:
  ConvLayer(int c_in, int c_out, int k, int stride, bool bias, std::mt19937_64& rng)
      : ci_(c_in), co_(c_out), k_(k), stride_(stride), bias_(bias) {
    w_.resize(static_cast<std::size_t>(c_out) * c_in * k * k + (bias ? c_out : 0));
    gw_.assign(w_.size(), 0.0);
    const double fan = static_cast<double>(c_in) * k * k;
    for (std::size_t i = 0; i < static_cast<std::size_t>(c_out) * c_in * k * k; ++i)
      w_[i] = he_draw(rng, fan);
  }

  Tensor forward(const Tensor& x) override {
    require_rank(x, 3, "conv");
    if (x.shape[0] != ci_) throw DimensionError("conv: channel mismatch");
    h_ = x.shape[1];
    wdim_ = x.shape[2];
    in_cache_ = x.data;
    const int ho = conv_out_dim(h_, k_, stride_), wo = conv_out_dim(wdim_, k_, stride_);
    Tensor y({co_, ho, wo});
    const double* bias = bias_ ? &w_[static_cast<std::size_t>(co_) * ci_ * k_ * k_] : nullptr;
    conv2d_forward(x.data.data(), ci_, h_, wdim_, w_.data(), bias, co_, k_, stride_,
                   y.data.data());
    return y;
  }

  Tensor backward(const Tensor& up, bool acc_grads) override {
    require_rank(up, 3, "conv backward");
    Tensor dx({ci_, h_, wdim_});
    double* dw = acc_grads ? gw_.data() : nullptr;
    double* dbias =
        (acc_grads && bias_) ? &gw_[static_cast<std::size_t>(co_) * ci_ * k_ * k_] : nullptr;
    conv2d_backward(in_cache_.data(), ci_, h_, wdim_, w_.data(), co_, k_, stride_,
                    up.data.data(), dx.data.data(), dw, dbias);
    return dx;
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::Conv3x3;
    s.c_in = ci_;
    s.c_out = co_;
    s.k = k_;
    s.stride = stride_;
    s.bias = bias_;
    return s;
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvLayer>(*this); }
  std::size_t param_count() const override { return w_.size(); }
  Vector* params() override { return &w_; }
  Vector* param_grads() override { return &gw_; }

 private:
  int ci_, co_, k_, stride_;
  bool bias_;
  int h_ = 0, wdim_ = 0;
  Vector w_, gw_;
  Vector in_cache_;
};

class DepthwiseLayer final : public Layer {
 public:
  DepthwiseLayer(int c, int k, int stride, std::mt19937_64& rng)
      : c_(c), k_(k), stride_(stride) {
    w_.resize(static_cast<std::size_t>(c) * k * k);
    gw_.assign(w_.size(), 0.0);
    for (double& v : w_) v = he_draw(rng, static_cast<double>(k) * k);
  }

  Tensor forward(const Tensor& x) override {
    require_rank(x, 3, "depthwise");
    if (x.shape[0] != c_) throw DimensionError("depthwise: channel mismatch");
    h_ = x.shape[1];
    wdim_ = x.shape[2];
    in_cache_ = x.data;
    Tensor y({c_, conv_out_dim(h_, k_, stride_), conv_out_dim(wdim_, k_, stride_)});
    depthwise_forward(x.data.data(), c_, h_, wdim_, w_.data(), k_, stride_, y.data.data());
    return y;
  }

  Tensor backward(const Tensor& up, bool acc_grads) override {
    require_rank(up, 3, "depthwise backward");
    Tensor dx({c_, h_, wdim_});
    depthwise_backward(in_cache_.data(), c_, h_, wdim_, w_.data(), k_, stride_,
                       up.data.data(), dx.data.data(), acc_grads ? gw_.data() : nullptr);
    return dx;
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::Depthwise;
    s.c_in = c_;
    s.c_out = c_;
    s.k = k_;
    s.stride = stride_;
    return s;
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<DepthwiseLayer>(*this);
  }
  std::size_t param_count() const override { return w_.size(); }
  Vector* params() override { return &w_; }
  Vector* param_grads() override { return &gw_; }

 private:
  int c_, k_, stride_;
  int h_ = 0, wdim_ = 0;
  Vector w_, gw_;
  Vector in_cache_;
};

class PointwiseLayer final : public Layer {
 public:
  PointwiseLayer(int c_in, int c_out, std::mt19937_64& rng) : ci_(c_in), co_(c_out) {
    w_.resize(static_cast<std::size_t>(c_out) * c_in);
    gw_.assign(w_.size(), 0.0);
    for (double& v : w_) v = he_draw(rng, c_in);
  }

  Tensor forward(const Tensor& x) override {
    require_rank(x, 3, "pointwise");
    if (x.shape[0] != ci_) throw DimensionError("pointwise: channel mismatch");
    h_ = x.shape[1];
    wdim_ = x.shape[2];
    in_cache_ = x.data;
    Tensor y({co_, h_, wdim_});
    pointwise_forward(x.data.data(), ci_, h_ * wdim_, w_.data(), co_, y.data.data());
    return y;
  }

  Tensor backward(const Tensor& up, bool acc_grads) override {
    require_rank(up, 3, "pointwise backward");
    Tensor dx({ci_, h_, wdim_});
    pointwise_backward(in_cache_.data(), ci_, h_ * wdim_, w_.data(), co_, up.data.data(),
                       dx.data.data(), acc_grads ? gw_.data() : nullptr);
    return dx;
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::Pointwise;
    s.c_in = ci_;
    s.c_out = co_;
    s.k = 1;
    return s;
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<PointwiseLayer>(*this);
  }
  std::size_t param_count() const override { return w_.size(); }
  Vector* params() override { return &w_; }
  Vector* param_grads() override { return &gw_; }

 private:
  int ci_, co_;
  int h_ = 0, wdim_ = 0;
  Vector w_, gw_;
  Vector in_cache_;
};

// Expand (1x1), ELU, depthwise KxK, ELU, project (1x1); no bias terms.
// The skip connection is added only at stride 1 with matching channel counts.
class InvertedResidualLayer final : public Layer {
 public:
  InvertedResidualLayer(int c_in, int c_out, int k, int stride, int expand,
                        std::mt19937_64& rng)
      : ci_(c_in), co_(c_out), ce_(c_in * expand), k_(k), stride_(stride), expand_(expand) {
    n_exp_ = static_cast<std::size_t>(ce_) * ci_;
    n_dw_ = static_cast<std::size_t>(ce_) * k * k;
    n_proj_ = static_cast<std::size_t>(co_) * ce_;
    w_.resize(n_exp_ + n_dw_ + n_proj_);
    gw_.assign(w_.size(), 0.0);
    std::size_t at = 0;
    for (std::size_t i = 0; i < n_exp_; ++i) w_[at++] = he_draw(rng, ci_);
    for (std::size_t i = 0; i < n_dw_; ++i) w_[at++] = he_draw(rng, static_cast<double>(k) * k);
    for (std::size_t i = 0; i < n_proj_; ++i) w_[at++] = he_draw(rng, ce_);
  }

  bool has_residual() const { return stride_ == 1 && ci_ == co_; }

  Tensor forward(const Tensor& x) override {
    require_rank(x, 3, "inverted_residual");
    if (x.shape[0] != ci_) throw DimensionError("inverted_residual: channel mismatch");
    h_ = x.shape[1];
    wdim_ = x.shape[2];
    in_cache_ = x.data;
    const int hw = h_ * wdim_;
    t1_.assign(static_cast<std::size_t>(ce_) * hw, 0.0);
    pointwise_forward(x.data.data(), ci_, hw, expand_w(), ce_, t1_.data());
    a1_.resize(t1_.size());
    for (std::size_t i = 0; i < t1_.size(); ++i) a1_[i] = elu(t1_[i]);
    const int ho = conv_out_dim(h_, k_, stride_), wo = conv_out_dim(wdim_, k_, stride_);
    t2_.assign(static_cast<std::size_t>(ce_) * ho * wo, 0.0);
    depthwise_forward(a1_.data(), ce_, h_, wdim_, dw_w(), k_, stride_, t2_.data());
    a2_.resize(t2_.size());
    for (std::size_t i = 0; i < t2_.size(); ++i) a2_[i] = elu(t2_[i]);
    Tensor y({co_, ho, wo});
    pointwise_forward(a2_.data(), ce_, ho * wo, proj_w(), co_, y.data.data());
    if (has_residual())
      for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
    return y;
  }

  Tensor backward(const Tensor& up, bool acc_grads) override {
    require_rank(up, 3, "inverted_residual backward");
    const int ho = conv_out_dim(h_, k_, stride_), wo = conv_out_dim(wdim_, k_, stride_);
    const int hw_out = ho * wo, hw_in = h_ * wdim_;
    Vector da2(static_cast<std::size_t>(ce_) * hw_out, 0.0);
    pointwise_backward(a2_.data(), ce_, hw_out, proj_w(), co_, up.data.data(), da2.data(),
                       acc_grads ? proj_gw() : nullptr);
    for (std::size_t i = 0; i < da2.size(); ++i) da2[i] *= elu_grad(t2_[i]);
    Vector da1(static_cast<std::size_t>(ce_) * hw_in, 0.0);
    depthwise_backward(a1_.data(), ce_, h_, wdim_, dw_w(), k_, stride_, da2.data(),
                       da1.data(), acc_grads ? dw_gw() : nullptr);
    for (std::size_t i = 0; i < da1.size(); ++i) da1[i] *= elu_grad(t1_[i]);
    Tensor dx({ci_, h_, wdim_});
    pointwise_backward(in_cache_.data(), ci_, hw_in, expand_w(), ce_, da1.data(),
                       dx.data.data(), acc_grads ? expand_gw() : nullptr);
    if (has_residual())
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += up.data[i];
    return dx;
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::InvertedResidual;
    s.c_in = ci_;
    s.c_out = co_;
    s.k = k_;
    s.stride = stride_;
    s.expand = expand_;
    return s;
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<InvertedResidualLayer>(*this);
  }
  std::size_t param_count() const override { return w_.size(); }
  Vector* params() override { return &w_; }
  Vector* param_grads() override { return &gw_; }

 private:
  const double* expand_w() const { return w_.data(); }
  const double* dw_w() const { return w_.data() + n_exp_; }
  const double* proj_w() const { return w_.data() + n_exp_ + n_dw_; }
  double* expand_gw() { return gw_.data(); }
  double* dw_gw() { return gw_.data() + n_exp_; }
  double* proj_gw() { return gw_.data() + n_exp_ + n_dw_; }

  int ci_, co_, ce_, k_, stride_, expand_;
  std::size_t n_exp_ = 0, n_dw_ = 0, n_proj_ = 0;
  int h_ = 0, wdim_ = 0;
  Vector w_, gw_;
  Vector in_cache_, t1_, a1_, t2_, a2_;
};

class GlobalAveragePoolLayer final : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    require_rank(x, 3, "global_average_pool");
    c_ = x.shape[0];
    h_ = x.shape[1];
    w_ = x.shape[2];
    Tensor y({c_});
    const int hw = h_ * w_;
    for (int c = 0; c < c_; ++c) {
      double acc = 0.0;
      const double* base = &x.data[static_cast<std::size_t>(c) * hw];
      for (int q = 0; q < hw; ++q) acc += base[q];
      y.data[c] = acc / hw;
    }
    return y;
  }

  Tensor backward(const Tensor& up, bool) override {
    require_rank(up, 1, "global_average_pool backward");
    Tensor dx({c_, h_, w_});
    const int hw = h_ * w_;
    for (int c = 0; c < c_; ++c) {
      const double g = up.data[c] / hw;
      double* base = &dx.data[static_cast<std::size_t>(c) * hw];
      for (int q = 0; q < hw; ++q) base[q] = g;
    }
    return dx;
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::GlobalAveragePool;
    return s;
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<GlobalAveragePoolLayer>(*this);
  }

 private:
  int c_ = 0, h_ = 0, w_ = 0;
};

class EluLayer final : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    in_cache_ = x;
    Tensor y = x;
    for (double& v : y.data) v = elu(v);
    return y;
  }

  Tensor backward(const Tensor& up, bool) override {
    Tensor dx = up;
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= elu_grad(in_cache_.data[i]);
    return dx;
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::Elu;
    return s;
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<EluLayer>(*this); }

 private:
  Tensor in_cache_;
};

class MsoftmaxLayer final : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    require_rank(x, 1, "msoftmax");
    in_cache_ = x.data;
    Tensor y({x.shape[0]});
    y.data = msoftmax(x.data);
    return y;
  }

  Tensor backward(const Tensor& up, bool) override {
    require_rank(up, 1, "msoftmax backward");
    Tensor dx({static_cast<int>(in_cache_.size())});
    dx.data = msoftmax_backward(in_cache_, up.data);
    return dx;
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::Msoftmax;
    return s;
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<MsoftmaxLayer>(*this);
  }

 private:
  Vector in_cache_;
};

}  // namespace

void Layer::zero_grad() {
  if (Vector* g = param_grads()) std::fill(g->begin(), g->end(), 0.0);
}

LayerPtr make_layer(const LayerSpec& s, std::mt19937_64& rng) {
  s.validate();
  switch (s.kind) {
    case LayerKind::Linear:
      return std::make_unique<LinearLayer>(s.c_in, s.c_out, s.bias, rng);
    case LayerKind::Conv3x3:
      return std::make_unique<ConvLayer>(s.c_in, s.c_out, s.k, s.stride, s.bias, rng);
    case LayerKind::Depthwise:
      return std::make_unique<DepthwiseLayer>(s.c_in, s.k, s.stride, rng);
    case LayerKind::Pointwise:
      return std::make_unique<PointwiseLayer>(s.c_in, s.c_out, rng);
    case LayerKind::InvertedResidual:
      return std::make_unique<InvertedResidualLayer>(s.c_in, s.c_out, s.k, s.stride, s.expand,
                                                     rng);
    case LayerKind::GlobalAveragePool:
      return std::make_unique<GlobalAveragePoolLayer>();
    case LayerKind::Elu:
      return std::make_unique<EluLayer>();
    case LayerKind::Msoftmax:
      return std::make_unique<MsoftmaxLayer>();
  }
  throw InvalidArgument("make_layer: unknown layer kind");
}

Network::Network(const Network& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this == &other) return *this;
  layers_.clear();
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
  return *this;
}

void Network::append(LayerPtr layer) { layers_.push_back(std::move(layer)); }

Tensor Network::forward(const Tensor& x) {
  if (layers_.empty()) throw InvalidArgument("Network: no layers");
  Tensor t = x;
  for (auto& l : layers_) t = l->forward(t);
  return t;
}

Vector Network::forward_vec(const Vector& x) {
  Tensor out = forward(Tensor::from_vector(x));
  if (out.ndim() != 1) throw DimensionError("Network: output is not a vector");
  return out.data;
}

Tensor Network::backward(const Tensor& upstream, bool acc) {
  if (layers_.empty()) throw InvalidArgument("Network: no layers");
  Tensor g = upstream;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, acc);
  return g;
}

Vector Network::backward_vec(const Vector& upstream, bool acc) {
  // The input gradient may be a multi-axis tensor (image encoders); its storage
  // order matches the flattened input, so return the flat data either way.
  return backward(Tensor::from_vector(upstream), acc).data;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->param_count();
  return n;
}

void Network::zero_grads() {
  for (auto& l : layers_) l->zero_grad();
}

Vector Network::flatten_params() const {
  Vector flat;
  for (const auto& l : layers_) {
    const Vector* p = const_cast<Layer&>(*l).params();
    if (p) flat.insert(flat.end(), p->begin(), p->end());
  }
  return flat;
}

Vector Network::flatten_grads() const {
  Vector flat;
  for (const auto& l : layers_) {
    const Vector* g = const_cast<Layer&>(*l).param_grads();
    if (g) flat.insert(flat.end(), g->begin(), g->end());
  }
  return flat;
}

void Network::load_params(const Vector& flat) {
  std::size_t at = 0;
  for (auto& l : layers_) {
    Vector* p = l->params();
    if (!p) continue;
    if (at + p->size() > flat.size())
      throw DimensionError("Network::load_params: flat vector too short");
    std::copy(flat.begin() + at, flat.begin() + at + p->size(), p->begin());
    at += p->size();
  }
  if (at != flat.size())
    throw DimensionError("Network::load_params: flat vector length mismatch");
}

std::vector<LayerSpec> Network::specs() const {
  std::vector<LayerSpec> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) out.push_back(l->spec());
  return out;
}

Network build_network(const std::vector<LayerSpec>& specs, unsigned seed) {
  std::mt19937_64 rng(seed);
  Network net;
  for (const auto& s : specs) net.append(make_layer(s, rng));
  return net;
}

Network make_conv_encoder(int c_in, int h, int w, int r, unsigned seed) {
  if (c_in < 1 || r < 1) throw InvalidArgument("make_conv_encoder: bad sizes");
  if (h < 8 || w < 8)
    throw InvalidArgument("make_conv_encoder: spatial dims must be at least 8");
  std::vector<LayerSpec> specs;
  LayerSpec conv;
  conv.kind = LayerKind::Conv3x3;
  conv.c_in = c_in;
  conv.c_out = 8;
  conv.k = 3;
  conv.stride = 1;
  conv.bias = true;
  specs.push_back(conv);
  LayerSpec act;
  act.kind = LayerKind::Elu;
  specs.push_back(act);
  auto ir = [](int ci, int co, int stride) {
    LayerSpec s;
    s.kind = LayerKind::InvertedResidual;
    s.c_in = ci;
    s.c_out = co;
    s.k = 3;
    s.stride = stride;
    s.expand = 2;
    return s;
  };
  specs.push_back(ir(8, 12, 2));
  specs.push_back(ir(12, 16, 2));
  specs.push_back(ir(16, 16, 1));
  LayerSpec gap;
  gap.kind = LayerKind::GlobalAveragePool;
  specs.push_back(gap);
  LayerSpec head;
  head.kind = LayerKind::Linear;
  head.c_in = 16;
  head.c_out = r;
  head.bias = true;
  specs.push_back(head);
  LayerSpec sm;
  sm.kind = LayerKind::Msoftmax;
  specs.push_back(sm);
  return build_network(specs, seed);
}

Network make_mlp_encoder(int n, int r, unsigned seed) {
  if (n < 1 || r < 1) throw InvalidArgument("make_mlp_encoder: bad sizes");
  std::vector<LayerSpec> specs;
  auto lin = [](int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::Linear;
    s.c_in = in;
    s.c_out = out;
    s.bias = true;
    return s;
  };
  LayerSpec act;
  act.kind = LayerKind::Elu;
  LayerSpec sm;
  sm.kind = LayerKind::Msoftmax;
  const int h1 = std::max(16, std::min(64, n / 2));
  const int h2 = std::max(8, h1 / 2);
  specs.push_back(lin(n, h1));
  specs.push_back(act);
  specs.push_back(lin(h1, h2));
  specs.push_back(act);
  specs.push_back(lin(h2, r));
  specs.push_back(sm);
  return build_network(specs, seed);
}

Network make_cluster_net(int r, int k, unsigned seed) {
  if (r < 1 || k < 1) throw InvalidArgument("make_cluster_net: bad sizes");
  std::vector<LayerSpec> specs;
  auto lin = [](int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::Linear;
    s.c_in = in;
    s.c_out = out;
    s.bias = true;
    return s;
  };
  LayerSpec act;
  act.kind = LayerKind::Elu;
  LayerSpec sm;
  sm.kind = LayerKind::Msoftmax;
  specs.push_back(lin(r, 4 * k));
  specs.push_back(act);
  specs.push_back(lin(4 * k, 4 * k));
  specs.push_back(act);
  specs.push_back(lin(4 * k, k));
  specs.push_back(sm);
  return build_network(specs, seed);
}

Vector msoftmax(const Vector& x) {
  if (x.empty()) throw DimensionError("msoftmax: empty input");
  Vector y(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = msoft_g(x[i]);
    s += y[i];
  }
  if (s == 0.0) {
    // All entries vanish; fall back to the uniform vector.
    std::fill(y.begin(), y.end(), 1.0 / static_cast<double>(x.size()));
    return y;
  }
  for (double& v : y) v /= s;
  return y;
}

Vector msoftmax_backward(const Vector& x, const Vector& upstream) {
  if (x.size() != upstream.size()) throw DimensionError("msoftmax_backward: size mismatch");
  Vector g(x.size()), y(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = msoft_g(x[i]);
    s += y[i];
  }
  if (s == 0.0) {
    // Degenerate point where the forward pass returns the uniform vector;
    // use the zero subgradient.
    std::fill(g.begin(), g.end(), 0.0);
    return g;
  }
  double udoty = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] /= s;
    udoty += upstream[i] * y[i];
  }
  for (std::size_t j = 0; j < x.size(); ++j)
    g[j] = msoft_g_grad(x[j]) * (upstream[j] - udoty) / s;
  return g;
}

namespace {

void check_simplex_arg(const Vector& p, const char* who) {
  double s = 0.0;
  for (double v : p) {
    if (v < -1e-8) throw InvalidArgument(std::string(who) + ": negative entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-8)
    throw InvalidArgument(std::string(who) + ": entries do not sum to one");
}

}  // namespace

double cross_entropy(const Vector& label, const Vector& probs) {
  if (label.size() != probs.size()) throw DimensionError("cross_entropy: size mismatch");
  check_simplex_arg(label, "cross_entropy label");
  check_simplex_arg(probs, "cross_entropy probs");
  double loss = 0.0;
  for (std::size_t i = 0; i < label.size(); ++i)
    loss -= label[i] * std::log(std::max(probs[i], 1e-12));
  return loss;
}

Vector cross_entropy_grad(const Vector& label, const Vector& probs) {
  if (label.size() != probs.size()) throw DimensionError("cross_entropy_grad: size mismatch");
  Vector g(label.size(), 0.0);
  for (std::size_t i = 0; i < label.size(); ++i)
    if (probs[i] > 1e-12) g[i] = -label[i] / probs[i];
  return g;
}

void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw DimensionError("adam_step: state size mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

double depthwise_separable_param_ratio(int k, int c_out) {
  if (k < 1 || k % 2 == 0) throw InvalidArgument("param_ratio: kernel size must be odd");
  if (c_out < 1) throw InvalidArgument("param_ratio: output channels must be positive");
  return static_cast<double>(k * k + c_out) / static_cast<double>(k * k * c_out);
}

std::pair<std::size_t, std::size_t> depthwise_separable_param_counts(int k, int c_in,
                                                                     int c_out) {
  if (k < 1 || k % 2 == 0) throw InvalidArgument("param_counts: kernel size must be odd");
  if (c_in < 1 || c_out < 1) throw InvalidArgument("param_counts: channels must be positive");
  const std::size_t separable = static_cast<std::size_t>(k) * k * c_in +
                                static_cast<std::size_t>(c_out) * c_in;
  const std::size_t standard =
      static_cast<std::size_t>(k) * k * c_out * static_cast<std::size_t>(c_in);
  return {separable, standard};
}

}  // namespace polyrom
