#pragma once

// Layers with explicit forward/backward passes.
//
// Every layer caches what its backward pass needs during forward(), so the
// calling pattern is forward(...) then backward(grad_of_output) exactly once.
// Parameter gradients accumulate into Param::grad; call zero_grad() between
// steps. All layers are templated on the scalar so the same code runs in
// float for training and in double for finite-difference checking.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lrcw/error.hpp"
#include "lrcw/rng.hpp"
#include "lrcw/tensor.hpp"

namespace lrcw::nn {

enum class Mode { train, eval };

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;  // AdamW first moment
  Tensor<T> v;  // AdamW second moment

  Param() = default;
  Param(std::string n, Shape shape)
      : name(std::move(n)), value(shape), grad(shape), m(shape), v(std::move(shape)) {}

  void zero_grad() { grad.fill(T{0}); }
};

/// Non-trainable state that still belongs in a checkpoint.
template <class T>
struct Buffer {
  std::string name;
  Tensor<T>* value;
};

struct LayerCost {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;

  LayerCost& operator+=(const LayerCost& o) {
    params += o.params;
    macs += o.macs;
    return *this;
  }
  friend LayerCost operator+(LayerCost a, const LayerCost& b) { return a += b; }
  bool operator==(const LayerCost&) const = default;
};

/// Uniform(-b, b) with b = sqrt(6 / fan_in); biases are zeroed separately.
template <class T>
void kaiming_uniform(Param<T>& p, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& w : p.value.vec()) w = static_cast<T>(uniform(rng, -bound, bound));
}

// ---------------------------------------------------------------------------

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out)
      : in_(in), out_(out), weight(name + ".weight", {out, in}), bias(name + ".bias", {out}) {}

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  void init(Rng& rng) {
    kaiming_uniform(weight, in_, rng);
    bias.value.fill(T{0});
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 2 || x.dim(1) != in_)
      throw ShapeError(weight.name + ": expected [B," + std::to_string(in_) + "], got " + shape_str(x.shape()));
    input_ = x;
    const std::size_t b = x.dim(0);
    Tensor<T> y({b, out_});
    MapR<T> ym(y.ptr(), b, out_);
    ym.noalias() = CMapR<T>(x.ptr(), b, in_) * CMapR<T>(weight.value.ptr(), out_, in_).transpose();
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value.ptr(), out_);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t b = input_.dim(0);
    if (dy.shape() != Shape{b, out_}) throw ShapeError(weight.name + ": bad upstream gradient shape");
    CMapR<T> dym(dy.ptr(), b, out_);
    MapR<T>(weight.grad.ptr(), out_, in_).noalias() += dym.transpose() * CMapR<T>(input_.ptr(), b, in_);
    // Plain loops for the reductions: Eigen's vectorized sums peel by buffer
    // alignment, which would make results depend on where malloc put them.
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < out_; ++j) bias.grad[j] += dy[i * out_ + j];
    Tensor<T> dx({b, in_});
    MapR<T>(dx.ptr(), b, in_).noalias() = dym * CMapR<T>(weight.value.ptr(), out_, in_);
    return dx;
  }

  std::vector<Param<T>*> params() { return {&weight, &bias}; }
  LayerCost cost() const { return {out_ * in_ + out_, out_ * in_}; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> input_;

 public:
  Param<T> weight;
  Param<T> bias;
};

// ---------------------------------------------------------------------------

/// Output extent of a strided, padded window: floor((n + 2p - k) / s) + 1.
inline std::size_t conv_out_dim(std::size_t n, std::size_t k, std::size_t stride, std::size_t pad) {
  if (n + 2 * pad < k) throw ShapeError("convolution kernel larger than padded input");
  return (n + 2 * pad - k) / stride + 1;
}

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride,
         std::size_t pad)
      : in_(in_ch), out_(out_ch), k_(k), stride_(stride), pad_(pad),
        weight(name + ".weight", {out_ch, in_ch, k, k}), bias(name + ".bias", {out_ch}) {
    if (stride == 0 || k == 0) throw ShapeError(name + ": kernel and stride must be positive");
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return k_; }
  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return pad_; }

  void init(Rng& rng) {
    kaiming_uniform(weight, in_ * k_ * k_, rng);
    bias.value.fill(T{0});
  }

  /// Replaces the layer's input-channel count, keeping name and geometry.
  void reset_in_channels(std::size_t in_ch) {
    in_ = in_ch;
    const std::string name = weight.name;
    weight = Param<T>(name, {out_, in_, k_, k_});
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != in_)
      throw ShapeError(weight.name + ": expected [B," + std::to_string(in_) + ",H,W], got " + shape_str(x.shape()));
    input_ = x;
    const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = conv_out_dim(h, k_, stride_, pad_), ow = conv_out_dim(w, k_, stride_, pad_);
    const std::size_t rows = in_ * k_ * k_, cols = oh * ow;
    Tensor<T> y({b, out_, oh, ow});
    col_.resize(rows * cols);
    CMapR<T> wm(weight.value.ptr(), out_, rows);
    for (std::size_t n = 0; n < b; ++n) {
      im2col(x.ptr() + n * in_ * h * w, col_.data(), h, w, oh, ow);
      MapR<T> ym(y.ptr() + n * out_ * cols, out_, cols);
      for (std::size_t f = 0; f < out_; ++f) ym.row(f).setConstant(bias.value[f]);
      ym.noalias() += wm * CMapR<T>(col_.data(), rows, cols);
    }
    return y;
  }

  /// Accumulates weight/bias gradients; returns the input gradient unless
  /// `need_input_grad` is false (first layer on raw data).
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true) {
    const std::size_t b = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const std::size_t oh = conv_out_dim(h, k_, stride_, pad_), ow = conv_out_dim(w, k_, stride_, pad_);
    const std::size_t rows = in_ * k_ * k_, cols = oh * ow;
    if (dy.shape() != Shape{b, out_, oh, ow}) throw ShapeError(weight.name + ": bad upstream gradient shape");
    MapR<T> dw(weight.grad.ptr(), out_, rows);
    CMapR<T> wm(weight.value.ptr(), out_, rows);
    Tensor<T> dx;
    if (need_input_grad) dx = Tensor<T>(input_.shape());
    col_.resize(rows * cols);
    std::vector<T> dcol(need_input_grad ? rows * cols : 0);
    for (std::size_t n = 0; n < b; ++n) {
      CMapR<T> dym(dy.ptr() + n * out_ * cols, out_, cols);
      im2col(input_.ptr() + n * in_ * h * w, col_.data(), h, w, oh, ow);
      dw.noalias() += dym * CMapR<T>(col_.data(), rows, cols).transpose();
      for (std::size_t o = 0; o < out_; ++o) {
        const T* row = dy.ptr() + (n * out_ + o) * cols;
        T acc = 0;
        for (std::size_t i = 0; i < cols; ++i) acc += row[i];
        bias.grad[o] += acc;
      }
      if (need_input_grad) {
        MapR<T>(dcol.data(), rows, cols).noalias() = wm.transpose() * dym;
        col2im(dcol.data(), dx.ptr() + n * in_ * h * w, h, w, oh, ow);
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() { return {&weight, &bias}; }

  LayerCost cost(std::size_t h, std::size_t w) const {
    const std::size_t oh = conv_out_dim(h, k_, stride_, pad_), ow = conv_out_dim(w, k_, stride_, pad_);
    return {out_ * in_ * k_ * k_ + out_, out_ * in_ * k_ * k_ * oh * ow};
  }

 private:
  /// Output positions [lo, hi) whose tap at kernel offset `kk` lands inside [0, n).
  std::pair<std::size_t, std::size_t> valid_range(std::size_t kk, std::size_t n, std::size_t n_out) const {
    const long off = static_cast<long>(kk) - static_cast<long>(pad_);
    const long s = static_cast<long>(stride_);
    long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    long hi = (static_cast<long>(n) - 1 - off) >= 0 ? (static_cast<long>(n) - 1 - off) / s + 1 : 0;
    hi = std::min(hi, static_cast<long>(n_out));
    lo = std::min(lo, hi);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  }

  void im2col(const T* x, T* col, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) const {
    for (std::size_t c = 0; c < in_; ++c)
      for (std::size_t ki = 0; ki < k_; ++ki) {
        const auto [ylo, yhi] = valid_range(ki, h, oh);
        for (std::size_t kj = 0; kj < k_; ++kj) {
          const auto [xlo, xhi] = valid_range(kj, w, ow);
          T* row = col + ((c * k_ + ki) * k_ + kj) * oh * ow;
          std::fill(row, row + ylo * ow, T{0});
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const T* src = x + (c * h + oy * stride_ + ki - pad_) * w + kj - pad_;
            T* dst = row + oy * ow;
            std::fill(dst, dst + xlo, T{0});
            if (stride_ == 1) {
              std::copy(src + xlo, src + xhi, dst + xlo);
            } else {
              for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * stride_];
            }
            std::fill(dst + xhi, dst + ow, T{0});
          }
          std::fill(row + yhi * ow, row + oh * ow, T{0});
        }
      }
  }

  void col2im(const T* col, T* dx, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) const {
    for (std::size_t c = 0; c < in_; ++c)
      for (std::size_t ki = 0; ki < k_; ++ki) {
        const auto [ylo, yhi] = valid_range(ki, h, oh);
        for (std::size_t kj = 0; kj < k_; ++kj) {
          const auto [xlo, xhi] = valid_range(kj, w, ow);
          const T* row = col + ((c * k_ + ki) * k_ + kj) * oh * ow;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            T* dst = dx + (c * h + oy * stride_ + ki - pad_) * w + kj - pad_;
            const T* src = row + oy * ow;
            for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * stride_] += src[ox];
          }
        }
      }
  }

  std::size_t in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Tensor<T> input_;
  std::vector<T> col_;

 public:
  Param<T> weight;
  Param<T> bias;
};

// ---------------------------------------------------------------------------

template <class T>
class Relu {
 public:
  Tensor<T> forward(Tensor<T> y) {
    mask_.assign(y.size(), 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] > T{0}) {
        mask_[i] = 1;
      } else {
        y[i] = T{0};
      }
    }
    return y;
  }

  Tensor<T> backward(Tensor<T> dx) const {
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!mask_[i]) dx[i] = T{0};
    return dx;
  }

  /// Active-unit pattern of the last forward pass.
  const std::vector<std::uint8_t>& mask() const { return mask_; }

 private:
  std::vector<std::uint8_t> mask_;
};

template <class T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
class Sigmoid {
 public:
  Tensor<T> forward(Tensor<T> x) {
    for (auto& v : x.vec()) v = sigmoid(v);
    out_ = x;
    return x;
  }

  Tensor<T> backward(Tensor<T> dx) const {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= out_[i] * (T{1} - out_[i]);
    return dx;
  }

 private:
  Tensor<T> out_;
};

/// [B,C,H,W] -> [B,C] spatial mean.
template <class T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool expects [B,C,H,W], got " + shape_str(x.shape()));
    in_shape_ = x.shape();
    const std::size_t bc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({x.dim(0), x.dim(1)});
    for (std::size_t i = 0; i < bc; ++i) {
      T s{0};
      const T* p = x.ptr() + i * hw;
      for (std::size_t j = 0; j < hw; ++j) s += p[j];
      y[i] = s / static_cast<T>(hw);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx(in_shape_);
    const std::size_t bc = in_shape_[0] * in_shape_[1], hw = in_shape_[2] * in_shape_[3];
    for (std::size_t i = 0; i < bc; ++i) {
      const T g = dy[i] / static_cast<T>(hw);
      std::fill(dx.ptr() + i * hw, dx.ptr() + (i + 1) * hw, g);
    }
    return dx;
  }

 private:
  Shape in_shape_;
};

// ---------------------------------------------------------------------------

/// Batch normalization over [B,C]. Running variance uses the unbiased batch
/// variance; normalization uses the biased one.
template <class T>
class BatchNorm1d {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm1d() = default;
  BatchNorm1d(const std::string& name, std::size_t channels)
      : c_(channels), gamma(name + ".weight", {channels}), beta(name + ".bias", {channels}),
        running_mean({channels}, T{0}), running_var({channels}, T{1}), name_(name) {
    gamma.value.fill(T{1});
  }

  void init() {
    gamma.value.fill(T{1});
    beta.value.fill(T{0});
    running_mean.fill(T{0});
    running_var.fill(T{1});
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != 2 || x.dim(1) != c_)
      throw ShapeError(name_ + ": expected [B," + std::to_string(c_) + "], got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0);
    mode_ = mode;
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(c_, T{0});
    Tensor<T> y(x.shape());
    if (mode == Mode::train) {
      if (b < 2) throw ShapeError(name_ + ": training-mode batch norm needs batch >= 2");
      for (std::size_t c = 0; c < c_; ++c) {
        T mean{0};
        for (std::size_t i = 0; i < b; ++i) mean += x[i * c_ + c];
        mean /= static_cast<T>(b);
        T var{0};
        for (std::size_t i = 0; i < b; ++i) {
          const T d = x[i * c_ + c] - mean;
          var += d * d;
        }
        const T unbiased = var / static_cast<T>(b - 1);
        var /= static_cast<T>(b);
        inv_std_[c] = T{1} / std::sqrt(var + static_cast<T>(kEps));
        running_mean[c] = static_cast<T>((1.0 - kMomentum) * running_mean[c] + kMomentum * mean);
        running_var[c] = static_cast<T>((1.0 - kMomentum) * running_var[c] + kMomentum * unbiased);
        for (std::size_t i = 0; i < b; ++i) {
          const T xh = (x[i * c_ + c] - mean) * inv_std_[c];
          xhat_[i * c_ + c] = xh;
          y[i * c_ + c] = gamma.value[c] * xh + beta.value[c];
        }
      }
    } else {
      for (std::size_t c = 0; c < c_; ++c) {
        inv_std_[c] = T{1} / std::sqrt(running_var[c] + static_cast<T>(kEps));
        for (std::size_t i = 0; i < b; ++i) {
          const T xh = (x[i * c_ + c] - running_mean[c]) * inv_std_[c];
          xhat_[i * c_ + c] = xh;
          y[i * c_ + c] = gamma.value[c] * xh + beta.value[c];
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t b = xhat_.dim(0);
    Tensor<T> dx(xhat_.shape());
    for (std::size_t c = 0; c < c_; ++c) {
      T sum_dy{0}, sum_dy_xhat{0};
      for (std::size_t i = 0; i < b; ++i) {
        sum_dy += dy[i * c_ + c];
        sum_dy_xhat += dy[i * c_ + c] * xhat_[i * c_ + c];
      }
      gamma.grad[c] += sum_dy_xhat;
      beta.grad[c] += sum_dy;
      const T g = gamma.value[c];
      if (mode_ == Mode::train) {
        const T nb = static_cast<T>(b);
        for (std::size_t i = 0; i < b; ++i) {
          dx[i * c_ + c] =
              g * inv_std_[c] / nb * (nb * dy[i * c_ + c] - sum_dy - xhat_[i * c_ + c] * sum_dy_xhat);
        }
      } else {
        for (std::size_t i = 0; i < b; ++i) dx[i * c_ + c] = g * inv_std_[c] * dy[i * c_ + c];
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() { return {&gamma, &beta}; }
  std::vector<Buffer<T>> buffers() {
    return {{name_ + ".running_mean", &running_mean}, {name_ + ".running_var", &running_var}};
  }
  LayerCost cost() const { return {2 * c_, 0}; }

 private:
  std::size_t c_ = 0;
  Mode mode_ = Mode::train;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;

 public:
  Param<T> gamma;
  Param<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

 private:
  std::string name_;
};

// ---------------------------------------------------------------------------

/// Inverted dropout: survivors are scaled by 1/(1-rate) at train time so
/// evaluation is the identity.
template <class T>
class Dropout {
 public:
  explicit Dropout(double rate = 0.3) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  }

  double rate() const { return rate_; }

  Tensor<T> forward(Tensor<T> y, Mode mode, Rng& rng) {
    mode_ = mode;
    if (mode == Mode::eval || rate_ == 0.0) {
      scale_.assign(y.size(), T{1});
      return y;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
    scale_.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      scale_[i] = uniform01(rng) < rate_ ? T{0} : keep_scale;
      y[i] *= scale_[i];
    }
    return y;
  }

  Tensor<T> backward(Tensor<T> dx) const {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= scale_[i];
    return dx;
  }

 private:
  double rate_;
  Mode mode_ = Mode::eval;
  std::vector<T> scale_;
};

}  // namespace lrcw::nn
