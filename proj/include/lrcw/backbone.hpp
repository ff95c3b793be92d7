#pragma once

// Feature extractor used by every model variant: a small strided CNN ending
// in global average pooling, mapping [B,C,S,S] images to [B,d] features.

#include <cstdint>
#include <string>
#include <vector>

#include "lrcw/error.hpp"
#include "lrcw/nn/layers.hpp"
#include "lrcw/rng.hpp"
#include "lrcw/tensor.hpp"

namespace lrcw {

inline constexpr const char* kTinyCnnArch = "tiny_cnn";

struct FeatureExtractorSpec {
  std::size_t in_channels = 3;
  std::size_t feature_dim = 64;
  std::size_t input_size = 224;
  std::string architecture = kTinyCnnArch;

  void validate() const {
    if (in_channels < 1 || in_channels > 3) throw ConfigError("backbone in_channels must be 1, 2 or 3");
    if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
    if (input_size < 1) throw ConfigError("input_size must be >= 1");
    if (architecture != kTinyCnnArch) throw ConfigError("unknown backbone architecture '" + architecture + "'");
  }
};

/// conv(C->16,k3,s2,p1) relu conv(16->32) relu conv(32->d) relu gap
template <class T>
class TinyCnn {
 public:
  TinyCnn() = default;
  TinyCnn(const std::string& prefix, FeatureExtractorSpec spec)
      : spec_(std::move(spec)),
        conv1(prefix + ".conv1", spec_.in_channels, 16, 3, 2, 1),
        conv2(prefix + ".conv2", 16, 32, 3, 2, 1),
        conv3(prefix + ".conv3", 32, spec_.feature_dim, 3, 2, 1) {
    spec_.validate();
  }

  const FeatureExtractorSpec& spec() const { return spec_; }

  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    conv3.init(rng);
  }

  /// [B,C,S,S] -> [B,d].
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels || x.dim(2) != spec_.input_size ||
        x.dim(3) != spec_.input_size) {
      throw ShapeError("backbone expects [B," + std::to_string(spec_.in_channels) + "," +
                       std::to_string(spec_.input_size) + "," + std::to_string(spec_.input_size) + "], got " +
                       shape_str(x.shape()));
    }
    auto h = relu1.forward(conv1.forward(x));
    h = relu2.forward(conv2.forward(h));
    activation_ = relu3.forward(conv3.forward(h));
    return pool.forward(activation_);
  }

  Tensor<T> backward(const Tensor<T>& dfeatures, bool need_input_grad = false) {
    auto g = relu3.backward(pool.backward(dfeatures));
    g = relu2.backward(conv3.backward(g));
    g = relu1.backward(conv2.backward(g));
    return conv1.backward(g, need_input_grad);
  }

  /// Post-ReLU map of the last conv layer, [B,d,h,w], from the last forward.
  const Tensor<T>& last_activation() const { return activation_; }

  std::vector<nn::Param<T>*> params() {
    return {&conv1.weight, &conv1.bias, &conv2.weight, &conv2.bias, &conv3.weight, &conv3.bias};
  }

  nn::LayerCost cost() const {
    std::size_t s = spec_.input_size;
    nn::LayerCost c = conv1.cost(s, s);
    s = nn::conv_out_dim(s, 3, 2, 1);
    c += conv2.cost(s, s);
    s = nn::conv_out_dim(s, 3, 2, 1);
    c += conv3.cost(s, s);
    return c;
  }

  void append_kinks(std::vector<std::uint8_t>& out) const {
    for (const auto* r : {&relu1, &relu2, &relu3}) out.insert(out.end(), r->mask().begin(), r->mask().end());
  }

 private:
  FeatureExtractorSpec spec_;
  nn::Relu<T> relu1, relu2, relu3;
  nn::GlobalAvgPool<T> pool;
  Tensor<T> activation_;

 public:
  nn::Conv2d<T> conv1, conv2, conv3;
};

/// Maps RGB first-layer kernels [F,3,k,k] to 1 or 2 input channels. Each
/// target channel receives the mean over the three source channels.
template <class T>
Tensor<T> adapt_first_layer(const Tensor<T>& weights3, std::size_t target_channels) {
  if (weights3.rank() != 4 || weights3.dim(1) != 3) throw ShapeError("adapt_first_layer needs [F,3,k,k] kernels");
  if (target_channels != 1 && target_channels != 2) throw ConfigError("adapt_first_layer target must be 1 or 2");
  const std::size_t f = weights3.dim(0), kk = weights3.dim(2) * weights3.dim(3);
  Tensor<T> out({f, target_channels, weights3.dim(2), weights3.dim(3)});
  for (std::size_t o = 0; o < f; ++o)
    for (std::size_t t = 0; t < kk; ++t) {
      const T* src = weights3.ptr() + o * 3 * kk;
      const T mean = (src[t] + src[kk + t] + src[2 * kk + t]) / T{3};
      for (std::size_t c = 0; c < target_channels; ++c) out[(o * target_channels + c) * kk + t] = mean;
    }
  return out;
}

/// Seeded Kaiming-uniform initialization of a fresh backbone.
template <class T>
TinyCnn<T> init_params(const FeatureExtractorSpec& spec, std::uint64_t seed, const std::string& prefix = "backbone") {
  TinyCnn<T> net(prefix, spec);
  Rng rng = make_rng(seed, Stream::init, {fnv1a64(prefix)});
  net.init(rng);
  return net;
}

}  // namespace lrcw
