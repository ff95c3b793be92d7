#pragma once

// Model variants: four single-backbone baselines and the gated two-branch
// network. All share the backbone and classifier definitions.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lrcw/backbone.hpp"
#include "lrcw/error.hpp"
#include "lrcw/fusion_head.hpp"
#include "lrcw/nn/layers.hpp"

namespace lrcw {

enum class Variant { camera_only, lidar_only, radar_only, early_fusion, lrc_weathernet };

inline constexpr std::array<Variant, 5> kAllVariants = {Variant::camera_only, Variant::lidar_only,
                                                        Variant::radar_only, Variant::early_fusion,
                                                        Variant::lrc_weathernet};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::camera_only: return "camera_only";
    case Variant::lidar_only: return "lidar_only";
    case Variant::radar_only: return "radar_only";
    case Variant::early_fusion: return "early_fusion";
    case Variant::lrc_weathernet: return "lrc_weathernet";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (to_string(v) == s) return v;
  throw ConfigError("unknown model variant '" + std::string(s) + "'");
}

/// Channels of the primary input: the camera for camera_only, otherwise BEV.
inline std::size_t primary_channels(Variant v) {
  switch (v) {
    case Variant::lidar_only: return 1;
    case Variant::radar_only: return 2;
    default: return 3;
  }
}

inline bool uses_camera(Variant v) { return v == Variant::camera_only || v == Variant::lrc_weathernet; }
inline bool uses_lidar(Variant v) {
  return v == Variant::lidar_only || v == Variant::early_fusion || v == Variant::lrc_weathernet;
}
inline bool uses_radar(Variant v) {
  return v == Variant::radar_only || v == Variant::early_fusion || v == Variant::lrc_weathernet;
}

struct ModelSpec {
  Variant variant = Variant::lrc_weathernet;
  std::size_t feature_dim = 64;
  std::size_t input_size = 224;
  std::string architecture = kTinyCnnArch;
  double dropout = Classifier<float>::kDropout;
};

template <class T>
class WeatherNet {
 public:
  explicit WeatherNet(const ModelSpec& spec) : spec_(spec) {
    FeatureExtractorSpec fe{primary_channels(spec.variant), spec.feature_dim, spec.input_size, spec.architecture};
    const bool lrc = spec.variant == Variant::lrc_weathernet;
    primary_ = TinyCnn<T>(lrc ? "bev_backbone" : "backbone", fe);
    if (lrc) {
      camera_.emplace("camera_backbone", FeatureExtractorSpec{3, spec.feature_dim, spec.input_size, spec.architecture});
      fusion_.emplace(spec.feature_dim, "fusion");
    }
    head_ = Classifier<T>(lrc ? 2 * spec.feature_dim : spec.feature_dim, "head", spec.dropout);
  }

  const ModelSpec& spec() const { return spec_; }
  Variant variant() const { return spec_.variant; }
  bool is_fusion() const { return fusion_.has_value(); }

  void init(std::uint64_t seed) {
    Rng rng = make_rng(seed, Stream::init);
    primary_.init(rng);
    if (camera_) camera_->init(rng);
    if (fusion_) fusion_->init(rng);
    head_.init(rng);
  }

  /// `camera` is required (and only used) for the gated variant.
  Tensor<T> forward(const Tensor<T>& primary, const Tensor<T>* camera, nn::Mode mode, Rng& dropout_rng) {
    if (!fusion_) {
      if (camera != nullptr && spec_.variant != Variant::camera_only)
        throw ShapeError(std::string(to_string(spec_.variant)) + " takes a single input");
      return head_.forward(primary_.forward(primary), mode, dropout_rng);
    }
    if (camera == nullptr) throw ShapeError("lrc_weathernet needs a camera input");
    if (camera->rank() < 1 || primary.rank() < 1 || camera->dim(0) != primary.dim(0))
      throw ShapeError("BEV and camera batches differ in size");
    const auto f_f = primary_.forward(primary);
    const auto f_c = camera_->forward(*camera);
    auto fo = fusion_->forward(f_f, f_c);
    gates_ = std::move(fo.gates);
    return head_.forward(fo.fused, mode, dropout_rng);
  }

  /// Backpropagates dloss/dlogits into every parameter gradient.
  void backward(const Tensor<T>& dlogits) {
    const auto dfeat = head_.backward(dlogits);
    if (!fusion_) {
      primary_.backward(dfeat);
      return;
    }
    const auto [df_f, df_c] = fusion_->backward(dfeat);
    primary_.backward(df_f);
    camera_->backward(df_c);
  }

  /// Gates from the last forward pass of the gated variant, [B,2d].
  const Tensor<T>& last_gates() const { return gates_; }

  TinyCnn<T>& primary_backbone() { return primary_; }
  TinyCnn<T>* camera_backbone() { return camera_ ? &*camera_ : nullptr; }
  GatedFusion<T>* fusion() { return fusion_ ? &*fusion_ : nullptr; }
  Classifier<T>& head() { return head_; }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out = primary_.params();
    auto append = [&](std::vector<nn::Param<T>*> more) { out.insert(out.end(), more.begin(), more.end()); };
    if (camera_) append(camera_->params());
    if (fusion_) append(fusion_->params());
    append(head_.params());
    return out;
  }

  std::vector<nn::Buffer<T>> buffers() { return head_.buffers(); }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  nn::LayerCost cost() const {
    nn::LayerCost c = primary_.cost();
    if (camera_) c += camera_->cost();
    if (fusion_) c += fusion_->cost();
    return c + head_.cost();
  }

  std::vector<std::uint8_t> kink_signature() const {
    std::vector<std::uint8_t> out;
    primary_.append_kinks(out);
    if (camera_) camera_->append_kinks(out);
    if (fusion_) fusion_->append_kinks(out);
    head_.append_kinks(out);
    return out;
  }

 private:
  ModelSpec spec_;
  TinyCnn<T> primary_;
  std::optional<TinyCnn<T>> camera_;
  std::optional<GatedFusion<T>> fusion_;
  Classifier<T> head_;
  Tensor<T> gates_;
};

/// Trainable parameter count (batch-norm running statistics excluded).
template <class T>
std::uint64_t count_params(WeatherNet<T>& model) {
  std::uint64_t n = 0;
  for (auto* p : model.params()) n += p->value.size();
  return n;
}

/// Multiply-accumulates for one sample at the model's input size.
template <class T>
std::uint64_t count_macs(const WeatherNet<T>& model) {
  return model.cost().macs;
}

/// Copies parameter values and buffers between precisions (by position).
template <class To, class From>
void copy_weights(WeatherNet<To>& dst, WeatherNet<From>& src) {
  auto dp = dst.params();
  auto sp = src.params();
  auto db = dst.buffers();
  auto sb = src.buffers();
  if (dp.size() != sp.size() || db.size() != sb.size()) throw ShapeError("copy_weights: models differ");
  for (std::size_t i = 0; i < dp.size(); ++i) {
    if (dp[i]->value.shape() != sp[i]->value.shape()) throw ShapeError("copy_weights: shape mismatch " + dp[i]->name);
    dp[i]->value = sp[i]->value.template cast<To>();
  }
  for (std::size_t i = 0; i < db.size(); ++i) *db[i].value = sb[i].value->template cast<To>();
}

}  // namespace lrcw
