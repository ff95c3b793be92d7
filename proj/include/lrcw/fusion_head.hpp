#pragma once

// Mid-level gated fusion of the early-fused BEV features and the camera
// features, and the shared classification head.
//
//   p_f = relu(W_f f_f + b_f)        p_c = relu(W_c f_c + b_c)
//   g   = sigmoid(W_g [p_f, p_c] + b_g) = [g_f, g_c]
//   fused = [f_f * g_f, f_c * g_c]
//
// The gates multiply the original backbone features, not the projections.

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lrcw/error.hpp"
#include "lrcw/nn/layers.hpp"
#include "lrcw/sensor_io.hpp"
#include "lrcw/tensor.hpp"

namespace lrcw {

template <class T>
struct FusionOutput {
  Tensor<T> fused;  // [B,2d]
  Tensor<T> gates;  // [B,2d], g_f then g_c
};

template <class T>
class GatedFusion {
 public:
  GatedFusion() = default;
  explicit GatedFusion(std::size_t d, const std::string& prefix = "fusion")
      : d_(d), proj_f(prefix + ".proj_f", d, d), proj_c(prefix + ".proj_c", d, d),
        gate(prefix + ".gate", 2 * d, 2 * d) {}

  std::size_t dim() const { return d_; }

  void init(Rng& rng) {
    proj_f.init(rng);
    proj_c.init(rng);
    gate.init(rng);
  }

  FusionOutput<T> forward(const Tensor<T>& f_f, const Tensor<T>& f_c) {
    if (f_f.rank() != 2 || f_f.dim(1) != d_ || f_c.shape() != f_f.shape())
      throw ShapeError("gated_fuse: expected two [B," + std::to_string(d_) + "] inputs, got " + shape_str(f_f.shape()) +
                       " and " + shape_str(f_c.shape()));
    const std::size_t b = f_f.dim(0);
    f_f_ = f_f;
    f_c_ = f_c;
    const auto p_f = relu_f.forward(proj_f.forward(f_f));
    const auto p_c = relu_c.forward(proj_c.forward(f_c));
    Tensor<T> concat({b, 2 * d_});
    for (std::size_t i = 0; i < b; ++i) {
      std::copy_n(p_f.ptr() + i * d_, d_, concat.ptr() + i * 2 * d_);
      std::copy_n(p_c.ptr() + i * d_, d_, concat.ptr() + i * 2 * d_ + d_);
    }
    gates_ = sigmoid.forward(gate.forward(concat));
    Tensor<T> fused({b, 2 * d_});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d_; ++j) {
        fused[i * 2 * d_ + j] = f_f[i * d_ + j] * gates_[i * 2 * d_ + j];
        fused[i * 2 * d_ + d_ + j] = f_c[i * d_ + j] * gates_[i * 2 * d_ + d_ + j];
      }
    return {std::move(fused), gates_};
  }

  /// Returns (dloss/df_f, dloss/df_c).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dfused) {
    const std::size_t b = f_f_.dim(0);
    if (dfused.shape() != Shape{b, 2 * d_}) throw ShapeError("gated_fuse: bad upstream gradient shape");
    Tensor<T> df_f({b, d_}), df_c({b, d_}), dgates({b, 2 * d_});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d_; ++j) {
        const std::size_t jf = i * 2 * d_ + j, jc = jf + d_;
        df_f[i * d_ + j] = dfused[jf] * gates_[jf];
        df_c[i * d_ + j] = dfused[jc] * gates_[jc];
        dgates[jf] = dfused[jf] * f_f_[i * d_ + j];
        dgates[jc] = dfused[jc] * f_c_[i * d_ + j];
      }
    const auto dconcat = gate.backward(sigmoid.backward(dgates));
    Tensor<T> dp_f({b, d_}), dp_c({b, d_});
    for (std::size_t i = 0; i < b; ++i) {
      std::copy_n(dconcat.ptr() + i * 2 * d_, d_, dp_f.ptr() + i * d_);
      std::copy_n(dconcat.ptr() + i * 2 * d_ + d_, d_, dp_c.ptr() + i * d_);
    }
    const auto gf = proj_f.backward(relu_f.backward(dp_f));
    const auto gc = proj_c.backward(relu_c.backward(dp_c));
    for (std::size_t i = 0; i < df_f.size(); ++i) {
      df_f[i] += gf[i];
      df_c[i] += gc[i];
    }
    return {std::move(df_f), std::move(df_c)};
  }

  std::vector<nn::Param<T>*> params() {
    return {&proj_f.weight, &proj_f.bias, &proj_c.weight, &proj_c.bias, &gate.weight, &gate.bias};
  }
  nn::LayerCost cost() const { return proj_f.cost() + proj_c.cost() + gate.cost(); }

  void append_kinks(std::vector<std::uint8_t>& out) const {
    out.insert(out.end(), relu_f.mask().begin(), relu_f.mask().end());
    out.insert(out.end(), relu_c.mask().begin(), relu_c.mask().end());
  }

 private:
  std::size_t d_ = 0;
  Tensor<T> f_f_, f_c_, gates_;
  nn::Relu<T> relu_f, relu_c;
  nn::Sigmoid<T> sigmoid;

 public:
  nn::Linear<T> proj_f, proj_c, gate;
};

/// linear(in->512) -> batch norm -> relu -> dropout -> linear(512->9)
template <class T>
class Classifier {
 public:
  static constexpr std::size_t kHidden = 512;
  static constexpr double kDropout = 0.3;

  Classifier() = default;
  explicit Classifier(std::size_t in, const std::string& prefix = "head", double dropout = kDropout)
      : fc1(prefix + ".fc1", in, kHidden), bn(prefix + ".bn", kHidden), drop(dropout),
        fc2(prefix + ".fc2", kHidden, kNumClasses) {}

  void init(Rng& rng) {
    fc1.init(rng);
    bn.init();
    fc2.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode, Rng& dropout_rng) {
    auto h = relu.forward(bn.forward(fc1.forward(x), mode));
    return fc2.forward(drop.forward(h, mode, dropout_rng));
  }

  Tensor<T> backward(const Tensor<T>& dlogits) {
    return fc1.backward(bn.backward(relu.backward(drop.backward(fc2.backward(dlogits)))));
  }

  std::vector<nn::Param<T>*> params() {
    return {&fc1.weight, &fc1.bias, &bn.gamma, &bn.beta, &fc2.weight, &fc2.bias};
  }
  std::vector<nn::Buffer<T>> buffers() { return bn.buffers(); }
  nn::LayerCost cost() const { return fc1.cost() + bn.cost() + fc2.cost(); }

  void append_kinks(std::vector<std::uint8_t>& out) const {
    out.insert(out.end(), relu.mask().begin(), relu.mask().end());
  }

 private:
  nn::Relu<T> relu;

 public:
  nn::Linear<T> fc1;
  nn::BatchNorm1d<T> bn;
  nn::Dropout<T> drop;
  nn::Linear<T> fc2;
};

// ---------------------------------------------------------------------------
// Gate introspection

struct GateRecord {
  std::vector<float> g_f;
  std::vector<float> g_c;
  double summary_f = 0.0;
  double summary_c = 0.0;
};

/// Splits a [B,2d] gate tensor into per-sample records with mean summaries.
template <class T>
std::vector<GateRecord> gate_records(const Tensor<T>& gates) {
  if (gates.rank() != 2 || gates.dim(1) % 2 != 0) throw ShapeError("gate tensor must be [B,2d]");
  const std::size_t b = gates.dim(0), d = gates.dim(1) / 2;
  std::vector<GateRecord> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto& r = out[i];
    const T* g = gates.ptr() + i * 2 * d;
    r.g_f.assign(g, g + d);
    r.g_c.assign(g + d, g + 2 * d);
    for (std::size_t j = 0; j < d; ++j) {
      r.summary_f += static_cast<double>(g[j]);
      r.summary_c += static_cast<double>(g[d + j]);
    }
    r.summary_f /= static_cast<double>(d);
    r.summary_c /= static_cast<double>(d);
  }
  return out;
}

struct GateSummary {
  std::vector<std::pair<double, double>> per_sample;  // (mean g_f, mean g_c)
  double batch_f = 0.0;
  double batch_c = 0.0;
};

inline GateSummary gate_summary(std::span<const GateRecord> records) {
  if (records.empty()) throw DataError("gate_summary of zero records");
  GateSummary s;
  for (const auto& r : records) {
    double f = 0.0, c = 0.0;
    for (float v : r.g_f) f += v;
    for (float v : r.g_c) c += v;
    f /= static_cast<double>(std::max<std::size_t>(r.g_f.size(), 1));
    c /= static_cast<double>(std::max<std::size_t>(r.g_c.size(), 1));
    s.per_sample.emplace_back(f, c);
    s.batch_f += f;
    s.batch_c += c;
  }
  s.batch_f /= static_cast<double>(records.size());
  s.batch_c /= static_cast<double>(records.size());
  return s;
}

struct GateCsvRow {
  std::string sample_id;
  int label = 0;
  int prediction = 0;
  double summary_f = 0.0;
  double summary_c = 0.0;
};

inline constexpr const char* kGatesCsvHeader = "sample_id,label,prediction,summary_f,summary_c";

inline std::string format_gate_row(const GateCsvRow& r) {
  std::ostringstream os;
  os << r.sample_id << ',' << r.label << ',' << r.prediction << ',' << std::fixed << std::setprecision(6)
     << r.summary_f << ',' << r.summary_c;
  return os.str();
}

inline void write_gates_csv(std::ostream& os, std::span<const GateCsvRow> rows) {
  os << kGatesCsvHeader << '\n';
  for (const auto& r : rows) os << format_gate_row(r) << '\n';
}

}  // namespace lrcw
