#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrcw/error.hpp"

namespace lrcw {

/// Square count matrix, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
    if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
  }

  void add(int truth, int predicted) {
    if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= k_ || static_cast<std::size_t>(predicted) >= k_)
      throw ShapeError("class index out of range in confusion matrix");
    ++counts_[static_cast<std::size_t>(truth) * k_ + static_cast<std::size_t>(predicted)];
  }

  std::size_t classes() const { return k_; }
  std::int64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }

  std::int64_t total() const {
    std::int64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }
  std::int64_t trace() const {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < k_; ++i) n += at(i, i);
    return n;
  }
  std::int64_t support(std::size_t c) const {
    std::int64_t n = 0;
    for (std::size_t j = 0; j < k_; ++j) n += at(c, j);
    return n;
  }
  std::int64_t predicted_count(std::size_t c) const {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < k_; ++i) n += at(i, c);
    return n;
  }

  double accuracy() const {
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
  }

  // Undefined ratios (0/0) count as 0.
  double precision(std::size_t c) const { return ratio(at(c, c), predicted_count(c)); }
  double recall(std::size_t c) const { return ratio(at(c, c), support(c)); }
  double f1(std::size_t c) const {
    const double p = precision(c), r = recall(c);
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }

  /// Unweighted mean over all classes, including those with no support.
  double macro_f1() const {
    double s = 0.0;
    for (std::size_t c = 0; c < k_; ++c) s += f1(c);
    return s / static_cast<double>(k_);
  }

  void write_csv(std::ostream& os) const {
    os << "true\\pred";
    for (std::size_t j = 0; j < k_; ++j) os << ',' << j;
    os << '\n';
    for (std::size_t i = 0; i < k_; ++i) {
      os << i;
      for (std::size_t j = 0; j < k_; ++j) os << ',' << at(i, j);
      os << '\n';
    }
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  static double ratio(std::int64_t a, std::int64_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  }

  std::size_t k_;
  std::vector<std::int64_t> counts_;
};

struct EvalReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  ConfusionMatrix confusion{9};
  std::vector<double> precision, recall, f1;
  double mean_latency_ms = 0.0;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;

  bool operator==(const EvalReport&) const = default;
};

inline EvalReport make_report(const ConfusionMatrix& cm) {
  EvalReport r;
  r.confusion = cm;
  r.accuracy = cm.accuracy();
  r.macro_f1 = cm.macro_f1();
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    r.precision.push_back(cm.precision(c));
    r.recall.push_back(cm.recall(c));
    r.f1.push_back(cm.f1(c));
  }
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json cm = nlohmann::json::array();
  for (std::size_t i = 0; i < r.confusion.classes(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < r.confusion.classes(); ++j) row.push_back(r.confusion.at(i, j));
    cm.push_back(row);
  }
  return {{"accuracy", r.accuracy},
          {"macro_f1", r.macro_f1},
          {"samples", r.confusion.total()},
          {"confusion", cm},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"mean_latency_ms", r.mean_latency_ms},
          {"params", r.params},
          {"macs", r.macs},
          {"gmac", static_cast<double>(r.macs) / 1e9}};
}

}  // namespace lrcw
