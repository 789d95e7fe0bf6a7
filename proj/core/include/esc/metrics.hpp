#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "esc/boundary.hpp"

namespace esc::metrics {

// Rows are ground truth, columns predictions, both indexed by label - 1.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = events::kDefaultClasses);

  // Counts every pixel whose ground truth is not the ignore label. Predictions
  // and labels are 1..c; anything else throws InputError.
  void accumulate(std::span<const std::uint8_t> pred, const events::SemanticMask& gt);
  void merge(const ConfusionMatrix& other);

  [[nodiscard]] int classes() const noexcept { return classes_; }
  [[nodiscard]] std::uint64_t at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * classes_ + pred];
  }
  [[nodiscard]] std::uint64_t total() const;
  [[nodiscard]] const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
};

struct ClassScore {
  int label = 0;
  bool present = false;    // in ground truth or predictions
  double accuracy = 0.0;   // % (meaningful when gt_pixels > 0)
  double iou = 0.0;        // %
  std::uint64_t gt_pixels = 0;
};

struct Summary {
  double gacc = 0.0, macc = 0.0, miou = 0.0;  // percentages
  std::vector<ClassScore> per_class;
};

// gACC = trace / total; mACC averages accuracy over classes with ground truth;
// mIoU averages IoU over classes present in ground truth or predictions.
// Throws EvaluationError on an empty matrix.
Summary summarize(const ConfusionMatrix& cm);

nlohmann::json to_json(const Summary& s);

}  // namespace esc::metrics
