#include "esc/metrics.hpp"

#include <numeric>

#include "esc/error.hpp"

namespace esc::metrics {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 1) throw ConfigError("confusion matrix needs >= 1 class");
  counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> pred, const events::SemanticMask& gt) {
  if (pred.size() != gt.labels.size()) throw InputError("accumulate: prediction and mask sizes differ");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int g = gt.labels[i];
    if (g == events::kIgnoreLabel) continue;
    const int p = pred[i];
    if (g < 1 || g > classes_) throw InputError("accumulate: ground-truth label " + std::to_string(g) + " out of range");
    if (p < 1 || p > classes_) throw InputError("accumulate: predicted label " + std::to_string(p) + " out of range");
    ++counts_[static_cast<std::size_t>(g - 1) * classes_ + (p - 1)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw InputError("merge: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

Summary summarize(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw EvaluationError("summarize: confusion matrix is empty");
  const int c = cm.classes();
  Summary s;
  std::uint64_t trace = 0;
  double acc_sum = 0.0, iou_sum = 0.0;
  int acc_n = 0, iou_n = 0;
  for (int k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    trace += tp;
    ClassScore cs;
    cs.label = k + 1;
    cs.gt_pixels = row;
    cs.present = row + col > 0;
    if (row > 0) {
      cs.accuracy = 100.0 * static_cast<double>(tp) / static_cast<double>(row);
      acc_sum += cs.accuracy;
      ++acc_n;
    }
    if (cs.present) {
      cs.iou = 100.0 * static_cast<double>(tp) / static_cast<double>(row + col - tp);
      iou_sum += cs.iou;
      ++iou_n;
    }
    s.per_class.push_back(cs);
  }
  s.gacc = 100.0 * static_cast<double>(trace) / static_cast<double>(total);
  s.macc = acc_n ? acc_sum / acc_n : 0.0;
  s.miou = iou_n ? iou_sum / iou_n : 0.0;
  return s;
}

nlohmann::json to_json(const Summary& s) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& c : s.per_class) {
    per[std::to_string(c.label)] = {
        {"present", c.present}, {"accuracy", c.accuracy}, {"iou", c.iou}, {"gt_pixels", c.gt_pixels}};
  }
  return {{"gACC", s.gacc}, {"mACC", s.macc}, {"mIoU", s.miou}, {"per_class", per}};
}

}  // namespace esc::metrics
