#include "spnet/metrics.hpp"

#include <numeric>

namespace spnet {

std::int64_t MetricReport::total() const {
  return std::accumulate(confusion.begin(), confusion.end(), std::int64_t{0});
}

void accumulate_confusion(std::vector<std::int64_t>& confusion, int num_classes,
                          const LabelMap& labels, const LabelMap& pred) {
  if (num_classes < 1) throw ConfigError("confusion: num_classes must be >= 1");
  const std::size_t k = static_cast<std::size_t>(num_classes);
  if (confusion.size() != k * k)
    throw ConfigError("confusion: accumulator size does not match num_classes");
  if (labels.data.size() != pred.data.size())
    throw ConfigError("confusion: labels and predictions differ in size");
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const std::int32_t t = labels.data[i];
    if (t == kIgnoreLabel) continue;
    const std::int32_t p = pred.data[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw ConfigError("confusion: class id out of range for num_classes=" +
                        std::to_string(num_classes));
    ++confusion[static_cast<std::size_t>(t) * k + static_cast<std::size_t>(p)];
  }
}

MetricReport metrics_from_confusion(std::vector<std::int64_t> confusion, int num_classes) {
  const std::size_t k = static_cast<std::size_t>(num_classes);
  if (confusion.size() != k * k)
    throw ConfigError("confusion: accumulator size does not match num_classes");
  MetricReport r;
  r.num_classes = num_classes;
  r.confusion = std::move(confusion);
  r.per_class_iou.assign(k, -1.0);

  std::int64_t trace = 0, total = 0;
  double iou_sum = 0.0;
  int iou_classes = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t tp = r.confusion[c * k + c];
    std::int64_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o != c) {
        fn += r.confusion[c * k + o];  // truth c predicted o
        fp += r.confusion[o * k + c];  // truth o predicted c
      }
    }
    trace += tp;
    const std::int64_t uni = tp + fp + fn;
    if (uni > 0) {
      r.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
      iou_sum += r.per_class_iou[c];
      ++iou_classes;
    }
  }
  for (std::int64_t v : r.confusion) total += v;
  r.miou = iou_classes > 0 ? iou_sum / iou_classes : 0.0;
  r.pixel_acc = total > 0 ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;
  return r;
}

}  // namespace spnet
