#pragma once

#include <cstdint>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {

/// Confusion-matrix-backed segmentation metrics. Ignore-labeled pixels are
/// excluded from both the matrix and every derived number.
struct MetricReport {
  int num_classes = 0;
  std::vector<std::int64_t> confusion;  // K*K, row = true class, col = predicted
  std::vector<double> per_class_iou;    // -1 for classes with zero union
  double miou = 0.0;                    // mean IoU over classes with nonzero union
  double pixel_acc = 0.0;               // trace / total

  std::int64_t at(int truth, int pred) const {
    return confusion[static_cast<std::size_t>(truth) * static_cast<std::size_t>(num_classes) +
                     static_cast<std::size_t>(pred)];
  }
  std::int64_t total() const;
};

/// Adds one label/prediction map pair into a K*K confusion accumulator.
/// Entries equal to kIgnoreLabel in `labels` are skipped.
void accumulate_confusion(std::vector<std::int64_t>& confusion, int num_classes,
                          const LabelMap& labels, const LabelMap& pred);

/// Finalizes a confusion accumulator into a report (IoU per class, mIoU,
/// pixel accuracy).
MetricReport metrics_from_confusion(std::vector<std::int64_t> confusion, int num_classes);

}  // namespace spnet
