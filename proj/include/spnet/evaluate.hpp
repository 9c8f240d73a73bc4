#pragma once

#include <vector>

#include "spnet/data.hpp"
#include "spnet/metrics.hpp"
#include "spnet/net.hpp"

namespace spnet {

/// The multi-scale inference scale set.
inline const std::vector<double>& eval_scales_full() {
  static const std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
  return scales;
}

/// Channel softmax of a [N,K,H,W] logit map (value level, numerically
/// stabilized per pixel).
Tensor softmax_channels(const Tensor& logits);

/// Per-pixel argmax over channels of a [1,K,H,W] map; ties resolve to the
/// lowest class id.
LabelMap argmax_channels(const Tensor& probs);

/// Average class-probability map for one sample over the given scales (and
/// their mirrored copies when flip is set). Each scale resizes the input to
/// the nearest stride-aligned extents, runs the network, softmaxes, and
/// resizes the probabilities back; scales whose target extent falls below
/// the stride are skipped with a warning on stderr. Eval mode, no gradients.
Tensor predict_probs(Network& net, const SegmentationSample& sample,
                     const std::vector<double>& scales, bool flip);

/// Whole-corpus evaluation. multi_scale selects the full scale set versus
/// {1.0}; both paths run the same code.
MetricReport evaluate(Network& net, const std::vector<SegmentationSample>& samples,
                      bool multi_scale, bool flip);

}  // namespace spnet
