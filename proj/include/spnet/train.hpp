#pragma once

#include <cstdint>
#include <vector>

#include "spnet/data.hpp"
#include "spnet/net.hpp"
#include "spnet/optim.hpp"

namespace spnet {

/// Optimization schedule and augmentation policy.
struct TrainConfig {
  double base_lr = 0.01;
  double power = 0.9;  // poly schedule exponent
  int max_iter = 200;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double aux_weight = 0.4;
  int batch_size = 8;
  int crop = 64;          // training crop side; multiple of the output stride
  double scale_min = 0.5;  // random rescale range, within [0.5, 2]
  double scale_max = 2.0;
  double flip_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError naming the offending field
};

/// lr(iter) = base_lr * (1 - iter/max_iter)^power. Rejects iter outside
/// [0, max_iter).
double poly_lr(int iter, const TrainConfig& cfg);

/// Mean softmax cross-entropy over non-ignore pixels of one logit map.
/// Differentiable; rejects an all-ignore label map.
Var softmax_ce(const Var& logits, const LabelMap& labels);

/// Main + weighted auxiliary loss. The parts stay accessible for logging.
struct CeLoss {
  Var total;
  Var main;
  Var aux;
};
CeLoss ce_loss(const Var& main_logits, const Var& aux_logits, const LabelMap& labels,
               double aux_weight);

/// Random rescale (bilinear image / nearest labels), horizontal flip, and a
/// crop to crop x crop (padding with zeros / ignore when the rescaled sample
/// is smaller than the crop). Deterministic given the stream.
SegmentationSample augment_sample(const SegmentationSample& sample, const TrainConfig& cfg,
                                  Rng& rng);

/// One row of the training log (written as CSV iter,lr,main_loss,aux_loss).
struct LossRow {
  int iter = 0;
  double lr = 0.0;
  double main_loss = 0.0;
  double aux_loss = 0.0;
};

struct TrainStats {
  std::vector<LossRow> rows;
};

/// Full training loop: poly-scheduled momentum SGD over random augmented
/// batches from the corpus. Deterministic given (net seed, cfg.seed, corpus).
TrainStats train_network(Network& net, const std::vector<SegmentationSample>& corpus,
                         const TrainConfig& cfg);

}  // namespace spnet
