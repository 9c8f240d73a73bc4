#include "spnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace spnet {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

LabelMap nearest_resize_labels(const LabelMap& in, int out_h, int out_w) {
  LabelMap out(in.n, out_h, out_w);
  for (int n = 0; n < in.n; ++n)
    for (int r = 0; r < out_h; ++r) {
      const int sr = std::min(in.h - 1, static_cast<int>((static_cast<std::int64_t>(r) * in.h) /
                                                         out_h));
      for (int c = 0; c < out_w; ++c) {
        const int sc = std::min(
            in.w - 1, static_cast<int>((static_cast<std::int64_t>(c) * in.w) / out_w));
        out.at(n, r, c) = in.at(n, sr, sc);
      }
    }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  require(base_lr > 0.0, "train.base_lr: must be > 0");
  require(power > 0.0, "train.power: must be > 0");
  require(max_iter >= 1, "train.max_iter: must be >= 1");
  require(momentum >= 0.0 && momentum < 1.0, "train.momentum: must be in [0, 1)");
  require(weight_decay >= 0.0, "train.weight_decay: must be >= 0");
  require(aux_weight >= 0.0, "train.aux_weight: must be >= 0");
  require(batch_size >= 1, "train.batch_size: must be >= 1");
  require(crop >= 8 && crop % 8 == 0,
          "train.crop: must be >= 8 and divisible by 8, got " + std::to_string(crop));
  require(scale_min >= 0.5 && scale_max <= 2.0 && scale_min <= scale_max,
          "train.scale_min/scale_max: range must sit within [0.5, 2]");
  require(flip_prob >= 0.0 && flip_prob <= 1.0, "train.flip_prob: must be in [0, 1]");
}

double poly_lr(int iter, const TrainConfig& cfg) {
  if (iter < 0 || iter >= cfg.max_iter)
    throw ConfigError("poly_lr: iter must be in [0, max_iter), got iter=" +
                      std::to_string(iter) + " max_iter=" + std::to_string(cfg.max_iter));
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
  return cfg.base_lr * std::pow(frac, cfg.power);
}

Var softmax_ce(const Var& logits, const LabelMap& labels) {
  const Tensor& x = logits->value;
  if (x.rank() != 4)
    throw ConfigError("ce_loss: logits must be [N,K,H,W], got " + shape_str(x.shape));
  const int N = x.shape[0], K = x.shape[1], H = x.shape[2], W = x.shape[3];
  if (labels.n != N || labels.h != H || labels.w != W)
    throw ConfigError("ce_loss: labels are not spatially aligned with the logits");

  // Forward: mean over non-ignore pixels of (logsumexp - logit[label]).
  // The softmax probabilities double as the backward cache.
  Tensor probs(x.shape);
  double loss_acc = 0.0;
  std::int64_t m = 0;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const std::size_t base =
            (static_cast<std::size_t>(n) * K) * plane + static_cast<std::size_t>(h) * W + w;
        float mx = x.data[base];
        for (int k = 1; k < K; ++k)
          mx = std::max(mx, x.data[base + static_cast<std::size_t>(k) * plane]);
        double denom = 0.0;
        for (int k = 0; k < K; ++k)
          denom +=
              std::exp(static_cast<double>(x.data[base + static_cast<std::size_t>(k) * plane]) -
                       mx);
        for (int k = 0; k < K; ++k) {
          const std::size_t idx = base + static_cast<std::size_t>(k) * plane;
          probs.data[idx] = static_cast<float>(
              std::exp(static_cast<double>(x.data[idx]) - mx) / denom);
        }
        const std::int32_t t = labels.at(n, h, w);
        if (t == kIgnoreLabel) continue;
        if (t < 0 || t >= K)
          throw ConfigError("ce_loss: label " + std::to_string(t) +
                            " out of range for K=" + std::to_string(K));
        const std::size_t ti = base + static_cast<std::size_t>(t) * plane;
        loss_acc += std::log(denom) + mx - static_cast<double>(x.data[ti]);
        ++m;
      }
  if (m == 0) throw ConfigError("ce_loss: every pixel is ignore-labeled");

  Tensor value({1});
  value.data[0] = static_cast<float>(loss_acc / static_cast<double>(m));

  LabelMap labels_copy = labels;
  const float inv_m = 1.0f / static_cast<float>(m);
  return make_op(std::move(value), {logits},
                 [probs = std::move(probs), labels_copy = std::move(labels_copy), inv_m, N, K,
                  H, W, plane](const Tensor& gy, const std::vector<Tensor*>& grads) {
                   if (!grads[0]) return;
                   const float g = gy.data[0] * inv_m;
                   Tensor& dx = *grads[0];
                   for (int n = 0; n < N; ++n)
                     for (int h = 0; h < H; ++h)
                       for (int w = 0; w < W; ++w) {
                         const std::int32_t t = labels_copy.at(n, h, w);
                         if (t == kIgnoreLabel) continue;
                         const std::size_t base = (static_cast<std::size_t>(n) * K) * plane +
                                                  static_cast<std::size_t>(h) * W + w;
                         for (int k = 0; k < K; ++k) {
                           const std::size_t idx = base + static_cast<std::size_t>(k) * plane;
                           const float onehot = (k == t) ? 1.0f : 0.0f;
                           dx.data[idx] += g * (probs.data[idx] - onehot);
                         }
                       }
                 });
}

CeLoss ce_loss(const Var& main_logits, const Var& aux_logits, const LabelMap& labels,
               double aux_weight) {
  require(aux_weight >= 0.0, "ce_loss: aux_weight must be >= 0");
  CeLoss out;
  out.main = softmax_ce(main_logits, labels);
  out.aux = softmax_ce(aux_logits, labels);
  out.total = add(out.main, scale(out.aux, static_cast<float>(aux_weight)));
  return out;
}

SegmentationSample augment_sample(const SegmentationSample& sample, const TrainConfig& cfg,
                                  Rng& rng) {
  const int H = sample.height(), W = sample.width();
  const double s = rng.uniform(static_cast<float>(cfg.scale_min),
                               static_cast<float>(cfg.scale_max));
  const int sh = std::max(1, static_cast<int>(std::lround(H * s)));
  const int sw = std::max(1, static_cast<int>(std::lround(W * s)));

  Tensor img4 = sample.image;
  img4.shape = {1, 3, H, W};
  Tensor scaled = bilinear_resize(img4, sh, sw);
  LabelMap labels = nearest_resize_labels(sample.labels, sh, sw);

  if (rng.bernoulli(cfg.flip_prob)) {
    scaled = hflip(scaled);
    LabelMap flipped(labels.n, labels.h, labels.w);
    for (int n = 0; n < labels.n; ++n)
      for (int r = 0; r < labels.h; ++r)
        for (int c = 0; c < labels.w; ++c)
          flipped.at(n, r, c) = labels.at(n, r, labels.w - 1 - c);
    labels = std::move(flipped);
  }

  // Pad up to the crop size (zeros / ignore), then cut a random window.
  const int ph = std::max(sh, cfg.crop), pw = std::max(sw, cfg.crop);
  SegmentationSample out;
  out.image = Tensor({3, cfg.crop, cfg.crop});
  out.labels = LabelMap(1, cfg.crop, cfg.crop, kIgnoreLabel);
  const int r0 = rng.uniform_int(ph - cfg.crop + 1);
  const int c0 = rng.uniform_int(pw - cfg.crop + 1);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < cfg.crop; ++r)
      for (int c = 0; c < cfg.crop; ++c) {
        const int sr = r0 + r, sc = c0 + c;
        const float v = (sr < sh && sc < sw)
                            ? scaled.data[(static_cast<std::size_t>(ch) * sh + sr) * sw + sc]
                            : 0.0f;
        out.image.data[(static_cast<std::size_t>(ch) * cfg.crop + r) * cfg.crop + c] = v;
      }
  for (int r = 0; r < cfg.crop; ++r)
    for (int c = 0; c < cfg.crop; ++c) {
      const int sr = r0 + r, sc = c0 + c;
      if (sr < sh && sc < sw) out.labels.at(0, r, c) = labels.at(0, sr, sc);
    }
  return out;
}

TrainStats train_network(Network& net, const std::vector<SegmentationSample>& corpus,
                         const TrainConfig& cfg) {
  cfg.validate();
  require(!corpus.empty(), "train: corpus must not be empty");
  require(cfg.crop % net.output_stride() == 0,
          "train.crop: must be divisible by the network output stride " +
              std::to_string(net.output_stride()));

  ParamMap pm = net.params();
  std::vector<Var> trainable;
  trainable.reserve(pm.trainable.size());
  for (auto& [name, v] : pm.trainable) trainable.push_back(v);
  Sgd opt(std::move(trainable), static_cast<float>(cfg.momentum),
          static_cast<float>(cfg.weight_decay));

  Rng root(cfg.seed);
  Rng data_rng = root.child(1);
  Rng aug_rng = root.child(2);

  TrainStats stats;
  stats.rows.reserve(static_cast<std::size_t>(cfg.max_iter));
  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    const double lr = poly_lr(iter, cfg);

    Tensor batch({cfg.batch_size, 3, cfg.crop, cfg.crop});
    LabelMap labels(cfg.batch_size, cfg.crop, cfg.crop);
    const std::size_t sample_elems = static_cast<std::size_t>(3) * cfg.crop * cfg.crop;
    const std::size_t label_elems = static_cast<std::size_t>(cfg.crop) * cfg.crop;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int idx = data_rng.uniform_int(static_cast<int>(corpus.size()));
      SegmentationSample aug = augment_sample(corpus[static_cast<std::size_t>(idx)], cfg,
                                              aug_rng);
      std::copy(aug.image.data.begin(), aug.image.data.end(),
                batch.data.begin() + static_cast<std::ptrdiff_t>(b * sample_elems));
      std::copy(aug.labels.data.begin(), aug.labels.data.end(),
                labels.data.begin() + static_cast<std::ptrdiff_t>(b * label_elems));
    }

    Var input = constant(std::move(batch));
    auto [main_logits, aux_logits] = net.forward(input, Mode::Train);
    CeLoss loss = ce_loss(main_logits, aux_logits, labels, cfg.aux_weight);
    opt.zero_grad();
    backward(loss.total);
    opt.step(static_cast<float>(lr));

    stats.rows.push_back({iter, lr, static_cast<double>(loss.main->value.data[0]),
                          static_cast<double>(loss.aux->value.data[0])});
  }
  return stats;
}

}  // namespace spnet
