#include "spnet/evaluate.hpp"

#include <cmath>
#include <cstdio>

namespace spnet {

Tensor softmax_channels(const Tensor& logits) {
  if (logits.rank() != 4)
    throw ConfigError("softmax: expected [N,K,H,W], got " + shape_str(logits.shape));
  const int N = logits.shape[0], K = logits.shape[1], H = logits.shape[2],
            W = logits.shape[3];
  Tensor out(logits.shape);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const std::size_t base =
            (static_cast<std::size_t>(n) * K) * plane + static_cast<std::size_t>(h) * W + w;
        float mx = logits.data[base];
        for (int k = 1; k < K; ++k)
          mx = std::max(mx, logits.data[base + static_cast<std::size_t>(k) * plane]);
        double denom = 0.0;
        for (int k = 0; k < K; ++k)
          denom += std::exp(
              static_cast<double>(logits.data[base + static_cast<std::size_t>(k) * plane]) -
              mx);
        for (int k = 0; k < K; ++k) {
          const std::size_t idx = base + static_cast<std::size_t>(k) * plane;
          out.data[idx] =
              static_cast<float>(std::exp(static_cast<double>(logits.data[idx]) - mx) / denom);
        }
      }
  return out;
}

LabelMap argmax_channels(const Tensor& probs) {
  if (probs.rank() != 4 || probs.shape[0] != 1)
    throw ConfigError("argmax: expected [1,K,H,W], got " + shape_str(probs.shape));
  const int K = probs.shape[1], H = probs.shape[2], W = probs.shape[3];
  LabelMap out(1, H, W);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      const std::size_t base = static_cast<std::size_t>(h) * W + w;
      int best = 0;
      float best_v = probs.data[base];
      for (int k = 1; k < K; ++k) {
        const float v = probs.data[base + static_cast<std::size_t>(k) * plane];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out.at(0, h, w) = best;
    }
  return out;
}

namespace {

int aligned_extent(int extent, double s, int stride) {
  return static_cast<int>(std::lround(extent * s / stride)) * stride;
}

/// Forward one [1,3,h,w] tensor in eval mode and return softmaxed
/// probabilities at that resolution.
Tensor forward_probs(Network& net, Tensor image) {
  Var input = constant(std::move(image));
  auto [main_logits, aux_logits] = net.forward(input, Mode::Eval, /*with_aux=*/false);
  (void)aux_logits;
  return softmax_channels(main_logits->value);
}

}  // namespace

Tensor predict_probs(Network& net, const SegmentationSample& sample,
                     const std::vector<double>& scales, bool flip) {
  const int H = sample.height(), W = sample.width();
  Tensor img4 = sample.image;
  img4.shape = {1, 3, H, W};

  Tensor acc({1, net.num_classes(), H, W}, 0.0f);
  int contributions = 0;
  NoGradGuard no_grad;
  for (double s : scales) {
    const int ht = aligned_extent(H, s, net.output_stride());
    const int wt = aligned_extent(W, s, net.output_stride());
    if (ht < net.output_stride() || wt < net.output_stride()) {
      std::fprintf(stderr,
                   "[evaluate] warning: scale %.2f of %dx%d falls below the stride-%d "
                   "minimum, skipping\n",
                   s, H, W, net.output_stride());
      continue;
    }
    Tensor scaled = (ht == H && wt == W) ? img4 : bilinear_resize(img4, ht, wt);
    Tensor probs = forward_probs(net, scaled);
    Tensor back = (ht == H && wt == W) ? probs : bilinear_resize(probs, H, W);
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += back.data[i];
    ++contributions;
    if (flip) {
      Tensor probs_f = forward_probs(net, hflip(scaled));
      Tensor unflipped = hflip(probs_f);
      Tensor back_f = (ht == H && wt == W) ? unflipped : bilinear_resize(unflipped, H, W);
      for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += back_f.data[i];
      ++contributions;
    }
  }
  if (contributions == 0)
    throw ConfigError("evaluate: every scale was skipped; nothing to average");
  const float denom = static_cast<float>(contributions);
  for (float& v : acc.data) v /= denom;
  return acc;
}

MetricReport evaluate(Network& net, const std::vector<SegmentationSample>& samples,
                      bool multi_scale, bool flip) {
  if (samples.empty()) throw ConfigError("evaluate: sample set must not be empty");
  const std::vector<double> single{1.0};
  const std::vector<double>& scales = multi_scale ? eval_scales_full() : single;
  const int k = net.num_classes();
  std::vector<std::int64_t> confusion(static_cast<std::size_t>(k) * k, 0);
  for (const SegmentationSample& sample : samples) {
    Tensor probs = predict_probs(net, sample, scales, flip);
    LabelMap pred = argmax_channels(probs);
    accumulate_confusion(confusion, k, sample.labels, pred);
  }
  return metrics_from_confusion(std::move(confusion), k);
}

}  // namespace spnet
