#include "spnet/pooling.hpp"

#include <string>

namespace spnet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

void require_rank4(const Var& x, const char* op) {
  require(x->value.rank() == 4,
          std::string(op) + ": expected rank-4 input, got " + shape_str(x->value.shape));
}

int bin_lo(int a, int in, int bins) {
  return static_cast<int>(static_cast<std::int64_t>(a) * in / bins);
}

int bin_hi(int a, int in, int bins) {
  return static_cast<int>((static_cast<std::int64_t>(a + 1) * in + bins - 1) / bins);
}

}  // namespace

Var avg_pool2d(const Var& x, PoolWindow window) {
  require_rank4(x, "avg_pool2d");
  const Tensor& xv = x->value;
  const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  const int kh = window.h, kw = window.w;
  require(kh >= 1 && kw >= 1, "avg_pool2d: window extents must be positive");
  require(H % kh == 0 && W % kw == 0,
          "avg_pool2d: window " + std::to_string(kh) + "x" + std::to_string(kw) +
              " does not divide input " + shape_str(xv.shape) +
              "; use adaptive_avg_pool2d for non-divisible extents");
  const int OH = H / kh, OW = W / kw;
  const float denom = static_cast<float>(kh) * kw;
  Tensor out({N, C, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          float acc = 0.0f;
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) acc += xv.at4(n, c, oh * kh + i, ow * kw + j);
          out.at4(n, c, oh, ow) = acc / denom;
        }
  return make_op(std::move(out), {x},
                 [N, C, OH, OW, kh, kw, denom](const Tensor& up, const std::vector<Tensor*>& pg) {
                   if (!pg[0]) return;
                   for (int n = 0; n < N; ++n)
                     for (int c = 0; c < C; ++c)
                       for (int oh = 0; oh < OH; ++oh)
                         for (int ow = 0; ow < OW; ++ow) {
                           const float u = up.at4(n, c, oh, ow) / denom;
                           for (int i = 0; i < kh; ++i)
                             for (int j = 0; j < kw; ++j)
                               pg[0]->at4(n, c, oh * kh + i, ow * kw + j) += u;
                         }
                 });
}

Var strip_pool_h(const Var& x) {
  require_rank4(x, "strip_pool_h");
  const Tensor& xv = x->value;
  const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  Tensor out({N, C, H, 1});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        float acc = 0.0f;
        for (int w = 0; w < W; ++w) acc += xv.at4(n, c, h, w);
        out.at4(n, c, h, 0) = acc / static_cast<float>(W);
      }
  return make_op(std::move(out), {x},
                 [N, C, H, W](const Tensor& up, const std::vector<Tensor*>& pg) {
                   if (!pg[0]) return;
                   for (int n = 0; n < N; ++n)
                     for (int c = 0; c < C; ++c)
                       for (int h = 0; h < H; ++h) {
                         const float u = up.at4(n, c, h, 0) / static_cast<float>(W);
                         for (int w = 0; w < W; ++w) pg[0]->at4(n, c, h, w) += u;
                       }
                 });
}

Var strip_pool_v(const Var& x) {
  require_rank4(x, "strip_pool_v");
  const Tensor& xv = x->value;
  const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  Tensor out({N, C, 1, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int w = 0; w < W; ++w) {
        float acc = 0.0f;
        for (int h = 0; h < H; ++h) acc += xv.at4(n, c, h, w);
        out.at4(n, c, 0, w) = acc / static_cast<float>(H);
      }
  return make_op(std::move(out), {x},
                 [N, C, H, W](const Tensor& up, const std::vector<Tensor*>& pg) {
                   if (!pg[0]) return;
                   for (int n = 0; n < N; ++n)
                     for (int c = 0; c < C; ++c)
                       for (int w = 0; w < W; ++w) {
                         const float u = up.at4(n, c, 0, w) / static_cast<float>(H);
                         for (int h = 0; h < H; ++h) pg[0]->at4(n, c, h, w) += u;
                       }
                 });
}

Var adaptive_avg_pool2d(const Var& x, BinGrid grid) {
  require_rank4(x, "adaptive_avg_pool2d");
  const Tensor& xv = x->value;
  const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  const int BH = grid.bins_h, BW = grid.bins_w;
  require(BH >= 1 && BW >= 1, "adaptive_avg_pool2d: grid extents must be positive");
  require(BH <= H && BW <= W, "adaptive_avg_pool2d: grid " + std::to_string(BH) + "x" +
                                  std::to_string(BW) + " exceeds input " + shape_str(xv.shape));
  Tensor out({N, C, BH, BW});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int a = 0; a < BH; ++a) {
        const int h0 = bin_lo(a, H, BH), h1 = bin_hi(a, H, BH);
        for (int b = 0; b < BW; ++b) {
          const int w0 = bin_lo(b, W, BW), w1 = bin_hi(b, W, BW);
          float acc = 0.0f;
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w) acc += xv.at4(n, c, h, w);
          out.at4(n, c, a, b) = acc / (static_cast<float>(h1 - h0) * (w1 - w0));
        }
      }
  return make_op(std::move(out), {x},
                 [N, C, H, W, BH, BW](const Tensor& up, const std::vector<Tensor*>& pg) {
                   if (!pg[0]) return;
                   for (int n = 0; n < N; ++n)
                     for (int c = 0; c < C; ++c)
                       for (int a = 0; a < BH; ++a) {
                         const int h0 = bin_lo(a, H, BH), h1 = bin_hi(a, H, BH);
                         for (int b = 0; b < BW; ++b) {
                           const int w0 = bin_lo(b, W, BW), w1 = bin_hi(b, W, BW);
                           const float u = up.at4(n, c, a, b) /
                                           (static_cast<float>(h1 - h0) * (w1 - w0));
                           for (int h = h0; h < h1; ++h)
                             for (int w = w0; w < w1; ++w) pg[0]->at4(n, c, h, w) += u;
                         }
                       }
                 });
}

Var global_avg_pool(const Var& x) {
  require_rank4(x, "global_avg_pool");
  return adaptive_avg_pool2d(x, BinGrid{1, 1});
}

}  // namespace spnet
