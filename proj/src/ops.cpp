#include "spnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace spnet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

void require_rank4(const Var& x, const char* op) {
  require(x->value.rank() == 4,
          std::string(op) + ": expected rank-4 input, got " + shape_str(x->value.shape));
}

// C[M,N] += A[M,K] * B[K,N]
void mm_nn(const float* A, const float* B, float* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    float* Ci = C + static_cast<std::size_t>(i) * N;
    const float* Ai = A + static_cast<std::size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const float a = Ai[k];
      const float* Bk = B + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) Ci[j] += a * Bk[j];
    }
  }
}

// C[M,N] += A^T * B with A stored [K,M], B stored [K,N]
void mm_tn(const float* A, const float* B, float* C, int M, int K, int N) {
  for (int k = 0; k < K; ++k) {
    const float* Ak = A + static_cast<std::size_t>(k) * M;
    const float* Bk = B + static_cast<std::size_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const float a = Ak[i];
      float* Ci = C + static_cast<std::size_t>(i) * N;
      for (int j = 0; j < N; ++j) Ci[j] += a * Bk[j];
    }
  }
}

// C[M,N] += A * B^T with A stored [M,K], B stored [N,K]
void mm_nt(const float* A, const float* B, float* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const float* Ai = A + static_cast<std::size_t>(i) * K;
    float* Ci = C + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const float* Bj = B + static_cast<std::size_t>(j) * K;
      float acc = 0.0f;
      for (int k = 0; k < K; ++k) acc += Ai[k] * Bj[k];
      Ci[j] += acc;
    }
  }
}

struct ConvGeom {
  int N, Cin, H, W;
  int Cout, kh, kw;
  int stride, ph, pw, dil;
  int OH, OW;
};

int conv_out_extent(int in, int pad, int k, int dil, int stride) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// One sample: x [Cin,H,W] -> col [Cin*kh*kw, OH*OW]
void im2col(const float* x, const ConvGeom& g, float* col) {
  const int P = g.OH * g.OW;
  for (int ci = 0; ci < g.Cin; ++ci) {
    const float* xc = x + static_cast<std::size_t>(ci) * g.H * g.W;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        float* row = col + (static_cast<std::size_t>(ci) * g.kh * g.kw + ki * g.kw + kj) * P;
        for (int oh = 0; oh < g.OH; ++oh) {
          const int ih = oh * g.stride - g.ph + ki * g.dil;
          float* r = row + static_cast<std::size_t>(oh) * g.OW;
          if (ih < 0 || ih >= g.H) {
            std::memset(r, 0, sizeof(float) * g.OW);
            continue;
          }
          const float* xr = xc + static_cast<std::size_t>(ih) * g.W;
          for (int ow = 0; ow < g.OW; ++ow) {
            const int iw = ow * g.stride - g.pw + kj * g.dil;
            r[ow] = (iw >= 0 && iw < g.W) ? xr[iw] : 0.0f;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter col [Cin*kh*kw, OH*OW] back into dx [Cin,H,W].
void col2im_acc(const float* col, const ConvGeom& g, float* dx) {
  const int P = g.OH * g.OW;
  for (int ci = 0; ci < g.Cin; ++ci) {
    float* xc = dx + static_cast<std::size_t>(ci) * g.H * g.W;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const float* row = col + (static_cast<std::size_t>(ci) * g.kh * g.kw + ki * g.kw + kj) * P;
        for (int oh = 0; oh < g.OH; ++oh) {
          const int ih = oh * g.stride - g.ph + ki * g.dil;
          if (ih < 0 || ih >= g.H) continue;
          const float* r = row + static_cast<std::size_t>(oh) * g.OW;
          float* xr = xc + static_cast<std::size_t>(ih) * g.W;
          for (int ow = 0; ow < g.OW; ++ow) {
            const int iw = ow * g.stride - g.pw + kj * g.dil;
            if (iw >= 0 && iw < g.W) xr[iw] += r[ow];
          }
        }
      }
    }
  }
}

bool broadcastable_hw(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != 4 || b.size() != 4) return false;
  if (a[0] != b[0] || a[1] != b[1]) return false;
  bool h_ok = a[2] == b[2] || a[2] == 1 || b[2] == 1;
  bool w_ok = a[3] == b[3] || a[3] == 1 || b[3] == 1;
  return h_ok && w_ok;
}

}  // namespace

// ---- add / mul ---------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.shape == bv.shape) {
    Tensor out(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    return make_op(std::move(out), {a, b},
                   [](const Tensor& up, const std::vector<Tensor*>& pg) {
                     for (Tensor* g : pg) {
                       if (!g) continue;
                       for (std::size_t i = 0; i < up.data.size(); ++i) g->data[i] += up.data[i];
                     }
                   });
  }
  require(broadcastable_hw(av.shape, bv.shape),
          "add: incompatible shapes " + shape_str(av.shape) + " and " + shape_str(bv.shape));
  const int N = av.shape[0], C = av.shape[1];
  const int H = std::max(av.shape[2], bv.shape[2]);
  const int W = std::max(av.shape[3], bv.shape[3]);
  const int ah = av.shape[2], aw = av.shape[3], bh = bv.shape[2], bw = bv.shape[3];
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          out.at4(n, c, h, w) = av.at4(n, c, ah == 1 ? 0 : h, aw == 1 ? 0 : w) +
                                bv.at4(n, c, bh == 1 ? 0 : h, bw == 1 ? 0 : w);
  return make_op(std::move(out), {a, b},
                 [N, C, H, W, ah, aw, bh, bw](const Tensor& up, const std::vector<Tensor*>& pg) {
                   for (int n = 0; n < N; ++n)
                     for (int c = 0; c < C; ++c)
                       for (int h = 0; h < H; ++h)
                         for (int w = 0; w < W; ++w) {
                           const float u = up.at4(n, c, h, w);
                           if (pg[0]) pg[0]->at4(n, c, ah == 1 ? 0 : h, aw == 1 ? 0 : w) += u;
                           if (pg[1]) pg[1]->at4(n, c, bh == 1 ? 0 : h, bw == 1 ? 0 : w) += u;
                         }
                 });
}

Var mul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.shape == bv.shape) {
    Tensor out(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
    return make_op(std::move(out), {a, b},
                   [a, b](const Tensor& up, const std::vector<Tensor*>& pg) {
                     const Tensor& av = a->value;
                     const Tensor& bv = b->value;
                     if (pg[0])
                       for (std::size_t i = 0; i < up.data.size(); ++i)
                         pg[0]->data[i] += up.data[i] * bv.data[i];
                     if (pg[1])
                       for (std::size_t i = 0; i < up.data.size(); ++i)
                         pg[1]->data[i] += up.data[i] * av.data[i];
                   });
  }
  require(broadcastable_hw(av.shape, bv.shape),
          "mul: incompatible shapes " + shape_str(av.shape) + " and " + shape_str(bv.shape));
  const int N = av.shape[0], C = av.shape[1];
  const int H = std::max(av.shape[2], bv.shape[2]);
  const int W = std::max(av.shape[3], bv.shape[3]);
  const int ah = av.shape[2], aw = av.shape[3], bh = bv.shape[2], bw = bv.shape[3];
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          out.at4(n, c, h, w) = av.at4(n, c, ah == 1 ? 0 : h, aw == 1 ? 0 : w) *
                                bv.at4(n, c, bh == 1 ? 0 : h, bw == 1 ? 0 : w);
  return make_op(
      std::move(out), {a, b},
      [a, b, N, C, H, W, ah, aw, bh, bw](const Tensor& up, const std::vector<Tensor*>& pg) {
        const Tensor& av = a->value;
        const Tensor& bv = b->value;
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
              for (int w = 0; w < W; ++w) {
                const float u = up.at4(n, c, h, w);
                const int ahh = ah == 1 ? 0 : h, aww = aw == 1 ? 0 : w;
                const int bhh = bh == 1 ? 0 : h, bww = bw == 1 ? 0 : w;
                if (pg[0]) pg[0]->at4(n, c, ahh, aww) += u * bv.at4(n, c, bhh, bww);
                if (pg[1]) pg[1]->at4(n, c, bhh, bww) += u * av.at4(n, c, ahh, aww);
              }
      });
}

Var relu(const Var& x) {
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = x->value.data[i] > 0.0f ? x->value.data[i] : 0.0f;
  return make_op(std::move(out), {x}, [x](const Tensor& up, const std::vector<Tensor*>& pg) {
    if (!pg[0]) return;
    const Tensor& xv = x->value;
    for (std::size_t i = 0; i < up.data.size(); ++i)
      if (xv.data[i] > 0.0f) pg[0]->data[i] += up.data[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const float v = x->value.data[i];
    out.data[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                            : std::exp(v) / (1.0f + std::exp(v));
  }
  Tensor y = out;  // captured for the backward rule
  return make_op(std::move(out), {x}, [y](const Tensor& up, const std::vector<Tensor*>& pg) {
    if (!pg[0]) return;
    for (std::size_t i = 0; i < up.data.size(); ++i) {
      const float s = y.data[i];
      pg[0]->data[i] += up.data[i] * s * (1.0f - s);
    }
  });
}

Var scale(const Var& x, float s) {
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = s * x->value.data[i];
  return make_op(std::move(out), {x}, [s](const Tensor& up, const std::vector<Tensor*>& pg) {
    if (!pg[0]) return;
    for (std::size_t i = 0; i < up.data.size(); ++i) pg[0]->data[i] += s * up.data[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  require(av.shape[0] == bv.shape[0] && av.shape[2] == bv.shape[2] && av.shape[3] == bv.shape[3],
          "concat_channels: non-channel extents differ, " + shape_str(av.shape) + " vs " +
              shape_str(bv.shape));
  const int N = av.shape[0], Ca = av.shape[1], Cb = bv.shape[1];
  const int H = av.shape[2], W = av.shape[3];
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor out({N, Ca + Cb, H, W});
  for (int n = 0; n < N; ++n) {
    std::memcpy(out.ptr() + (static_cast<std::size_t>(n) * (Ca + Cb)) * plane,
                av.ptr() + static_cast<std::size_t>(n) * Ca * plane, sizeof(float) * Ca * plane);
    std::memcpy(out.ptr() + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * plane,
                bv.ptr() + static_cast<std::size_t>(n) * Cb * plane, sizeof(float) * Cb * plane);
  }
  return make_op(std::move(out), {a, b},
                 [N, Ca, Cb, plane](const Tensor& up, const std::vector<Tensor*>& pg) {
                   for (int n = 0; n < N; ++n) {
                     const float* u = up.ptr() + static_cast<std::size_t>(n) * (Ca + Cb) * plane;
                     if (pg[0]) {
                       float* g = pg[0]->ptr() + static_cast<std::size_t>(n) * Ca * plane;
                       for (std::size_t i = 0; i < Ca * plane; ++i) g[i] += u[i];
                     }
                     if (pg[1]) {
                       float* g = pg[1]->ptr() + static_cast<std::size_t>(n) * Cb * plane;
                       const float* ub = u + Ca * plane;
                       for (std::size_t i = 0; i < Cb * plane; ++i) g[i] += ub[i];
                     }
                   }
                 });
}

Var reshape(const Var& x, std::vector<int> shape) {
  check_shape(shape, "reshape");
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  require(n == x->value.numel(), "reshape: element count mismatch, " + shape_str(x->value.shape) +
                                     " -> " + shape_str(shape));
  Tensor out;
  out.shape = std::move(shape);
  out.data = x->value.data;
  return make_op(std::move(out), {x}, [](const Tensor& up, const std::vector<Tensor*>& pg) {
    if (!pg[0]) return;
    for (std::size_t i = 0; i < up.data.size(); ++i) pg[0]->data[i] += up.data[i];
  });
}

Var transpose_hw(const Var& x) {
  require_rank4(x, "transpose_hw");
  const Tensor& xv = x->value;
  const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  Tensor out({N, C, W, H});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) out.at4(n, c, w, h) = xv.at4(n, c, h, w);
  return make_op(std::move(out), {x},
                 [N, C, H, W](const Tensor& up, const std::vector<Tensor*>& pg) {
                   if (!pg[0]) return;
                   for (int n = 0; n < N; ++n)
                     for (int c = 0; c < C; ++c)
                       for (int h = 0; h < H; ++h)
                         for (int w = 0; w < W; ++w)
                           pg[0]->at4(n, c, h, w) += up.at4(n, c, w, h);
                 });
}

Var sum_all(const Var& x) {
  double acc = 0.0;
  for (float v : x->value.data) acc += v;
  Tensor out({1});
  out.data[0] = static_cast<float>(acc);
  return make_op(std::move(out), {x}, [](const Tensor& up, const std::vector<Tensor*>& pg) {
    if (!pg[0]) return;
    const float u = up.data[0];
    for (float& g : pg[0]->data) g += u;
  });
}

// ---- convolution -------------------------------------------------------------

Var conv2d_hw(const Var& x, const Var& w, const Var& bias, int stride, int pad_h, int pad_w,
              int dilation) {
  require_rank4(x, "conv2d");
  require_rank4(w, "conv2d");
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  ConvGeom g;
  g.N = xv.shape[0];
  g.Cin = xv.shape[1];
  g.H = xv.shape[2];
  g.W = xv.shape[3];
  g.Cout = wv.shape[0];
  g.kh = wv.shape[2];
  g.kw = wv.shape[3];
  g.stride = stride;
  g.ph = pad_h;
  g.pw = pad_w;
  g.dil = dilation;
  require(wv.shape[1] == g.Cin, "conv2d: input channel mismatch, input " + shape_str(xv.shape) +
                                    " vs weight " + shape_str(wv.shape));
  require(g.kh % 2 == 1 && g.kw % 2 == 1, "conv2d: kernel extents must be odd, got weight " +
                                              shape_str(wv.shape));
  require(stride >= 1 && dilation >= 1 && pad_h >= 0 && pad_w >= 0,
          "conv2d: stride/dilation must be >= 1 and padding >= 0");
  g.OH = conv_out_extent(g.H, g.ph, g.kh, g.dil, g.stride);
  g.OW = conv_out_extent(g.W, g.pw, g.kw, g.dil, g.stride);
  require(g.OH >= 1 && g.OW >= 1, "conv2d: output would be empty for input " +
                                      shape_str(xv.shape) + " with weight " + shape_str(wv.shape));
  if (bias) {
    require(bias->value.rank() == 1 && bias->value.shape[0] == g.Cout,
            "conv2d: bias shape " + shape_str(bias->value.shape) + " does not match Cout " +
                std::to_string(g.Cout));
  }

  const int K = g.Cin * g.kh * g.kw;
  const int P = g.OH * g.OW;
  Tensor out({g.N, g.Cout, g.OH, g.OW});
  std::vector<float> col(static_cast<std::size_t>(K) * P);
  const std::size_t in_stride = static_cast<std::size_t>(g.Cin) * g.H * g.W;
  const std::size_t out_stride = static_cast<std::size_t>(g.Cout) * P;
  for (int n = 0; n < g.N; ++n) {
    im2col(xv.ptr() + n * in_stride, g, col.data());
    mm_nn(wv.ptr(), col.data(), out.ptr() + n * out_stride, g.Cout, K, P);
  }
  if (bias) {
    const float* b = bias->value.ptr();
    for (int n = 0; n < g.N; ++n)
      for (int co = 0; co < g.Cout; ++co) {
        float* o = out.ptr() + n * out_stride + static_cast<std::size_t>(co) * P;
        for (int p = 0; p < P; ++p) o[p] += b[co];
      }
  }

  std::vector<Var> parents = bias ? std::vector<Var>{x, w, bias} : std::vector<Var>{x, w};
  return make_op(
      std::move(out), std::move(parents),
      [x, w, g, K, P, in_stride, out_stride](const Tensor& up_in,
                                             const std::vector<Tensor*>& pg) {
        Tensor corrupted;
        if (conv2d_adjoint_corrupted()) {
          corrupted = up_in;
          for (float& v : corrupted.data) v *= 1.02f;
        }
        const Tensor& up = corrupted.data.empty() ? up_in : corrupted;
        std::vector<float> buf(static_cast<std::size_t>(K) * P);
        for (int n = 0; n < g.N; ++n) {
          const float* dy = up.ptr() + n * out_stride;
          if (pg[0]) {
            std::fill(buf.begin(), buf.end(), 0.0f);
            mm_tn(w->value.ptr(), dy, buf.data(), K, g.Cout, P);
            col2im_acc(buf.data(), g, pg[0]->ptr() + n * in_stride);
          }
          if (pg[1]) {
            im2col(x->value.ptr() + n * in_stride, g, buf.data());
            mm_nt(dy, buf.data(), pg[1]->ptr(), g.Cout, P, K);
          }
          if (pg.size() > 2 && pg[2]) {
            for (int co = 0; co < g.Cout; ++co) {
              const float* row = dy + static_cast<std::size_t>(co) * P;
              float acc = 0.0f;
              for (int p = 0; p < P; ++p) acc += row[p];
              pg[2]->data[co] += acc;
            }
          }
        }
      });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int padding, int dilation) {
  return conv2d_hw(x, w, bias, stride, padding, padding, dilation);
}

Var conv1d_along(const Var& x, const Var& w, const Var& bias, int padding) {
  require(x->value.rank() == 3,
          "conv1d_along: expected [N,C,L] input, got " + shape_str(x->value.shape));
  require(w->value.rank() == 3,
          "conv1d_along: expected [C,C,k] weight, got " + shape_str(w->value.shape));
  const int N = x->value.shape[0], C = x->value.shape[1], L = x->value.shape[2];
  const int k = w->value.shape[2];
  require(w->value.shape[0] == C && w->value.shape[1] == C,
          "conv1d_along: weight must be [C,C,k] with C=" + std::to_string(C) + ", got " +
              shape_str(w->value.shape));
  require(k % 2 == 1, "conv1d_along: kernel size must be odd, got " + std::to_string(k));
  require(padding == (k - 1) / 2,
          "conv1d_along: padding must be (k-1)/2 to preserve length, got " +
              std::to_string(padding));
  Var x4 = reshape(x, {N, C, 1, L});
  Var w4 = reshape(w, {w->value.shape[0], w->value.shape[1], 1, k});
  Var y = conv2d_hw(x4, w4, bias, 1, 0, padding, 1);
  return reshape(y, {N, C, L});
}

// ---- batch normalization -----------------------------------------------------

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, BnStats& stats, Mode mode,
                float eps, float momentum) {
  require_rank4(x, "batchnorm2d");
  const Tensor& xv = x->value;
  const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  require(gamma->value.rank() == 1 && gamma->value.shape[0] == C &&
              beta->value.rank() == 1 && beta->value.shape[0] == C,
          "batchnorm2d: gamma/beta must be [C] with C=" + std::to_string(C));
  const std::int64_t M = static_cast<std::int64_t>(N) * H * W;
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  if (mode == Mode::Eval) {
    Tensor out(xv.shape);
    std::vector<float> inv_std(C);
    for (int c = 0; c < C; ++c)
      inv_std[c] = 1.0f / std::sqrt(stats.var.at(c) + eps);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const float g = gamma->value.at(c), b = beta->value.at(c);
        const float m = stats.mean.at(c), is = inv_std[c];
        const float* src = xv.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
        float* dst = out.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - m) * is * g + b;
      }
    Tensor mean_snap = stats.mean;
    std::vector<float> is = inv_std;
    return make_op(std::move(out), {x, gamma, beta},
                   [x, gamma, mean_snap, is, N, C, plane](const Tensor& up,
                                                          const std::vector<Tensor*>& pg) {
                     for (int n = 0; n < N; ++n)
                       for (int c = 0; c < C; ++c) {
                         const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                         const float g = gamma->value.at(c);
                         for (std::size_t i = 0; i < plane; ++i) {
                           const float u = up.data[base + i];
                           const float xh = (x->value.data[base + i] - mean_snap.at(c)) * is[c];
                           if (pg[0]) pg[0]->data[base + i] += u * g * is[c];
                           if (pg[1]) pg[1]->data[c] += u * xh;
                           if (pg[2]) pg[2]->data[c] += u;
                         }
                       }
                   });
  }

  require(M >= 2, "batchnorm2d: train mode needs N*H*W >= 2, got " + std::to_string(M) +
                      " for input " + shape_str(xv.shape));

  std::vector<float> mean(C), var(C), inv_std(C);
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const float* src = xv.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    }
    mean[c] = static_cast<float>(acc / static_cast<double>(M));
    double vacc = 0.0;
    for (int n = 0; n < N; ++n) {
      const float* src = xv.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = src[i] - mean[c];
        vacc += d * d;
      }
    }
    var[c] = static_cast<float>(vacc / static_cast<double>(M));
    inv_std[c] = 1.0f / std::sqrt(var[c] + eps);
  }

  // Running stats track the unbiased batch variance.
  for (int c = 0; c < C; ++c) {
    stats.mean.at(c) = (1.0f - momentum) * stats.mean.at(c) + momentum * mean[c];
    const float unbiased = var[c] * static_cast<float>(M) / static_cast<float>(M - 1);
    stats.var.at(c) = (1.0f - momentum) * stats.var.at(c) + momentum * unbiased;
  }

  Tensor xhat(xv.shape);
  Tensor out(xv.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      const float g = gamma->value.at(c), b = beta->value.at(c);
      for (std::size_t i = 0; i < plane; ++i) {
        const float xh = (xv.data[base + i] - mean[c]) * inv_std[c];
        xhat.data[base + i] = xh;
        out.data[base + i] = g * xh + b;
      }
    }

  std::vector<float> is = inv_std;
  return make_op(
      std::move(out), {x, gamma, beta},
      [gamma, xhat, is, N, C, plane, M](const Tensor& up, const std::vector<Tensor*>& pg) {
        // dBeta and dGamma sums feed the input gradient, so compute them first.
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy[c] += up.data[base + i];
              sum_dy_xhat[c] += static_cast<double>(up.data[base + i]) * xhat.data[base + i];
            }
          }
        if (pg[1])
          for (int c = 0; c < C; ++c) pg[1]->data[c] += static_cast<float>(sum_dy_xhat[c]);
        if (pg[2])
          for (int c = 0; c < C; ++c) pg[2]->data[c] += static_cast<float>(sum_dy[c]);
        if (pg[0]) {
          const double inv_m = 1.0 / static_cast<double>(M);
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
              const float g = gamma->value.at(c);
              const float a = static_cast<float>(sum_dy[c] * inv_m);
              const float b = static_cast<float>(sum_dy_xhat[c] * inv_m);
              for (std::size_t i = 0; i < plane; ++i) {
                pg[0]->data[base + i] +=
                    g * is[c] * (up.data[base + i] - a - xhat.data[base + i] * b);
              }
            }
        }
      });
}

// ---- bilinear resampling -----------------------------------------------------

namespace {

struct LerpAxis {
  std::vector<int> lo, hi;
  std::vector<float> t;
};

LerpAxis make_axis(int in, int out) {
  LerpAxis ax;
  ax.lo.resize(out);
  ax.hi.resize(out);
  ax.t.resize(out);
  const double s = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * s - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > in - 1) src = in - 1;
    const int lo = static_cast<int>(src);
    ax.lo[o] = lo;
    ax.hi[o] = std::min(lo + 1, in - 1);
    ax.t[o] = static_cast<float>(src - lo);
  }
  return ax;
}

void resize_plane(const float* src, int w, const LerpAxis& ay, const LerpAxis& ax, float* dst,
                  int oh, int ow) {
  for (int y = 0; y < oh; ++y) {
    const float* r0 = src + static_cast<std::size_t>(ay.lo[y]) * w;
    const float* r1 = src + static_cast<std::size_t>(ay.hi[y]) * w;
    const float ty = ay.t[y];
    float* d = dst + static_cast<std::size_t>(y) * ow;
    for (int x2 = 0; x2 < ow; ++x2) {
      const float tx = ax.t[x2];
      const float top = r0[ax.lo[x2]] * (1.0f - tx) + r0[ax.hi[x2]] * tx;
      const float bot = r1[ax.lo[x2]] * (1.0f - tx) + r1[ax.hi[x2]] * tx;
      d[x2] = top * (1.0f - ty) + bot * ty;
    }
  }
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 4) throw ConfigError("bilinear_resize: expected rank-4, got " + shape_str(x.shape));
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resize: output extents must be >= 1");
  LerpAxis ay = make_axis(H, out_h);
  LerpAxis ax = make_axis(W, out_w);
  Tensor out({N, C, out_h, out_w});
  const std::size_t in_plane = static_cast<std::size_t>(H) * W;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      resize_plane(x.ptr() + (static_cast<std::size_t>(n) * C + c) * in_plane, W, ay, ax,
                   out.ptr() + (static_cast<std::size_t>(n) * C + c) * out_plane, out_h, out_w);
  return out;
}

Var bilinear_upsample(const Var& x, int out_h, int out_w) {
  require_rank4(x, "bilinear_upsample");
  const int N = x->value.shape[0], C = x->value.shape[1];
  const int H = x->value.shape[2], W = x->value.shape[3];
  require(out_h >= H && out_w >= W,
          "bilinear_upsample: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
              " must not shrink input " + shape_str(x->value.shape));
  Tensor out = bilinear_resize(x->value, out_h, out_w);
  LerpAxis ay = make_axis(H, out_h);
  LerpAxis ax = make_axis(W, out_w);
  return make_op(std::move(out), {x},
                 [N, C, H, W, out_h, out_w, ay, ax](const Tensor& up,
                                                    const std::vector<Tensor*>& pg) {
                   if (!pg[0]) return;
                   const std::size_t in_plane = static_cast<std::size_t>(H) * W;
                   const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
                   for (int n = 0; n < N; ++n)
                     for (int c = 0; c < C; ++c) {
                       float* g = pg[0]->ptr() + (static_cast<std::size_t>(n) * C + c) * in_plane;
                       const float* u = up.ptr() + (static_cast<std::size_t>(n) * C + c) * out_plane;
                       for (int y = 0; y < out_h; ++y) {
                         const float ty = ay.t[y];
                         for (int x2 = 0; x2 < out_w; ++x2) {
                           const float tx = ax.t[x2];
                           const float v = u[static_cast<std::size_t>(y) * out_w + x2];
                           g[static_cast<std::size_t>(ay.lo[y]) * W + ax.lo[x2]] +=
                               v * (1.0f - ty) * (1.0f - tx);
                           g[static_cast<std::size_t>(ay.lo[y]) * W + ax.hi[x2]] +=
                               v * (1.0f - ty) * tx;
                           g[static_cast<std::size_t>(ay.hi[y]) * W + ax.lo[x2]] +=
                               v * ty * (1.0f - tx);
                           g[static_cast<std::size_t>(ay.hi[y]) * W + ax.hi[x2]] += v * ty * tx;
                         }
                       }
                     }
                 });
}

Tensor hflip(const Tensor& x) {
  if (x.rank() != 4) throw ConfigError("hflip: expected rank-4, got " + shape_str(x.shape));
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  Tensor out(x.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) out.at4(n, c, h, w) = x.at4(n, c, h, W - 1 - w);
  return out;
}

namespace {
bool g_conv2d_adjoint_corrupt = false;
}

void set_conv2d_adjoint_corruption(bool on) { g_conv2d_adjoint_corrupt = on; }
bool conv2d_adjoint_corrupted() { return g_conv2d_adjoint_corrupt; }

}  // namespace spnet
