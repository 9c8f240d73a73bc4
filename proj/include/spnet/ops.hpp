#pragma once

#include "spnet/autograd.hpp"

namespace spnet {

enum class Mode { Train, Eval };

// ---- elementwise & structural ------------------------------------------------

/// Same-shape add, or rank-4 add with broadcasting over singleton H/W axes
/// (e.g. [N,C,H,1] + [N,C,1,W] -> [N,C,H,W]).
Var add(const Var& a, const Var& b);

/// Same-shape product, or rank-4 product broadcasting a singleton H/W operand.
Var mul(const Var& a, const Var& b);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var scale(const Var& x, float s);

/// Concatenate along the channel axis; non-channel extents must match.
Var concat_channels(const Var& a, const Var& b);

Var reshape(const Var& x, std::vector<int> shape);
Var transpose_hw(const Var& x);

/// Scalar sum of all elements (double accumulation).
Var sum_all(const Var& x);

// ---- convolution -------------------------------------------------------------

/// Cross-correlation of [N,Cin,H,W] with [Cout,Cin,kh,kw]; odd kernels only.
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int padding, int dilation);

/// Asymmetric-padding variant used internally for 1-D convolutions.
Var conv2d_hw(const Var& x, const Var& w, const Var& bias, int stride, int pad_h, int pad_w,
              int dilation);

/// 1-D cross-correlation over the last axis of [N,C,L] mixing all channels;
/// w is [C,C,k] with odd k and padding (k-1)/2 so L is preserved.
Var conv1d_along(const Var& x, const Var& w, const Var& bias, int padding);

// ---- batch normalization -----------------------------------------------------

/// Running statistics, one entry per channel.
struct BnStats {
  Tensor mean;  // [C], init 0
  Tensor var;   // [C], init 1
};

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, BnStats& stats, Mode mode,
                float eps = 1e-5f, float momentum = 0.1f);

// ---- resampling --------------------------------------------------------------

/// Half-pixel-center bilinear upsampling; out extents must not shrink.
Var bilinear_upsample(const Var& x, int out_h, int out_w);

/// Value-level bilinear resize (either direction); same source mapping.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

/// Mirror over the width axis.
Tensor hflip(const Tensor& x);

// ---- test hooks --------------------------------------------------------------

/// Negative control for the gradient suite: while enabled, the conv2d
/// adjoint is deliberately mis-scaled so finite-difference checks must fail.
void set_conv2d_adjoint_corruption(bool on);
bool conv2d_adjoint_corrupted();

}  // namespace spnet
