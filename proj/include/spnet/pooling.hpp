#pragma once

#include "spnet/ops.hpp"

namespace spnet {

/// Fixed pooling extent; must divide the spatial extents it is applied to.
struct PoolWindow {
  int h = 1;
  int w = 1;
};

/// Adaptive pooling output resolution; must not exceed the input extents.
struct BinGrid {
  int bins_h = 1;
  int bins_w = 1;
};

/// Disjoint-window average pooling, [N,C,H,W] -> [N,C,H/h,W/w].
Var avg_pool2d(const Var& x, PoolWindow window);

/// Row means, [N,C,H,W] -> [N,C,H,1].
Var strip_pool_h(const Var& x);

/// Column means, [N,C,H,W] -> [N,C,1,W].
Var strip_pool_v(const Var& x);

/// Overlapping floor/ceil bins, [N,C,H,W] -> [N,C,bins_h,bins_w]. Bin (a,b)
/// averages rows [floor(a*H/bins_h), ceil((a+1)*H/bins_h)) and the analogous
/// columns, so every pixel belongs to at least one bin.
Var adaptive_avg_pool2d(const Var& x, BinGrid grid);

/// Mean over all spatial positions, [N,C,H,W] -> [N,C,1,1].
Var global_avg_pool(const Var& x);

}  // namespace spnet
