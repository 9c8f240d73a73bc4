#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace spnet {

/// Thrown for invalid shapes, bad configuration values, and malformed specs.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown for file-format and I/O failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown when a numerical check (gradient suite, oracle comparison) fails.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense rank-1..4 array of 32-bit floats, row-major with the last extent
/// fastest. Rank-4 tensors are interpreted as [batch, channel, height, width].
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, float fill = 0.0f);

  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t numel() const;

  // NCHW extents; missing leading axes of lower-rank tensors read as 1.
  int n() const { return dim(0); }
  int c() const { return dim(1); }
  int h() const { return dim(2); }
  int w() const { return dim(3); }

  float& at(int a) { return data[static_cast<std::size_t>(a)]; }
  float at(int a) const { return data[static_cast<std::size_t>(a)]; }
  float& at(int a, int b) { return data[static_cast<std::size_t>(a) * shape[1] + b]; }
  float at(int a, int b) const { return data[static_cast<std::size_t>(a) * shape[1] + b]; }
  float& at4(int n, int c, int h, int w) { return data[idx4(n, c, h, w)]; }
  float at4(int n, int c, int h, int w) const { return data[idx4(n, c, h, w)]; }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }
  static Tensor full_like(const Tensor& t, float v) { return Tensor(t.shape, v); }

 private:
  int dim(int axis) const {
    int pad = 4 - rank();
    if (axis < pad) return 1;
    return shape[static_cast<std::size_t>(axis - pad)];
  }
  std::size_t idx4(int n, int c, int h, int w) const;
};

/// Integer label map [N,H,W]; values are class ids or the ignore label 255.
struct LabelMap {
  int n = 1, h = 0, w = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * h_ * w_, fill) {}

  std::int32_t& at(int ni, int hi, int wi) {
    return data[(static_cast<std::size_t>(ni) * h + hi) * w + wi];
  }
  std::int32_t at(int ni, int hi, int wi) const {
    return data[(static_cast<std::size_t>(ni) * h + hi) * w + wi];
  }
};

inline constexpr std::int32_t kIgnoreLabel = 255;

std::string shape_str(const std::vector<int>& shape);

/// Validates extents (all >= 1, rank 1..4) and throws ConfigError otherwise.
void check_shape(const std::vector<int>& shape, const char* what);

}  // namespace spnet
