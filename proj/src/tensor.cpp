#include "spnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace spnet {

Tensor::Tensor(std::vector<int> s, float fill) : shape(std::move(s)) {
  check_shape(shape, "tensor");
  data.assign(static_cast<std::size_t>(numel()), fill);
}

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

bool Tensor::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::size_t Tensor::idx4(int ni, int ci, int hi, int wi) const {
  // Lower-rank tensors index as if left-padded with singleton axes.
  return ((static_cast<std::size_t>(ni) * c() + ci) * h() + hi) * w() + wi;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_shape(const std::vector<int>& shape, const char* what) {
  if (shape.empty() || shape.size() > 4) {
    throw ConfigError(std::string(what) + ": rank must be 1..4, got shape " + shape_str(shape));
  }
  for (int e : shape) {
    if (e < 1) {
      throw ConfigError(std::string(what) + ": all extents must be >= 1, got shape " +
                        shape_str(shape));
    }
  }
}

}  // namespace spnet
