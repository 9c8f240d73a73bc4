#include "spnet/rng.hpp"

#include <cmath>

namespace spnet {

float Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return static_cast<float>(r * std::cos(6.283185307179586 * u2));
}

}  // namespace spnet
