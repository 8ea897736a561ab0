#include "hnfl/tensor.hpp"

#include <cmath>
#include <sstream>

namespace hnfl {

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw numeric_error(std::string("non-finite value in ") + what);
    }
  }
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw numeric_error(std::string("non-finite value in ") + what);
  }
}

}  // namespace hnfl
