#include "luxforge/tensor.hpp"

#include <cmath>

namespace luxforge {

template <typename S>
bool all_finite(const BasicTensor<S>& t) {
  for (S v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

template bool all_finite<float>(const BasicTensor<float>&);
template bool all_finite<double>(const BasicTensor<double>&);

}  // namespace luxforge
