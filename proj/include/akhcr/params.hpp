#pragma once

#include <map>
#include <string>

#include "akhcr/tensor.hpp"

namespace akhcr {

// Named learnable tensors. std::map gives deterministic (lexicographic)
// iteration, which fixes update and serialization order.
template <class T>
using ParamStoreT = std::map<std::string, TensorT<T>>;

using ParamStore = ParamStoreT<float>;

}  // namespace akhcr
