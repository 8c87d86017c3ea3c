#include "sdmim/tensor.hpp"

namespace sdmim {

template class Tensor<float>;
template class Tensor<double>;

}  // namespace sdmim
