#pragma once

#include <functional>
#include <string>
#include <vector>

#include "representor/tensor.hpp"

namespace representor::test_support {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "<input>[<index>]"
};

// Compares backward() against central differences for every element of
// every input. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult check_gradients(const std::function<ad::Tensor(const std::vector<ad::Tensor>&)>& f,
                                std::vector<ad::Tensor> inputs, double step = 1e-4, double floor = 1e-6);

ad::Tensor random_tensor(const ad::Shape& shape, unsigned seed, double lo = -1.0, double hi = 1.0);

}  // namespace representor::test_support
