#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace representor::test_support {

GradCheckResult check_gradients(const std::function<ad::Tensor(const std::vector<ad::Tensor>&)>& f,
                                std::vector<ad::Tensor> inputs, double step, double floor) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  ad::backward(f(inputs));
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.size(), 0.0));
  }

  GradCheckResult r;
  ad::NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + step;
      const double up = f(inputs).item();
      values[j] = saved - step;
      const double down = f(inputs).item();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i][j];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = std::to_string(i) + "[" + std::to_string(j) + "]";
      }
    }
  }
  return r;
}

ad::Tensor random_tensor(const ad::Shape& shape, unsigned seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = u(rng);
  return ad::Tensor::from_values(shape, std::move(v));
}

}  // namespace representor::test_support
