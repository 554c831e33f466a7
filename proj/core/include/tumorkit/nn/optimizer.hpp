#pragma once

#include <cstdint>
#include <vector>

#include "tumorkit/nn/parameters.hpp"

namespace tumorkit::nn {

// Adaptive-moment gradient descent with bias correction.
class Adam {
 public:
  explicit Adam(float learning_rate, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update from the accumulated grads, then zeroes them.
  void step(ParameterSet& params);

  std::int64_t steps() const { return step_; }

 private:
  float lr_, beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace tumorkit::nn
