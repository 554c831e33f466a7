#include "tumorkit/nn/optimizer.hpp"

#include <cmath>

namespace tumorkit::nn {

void Adam::step(ParameterSet& params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].value.size(), 0.0f);
      v_[i].assign(params[i].value.size(), 0.0f);
    }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(step_));
  const auto step_size = static_cast<float>(lr_ / c1);
  const auto v_scale = static_cast<float>(1.0 / std::sqrt(c2));

  for (std::size_t i = 0; i < params.size(); ++i) {
    float* w = params[i].value.data();
    float* g = params[i].grad.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const std::size_t n = params[i].value.size();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * v_scale + eps_);
      g[j] = 0.0f;
    }
  }
}

}  // namespace tumorkit::nn
