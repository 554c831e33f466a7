#include "tumorkit/nn/parameters.hpp"

#include <cmath>
#include <cstring>

#include "tumorkit/error.hpp"

namespace tumorkit::nn {

ParameterSet::ParameterSet(const ParameterSet& other) : params_(other.params_) {}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) params_ = other.params_;
  return *this;
}

Parameter& ParameterSet::add(std::string name, Shape shape) {
  if (find(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor(shape);
  p.grad = Tensor(std::move(shape));
  params_.push_back(std::move(p));
  return params_.back();
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Parameter& ParameterSet::get(const std::string& name) const {
  if (const auto* p = find(name)) return *p;
  throw ArgumentError("no parameter named '" + name + "'");
}

Parameter& ParameterSet::get(const std::string& name) {
  return const_cast<Parameter&>(static_cast<const ParameterSet&>(*this).get(name));
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0f);
}

bool ParameterSet::same_values(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.shape() != b.value.shape()) return false;
    if (std::memcmp(a.value.data(), b.value.data(), a.value.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

void init_fan_in_uniform(Tensor& t, int fan_in, Rng& rng, double gain) {
  const double bound = gain * std::sqrt(6.0 / std::max(fan_in, 1));
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace tumorkit::nn
