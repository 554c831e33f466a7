#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "tumorkit/nn/tensor.hpp"
#include "tumorkit/rng.hpp"

namespace tumorkit::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered collection of named tensors. Element addresses stay stable as
// parameters are added, so a Tape may hold pointers into it.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Shape shape);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  const Parameter* find(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Total scalar count.
  std::size_t count() const;
  void zero_grad();

  // Bitwise comparison of names, shapes and values.
  bool same_values(const ParameterSet& other) const;

 private:
  std::deque<Parameter> params_;
};

// Fan-in scaled uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)).
void init_fan_in_uniform(Tensor& t, int fan_in, Rng& rng, double gain = 1.0);

}  // namespace tumorkit::nn
