#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "tumorkit/nn/parameters.hpp"
#include "tumorkit/nn/tape.hpp"
#include "tumorkit/rng.hpp"

using namespace tumorkit;
using namespace tumorkit::nn;

namespace {

// Builds an op graph from parameter vars and returns any-shaped output;
// the harness reduces it to a scalar with fixed random weights.
using Graph = std::function<Var(Tape&, std::vector<Var>&)>;

void fill_uniform(Tensor& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
}

struct Probe {
  ParameterSet params;
  Graph graph;
  Tensor readout;  // fixed random weights, one per output element
  bool reduce = true;

  // sum_i readout[i] * out[i], recorded with its own backward rule.
  Var weighted_sum(Tape& tape, Var out) {
    const Tensor& v = tape.value(out);
    if (readout.size() != v.size()) {
      Rng rng(99);
      readout = Tensor({static_cast<int>(v.size())});
      fill_uniform(readout, rng);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += static_cast<double>(v[i]) * readout[i];
    return tape.push(Tensor({1}, static_cast<float>(s)), {out}, [out, r = readout](Tape& t, int self) {
      const float g = t.grad(self)[0];
      Tensor& d = t.grad(out);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * r[i];
    });
  }

  double loss(bool with_grad) {
    Tape tape(with_grad);
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(tape.param(p));
    Var out = graph(tape, vars);
    if (reduce) out = weighted_sum(tape, out);
    const double v = tape.value(out)[0];
    if (with_grad) tape.backward(out);
    return v;
  }
};

// Central differences in double around float parameters. Points where a
// kink (relu, max) sits inside the probe step are rare with random inputs;
// the tolerance is relative to the gradient scale of the whole tensor.
void check_gradients(Probe& probe, double h = 1e-2, double tol = 2e-2) {
  probe.params.zero_grad();
  probe.loss(true);
  for (auto& p : probe.params) {
    const Tensor analytic = p.grad;
    double scale = 1e-3;
    for (float g : analytic.values()) scale = std::max(scale, static_cast<double>(std::abs(g)));
    const std::size_t n = p.value.size();
    const std::size_t stride = std::max<std::size_t>(1, n / 24);
    for (std::size_t i = 0; i < n; i += stride) {
      const float saved = p.value[i];
      p.value[i] = static_cast<float>(saved + h);
      const double up = probe.loss(false);
      p.value[i] = static_cast<float>(saved - h);
      const double down = probe.loss(false);
      p.value[i] = saved;
      const double numeric = (up - down) / (2 * h);
      INFO(p.name << "[" << i << "] analytic " << analytic[i] << " numeric " << numeric);
      CHECK(std::abs(numeric - analytic[i]) <= tol * scale);
    }
  }
}

Parameter& add_random(ParameterSet& ps, const std::string& name, Shape shape, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  Parameter& p = ps.add(name, std::move(shape));
  fill_uniform(p.value, rng, lo, hi);
  return p;
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences", "[grad]") {
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Rng rng(static_cast<std::uint64_t>(10 + stride * 2 + pad));
      Probe probe;
      add_random(probe.params, "x", {2, 2, 6, 6}, rng);
      add_random(probe.params, "w", {3, 2, 3, 3}, rng);
      add_random(probe.params, "b", {3}, rng);
      probe.graph = [=](Tape& t, std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], stride, pad); };
      check_gradients(probe);
    }
  }
}

TEST_CASE("depthwise_conv2d gradients match finite differences", "[grad]") {
  for (int stride : {1, 2}) {
    Rng rng(static_cast<std::uint64_t>(20 + stride));
    Probe probe;
    add_random(probe.params, "x", {2, 3, 7, 7}, rng);
    add_random(probe.params, "w", {3, 1, 3, 3}, rng);
    add_random(probe.params, "b", {3}, rng);
    probe.graph = [=](Tape& t, std::vector<Var>& v) { return depthwise_conv2d(t, v[0], v[1], v[2], stride, 1); };
    check_gradients(probe);
  }
}

TEST_CASE("conv_transpose2x2 gradients match finite differences", "[grad]") {
  Rng rng(30);
  Probe probe;
  add_random(probe.params, "x", {2, 3, 3, 3}, rng);
  add_random(probe.params, "w", {3, 2, 2, 2}, rng);
  add_random(probe.params, "b", {2}, rng);
  probe.graph = [](Tape& t, std::vector<Var>& v) { return conv_transpose2x2(t, v[0], v[1], v[2]); };
  check_gradients(probe);
}

TEST_CASE("pooling gradients match finite differences", "[grad]") {
  Rng rng(40);
  Probe probe;
  add_random(probe.params, "x", {2, 2, 5, 6}, rng);
  probe.graph = [](Tape& t, std::vector<Var>& v) { return max_pool2(t, v[0]); };
  check_gradients(probe, 1e-3);

  Probe avg;
  add_random(avg.params, "x", {2, 3, 4, 4}, rng);
  avg.graph = [](Tape& t, std::vector<Var>& v) { return global_avg_pool(t, v[0]); };
  check_gradients(avg);
}

TEST_CASE("elementwise and channel op gradients match finite differences", "[grad]") {
  Rng rng(50);
  Probe probe;
  add_random(probe.params, "a", {2, 2, 3, 3}, rng);
  add_random(probe.params, "b", {2, 2, 3, 3}, rng);
  add_random(probe.params, "s", {2, 2}, rng);
  add_random(probe.params, "c", {2, 1, 3, 3}, rng);
  probe.graph = [](Tape& t, std::vector<Var>& v) {
    const Var sum = add(t, v[0], v[1]);
    const Var act = silu(t, sigmoid(t, relu(t, sum)));
    return concat_channels(t, scale_channels(t, act, v[2]), v[3]);
  };
  check_gradients(probe, 1e-3);
}

TEST_CASE("linear and cross-entropy gradients match finite differences", "[grad]") {
  Rng rng(60);
  Probe probe;
  add_random(probe.params, "x", {3, 5}, rng);
  add_random(probe.params, "w", {4, 5}, rng);
  add_random(probe.params, "b", {4}, rng);
  const std::vector<int> labels = {2, 0, 3};
  probe.reduce = false;
  probe.graph = [labels](Tape& t, std::vector<Var>& v) {
    return softmax_cross_entropy(t, linear(t, v[0], v[1], v[2]), labels);
  };
  check_gradients(probe);
}

TEST_CASE("soft dice loss gradients match finite differences", "[grad]") {
  Rng rng(70);
  Probe probe;
  add_random(probe.params, "z", {2, 1, 4, 4}, rng, -2.0, 2.0);
  Tensor target({2, 1, 4, 4});
  for (auto& v : target.values()) v = rng.bernoulli(0.4) ? 1.0f : 0.0f;
  probe.reduce = false;
  probe.graph = [target](Tape& t, std::vector<Var>& v) { return soft_dice_loss(t, sigmoid(t, v[0]), target, 1.0f); };
  check_gradients(probe);
}

TEST_CASE("soft dice loss value matches its formula", "[grad]") {
  Tape tape(false);
  const Tensor p({1, 4}, std::vector<float>{0.5f, 1.0f, 0.0f, 0.25f});
  const Tensor y({1, 4}, std::vector<float>{1.0f, 1.0f, 0.0f, 0.0f});
  const Var loss = soft_dice_loss(tape, tape.input(p), y, 1.0f);
  // inter = 1.5, total = 1.75 + 2
  CHECK(tape.value(loss)[0] == Catch::Approx(1.0 - (2 * 1.5 + 1) / (3.75 + 1)).margin(1e-6));
}

TEST_CASE("gradients accumulate across backward passes", "[grad]") {
  Rng rng(80);
  ParameterSet ps;
  Parameter& w = add_random(ps, "w", {1, 3}, rng);
  const Tensor x({1, 3}, std::vector<float>{1.0f, 2.0f, 3.0f});
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    const Var out = linear(tape, tape.input(x), tape.param(w), tape.input(Tensor({1})));
    tape.backward(out);
  }
  CHECK(w.grad[0] == 2.0f);
  CHECK(w.grad[1] == 4.0f);
  CHECK(w.grad[2] == 6.0f);
}

TEST_CASE("backward requires a scalar on a recording tape", "[grad]") {
  Tape off(false);
  const Var a = off.input(Tensor({1}, 1.0f));
  CHECK_THROWS(off.backward(a));
  Tape on;
  const Var b = on.input(Tensor({2}, 1.0f));
  CHECK_THROWS(on.backward(b));
}
