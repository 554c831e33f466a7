#include <benchmark/benchmark.h>

#include "tumorkit/classifier.hpp"
#include "tumorkit/nn/tape.hpp"
#include "tumorkit/preprocess.hpp"
#include "tumorkit/rng.hpp"
#include "tumorkit/segmentation.hpp"

using namespace tumorkit;

namespace {

Image noise(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size, 1, 0.0f, 1.0f);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

nn::Tensor noise_tensor(nn::Shape shape, Rng& rng) {
  nn::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// 3x3 same-padding convolution, channels in -> out at the given spatial size.
void BM_Conv2dForward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const int cin = static_cast<int>(state.range(1)), cout = static_cast<int>(state.range(2));
  Rng rng(1);
  const nn::Tensor x = noise_tensor({1, cin, size, size}, rng);
  const nn::Tensor w = noise_tensor({cout, cin, 3, 3}, rng);
  const nn::Tensor b = noise_tensor({cout}, rng);
  for (auto _ : state) {
    nn::Tape tape(false);
    const nn::Var y = nn::conv2d(tape, tape.input(x), tape.input(w), tape.input(b), 1, 1);
    benchmark::DoNotOptimize(tape.value(y)[0]);
  }
  state.counters["MACs"] = benchmark::Counter(static_cast<double>(size) * size * cin * cout * 9,
                                              benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2dForward)->Args({64, 8, 16})->Args({128, 16, 32})->Args({224, 1, 16});

void BM_ClassifyScaled(benchmark::State& state) {
  CompoundScaleConfig cfg;
  cfg.phi = static_cast<double>(state.range(0)) / 2.0;
  const ScaledDims dims = compound_scale(cfg);
  const ClassifierModel m = ClassifierModel::scaled(dims, 1);
  const Image input = noise(dims.resolution, 2);
  for (auto _ : state) benchmark::DoNotOptimize(classify(m, input));
  state.SetLabel("resolution " + std::to_string(dims.resolution));
}
BENCHMARK(BM_ClassifyScaled)->Arg(0)->Arg(2)->Unit(benchmark::kMillisecond);

// Resize + normalize of a raw 512 scan into the classifier input.
void BM_PrepareInput(benchmark::State& state) {
  Rng rng(3);
  Image raw(512, 512, 1);
  for (auto& v : raw.data) v = static_cast<float>(rng.below(256));
  for (auto _ : state) benchmark::DoNotOptimize(prepare_model_input(raw, 224));
}
BENCHMARK(BM_PrepareInput)->Unit(benchmark::kMicrosecond);

void BM_Dice(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Rng rng(4);
  SegMask a(size, size), b(size, size);
  for (auto& v : a.data) v = rng.bernoulli(0.3);
  for (auto& v : b.data) v = rng.bernoulli(0.3);
  for (auto _ : state) benchmark::DoNotOptimize(dice(a, b));
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_Dice)->Arg(64)->Arg(256);

void BM_Segment(benchmark::State& state) {
  UNetConfig c;
  c.input_size = static_cast<int>(state.range(0));
  c.levels = 4;
  c.base_filters = static_cast<int>(state.range(1));
  const SegModel m = build_unet(c, 1);
  const Image input = noise(c.input_size, 5);
  for (auto _ : state) benchmark::DoNotOptimize(threshold_mask(segment(m, input)));
}
BENCHMARK(BM_Segment)->Args({128, 8})->Args({256, 16})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
