#include <benchmark/benchmark.h>

#include "decaps/image.hpp"
#include "decaps/model.hpp"
#include "decaps/ops.hpp"
#include "decaps/peekaboo.hpp"
#include "decaps/routing.hpp"
#include "support/gradcheck.hpp"

using namespace decaps;
using decaps::testing::random_tensor;

static void BM_Conv2dForward(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const auto size = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const Tensor x = random_tensor({16, channels, size, size}, rng);
  const Tensor w = random_tensor({channels, channels, 3, 3}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, {}, {1, 1}));
}
BENCHMARK(BM_Conv2dForward)->Args({8, 48})->Args({32, 12})->Unit(benchmark::kMillisecond);

static void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(2);
  Tensor x = random_tensor({16, 8, 48, 48}, rng);
  Tensor w = random_tensor({8, 8, 3, 3}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    backward(sum_all(conv2d(x, w, {}, {1, 1})));
  }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMillisecond);

static void BM_InvertedRouting(benchmark::State& state) {
  const auto grid = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const Tensor votes = random_tensor({16, 8, 2, grid, grid, 16}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(inverted_dynamic_routing(votes, {3}).poses);
}
BENCHMARK(BM_InvertedRouting)->Arg(2)->Arg(24)->Unit(benchmark::kMicrosecond);

static void BM_LocalRouting(benchmark::State& state) {
  Rng rng(4);
  const Tensor votes = random_tensor({16, 8, 8, 4, 4, 16}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(inverted_dynamic_routing_local(votes, {3}).poses);
}
BENCHMARK(BM_LocalRouting)->Unit(benchmark::kMicrosecond);

static void BM_DeskForwardEval(benchmark::State& state) {
  DecapsModel model(ModelConfig::desk());
  Rng rng(5);
  const Tensor x = random_tensor({16, 1, 96, 96}, rng, 0.0, 1.0);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, Mode::eval).activations);
}
BENCHMARK(BM_DeskForwardEval)->Unit(benchmark::kMillisecond);

static void BM_DeskTrainStep(benchmark::State& state) {
  const bool peekaboo = state.range(0) != 0;
  DecapsModel model(ModelConfig::desk());
  Rng rng(6);
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  for (std::size_t n = 0; n < 16; ++n) {
    Image im(96, 96);
    for (double& v : im.pixels) v = rng.uniform();
    images.push_back(std::move(im));
    labels.push_back(n % 2);
  }
  for (auto _ : state) {
    for (auto& [name, p] : model.parameters()) p.zero_grad();
    benchmark::DoNotOptimize(peekaboo_train_step(model, images, labels, {0.2, peekaboo}, rng).loss);
  }
}
BENCHMARK(BM_DeskTrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_DistillInfer(benchmark::State& state) {
  DecapsModel model(ModelConfig::desk());
  Rng rng(7);
  std::vector<Image> images(16, Image(96, 96));
  for (auto& im : images)
    for (double& v : im.pixels) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(distill_infer(model, images));
}
BENCHMARK(BM_DistillInfer)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
