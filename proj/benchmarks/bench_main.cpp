#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "fcf/dsp.hpp"
#include "fcf/models/cnn.hpp"
#include "fcf/models/forest.hpp"
#include "fcf/spectral.hpp"

using namespace fcf;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N;
  std::vector<double> v(n);
  for (double& x : v) x = N(rng);
  return v;
}

void BM_ZeroPhaseFilter(benchmark::State& state) {
  const auto c = dsp::design_bandpass({});
  RawTrace t{noise(static_cast<std::size_t>(state.range(0)), 1), 2000.0, Muscle::LD};
  for (auto _ : state) benchmark::DoNotOptimize(dsp::filter_zero_phase(t, c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ZeroPhaseFilter)->Arg(20000)->Arg(600000);

void BM_Welch(benchmark::State& state) {
  const auto x = noise(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(spectral::psd_welch(x, 2000.0));
}
BENCHMARK(BM_Welch)->Arg(6667)->Arg(120000);

void BM_Stft(benchmark::State& state) {
  const auto x = noise(20000, 3);
  for (auto _ : state) benchmark::DoNotOptimize(spectral::stft_spectrogram(x, 2000.0));
}
BENCHMARK(BM_Stft);

void BM_ForestTrain(benchmark::State& state) {
  models::TabularDataset d;
  const int n = static_cast<int>(state.range(0));
  const auto v = noise(static_cast<std::size_t>(n) * 17, 4);
  d.X = Eigen::Map<const Eigen::MatrixXd>(v.data(), n, 16);
  d.y = Eigen::Map<const Eigen::VectorXd>(v.data() + static_cast<std::size_t>(n) * 16, n);
  models::ForestConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(models::train_random_forest(d, cfg));
}
BENCHMARK(BM_ForestTrain)->Arg(120)->Unit(benchmark::kMillisecond);

void BM_CnnTrainStep(benchmark::State& state) {
  models::CnnModel m({2, 49, 197}, {});
  std::vector<models::CnnInput> xs(16);
  std::uint64_t s = 5;
  for (auto& x : xs) x = {2, 49, 197, noise(2 * 49 * 197, s++)};
  std::vector<const models::CnnInput*> batch;
  for (const auto& x : xs) batch.push_back(&x);
  const std::vector<double> y(16, 0.5);
  int step = 0;
  for (auto _ : state) {
    m.zero_gradients();
    benchmark::DoNotOptimize(m.loss_and_gradient(batch, y, true, static_cast<std::uint64_t>(step)));
    m.adam_step(1e-3, ++step);
  }
}
BENCHMARK(BM_CnnTrainStep)->Unit(benchmark::kMillisecond);

void BM_CnnInference(benchmark::State& state) {
  models::CnnModel m({2, 49, 197}, {});
  const models::CnnInput x{2, 49, 197, noise(2 * 49 * 197, 9)};
  for (auto _ : state) benchmark::DoNotOptimize(m.predict_raw(x));
}
BENCHMARK(BM_CnnInference)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
