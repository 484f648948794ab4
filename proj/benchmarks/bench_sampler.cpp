#include <benchmark/benchmark.h>

#include "ear/sampler.hpp"

namespace {

void BM_SampleIndicesEval(benchmark::State& state) {
  ear::SampleSpec spec;
  spec.segments = 8;
  for (auto _ : state) {
    auto idx = ear::sample_indices(state.range(0), spec);
    benchmark::DoNotOptimize(idx.data());
  }
}

void BM_SampleIndicesTrain(benchmark::State& state) {
  ear::SampleSpec spec;
  spec.segments = 8;
  spec.mode = ear::SampleMode::train_random;
  spec.seed = 7;
  for (auto _ : state) {
    auto idx = ear::sample_indices(state.range(0), spec);
    benchmark::DoNotOptimize(idx.data());
  }
}

}  // namespace

BENCHMARK(BM_SampleIndicesEval)->Arg(30)->Arg(300)->Arg(30000);
BENCHMARK(BM_SampleIndicesTrain)->Arg(300);
