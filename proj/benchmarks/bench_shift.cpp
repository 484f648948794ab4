#include <benchmark/benchmark.h>

#include "ear/rng.hpp"
#include "ear/shift.hpp"

namespace {

ear::Tensor make_clip(std::int64_t t, std::int64_t c, std::int64_t hw) {
  ear::Tensor clip({1, t, c, hw, hw});
  ear::RngStream rng(1);
  for (std::int64_t i = 0; i < clip.numel(); ++i) clip[i] = rng.normal();
  return clip;
}

void BM_TemporalShift(benchmark::State& state) {
  const auto clip = make_clip(state.range(0), state.range(1), 28);
  for (auto _ : state) {
    auto out = ear::temporal_shift(clip, 8);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) *
                          clip.numel() * static_cast<std::int64_t>(sizeof(double)));
}

void BM_TemporalShiftAdjoint(benchmark::State& state) {
  const auto clip = make_clip(state.range(0), state.range(1), 28);
  for (auto _ : state) {
    auto out = ear::temporal_shift_adjoint(clip, 8);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_TemporalShift)->Args({8, 64})->Args({8, 256})->Args({16, 256});
BENCHMARK(BM_TemporalShiftAdjoint)->Args({8, 256});
