#include <benchmark/benchmark.h>

#include "ear/model.hpp"
#include "ear/nn.hpp"
#include "ear/rng.hpp"

namespace {

ear::Tensor make_clip(std::int64_t n, std::int64_t t, std::int64_t hw) {
  ear::Tensor clip({n, t, 3, hw, hw});
  ear::RngStream rng(3);
  for (std::int64_t i = 0; i < clip.numel(); ++i) clip[i] = rng.normal();
  return clip;
}

void BM_TinyForwardEval(benchmark::State& state) {
  ear::BackboneSpec backbone;
  backbone.kind = ear::BackboneKind::tiny_residual;
  ear::HeadSpec head;
  ear::ShiftConfig shift;
  shift.segments = 4;
  auto model = ear::build_model(backbone, head, shift, 1);
  const auto clip = make_clip(state.range(0), 4, 32);
  for (auto _ : state) {
    auto out = model->forward_clip(clip, ear::Mode::eval);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_TinyTrainStep(benchmark::State& state) {
  ear::BackboneSpec backbone;
  backbone.kind = ear::BackboneKind::tiny_residual;
  ear::HeadSpec head;
  head.dropout_rate = 0.5;
  ear::ShiftConfig shift;
  shift.segments = 4;
  auto model = ear::build_model(backbone, head, shift, 1);
  const auto clip = make_clip(4, 4, 32);
  const std::vector<std::int64_t> labels = {0, 1, 2, 3};
  for (auto _ : state) {
    model->zero_grad();
    auto scores = model->forward_clip(clip, ear::Mode::train);
    auto ce = ear::nn::softmax_cross_entropy(scores, labels);
    model->backward_from_scores(ce.grad);
    benchmark::DoNotOptimize(ce.loss);
  }
}

}  // namespace

BENCHMARK(BM_TinyForwardEval)->Arg(1)->Arg(4);
BENCHMARK(BM_TinyTrainStep);
