#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ear/checkpoint.hpp"
#include "ear/errors.hpp"
#include "ear/model.hpp"
#include "test_util.hpp"

using ear::BackboneKind;
using ear::BackboneSpec;
using ear::ConsensusDomain;
using ear::HeadSpec;
using ear::Mode;
using ear::ShiftConfig;
using ear::Tensor;
using eartest::random_clip;

namespace {

ShiftConfig desk_shift(std::int64_t segments = 4, bool enabled = true) {
  ShiftConfig shift;
  shift.enabled = enabled;
  shift.shift_div = 8;
  shift.segments = segments;
  return shift;
}

BackboneSpec tiny_backbone() {
  BackboneSpec spec;
  spec.kind = BackboneKind::tiny_residual;
  return spec;
}

HeadSpec head(double dropout = 0.0) {
  HeadSpec h;
  h.dropout_rate = dropout;
  return h;
}

Tensor permute_segments(const Tensor& clip,
                        const std::vector<std::int64_t>& perm) {
  Tensor out(clip.shape());
  const std::int64_t T = clip.dim(1);
  const std::int64_t slice = clip.numel() / (clip.dim(0) * T);
  for (std::int64_t n = 0; n < clip.dim(0); ++n) {
    for (std::int64_t t = 0; t < T; ++t) {
      const std::int64_t src = perm[static_cast<std::size_t>(t)];
      std::copy(clip.data() + (n * T + src) * slice,
                clip.data() + (n * T + src + 1) * slice,
                out.data() + (n * T + t) * slice);
    }
  }
  return out;
}

double linf_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace

TEST_CASE("tiny_residual: parameter count equals the closed-form sum") {
  auto model = ear::build_model(tiny_backbone(), head(0.5), desk_shift(), 1);

  // Hand count of the declared tiny architecture:
  //   stem   conv3x3 3->8 (216) + bn8 (16)
  //   block1 8->16/s2: conv 1152 + bn 32 + conv 2304 + bn 32
  //          + down 1x1 128 + bn 32                        = 3680
  //   block2 16->32/s2: conv 4608 + bn 64 + conv 9216 + bn 64
  //          + down 512 + bn 64                            = 14528
  //   block3 32->32/s1: conv 9216 + bn 64 + conv 9216 + bn 64 = 18560
  //   fc     32*6 + 6                                      = 198
  const std::int64_t stem = 3 * 3 * 3 * 8 + 2 * 8;
  const std::int64_t block1 =
      3 * 3 * 8 * 16 + 2 * 16 + 3 * 3 * 16 * 16 + 2 * 16 + 8 * 16 + 2 * 16;
  const std::int64_t block2 =
      3 * 3 * 16 * 32 + 2 * 32 + 3 * 3 * 32 * 32 + 2 * 32 + 16 * 32 + 2 * 32;
  const std::int64_t block3 = 3 * 3 * 32 * 32 + 2 * 32 + 3 * 3 * 32 * 32 + 2 * 32;
  const std::int64_t fc = 32 * 6 + 6;
  const std::int64_t expected = stem + block1 + block2 + block3 + fc;

  CHECK(model->parameter_count() == expected);
  CHECK(expected == 37198);
}

TEST_CASE("resnext50_32x4d: parameter count matches the grouped-conv formula") {
  BackboneSpec spec;
  spec.kind = BackboneKind::resnext50_32x4d;
  auto model = ear::build_model(spec, head(0.5), desk_shift(8), 1);

  // Bottleneck widths 128/256/512/1024 with groups 32; expansion 4; stage
  // block counts 3,4,6,3; classifier 2048 -> 6.
  auto bottleneck = [](std::int64_t in, std::int64_t width,
                       std::int64_t out, bool down) {
    std::int64_t p = in * width + 2 * width;             // conv1 + bn1
    p += 3 * 3 * (width / 32) * width + 2 * width;       // grouped conv2 + bn2
    p += width * out + 2 * out;                          // conv3 + bn3
    if (down) p += in * out + 2 * out;
    return p;
  };
  std::int64_t expected = 7 * 7 * 3 * 64 + 2 * 64;  // stem
  const std::int64_t counts[4] = {3, 4, 6, 3};
  const std::int64_t widths[4] = {128, 256, 512, 1024};
  std::int64_t in = 64;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t out = widths[s] * 2;  // planes*4 = width*2 for 32x4d
    for (std::int64_t b = 0; b < counts[s]; ++b) {
      expected += bottleneck(in, widths[s], out, b == 0);
      in = out;
    }
  }
  expected += 2048 * 6 + 6;

  CHECK(model->parameter_count() == expected);
  CHECK(expected == 22992198);
}

TEST_CASE("resnext50_32x4d: smoke forward produces finite 6-way logits") {
  BackboneSpec spec;
  spec.kind = BackboneKind::resnext50_32x4d;
  auto model = ear::build_model(spec, head(0.5), desk_shift(2), 2);
  const Tensor clip = random_clip({1, 2, 3, 32, 32}, 3);
  const Tensor logits = model->forward_clip(clip, Mode::eval);
  REQUIRE(logits.shape() == std::vector<std::int64_t>({1, 6}));
  CHECK(logits.all_finite());
}

TEST_CASE("resnext50_32x4d: one full training step stays finite and learns") {
  BackboneSpec spec;
  spec.kind = BackboneKind::resnext50_32x4d;
  auto model = ear::build_model(spec, head(0.0), desk_shift(2), 4);
  const Tensor clip = random_clip({1, 2, 3, 16, 16}, 5);
  const std::vector<std::int64_t> labels = {2};

  auto loss_of = [&]() {
    const Tensor scores = model->forward_clip(clip, Mode::train);
    return ear::nn::softmax_cross_entropy(scores, labels);
  };

  model->zero_grad();
  const auto before = loss_of();
  model->backward_from_scores(before.grad);

  double grad_sq = 0.0;
  for (auto* p : model->parameters()) {
    REQUIRE(p->grad.all_finite());
    for (std::int64_t i = 0; i < p->grad.numel(); ++i) {
      grad_sq += p->grad[i] * p->grad[i];
    }
  }
  CHECK(grad_sq > 0.0);

  // Plain SGD step downhill along the gradient.
  for (auto* p : model->parameters()) {
    p->value.add_scaled(p->grad, -0.05);
  }
  const auto after = loss_of();
  CHECK(after.loss < before.loss);
  CHECK(std::isfinite(after.loss));
}

TEST_CASE("dropout 0: train and eval forwards agree when BN is frozen") {
  auto model = ear::build_model(tiny_backbone(), head(0.0), desk_shift(), 5);
  const Tensor clip = random_clip({2, 4, 3, 32, 32}, 6);

  // Populate running stats, then freeze them.
  (void)model->forward_clip(clip, Mode::train);
  model->set_bn_frozen(true);

  const Tensor train_out = model->forward_clip(clip, Mode::train);
  const Tensor eval_out = model->forward_clip(clip, Mode::eval);
  CHECK(linf_diff(train_out, eval_out) == 0.0);
}

TEST_CASE("fold 0 shift equals shift disabled") {
  BackboneSpec backbone = tiny_backbone();
  ShiftConfig degenerate = desk_shift();
  degenerate.shift_div = 64;  // fold = 0 for every tiny channel width
  ShiftConfig disabled = desk_shift(4, false);

  auto a = ear::build_model(backbone, head(0.0), degenerate, 7);
  auto b = ear::build_model(backbone, head(0.0), disabled, 7);
  const Tensor clip = random_clip({1, 4, 3, 32, 32}, 8);
  CHECK(linf_diff(a->forward_clip(clip, Mode::eval),
                  b->forward_clip(clip, Mode::eval)) == 0.0);
}

TEST_CASE("consensus equals the mean of per-segment forwards without shift") {
  auto model = ear::build_model(tiny_backbone(), head(0.0), desk_shift(4, false), 9);
  auto single = ear::build_model(tiny_backbone(), head(0.0), desk_shift(1, false), 9);

  const Tensor clip = random_clip({1, 4, 3, 32, 32}, 10);
  const Tensor consensus = model->forward_clip(clip, Mode::eval);

  Tensor mean({1, 6});
  const std::int64_t slice = clip.numel() / 4;
  for (std::int64_t t = 0; t < 4; ++t) {
    Tensor frame({1, 1, 3, 32, 32});
    std::copy(clip.data() + t * slice, clip.data() + (t + 1) * slice,
              frame.data());
    const Tensor logits = single->forward_clip(frame, Mode::eval);
    for (std::int64_t k = 0; k < 6; ++k) mean[k] += logits[k] / 4.0;
  }
  CHECK(linf_diff(consensus, mean) < 1e-12);
}

TEST_CASE("segment permutation: invariant without shift, sensitive with it") {
  const std::vector<std::int64_t> reversed = {3, 2, 1, 0};

  auto plain = ear::build_model(tiny_backbone(), head(0.0), desk_shift(4, false), 11);
  const Tensor clip = random_clip({1, 4, 3, 32, 32}, 12);
  const Tensor base = plain->forward_clip(clip, Mode::eval);
  const Tensor perm = plain->forward_clip(permute_segments(clip, reversed), Mode::eval);
  CHECK(linf_diff(base, perm) < 1e-9);

  auto shifted = ear::build_model(tiny_backbone(), head(0.0), desk_shift(4, true), 11);
  const Tensor s_base = shifted->forward_clip(clip, Mode::eval);
  const Tensor s_perm =
      shifted->forward_clip(permute_segments(clip, reversed), Mode::eval);
  CHECK(linf_diff(s_base, s_perm) > 1e-6);
}

TEST_CASE("shift_stages restricts the shift to the named stages") {
  BackboneSpec all = tiny_backbone();  // empty list: every stage shifted
  BackboneSpec none = tiny_backbone();
  none.shift_stages = {4};  // tiny stages are 1..3, so nothing shifts

  auto shifted = ear::build_model(all, head(0.0), desk_shift(), 30);
  auto restricted = ear::build_model(none, head(0.0), desk_shift(), 30);
  auto disabled = ear::build_model(all, head(0.0), desk_shift(4, false), 30);

  const Tensor clip = random_clip({1, 4, 3, 32, 32}, 31);
  const Tensor base = disabled->forward_clip(clip, Mode::eval);
  CHECK(linf_diff(restricted->forward_clip(clip, Mode::eval), base) == 0.0);
  CHECK(linf_diff(shifted->forward_clip(clip, Mode::eval), base) > 0.0);

  BackboneSpec bad = tiny_backbone();
  bad.shift_stages = {5};
  CHECK_THROWS_AS(bad.validate(), ear::ConfigError);
}

TEST_CASE("eval determinism: repeated forwards are bitwise identical") {
  auto model = ear::build_model(tiny_backbone(), head(0.5), desk_shift(), 13);
  const Tensor clip = random_clip({2, 4, 3, 32, 32}, 14);
  const Tensor a = model->forward_clip(clip, Mode::eval);
  const Tensor b = model->forward_clip(clip, Mode::eval);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] == b[i]);
  }
}

TEST_CASE("forward_clip rejects clips whose T differs from the segment count") {
  auto model = ear::build_model(tiny_backbone(), head(0.0), desk_shift(4), 15);
  const Tensor clip = random_clip({1, 3, 3, 32, 32}, 16);
  CHECK_THROWS_AS(model->forward_clip(clip, Mode::eval), ear::ShapeError);
}

TEST_CASE("model gradients through cross-entropy match finite differences") {
  auto model = ear::build_model(tiny_backbone(), head(0.0), desk_shift(2), 17);
  const Tensor clip = random_clip({2, 2, 3, 16, 16}, 18);
  const std::vector<std::int64_t> labels = {1, 4};

  auto loss_value = [&]() {
    const Tensor scores = model->forward_clip(clip, Mode::train);
    return ear::nn::softmax_cross_entropy(scores, labels).loss;
  };

  model->zero_grad();
  const Tensor scores = model->forward_clip(clip, Mode::train);
  const auto ce = ear::nn::softmax_cross_entropy(scores, labels);
  model->backward_from_scores(ce.grad);

  // Step small enough that no ReLU/maxpool selection flips inside the FD
  // interval; the analytic gradients then match to ~1e-9 relative.
  auto params = model->named_parameters();
  ear::RngStream rng(19);
  const double h = 1e-5;
  int checked = 0;
  while (checked < 15) {
    const auto pi = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(params.size())));
    auto* p = params[pi].second;
    const std::int64_t i = rng.uniform_int(0, p->value.numel());

    const double saved = p->value[i];
    p->value[i] = saved + h;
    const double plus = loss_value();
    p->value[i] = saved - h;
    const double minus = loss_value();
    p->value[i] = saved;

    const double fd = (plus - minus) / (2 * h);
    const double got = p->grad[i];
    if (std::abs(fd) < 1e-10 && std::abs(got) < 1e-10) continue;
    const double rel = std::abs(fd - got) / std::max(std::abs(fd), std::abs(got));
    INFO("param ", params[pi].first, " index ", i, " fd ", fd, " got ", got);
    CHECK(rel < 1e-6);
    ++checked;
  }
}

TEST_CASE("probabilities consensus: rows sum to one and gradients check out") {
  HeadSpec prob_head = head(0.0);
  prob_head.consensus_domain = ConsensusDomain::probabilities;
  auto model = ear::build_model(tiny_backbone(), prob_head, desk_shift(2), 20);
  const Tensor clip = random_clip({1, 2, 3, 16, 16}, 21);

  const Tensor probs = model->forward_clip(clip, Mode::eval);
  double sum = 0.0;
  for (std::int64_t k = 0; k < 6; ++k) sum += probs[k];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  // loss = -log p[y]
  const std::vector<std::int64_t> labels = {2};
  auto loss_value = [&]() {
    const Tensor p = model->forward_clip(clip, Mode::train);
    return -std::log(p[2]);
  };
  model->zero_grad();
  const Tensor p0 = model->forward_clip(clip, Mode::train);
  Tensor grad({1, 6});
  grad[2] = -1.0 / p0[2];
  model->backward_from_scores(grad);

  auto params = model->named_parameters();
  ear::RngStream rng(22);
  const double h = 1e-5;
  for (int k = 0; k < 6; ++k) {
    const auto pi = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(params.size())));
    auto* prm = params[pi].second;
    const std::int64_t i = rng.uniform_int(0, prm->value.numel());
    const double saved = prm->value[i];
    prm->value[i] = saved + h;
    const double plus = loss_value();
    prm->value[i] = saved - h;
    const double minus = loss_value();
    prm->value[i] = saved;
    const double fd = (plus - minus) / (2 * h);
    const double got = prm->grad[i];
    if (std::abs(fd) < 1e-10 && std::abs(got) < 1e-10) continue;
    CHECK(std::abs(fd - got) / std::max(std::abs(fd), std::abs(got)) < 1e-5);
  }
}

TEST_CASE("checkpoint: save/load round trip preserves specs and behavior") {
  eartest::TempDir tmp("ckpt");
  auto model = ear::build_model(tiny_backbone(), head(0.5), desk_shift(), 23);

  ear::CropSpec crop;
  crop.resize_short_side = 36;
  crop.crop_size = 32;

  const auto path = tmp.path() / "model.ear";
  ear::save_checkpoint(ear::make_checkpoint(*model, crop, 7, 0.875), path);

  const ear::Checkpoint loaded = ear::load_checkpoint(path);
  CHECK(loaded.epoch == 7);
  CHECK(loaded.val_accuracy == 0.875);
  CHECK(loaded.backbone == model->backbone_spec());
  CHECK(loaded.head == model->head_spec());
  CHECK(loaded.crop.crop_size == 32);

  ear::Model restored(loaded.backbone, loaded.head, loaded.shift, 999);
  restored.load_state(loaded.model_state);

  const Tensor clip = random_clip({1, 4, 3, 32, 32}, 24);
  CHECK(linf_diff(model->forward_clip(clip, Mode::eval),
                  restored.forward_clip(clip, Mode::eval)) == 0.0);
}

TEST_CASE("checkpoint: serialization is byte-stable") {
  eartest::TempDir tmp("ckptbytes");
  auto model = ear::build_model(tiny_backbone(), head(0.5), desk_shift(), 41);
  ear::CropSpec crop;
  crop.resize_short_side = 36;
  crop.crop_size = 32;

  const auto ckpt = ear::make_checkpoint(*model, crop, 2, 0.75);
  ear::save_checkpoint(ckpt, tmp.path() / "a.ear");
  ear::save_checkpoint(ckpt, tmp.path() / "b.ear");

  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  };
  const std::string a = slurp(tmp.path() / "a.ear");
  CHECK(!a.empty());
  CHECK(a == slurp(tmp.path() / "b.ear"));
}

TEST_CASE("checkpoint: load_state rejects missing and unknown tensors") {
  auto model = ear::build_model(tiny_backbone(), head(0.5), desk_shift(), 25);
  auto state = model->state_dict();

  auto broken = state;
  broken.erase(broken.begin()->first);
  CHECK_THROWS_AS(model->load_state(broken), ear::ValidationError);

  auto extra = state;
  extra.emplace("no.such.tensor", Tensor({1}));
  CHECK_THROWS_AS(model->load_state(extra), ear::ValidationError);
}

TEST_CASE("pretrained overlay: backbone copied, classifier left fresh") {
  eartest::TempDir tmp("pre");
  auto source = ear::build_model(tiny_backbone(), head(0.5), desk_shift(), 26);
  ear::CropSpec crop;
  crop.resize_short_side = 36;
  crop.crop_size = 32;
  const auto weights = tmp.path() / "weights.ear";
  ear::save_checkpoint(ear::make_checkpoint(*source, crop, 0, 0.0), weights);

  BackboneSpec pretrained = tiny_backbone();
  pretrained.pretrained_init = true;
  pretrained.pretrained_weights = weights.string();
  auto target = ear::build_model(pretrained, head(0.5), desk_shift(), 27);

  auto src_params = source->named_parameters();
  auto dst_params = target->named_parameters();
  REQUIRE(src_params.size() == dst_params.size());
  for (std::size_t i = 0; i < src_params.size(); ++i) {
    const bool is_fc = src_params[i].first.rfind("fc.", 0) == 0;
    bool equal = true;
    for (std::int64_t j = 0; j < src_params[i].second->value.numel(); ++j) {
      if (src_params[i].second->value[j] != dst_params[i].second->value[j]) {
        equal = false;
        break;
      }
    }
    if (is_fc) {
      CHECK_FALSE(equal);  // classifier re-initialized from seed 27
    } else {
      CHECK(equal);
    }
  }
}

TEST_CASE("build_model: pretrained_init without a weights file is an error") {
  BackboneSpec spec = tiny_backbone();
  spec.pretrained_init = true;
  CHECK_THROWS_AS(ear::build_model(spec, head(0.5), desk_shift(), 1),
                  ear::ConfigError);
}

TEST_CASE("HeadSpec: the EAR task is six classes") {
  HeadSpec h;
  h.num_classes = 5;
  CHECK_THROWS_AS(h.validate(), ear::ConfigError);
}
