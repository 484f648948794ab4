#include <doctest.h>

#include <cmath>
#include <set>

#include "ear/errors.hpp"
#include "ear/shift.hpp"
#include "test_util.hpp"

using ear::Tensor;
using eartest::random_clip;
using eartest::temporal_shift_bruteforce;

TEST_CASE("temporal_shift: T=1 zero-fills both shifted groups") {
  Tensor clip = random_clip({2, 1, 9, 2, 2}, 11);
  const Tensor out = ear::temporal_shift(clip, 4);
  const std::int64_t fold = 9 / 4;  // 2
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t c = 0; c < 9; ++c) {
      for (std::int64_t h = 0; h < 2; ++h) {
        for (std::int64_t w = 0; w < 2; ++w) {
          if (c < 2 * fold) {
            CHECK(out.at({n, 0, c, h, w}) == 0.0);
          } else {
            CHECK(out.at({n, 0, c, h, w}) == clip.at({n, 0, c, h, w}));
          }
        }
      }
    }
  }
}

TEST_CASE("temporal_shift: all-zero clip stays all-zero") {
  Tensor clip({1, 4, 8, 3, 3});
  for (std::int64_t div : {1, 2, 4, 8}) {
    const Tensor out = ear::temporal_shift(clip, div);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0);
  }
}

TEST_CASE("temporal_shift: hand-mapped N=1,T=3,C=4 example") {
  // X[t,c] = 10t + c
  Tensor clip({1, 3, 4, 1, 1});
  for (std::int64_t t = 0; t < 3; ++t) {
    for (std::int64_t c = 0; c < 4; ++c) {
      clip.at({0, t, c, 0, 0}) = static_cast<double>(10 * t + c);
    }
  }
  const Tensor out = ear::temporal_shift(clip, 4);  // fold = 1

  // channel 0 pulls from t+1: (10, 20, 0)
  CHECK(out.at({0, 0, 0, 0, 0}) == 10.0);
  CHECK(out.at({0, 1, 0, 0, 0}) == 20.0);
  CHECK(out.at({0, 2, 0, 0, 0}) == 0.0);
  // channel 1 pulls from t-1: (0, 1, 11)
  CHECK(out.at({0, 0, 1, 0, 0}) == 0.0);
  CHECK(out.at({0, 1, 1, 0, 0}) == 1.0);
  CHECK(out.at({0, 2, 1, 0, 0}) == 11.0);
  // channels 2..3 unchanged
  for (std::int64_t t = 0; t < 3; ++t) {
    for (std::int64_t c = 2; c < 4; ++c) {
      CHECK(out.at({0, t, c, 0, 0}) == clip.at({0, t, c, 0, 0}));
    }
  }
}

TEST_CASE("temporal_shift: matches the brute-force oracle on random shapes") {
  auto rng = ear::RngStream(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const std::int64_t T = rng.uniform_int(1, 9);
    const std::int64_t C = rng.uniform_int(1, 33);
    const std::int64_t N = rng.uniform_int(1, 3);
    const std::int64_t H = rng.uniform_int(1, 4);
    const std::int64_t W = rng.uniform_int(1, 4);
    const std::int64_t divs[4] = {1, 2, 4, 8};
    const std::int64_t div = divs[rng.uniform_int(0, 4)];

    const Tensor clip = random_clip({N, T, C, H, W}, 100 + trial);
    const Tensor got = ear::temporal_shift(clip, div);
    const Tensor want = temporal_shift_bruteforce(clip, div);
    REQUIRE(got.numel() == want.numel());
    for (std::int64_t i = 0; i < got.numel(); ++i) {
      REQUIRE(got[i] == want[i]);  // exact: pure data movement
    }
  }
}

TEST_CASE("temporal_shift: input is not mutated") {
  const Tensor clip = random_clip({1, 4, 8, 2, 2}, 5);
  const Tensor before = clip;
  (void)ear::temporal_shift(clip, 8);
  for (std::int64_t i = 0; i < clip.numel(); ++i) {
    CHECK(clip[i] == before[i]);
  }
}

TEST_CASE("temporal_shift: partition property, nonzero outputs are inputs") {
  const Tensor clip = random_clip({2, 5, 12, 2, 3}, 42);
  const Tensor out = ear::temporal_shift(clip, 4);
  std::multiset<double> input_values;
  for (std::int64_t i = 0; i < clip.numel(); ++i) input_values.insert(clip[i]);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    if (out[i] == 0.0) continue;
    auto it = input_values.find(out[i]);
    REQUIRE(it != input_values.end());
    input_values.erase(it);
  }
}

TEST_CASE("temporal_shift: shape preserved, element count preserved") {
  auto rng = ear::RngStream(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<std::int64_t> shape = {
        rng.uniform_int(1, 3), rng.uniform_int(1, 7), rng.uniform_int(1, 20),
        rng.uniform_int(1, 5), rng.uniform_int(1, 5)};
    const Tensor clip = random_clip(shape, 900 + trial);
    const Tensor out = ear::temporal_shift(clip, 3);
    CHECK(out.shape() == shape);
    CHECK(out.numel() == clip.numel());
  }
}

TEST_CASE("temporal_shift: one shift drops a boundary slice irrecoverably") {
  // Group 0 pulls from t+1, so its t=0 value falls off the clip; group 1
  // pulls from t-1, so its t=T-1 value falls off. Neither survives anywhere
  // in the output.
  Tensor clip({1, 3, 4, 1, 1});
  clip.at({0, 0, 0, 0, 0}) = 5.0;  // group 0, t = 0
  clip.at({0, 2, 1, 0, 0}) = 7.0;  // group 1, t = T-1
  const Tensor once = ear::temporal_shift(clip, 4);
  for (std::int64_t i = 0; i < once.numel(); ++i) {
    CHECK(once[i] != 5.0);
    CHECK(once[i] != 7.0);
  }
}

TEST_CASE("temporal_shift: two applications are not the identity") {
  const Tensor clip = random_clip({1, 4, 8, 1, 1}, 21);
  const Tensor twice = ear::temporal_shift(ear::temporal_shift(clip, 4), 4);
  // Shifted groups land two steps over with two boundary zeros; any nonzero
  // group-0 value at t=0 demonstrates the difference.
  bool differs = false;
  for (std::int64_t i = 0; i < clip.numel(); ++i) {
    if (twice[i] != clip[i]) differs = true;
  }
  CHECK(differs);
  // Group 0 (channel 0): twice[t] = clip[t+2], zero at the last two steps.
  CHECK(twice.at({0, 0, 0, 0, 0}) == clip.at({0, 2, 0, 0, 0}));
  CHECK(twice.at({0, 2, 0, 0, 0}) == 0.0);
  CHECK(twice.at({0, 3, 0, 0, 0}) == 0.0);
}

TEST_CASE("temporal_shift: linearity over random clips") {
  const Tensor x = random_clip({1, 4, 10, 2, 2}, 1);
  const Tensor y = random_clip({1, 4, 10, 2, 2}, 2);
  const double a = 1.75, b = -0.5;

  Tensor combo(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) combo[i] = a * x[i] + b * y[i];

  const Tensor lhs = ear::temporal_shift(combo, 4);
  const Tensor sx = ear::temporal_shift(x, 4);
  const Tensor sy = ear::temporal_shift(y, 4);
  for (std::int64_t i = 0; i < lhs.numel(); ++i) {
    CHECK(lhs[i] == doctest::Approx(a * sx[i] + b * sy[i]).epsilon(1e-12));
  }
}

TEST_CASE("temporal_shift: adjoint identity <shift(x), w> == <x, adjoint(w)>") {
  const Tensor x = random_clip({2, 4, 9, 2, 2}, 31);
  const Tensor w = random_clip({2, 4, 9, 2, 2}, 32);
  const Tensor sx = ear::temporal_shift(x, 4);
  const Tensor aw = ear::temporal_shift_adjoint(w, 4);
  double lhs = 0.0, rhs = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    lhs += sx[i] * w[i];
    rhs += x[i] * aw[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("temporal_shift: gradient matches central finite differences") {
  // J(X) = <W, shift(X)>, dJ/dX = adjoint(W).
  const Tensor x = random_clip({1, 3, 8, 2, 2}, 55);
  const Tensor w = random_clip({1, 3, 8, 2, 2}, 56);
  const Tensor grad = ear::temporal_shift_adjoint(w, 4);

  auto eval = [&](const Tensor& point) {
    const Tensor s = ear::temporal_shift(point, 4);
    double j = 0.0;
    for (std::int64_t i = 0; i < s.numel(); ++i) j += w[i] * s[i];
    return j;
  };

  const double h = 1e-3;
  auto rng = ear::RngStream(77);
  for (int k = 0; k < 24; ++k) {
    const std::int64_t i = rng.uniform_int(0, x.numel());
    Tensor plus = x, minus = x;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (eval(plus) - eval(minus)) / (2 * h);
    const double denom = std::max(1e-12, std::abs(fd) + std::abs(grad[i]));
    CHECK(std::abs(fd - grad[i]) / denom < 1e-4);
  }
}

TEST_CASE("temporal_shift: rank and shift_div errors") {
  Tensor flat({2, 3});
  CHECK_THROWS_AS(ear::temporal_shift(flat, 4), ear::ShapeError);
  Tensor clip({1, 2, 4, 1, 1});
  CHECK_THROWS_AS(ear::temporal_shift(clip, 0), ear::ConfigError);
}

TEST_CASE("shift_fold and ShiftConfig validation") {
  CHECK(ear::shift_fold(8, 8) == 1);
  CHECK(ear::shift_fold(7, 8) == 0);
  CHECK(ear::shift_fold(64, 8) == 8);

  ear::ShiftConfig bad;
  bad.shift_div = 1;
  CHECK_THROWS_AS(bad.validate(), ear::ConfigError);
  bad.enabled = false;
  CHECK_NOTHROW(bad.validate());
  bad.segments = 0;
  CHECK_THROWS_AS(bad.validate(), ear::ConfigError);
}

TEST_CASE("shifted_residual: zero branch is the identity under residual_branch") {
  const Tensor clip = random_clip({1, 3, 8, 2, 2}, 9);
  ear::ShiftConfig cfg;
  cfg.shift_div = 2;
  cfg.segments = 3;
  const Tensor out = ear::shifted_residual(
      clip, cfg, [](const Tensor& x) { return Tensor(x.shape()); });
  for (std::int64_t i = 0; i < clip.numel(); ++i) {
    CHECK(out[i] == clip[i]);
  }
}

TEST_CASE("shifted_residual: fold 0 degenerates to a plain residual") {
  const Tensor clip = random_clip({1, 3, 4, 2, 2}, 10);
  auto branch = [](const Tensor& x) {
    Tensor y = x;
    y.scale(0.5);
    return y;
  };
  ear::ShiftConfig with_shift;
  with_shift.shift_div = 8;  // fold = floor(4/8) = 0
  with_shift.segments = 3;
  ear::ShiftConfig disabled = with_shift;
  disabled.enabled = false;

  const Tensor a = ear::shifted_residual(clip, with_shift, branch);
  const Tensor b = ear::shifted_residual(clip, disabled, branch);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] == b[i]);
  }
}

TEST_CASE("shifted_residual: 1x1 identity branch equals clip + shifted clip") {
  const Tensor clip = random_clip({1, 2, 4, 2, 2}, 12);
  ear::ShiftConfig cfg;
  cfg.shift_div = 2;
  cfg.segments = 2;
  // Identity-initialized 1x1 branch: F(x) = x.
  const Tensor out =
      ear::shifted_residual(clip, cfg, [](const Tensor& x) { return x; });
  const Tensor shifted = temporal_shift_bruteforce(clip, 2);
  for (std::int64_t i = 0; i < clip.numel(); ++i) {
    CHECK(out[i] == clip[i] + shifted[i]);
  }
}

TEST_CASE("shifted_residual: branch output shape mismatch is a shape error") {
  const Tensor clip = random_clip({1, 2, 4, 2, 2}, 14);
  ear::ShiftConfig cfg;
  cfg.shift_div = 2;
  cfg.segments = 2;
  CHECK_THROWS_AS(ear::shifted_residual(
                      clip, cfg,
                      [](const Tensor&) { return Tensor({1, 2, 8, 2, 2}); }),
                  ear::ShapeError);
}

TEST_CASE("shifted_residual: in_place placement shifts the identity path too") {
  const Tensor clip = random_clip({1, 2, 4, 1, 1}, 13);
  ear::ShiftConfig cfg;
  cfg.shift_div = 2;
  cfg.segments = 2;
  cfg.placement = ear::ShiftPlacement::in_place;
  const Tensor out =
      ear::shifted_residual(clip, cfg, [](const Tensor& x) { return x; });
  const Tensor shifted = temporal_shift_bruteforce(clip, 2);
  for (std::int64_t i = 0; i < clip.numel(); ++i) {
    CHECK(out[i] == 2.0 * shifted[i]);
  }
}
