#include "luminark/penalty.hpp"
#include "luminark/rng.hpp"
#include "luminark/templates.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace luminark;

namespace {

WatermarkKey single_patch_key(double tau, int c, const ChannelWeights& w = {1, 0, 0}) {
  WatermarkKey key;
  key.layout = PatchLayout::create(2, 2, 2);
  key.weights = w;
  key.c.resize(1);
  key.tau.resize(1);
  key.c[0] = c;
  key.tau[0] = tau;
  return key;
}

Image gray2(double v) {
  Image img(2, 2);
  for (auto& p : img.ch) p.setConstant(v);
  return img;
}

WatermarkKey random_key(std::uint64_t seed, const PatchLayout& layout) {
  return generate_key(seed, layout, ChannelWeights::luminance(), 0.3, 0.7);
}

}  // namespace

TEST_CASE("hinge value by direct substitution") {
  // c=+1, tau=0.6, l=0.45 -> 0.15
  const WatermarkKey up = single_patch_key(0.6, +1);
  Image img = gray2(0.45);
  CHECK(penalty(img, up, 0.0).value == doctest::Approx(0.15));
  CHECK(penalty(img, up, 0.0).violated[0]);

  // c=-1 with the same numbers is already satisfied
  const WatermarkKey down = single_patch_key(0.6, -1);
  const PenaltyEval eval = penalty(img, down, 0.0);
  CHECK(eval.value == 0.0);
  CHECK_FALSE(eval.violated[0]);
  for (int c = 0; c < 3; ++c) CHECK((eval.gradient.ch[c] == 0.0).all());

  CHECK_THROWS_AS(penalty(img, up, -0.1), std::invalid_argument);
  Image wrong(4, 4);
  CHECK_THROWS_AS(penalty(wrong, up, 0.0), std::invalid_argument);
}

TEST_CASE("gradient entries are -c w/k^2 on violated patches") {
  WatermarkKey key = single_patch_key(0.6, +1, ChannelWeights::luminance());
  const Image img = gray2(0.45);
  const PenaltyEval eval = penalty(img, key, 0.0);
  CHECK(eval.gradient.ch[0](0, 0) == doctest::Approx(-0.299 / 4.0));
  CHECK(eval.gradient.ch[1](1, 1) == doctest::Approx(-0.587 / 4.0));
  CHECK(eval.gradient.ch[2](0, 1) == doctest::Approx(-0.114 / 4.0));

  // against central differences at a non-boundary point
  const double fd = oracles::fd_penalty_component(img, key, 0.0, 0, 0, 0);
  CHECK(std::abs(eval.gradient.ch[0](0, 0) - fd) <= 1e-8);
}

TEST_CASE("analytic gradient matches finite differences away from kinks") {
  SplitMix64 rng(404);
  const PatchLayout layout = PatchLayout::create(8, 8, 4);
  int checked = 0;
  for (std::uint64_t trial = 0; checked < 40; ++trial) {
    const WatermarkKey key = random_key(derive_seed(600, trial), layout);
    Image img(8, 8);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 8; ++r)
        for (int col = 0; col < 8; ++col) img.ch[c](r, col) = rng.next_unit();
    const double margin = (trial % 2) ? 0.05 : 0.0;
    if (oracles::near_hinge_boundary(img, key, margin, 1e-4)) continue;
    ++checked;
    const PenaltyEval eval = penalty(img, key, margin);
    for (int probe = 0; probe < 6; ++probe) {
      const int c = static_cast<int>(rng.next_u64() % 3);
      const int r = static_cast<int>(rng.next_u64() % 8);
      const int col = static_cast<int>(rng.next_u64() % 8);
      const double fd = oracles::fd_penalty_component(img, key, margin, c, r, col);
      CHECK(std::abs(eval.gradient.ch[c](r, col) - fd) <= 1e-6);
    }
  }
}

TEST_CASE("gradient is zero exactly when the value is zero") {
  const PatchLayout layout = PatchLayout::create(16, 16, 4);
  SplitMix64 rng(2024);
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const WatermarkKey key = random_key(derive_seed(70, trial), layout);
    Image img(16, 16);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 16; ++r)
        for (int col = 0; col < 16; ++col) img.ch[c](r, col) = rng.next_unit();
    const PenaltyEval eval = penalty(img, key, 0.0);
    double grad_max = 0.0;
    for (int c = 0; c < 3; ++c) grad_max = std::max(grad_max, eval.gradient.ch[c].abs().maxCoeff());
    if (eval.value == 0.0)
      CHECK(grad_max == 0.0);
    else
      CHECK(grad_max > 0.0);
  }
}

TEST_CASE("one descent step strictly decreases a positive penalty") {
  const PatchLayout layout = PatchLayout::create(16, 16, 8);
  SplitMix64 rng(31);
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const WatermarkKey key = random_key(derive_seed(80, trial), layout);
    Image img(16, 16);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 16; ++r)
        for (int col = 0; col < 16; ++col) img.ch[c](r, col) = 0.2 + 0.6 * rng.next_unit();
    const PenaltyEval eval = penalty(img, key, 0.0);
    if (eval.value == 0.0) continue;
    const double eta = 1.0;
    Image stepped = img;
    for (int c = 0; c < 3; ++c) stepped.ch[c] -= eta * eval.gradient.ch[c];
    CHECK(penalty(stepped, key, 0.0).value < eval.value);
  }
}

TEST_CASE("zero penalty at margin delta implies slack at least delta") {
  const PatchLayout layout = PatchLayout::create(16, 16, 8);
  SplitMix64 rng(77);
  const double delta = 0.02;
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    const WatermarkKey key = random_key(derive_seed(90, trial), layout);
    Image img(16, 16);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 16; ++r)
        for (int col = 0; col < 16; ++col) img.ch[c](r, col) = rng.next_unit();
    if (penalty(img, key, delta).value != 0.0) continue;
    const Eigen::VectorXd lums = patch_luminances(img, key.layout, key.weights);
    for (int i = 0; i < key.layout.num_patches(); ++i)
      CHECK(key.c[i] * (lums[i] - key.tau[i]) >= delta);
  }
}

TEST_CASE("surrogate gap matches the match-rate identity") {
  const PatchLayout layout = PatchLayout::create(32, 32, 8);
  const WatermarkKey key = random_key(5, layout);

  // fully matched image
  Image good(32, 32);
  const int k = layout.patch_size;
  for (int i = 0; i < layout.num_patches(); ++i)
    for (int c = 0; c < 3; ++c)
      good.ch[c]
          .block(layout.patch_row0(i), layout.patch_col0(i), k, k)
          .setConstant(key.tau[i] + key.c[i] * 0.1);
  const SurrogateGap zero = surrogate_gap(good, key);
  CHECK(zero.penalty_value == doctest::Approx(0.0));
  CHECK(zero.violations == 0);

  // complement image violates everything
  Image bad(32, 32);
  for (int i = 0; i < layout.num_patches(); ++i)
    for (int c = 0; c < 3; ++c)
      bad.ch[c]
          .block(layout.patch_row0(i), layout.patch_col0(i), k, k)
          .setConstant(key.tau[i] - key.c[i] * 0.1);
  CHECK(surrogate_gap(bad, key).violations == layout.num_patches());

  // violations == N (1 - match_rate) on arbitrary images
  SplitMix64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    Image img(32, 32);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 32; ++r)
        for (int col = 0; col < 32; ++col) img.ch[c](r, col) = rng.next_unit();
    const SurrogateGap gap = surrogate_gap(img, key);
    const MatchResult m = match_rate(img, key);
    CHECK(gap.violations == layout.num_patches() - m.count);
  }
}

TEST_CASE("violations hover near N/2 for random keys") {
  const PatchLayout layout = PatchLayout::create(128, 128, 16);  // N = 64
  const Image img = make_smooth_template(128, 128, 4);
  double total = 0.0;
  constexpr int kTrials = 4000;
  for (std::uint64_t t = 0; t < kTrials; ++t) {
    const WatermarkKey key =
        generate_key(derive_seed(123, t), layout, ChannelWeights::luminance(), 0.4, 0.6);
    total += surrogate_gap(img, key).violations;
  }
  // per-trial violations ~ Binomial(64, 1/2), std 4
  const double mean = total / kTrials;
  CHECK(std::abs(mean - 32.0) <= 3.0 * 4.0 / std::sqrt(static_cast<double>(kTrials)));
}
