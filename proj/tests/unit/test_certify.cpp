#include "luminark/certify.hpp"
#include "luminark/templates.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace luminark;

TEST_CASE("tail probability exact anchors") {
  CHECK(tail_probability(4, 4) == doctest::Approx(0.0625).epsilon(1e-15));
  CHECK(tail_probability(64, 0) == 1.0);
  CHECK(tail_probability(64, 64) == doctest::Approx(std::ldexp(1.0, -64)).epsilon(1e-15));
  // frozen from the big-integer oracle
  CHECK(tail_probability(64, 42) == doctest::Approx(8.42909502214056472e-03).epsilon(1e-13));
  CHECK(tail_probability(64, 41) == doctest::Approx(1.63828795494115990e-02).epsilon(1e-13));

  CHECK_THROWS_AS(tail_probability(64, -1), std::invalid_argument);
  CHECK_THROWS_AS(tail_probability(64, 65), std::invalid_argument);
}

TEST_CASE("tail probability agrees with the big-integer oracle to 1e-14") {
  for (int n : {1, 2, 3, 5, 8, 13, 17, 31, 50, 64, 100, 128}) {
    for (int k = 0; k <= n; ++k) {
      const double got = tail_probability(n, k);
      const double want = oracles::binom_tail(n, k);
      CHECK(std::abs(got - want) <= 1e-14 * want);
    }
  }
}

TEST_CASE("tail probability is monotone nonincreasing in k") {
  for (int n : {7, 32, 64}) {
    double prev = 2.0;
    for (int k = 0; k <= n; ++k) {
      const double p = tail_probability(n, k);
      CHECK(p <= prev);
      prev = p;
    }
  }
}

TEST_CASE("calibrate_threshold picks the smallest admissible k") {
  const CalibratedThreshold t = calibrate_threshold(64, 0.01);
  CHECK(t.k_star == 42);
  CHECK(t.t_match == doctest::Approx(0.65625));
  CHECK(t.p_at_k_star == doctest::Approx(8.42909502214056472e-03).epsilon(1e-13));

  const CalibratedThreshold all = calibrate_threshold(4, 0.0625);
  CHECK(all.k_star == 4);
  CHECK(all.t_match == 1.0);

  CHECK_THROWS_AS(calibrate_threshold(10, 1e-6), UnachievableFprError);
  CHECK_THROWS_AS(calibrate_threshold(64, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(calibrate_threshold(64, 1.0), std::invalid_argument);

  // two-sided minimality across a grid
  for (int n : {8, 16, 32, 64}) {
    for (double fpr : {0.05, 0.01, 0.001}) {
      try {
        const CalibratedThreshold c = calibrate_threshold(n, fpr);
        CHECK(c.p_at_k_star <= fpr);
        if (c.k_star > 0) CHECK(tail_probability(n, c.k_star - 1) > fpr);
      } catch (const UnachievableFprError&) {
        CHECK(oracles::min_k_at_fpr(n, fpr) == -1);
      }
    }
  }
}

TEST_CASE("kl tail bound endpoints and interior") {
  CHECK(kl_tail_bound(64, 0.0) == 1.0);
  CHECK(kl_tail_bound(64, 0.5) == doctest::Approx(std::ldexp(1.0, -64)).epsilon(1e-12));
  CHECK(kl_tail_bound(64, 0.25) == doctest::Approx(2.3125945400288248e-04).epsilon(1e-12));
  CHECK_THROWS_AS(kl_tail_bound(64, -0.01), std::invalid_argument);
  CHECK_THROWS_AS(kl_tail_bound(64, 0.51), std::invalid_argument);
}

TEST_CASE("exact tails never exceed the KL bound") {
  for (int n = 1; n <= 64; ++n) {
    for (int k = (n + 1) / 2; k <= n; ++k) {
      const double eps = static_cast<double>(k) / n - 0.5;
      if (eps < 0.0) continue;
      CHECK(tail_probability(n, k) <= kl_tail_bound(n, eps) * (1.0 + 1e-12));
    }
  }
}

namespace {

// Image whose patch luminances sit just above / below each tau as the sign
// vector dictates; mismatch_at flips the listed patches.
Image image_for_pattern(const WatermarkKey& key, const std::vector<int>& mismatch_at = {}) {
  Image img(key.layout.height, key.layout.width);
  const int k = key.layout.patch_size;
  for (int i = 0; i < key.layout.num_patches(); ++i) {
    const bool flip =
        std::find(mismatch_at.begin(), mismatch_at.end(), i) != mismatch_at.end();
    const int sign = flip ? -key.c[i] : key.c[i];
    const double lum = key.tau[i] + sign * 0.05;
    for (int c = 0; c < 3; ++c)
      img.ch[c].block(key.layout.patch_row0(i), key.layout.patch_col0(i), k, k)
          .setConstant(lum);  // weights sum to ~1, so luminance ~= lum
  }
  return img;
}

}  // namespace

TEST_CASE("detect applies the >= rule with the exact p-value") {
  const PatchLayout layout = PatchLayout::create(128, 128, 16);  // N = 64
  const WatermarkKey key = generate_key(21, layout, ChannelWeights::luminance(), 0.4, 0.6);
  const CalibratedThreshold thr = calibrate_threshold(64, 0.01);

  const Image full = image_for_pattern(key);
  const DetectionReport all = detect(full, key, thr);
  CHECK(all.match_rate == 1.0);
  CHECK(all.decision);
  CHECK(all.p_value == doctest::Approx(std::ldexp(1.0, -64)).epsilon(1e-12));

  // exactly at the threshold: decision true by the >= rule
  std::vector<int> flips;
  for (int i = 0; i < 64 - thr.k_star; ++i) flips.push_back(i);
  const DetectionReport edge = detect(image_for_pattern(key, flips), key, thr);
  CHECK(edge.match_count == thr.k_star);
  CHECK(edge.match_rate == doctest::Approx(thr.t_match));
  CHECK(edge.decision);
  CHECK(edge.p_value == doctest::Approx(tail_probability(64, edge.match_count)));

  // half agreement: rejected
  std::vector<int> half;
  for (int i = 0; i < 32; ++i) half.push_back(2 * i);
  const DetectionReport low = detect(image_for_pattern(key, half), key, thr);
  CHECK(low.match_count == 32);
  CHECK_FALSE(low.decision);

  WatermarkKey wrong = key;
  wrong.layout = PatchLayout::create(64, 64, 16);
  CHECK_THROWS_AS(detect(full, wrong, thr), std::invalid_argument);
}

TEST_CASE("flip-OR recovers a mirrored pattern") {
  const PatchLayout layout = PatchLayout::create(128, 128, 16);
  const WatermarkKey key = generate_key(77, layout, ChannelWeights::luminance(), 0.4, 0.6);
  const CalibratedThreshold thr = calibrate_threshold(64, 0.01);

  const Image marked = image_for_pattern(key);
  const Image mirrored = mirror_horizontal(marked);

  const DetectionReport plain = detect(mirrored, key, thr);
  CHECK_FALSE(plain.decision);  // alignment lost

  const DetectionReport combined = detect_with_flip(mirrored, key, thr);
  CHECK(combined.decision);
  CHECK(combined.flip_used);
  REQUIRE(combined.flip_match_rate.has_value());
  CHECK(*combined.flip_match_rate == 1.0);

  // symmetric image: both branches identical
  Image symmetric(128, 128);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 128; ++r)
      for (int col = 0; col < 128; ++col)
        symmetric.ch[c](r, col) = 0.3 + 0.4 * std::abs(col - 63.5) / 64.0;
  const DetectionReport sym = detect_with_flip(symmetric, key, thr);
  CHECK(sym.match_rate == *sym.flip_match_rate);
}

TEST_CASE("false positive rate is controlled on unwatermarked images") {
  // 20k random keys against a fixed image; 4-sigma band around the exact rate
  const PatchLayout layout = PatchLayout::create(128, 128, 16);
  const Image img = quantize_roundtrip(make_smooth_template(128, 128, 8));
  const Eigen::VectorXd lums = patch_luminances(img, layout, ChannelWeights::luminance());
  const CalibratedThreshold thr = calibrate_threshold(64, 0.01);

  constexpr int kTrials = 20000;
  int hits = 0;
  for (int t = 0; t < kTrials; ++t) {
    const WatermarkKey key =
        generate_key(derive_seed(9090, t), layout, ChannelWeights::luminance(), 0.4, 0.6);
    if (match_rate_from_luminances(lums, key).count >= thr.k_star) ++hits;
  }
  const double p = thr.p_at_k_star;
  const double se = std::sqrt(p * (1 - p) / kTrials);
  CHECK(std::abs(static_cast<double>(hits) / kTrials - p) <= 4.0 * se);
}
