#include "luminark/image.hpp"
#include "luminark/io.hpp"
#include "luminark/key.hpp"
#include "luminark/rng.hpp"
#include "luminark/templates.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace luminark;

namespace {

Image uniform_image(int h, int w, double r, double g, double b) {
  Image img(h, w);
  img.ch[0].setConstant(r);
  img.ch[1].setConstant(g);
  img.ch[2].setConstant(b);
  return img;
}

}  // namespace

TEST_CASE("splitmix64 matches the reference stream") {
  SplitMix64 a(0);
  CHECK(a.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(a.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(a.next_u64() == 0x06c45d188009454fULL);
  SplitMix64 b(1234567);
  CHECK(b.next_u64() == 0x599ed017fb08fc85ULL);
  CHECK(b.next_u64() == 0x2c73f08458540fa5ULL);
}

TEST_CASE("patch layout validation and row-major indexing") {
  const PatchLayout layout = PatchLayout::create(512, 512, 64);
  CHECK(layout.num_patches() == 64);
  CHECK(layout.patch_row0(0) == 0);
  CHECK(layout.patch_col0(0) == 0);
  CHECK(layout.patch_col0(1) == 64);   // second patch sits right of the first
  CHECK(layout.patch_row0(8) == 64);   // row-major wrap
  CHECK(layout.patch_row0(63) == 448);
  CHECK(layout.patch_col0(63) == 448);

  CHECK_THROWS_AS(PatchLayout::create(510, 512, 64), std::invalid_argument);
  CHECK_THROWS_AS(PatchLayout::create(512, 500, 64), std::invalid_argument);
  CHECK_THROWS_AS(PatchLayout::create(0, 512, 64), std::invalid_argument);

  const PatchLayout tiny = PatchLayout::create(2, 2, 2);
  CHECK(tiny.num_patches() == 1);
}

TEST_CASE("partition covers the image and reassembles exactly") {
  const Image img = make_smooth_template(64, 96, 42);
  const PatchLayout layout = PatchLayout::create(64, 96, 16);
  const auto patches = partition(img, layout);
  REQUIRE(patches.size() == 24);

  Image rebuilt(64, 96);
  for (const PatchRef& p : patches)
    for (int c = 0; c < 3; ++c)
      rebuilt.ch[c].block(p.row0, p.col0, p.size, p.size) = p.block(img, c);
  for (int c = 0; c < 3; ++c) CHECK((rebuilt.ch[c] == img.ch[c]).all());

  const Image wrong = make_smooth_template(60, 96, 42);
  CHECK_THROWS_AS(partition(wrong, layout), std::invalid_argument);
}

TEST_CASE("luminance weighted means") {
  const PatchLayout layout = PatchLayout::create(4, 4, 4);
  const PatchRef patch{0, 0, 4};
  const ChannelWeights w = ChannelWeights::luminance();

  CHECK(luminance(uniform_image(4, 4, 1, 1, 1), patch, w) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(luminance(uniform_image(4, 4, 1, 0, 0), patch, w) == doctest::Approx(0.299));

  Image half = uniform_image(4, 4, 1, 1, 1);
  for (int c = 0; c < 3; ++c) half.ch[c].block(0, 0, 2, 4).setZero();
  CHECK(luminance(half, patch, w) == doctest::Approx(0.5).epsilon(1e-12));
  (void)layout;
}

TEST_CASE("channel weight validation") {
  CHECK_THROWS_AS((ChannelWeights{-0.1, 0.5, 0.5}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ChannelWeights{0, 0, 0}.validate()), std::invalid_argument);
  CHECK_NOTHROW((ChannelWeights{1, 0, 0}.validate()));
}

TEST_CASE("generate_key draws signs then thresholds from one stream") {
  const PatchLayout layout = PatchLayout::create(512, 512, 64);
  const WatermarkKey key = generate_key(7, layout, ChannelWeights::luminance(), 0.4, 0.6);
  REQUIRE(key.c.size() == 64);
  REQUIRE(key.tau.size() == 64);
  for (int i = 0; i < 64; ++i) {
    CHECK((key.c[i] == 1 || key.c[i] == -1));
    CHECK(key.tau[i] >= 0.4);
    CHECK(key.tau[i] <= 0.6);
  }

  // pure function of its inputs
  const WatermarkKey again = generate_key(7, layout, ChannelWeights::luminance(), 0.4, 0.6);
  CHECK((key.c == again.c));
  for (int i = 0; i < 64; ++i) CHECK(key.tau[i] == again.tau[i]);

  const WatermarkKey other = generate_key(8, layout, ChannelWeights::luminance(), 0.4, 0.6);
  CHECK(key.c != other.c);

  CHECK_THROWS_AS(generate_key(7, layout, ChannelWeights::luminance(), 0.5, 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_key(7, layout, ChannelWeights::luminance(), 0.6, 0.4),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_key(7, layout, ChannelWeights::luminance(), 0.0, 0.6),
                  std::invalid_argument);
}

TEST_CASE("binary pattern uses sgn(0) = +1") {
  const PatchLayout layout = PatchLayout::create(2, 4, 2);
  WatermarkKey key;
  key.layout = layout;
  key.weights = ChannelWeights{1, 0, 0};  // luminance equals the R mean exactly
  key.c.resize(2);
  key.tau.resize(2);
  key.c << 1, 1;
  key.tau << 0.5, 0.5;

  Image img = uniform_image(2, 4, 0.5, 0, 0);
  const Eigen::VectorXi ties = binary_pattern(img, key);
  CHECK(ties[0] == 1);  // l == tau counts as above threshold
  CHECK(ties[1] == 1);

  const Eigen::VectorXi dark = binary_pattern(uniform_image(2, 4, 0, 0, 0), key);
  CHECK(dark[0] == -1);
  CHECK(dark[1] == -1);

  Image split = uniform_image(2, 4, 0.7, 0, 0);
  split.ch[0].block(0, 2, 2, 2).setConstant(0.3);
  const Eigen::VectorXi bits = binary_pattern(split, key);
  CHECK(bits[0] == 1);
  CHECK(bits[1] == -1);
}

TEST_CASE("match rate counts exact agreements") {
  const PatchLayout layout = PatchLayout::create(2, 8, 2);
  WatermarkKey key;
  key.layout = layout;
  key.weights = ChannelWeights{1, 0, 0};
  key.c.resize(4);
  key.tau.resize(4);
  key.c << 1, -1, -1, -1;
  key.tau << 0.5, 0.5, 0.5, 0.5;

  Image img(2, 8);
  const double lums[4] = {0.7, 0.3, 0.7, 0.3};  // pattern (+1,-1,+1,-1)
  for (int i = 0; i < 4; ++i) img.ch[0].block(0, 2 * i, 2, 2).setConstant(lums[i]);
  const MatchResult m = match_rate(img, key);
  CHECK(m.count == 3);
  CHECK(m.rate == doctest::Approx(0.75));

  WatermarkKey perfect = key;
  perfect.c << 1, -1, 1, -1;
  const MatchResult full = match_rate(img, perfect);
  CHECK(full.rate == 1.0);
}

TEST_CASE("match rate only depends on patch means") {
  const Image img = make_smooth_template(32, 32, 5);
  const PatchLayout layout = PatchLayout::create(32, 32, 8);
  const WatermarkKey key = generate_key(11, layout, ChannelWeights::luminance(), 0.4, 0.6);
  const MatchResult before = match_rate(img, key);

  // permute pixels inside every patch (same permutation per channel)
  Image shuffled = img;
  SplitMix64 rng(99);
  for (int i = 0; i < layout.num_patches(); ++i) {
    const int r0 = layout.patch_row0(i), c0 = layout.patch_col0(i), k = layout.patch_size;
    std::vector<int> perm(k * k);
    for (int j = 0; j < k * k; ++j) perm[j] = j;
    for (int j = k * k - 1; j > 0; --j)
      std::swap(perm[j], perm[static_cast<int>(rng.next_u64() % (j + 1))]);
    for (int c = 0; c < 3; ++c) {
      Eigen::ArrayXXd block = img.ch[c].block(r0, c0, k, k);
      for (int j = 0; j < k * k; ++j)
        shuffled.ch[c](r0 + perm[j] / k, c0 + perm[j] % k) = block(j / k, j % k);
    }
  }
  const MatchResult after = match_rate(shuffled, key);
  CHECK(before.count == after.count);
}

TEST_CASE("match counts over random keys follow Binomial(N, 1/2)") {
  // chi-square over 1e5 keys against one fixed image, significance 1e-3
  const PatchLayout layout = PatchLayout::create(128, 128, 16);  // N = 64
  const Image img = quantize_roundtrip(make_smooth_template(128, 128, 31));
  const Eigen::VectorXd lums = patch_luminances(img, layout, ChannelWeights::luminance());

  constexpr int kTrials = 100000;
  std::vector<int> hist(65, 0);
  double rate_sum = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    const WatermarkKey key =
        generate_key(derive_seed(555, t), layout, ChannelWeights::luminance(), 0.4, 0.6);
    const MatchResult m = match_rate_from_luminances(lums, key);
    ++hist[m.count];
    rate_sum += m.rate;
  }

  // mean match rate 0.5 within 3 sigma
  const double mean = rate_sum / kTrials;
  CHECK(std::abs(mean - 0.5) <= 3.0 * 0.5 / std::sqrt(64.0 * kTrials));

  // bins {<=24}, 25..39, {>=40}: 17 cells, all expected counts > 200
  double chi2 = 0.0;
  auto expected_prob = [&](int lo, int hi) {
    return oracles::binom_tail(64, lo) - (hi >= 64 ? 0.0 : oracles::binom_tail(64, hi + 1));
  };
  auto cell = [&](int lo, int hi) {
    int observed = 0;
    for (int k = lo; k <= hi; ++k) observed += hist[k];
    const double expect = expected_prob(lo, hi) * kTrials;
    chi2 += (observed - expect) * (observed - expect) / expect;
  };
  cell(0, 24);
  for (int k = 25; k <= 39; ++k) cell(k, k);
  cell(40, 64);
  CHECK(chi2 < 39.2524);  // chi-square 0.999 quantile, 16 dof
}

TEST_CASE("8-bit conversions round and clamp") {
  CHECK(quantize8(0.0) == 0);
  CHECK(quantize8(1.0) == 255);
  CHECK(quantize8(-0.2) == 0);
  CHECK(quantize8(1.7) == 255);
  CHECK(quantize8(1.0 / 255.0) == 1);
  CHECK(quantize8(0.4999 / 255.0) == 0);

  const Image img = make_smooth_template(16, 16, 3);
  const Image rt = quantize_roundtrip(quantize_roundtrip(img));
  const Image once = quantize_roundtrip(img);
  for (int c = 0; c < 3; ++c) CHECK((rt.ch[c] == once.ch[c]).all());
}

TEST_CASE("mirror reverses columns only") {
  Image img(2, 3);
  img.ch[0] << 1, 2, 3, 4, 5, 6;
  const Image m = mirror_horizontal(img);
  CHECK(m.ch[0](0, 0) == 3);
  CHECK(m.ch[0](0, 2) == 1);
  CHECK(m.ch[0](1, 1) == 5);
  const Image twice = mirror_horizontal(m);
  CHECK((twice.ch[0] == img.ch[0]).all());
}

TEST_CASE("key files round-trip bit-exactly and validate on load") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "luminark_core_test";
  fs::create_directories(dir);
  const fs::path path = dir / "key.json";

  const PatchLayout layout = PatchLayout::create(128, 128, 32);
  const WatermarkKey key = generate_key(7, layout, ChannelWeights::luminance(), 0.4, 0.6);
  save_key(key, path);
  const WatermarkKey loaded = load_key(path);
  CHECK(loaded.seed == key.seed);
  CHECK((loaded.c == key.c));
  for (int i = 0; i < key.tau.size(); ++i) CHECK(loaded.tau[i] == key.tau[i]);

  // writers are deterministic
  const fs::path path2 = dir / "key2.json";
  save_key(key, path2);
  std::ifstream a(path), b(path2);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);

  // invariants enforced on load
  auto j = key_to_json(key);
  j["c"][0] = 2;
  CHECK_THROWS(key_from_json(j));
  auto j2 = key_to_json(key);
  j2["tau"][0] = "1.5";
  CHECK_THROWS(key_from_json(j2));
  fs::remove_all(dir);
}
