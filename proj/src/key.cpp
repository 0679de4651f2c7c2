#include "luminark/key.hpp"

#include "luminark/rng.hpp"

#include <stdexcept>

namespace luminark {

void ChannelWeights::validate() const {
  if (wr < 0.0 || wg < 0.0 || wb < 0.0)
    throw std::invalid_argument("channel weights must be nonnegative");
  if (wr == 0.0 && wg == 0.0 && wb == 0.0)
    throw std::invalid_argument("channel weights must not all be zero");
}

void WatermarkKey::validate() const {
  weights.validate();
  const int n = layout.num_patches();
  if (c.size() != n || tau.size() != n)
    throw std::invalid_argument("key length does not match layout patch count");
  for (int i = 0; i < n; ++i) {
    if (c[i] != 1 && c[i] != -1) throw std::invalid_argument("key pattern entries must be +/-1");
    if (!(tau[i] > 0.0 && tau[i] < 1.0))
      throw std::invalid_argument("key thresholds must lie strictly inside (0,1)");
  }
}

WatermarkKey generate_key(std::uint64_t seed, const PatchLayout& layout,
                          const ChannelWeights& weights, double tau_low, double tau_high) {
  if (!(tau_low > 0.0 && tau_high < 1.0 && tau_low < tau_high))
    throw std::invalid_argument("tau interval must satisfy 0 < low < high < 1");
  PatchLayout::create(layout.height, layout.width, layout.patch_size);  // re-validate
  weights.validate();

  const int n = layout.num_patches();
  WatermarkKey key;
  key.layout = layout;
  key.weights = weights;
  key.seed = seed;
  key.tau_low = tau_low;
  key.tau_high = tau_high;
  key.c.resize(n);
  key.tau.resize(n);

  SplitMix64 rng(seed);
  for (int i = 0; i < n; ++i) key.c[i] = rng.next_sign();
  for (int i = 0; i < n; ++i) key.tau[i] = rng.next_uniform(tau_low, tau_high);
  return key;
}

double luminance(const Image& image, const PatchRef& patch, const ChannelWeights& weights) {
  double out = 0.0;
  for (int c = 0; c < 3; ++c) out += weights[c] * patch.block(image, c).mean();
  return out;
}

Eigen::VectorXd patch_luminances(const Image& image, const PatchLayout& layout,
                                 const ChannelWeights& weights) {
  layout.require_match(image);
  const int n = layout.num_patches();
  const int k = layout.patch_size;
  Eigen::VectorXd lums(n);
  for (int i = 0; i < n; ++i) {
    const int r0 = layout.patch_row0(i), c0 = layout.patch_col0(i);
    double l = 0.0;
    for (int c = 0; c < 3; ++c) l += weights[c] * image.ch[c].block(r0, c0, k, k).mean();
    lums[i] = l;
  }
  return lums;
}

Eigen::VectorXi binary_pattern_from_luminances(const Eigen::VectorXd& lums,
                                               const WatermarkKey& key) {
  const int n = key.layout.num_patches();
  if (lums.size() != n) throw std::invalid_argument("luminance vector length mismatch");
  Eigen::VectorXi bits(n);
  for (int i = 0; i < n; ++i) bits[i] = (lums[i] - key.tau[i] >= 0.0) ? 1 : -1;
  return bits;
}

Eigen::VectorXi binary_pattern(const Image& image, const WatermarkKey& key) {
  return binary_pattern_from_luminances(
      patch_luminances(image, key.layout, key.weights), key);
}

MatchResult match_rate_from_luminances(const Eigen::VectorXd& lums, const WatermarkKey& key) {
  const Eigen::VectorXi bits = binary_pattern_from_luminances(lums, key);
  MatchResult out;
  for (int i = 0; i < bits.size(); ++i) out.count += (bits[i] == key.c[i]);
  out.rate = static_cast<double>(out.count) / static_cast<double>(bits.size());
  return out;
}

MatchResult match_rate(const Image& image, const WatermarkKey& key) {
  return match_rate_from_luminances(patch_luminances(image, key.layout, key.weights), key);
}

}  // namespace luminark
