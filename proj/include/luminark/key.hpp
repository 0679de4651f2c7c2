#pragma once

#include "luminark/image.hpp"

#include <Eigen/Dense>

#include <cstdint>

namespace luminark {

// Nonnegative channel weights, not all zero. The canonical luminance preset
// is exactly (0.299, 0.587, 0.114).
struct ChannelWeights {
  double wr = 0.299;
  double wg = 0.587;
  double wb = 0.114;

  static ChannelWeights luminance() { return {0.299, 0.587, 0.114}; }

  double sum() const { return wr + wg + wb; }
  double sum_sq() const { return wr * wr + wg * wg + wb * wb; }
  double operator[](int c) const { return c == 0 ? wr : (c == 1 ? wg : wb); }
  void validate() const;
};

// Provider secret: sign pattern c in {-1,+1}^N, per-patch thresholds tau in
// (0,1)^N, patch grid, channel weights. The seed is provenance metadata.
struct WatermarkKey {
  PatchLayout layout;
  Eigen::VectorXi c;
  Eigen::VectorXd tau;
  ChannelWeights weights;
  std::uint64_t seed = 0;
  double tau_low = 0.0;   // metadata: interval the thresholds were drawn from
  double tau_high = 0.0;

  void validate() const;
};

// Deterministic key generation from one SplitMix64 stream: one output per
// c_i (sign from the top bit), then one output per tau_i (53-bit uniform
// mapped onto [tau_low, tau_high]). Byte-identical for equal inputs.
WatermarkKey generate_key(std::uint64_t seed, const PatchLayout& layout,
                          const ChannelWeights& weights, double tau_low, double tau_high);

// Weighted per-channel means over one patch.
double luminance(const Image& image, const PatchRef& patch, const ChannelWeights& weights);

// All patch luminances in patch order.
Eigen::VectorXd patch_luminances(const Image& image, const PatchLayout& layout,
                                 const ChannelWeights& weights);

// Per-patch signs of (luminance - tau); sgn(0) = +1.
Eigen::VectorXi binary_pattern(const Image& image, const WatermarkKey& key);
Eigen::VectorXi binary_pattern_from_luminances(const Eigen::VectorXd& lums,
                                               const WatermarkKey& key);

struct MatchResult {
  double rate = 0.0;
  int count = 0;  // exact numerator
};

MatchResult match_rate(const Image& image, const WatermarkKey& key);
MatchResult match_rate_from_luminances(const Eigen::VectorXd& lums, const WatermarkKey& key);

}  // namespace luminark
