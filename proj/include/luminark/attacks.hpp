#pragma once

#include "luminark/image.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace luminark {

enum class AttackKind {
  scaling,
  cropping,
  jpeg,
  median_filter,
  gaussian_blur,
  color_jitter,
  color_quantization,
  gaussian_noise,
  unsharp_mask,
  horizontal_flip,
};

// Fixed defaults mirror the reference battery: downscale to 96x96, 2-pixel
// crop border, JPEG quality 50, 11x11 median, 9x9/sigma-15 blur, jitter
// factor 0.1, 64 k-means colors in CIELAB (20 iters, eps 1.0, 10 restarts),
// noise std 25 on the 8-bit scale, unsharp radius 5 / 300% / threshold 3.
struct AttackSpec {
  AttackKind kind = AttackKind::scaling;

  int scale_to = 96;
  int crop_border = 2;
  int jpeg_quality = 50;
  int median_ksize = 11;
  int blur_ksize = 9;
  double blur_sigma = 15.0;
  double jitter_factor = 0.1;
  int quant_colors = 64;
  int quant_iters = 20;
  double quant_eps = 1.0;
  int quant_attempts = 10;
  double noise_std = 25.0;
  double unsharp_radius = 5.0;
  int unsharp_percent = 300;
  int unsharp_threshold = 3;

  // Required by the stochastic kinds (color_jitter, gaussian_noise,
  // color_quantization restarts); ignored by the deterministic ones.
  std::optional<std::uint64_t> rng_seed;

  static AttackSpec of(AttackKind kind, std::optional<std::uint64_t> seed = std::nullopt);
};

bool attack_is_stochastic(AttackKind kind);
const char* attack_name(AttackKind kind);
std::optional<AttackKind> parse_attack(const std::string& name);

// Total function: output dimensions always equal input dimensions. Kinds
// whose reference operates on 8-bit values convert-quantize-convert
// explicitly.
Image apply_attack(const Image& image, const AttackSpec& spec);

// The nine-transform battery (horizontal flip excluded); kind ordinal i
// uses seed + i. Deterministic given (image, seed).
std::map<AttackKind, Image> attack_battery(const Image& image, std::uint64_t seed);

}  // namespace luminark
