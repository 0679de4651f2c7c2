#pragma once

#include "luminark/key.hpp"

#include <vector>

namespace luminark {

struct InjectionConfig {
  double step_size = 0.0;  // eta; see defaults_for
  int max_iterations = 256;
  double margin = 0.0;
  double target_match_rate = 1.0;
  bool clamp = true;

  // One gradient step changes a violated patch's luminance by exactly
  // eta * (wr^2 + wg^2 + wb^2) / k^2; the default eta is chosen so that
  // change equals luminance_step.
  static InjectionConfig defaults_for(const WatermarkKey& key, double luminance_step = 0.005);
};

struct InjectionResult {
  Image image;
  int iterations_used = 0;
  double final_match_rate = 0.0;
  double psnr_db = 0.0;  // vs the input, 8-bit quantized; +inf when untouched
  bool success = false;
  double final_penalty = 0.0;
};

// Penalty-gradient descent: x <- clamp(x - eta * grad Penalty(x, margin)).
// Runs until the margin-augmented penalty reaches 0 with match_rate >=
// target, or the iteration cap. Non-convergence is reported, not thrown.
InjectionResult inject_posthoc_gd(const Image& image, const WatermarkKey& key,
                                  const InjectionConfig& cfg);

struct HardProjectionResult {
  Image image;
  std::vector<int> clamp_bound;  // patches where [0,1] clamping bit into the shift
};

// Per violated patch, shifts all three channels of every pixel by the one
// scalar c_i*(|tau_i - l| + margin)/(wr+wg+wb), then clamps. `fraction`
// limits enforcement to that share of the violated patches (ascending
// patch index); 1.0 enforces all.
HardProjectionResult inject_hard_projection_ex(const Image& image, const WatermarkKey& key,
                                               double margin, double fraction = 1.0,
                                               bool clamp = true);
Image inject_hard_projection(const Image& image, const WatermarkKey& key, double margin);

}  // namespace luminark
