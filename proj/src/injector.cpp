#include "luminark/injector.hpp"

#include "luminark/penalty.hpp"

#include <cmath>
#include <stdexcept>

namespace luminark {

namespace {
// sgn(0)=+1 makes the c=-1 constraint strict; bias the projection shift so
// the recomputed mean clears the threshold despite roundoff. ~4e-5 of one
// 8-bit quantum.
constexpr double kTieBreak = 1e-9;
}  // namespace

InjectionConfig InjectionConfig::defaults_for(const WatermarkKey& key, double luminance_step) {
  InjectionConfig cfg;
  const double k2 = static_cast<double>(key.layout.patch_size) * key.layout.patch_size;
  cfg.step_size = luminance_step * k2 / key.weights.sum_sq();
  return cfg;
}

InjectionResult inject_posthoc_gd(const Image& image, const WatermarkKey& key,
                                  const InjectionConfig& cfg) {
  key.layout.require_match(image);
  if (cfg.step_size <= 0.0) throw std::invalid_argument("injection step size must be positive");
  if (cfg.margin < 0.0) throw std::invalid_argument("injection margin must be nonnegative");
  if (!(cfg.target_match_rate > 0.0 && cfg.target_match_rate <= 1.0))
    throw std::invalid_argument("target match rate must lie in (0,1]");

  InjectionResult out;
  out.image = image;
  std::vector<bool> violated;
  int iters = 0;
  while (iters < cfg.max_iterations) {
    const Eigen::VectorXd lums = patch_luminances(out.image, key.layout, key.weights);
    out.final_penalty = penalty_value(lums, key, cfg.margin, &violated);
    out.final_match_rate = match_rate_from_luminances(lums, key).rate;
    if (out.final_penalty == 0.0 && out.final_match_rate >= cfg.target_match_rate) break;
    add_penalty_gradient(out.image, key, violated, -cfg.step_size);
    if (cfg.clamp) out.image.clamp01();
    ++iters;
  }
  if (iters == cfg.max_iterations) {
    const Eigen::VectorXd lums = patch_luminances(out.image, key.layout, key.weights);
    out.final_penalty = penalty_value(lums, key, cfg.margin);
    out.final_match_rate = match_rate_from_luminances(lums, key).rate;
  }
  out.iterations_used = iters;
  out.success = out.final_match_rate >= cfg.target_match_rate;
  out.psnr_db = psnr_db(image, out.image);
  return out;
}

HardProjectionResult inject_hard_projection_ex(const Image& image, const WatermarkKey& key,
                                               double margin, double fraction, bool clamp) {
  key.layout.require_match(image);
  if (margin < 0.0) throw std::invalid_argument("projection margin must be nonnegative");
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("projection fraction must lie in [0,1]");

  HardProjectionResult out;
  out.image = image;
  const Eigen::VectorXd lums = patch_luminances(image, key.layout, key.weights);
  const Eigen::VectorXi bits = binary_pattern_from_luminances(lums, key);
  const int n = key.layout.num_patches();
  const int k = key.layout.patch_size;
  const double wsum = key.weights.sum();

  int total_violated = 0;
  for (int i = 0; i < n; ++i)
    if (bits[i] != key.c[i]) ++total_violated;
  int to_enforce = static_cast<int>(std::ceil(fraction * total_violated));
  for (int i = 0; i < n && to_enforce > 0; ++i) {
    if (bits[i] == key.c[i]) continue;
    --to_enforce;
    const double shift =
        key.c[i] * (std::abs(key.tau[i] - lums[i]) + margin + kTieBreak) / wsum;
    for (int c = 0; c < 3; ++c)
      out.image.ch[c].block(key.layout.patch_row0(i), key.layout.patch_col0(i), k, k) += shift;
    if (clamp) {
      bool bound = false;
      for (int c = 0; c < 3 && !bound; ++c) {
        const auto blk = out.image.ch[c].block(key.layout.patch_row0(i),
                                               key.layout.patch_col0(i), k, k);
        bound = blk.maxCoeff() > 1.0 || blk.minCoeff() < 0.0;
      }
      if (bound) out.clamp_bound.push_back(i);
    }
  }
  if (clamp) out.image.clamp01();
  return out;
}

Image inject_hard_projection(const Image& image, const WatermarkKey& key, double margin) {
  return inject_hard_projection_ex(image, key, margin).image;
}

}  // namespace luminark
