#pragma once

#include "luminark/certify.hpp"
#include "luminark/key.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace luminark {

// rho-spaced noise levels. sigma has T+1 entries walked t = T..1..0:
// sigma[T] = sigma_max, sigma[1] = sigma_min, sigma[0] = 0 (clean terminal,
// so the last Euler step is a full denoise).
struct NoiseSchedule {
  int steps = 0;  // T
  Eigen::VectorXd sigma;
  double rho = 0.0;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
};

NoiseSchedule build_schedule(int steps, double sigma_min, double sigma_max, double rho);

// Mixture prior standing in for a trained denoiser. component_std = 0 gives
// exact point masses at the templates; component_std > 0 smears each
// template into an isotropic Gaussian, giving the sampler continuous
// support around the templates.
struct MixturePrior {
  std::vector<Image> templates;
  Eigen::VectorXd weights;  // positive, summing to 1
  double component_std = 0.0;

  void validate() const;
  static MixturePrior uniform(std::vector<Image> templates, double component_std = 0.0);
};

// Exact posterior mean E[x0 | x_t] under the mixture prior. For point
// masses this is sum_j softmax_j(log pi_j - |x - mu_j|^2 / (2 sigma^2)) mu_j;
// the Gaussian case evaluates the softmax at sigma_eff^2 = sigma^2 + std^2
// and blends (std^2 x + sigma^2 mu_hat) / sigma_eff^2.
Image analytic_denoiser(const Image& x, double sigma, const MixturePrior& prior);

// Fixed linear latent->image map with an exact adjoint. Outputs are clamped
// to [0,1] only at final emission, never inside gradient computation.
struct LinearDecoder {
  enum class Kind { identity, nearest2x, bilinear2x };

  Kind kind = Kind::identity;
  int latent_height = 0;
  int latent_width = 0;

  static LinearDecoder identity(int height, int width);
  static LinearDecoder nearest2x(int latent_height, int latent_width);
  static LinearDecoder bilinear2x(int latent_height, int latent_width);

  int output_height() const;
  int output_width() const;
  Image forward(const Image& latent) const;
  Image adjoint(const Image& image_grad) const;
};

struct GuidanceOptions {
  double margin = 0.0;  // penalty margin used inside the guidance gradient
  int retry_cap = 64;
  // Per-step scale hook s_t = scale * scale_schedule(t, sigma_t); identity
  // when unset. step_mask[t-1] gates guidance at step t (VAR-style partial
  // application); all steps when unset.
  std::function<double(int, double)> scale_schedule;
  std::optional<std::vector<bool>> step_mask;
  bool record_states = false;
};

struct SampleTrace {
  std::uint64_t seed = 0;
  NoiseSchedule schedule;
  double guidance_scale = 0.0;
  int retries = 0;  // total attempts, >= 1
  bool success = false;
  Image final_image;  // clamped to [0,1]
  double final_match_rate = 0.0;
  int final_match_count = 0;
  std::vector<double> attempt_match_rates;
  std::vector<Image> states;  // per-step, only when record_states
};

// Euler probability-flow sampling from x_T = sigma_max * z, z ~ N(0, I)
// drawn via Box-Muller from a SplitMix64 stream. Deterministic given seed.
Image sample_unguided(std::uint64_t seed, const NoiseSchedule& schedule,
                      const MixturePrior& prior);

// Adds s * grad Penalty(x_t, W) inside the Euler bracket; restarts with
// counter-incremented seeds until the match count reaches the calibrated
// threshold or the retry cap is exhausted (reported, not thrown).
SampleTrace sample_guided(std::uint64_t seed, const NoiseSchedule& schedule,
                          const MixturePrior& prior, const WatermarkKey& key, double scale,
                          const CalibratedThreshold& threshold,
                          const GuidanceOptions& options = {});

// Latent-space variant: the prior lives in latent space and the guidance
// gradient is decoder-adjoint of the image-space penalty gradient (exact
// chain rule through the linear decoder).
SampleTrace sample_guided_latent(std::uint64_t seed, const NoiseSchedule& schedule,
                                 const MixturePrior& latent_prior, const LinearDecoder& decoder,
                                 const WatermarkKey& key, double scale,
                                 const CalibratedThreshold& threshold,
                                 const GuidanceOptions& options = {});

// Ablation baseline: after every Euler step the hard projection is applied
// to the running denoised prediction and the correction folded back into
// the state; the final emitted image is projected directly.
Image sample_hard_stepwise(std::uint64_t seed, const NoiseSchedule& schedule,
                           const MixturePrior& prior, const WatermarkKey& key, double margin);

// Worst-case luminance shift guidance at this scale can deliver to one
// always-violated patch across the whole trajectory, accounting for the
// contraction each kick still has to survive.
double guidance_luminance_budget(const ChannelWeights& weights, int patch_size,
                                 const NoiseSchedule& schedule, double component_std,
                                 double scale);

// Scale whose trajectory-wide luminance budget equals luminance_budget.
double guidance_scale_for(const ChannelWeights& weights, int patch_size,
                          const NoiseSchedule& schedule, double component_std,
                          double luminance_budget);

// Swept defaults (see README); keyed by patch size, which sets the
// luminance-per-pixel leverage of the penalty gradient.
double default_guidance_scale(int patch_size);

}  // namespace luminark
