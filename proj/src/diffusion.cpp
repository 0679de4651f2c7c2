#include "luminark/diffusion.hpp"

#include "luminark/injector.hpp"
#include "luminark/penalty.hpp"
#include "luminark/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace luminark {

NoiseSchedule build_schedule(int steps, double sigma_min, double sigma_max, double rho) {
  if (steps < 2) throw std::invalid_argument("schedule needs at least 2 steps");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max))
    throw std::invalid_argument("schedule requires 0 < sigma_min < sigma_max");
  if (!(rho > 0.0)) throw std::invalid_argument("schedule rho must be positive");

  NoiseSchedule sch;
  sch.steps = steps;
  sch.rho = rho;
  sch.sigma_min = sigma_min;
  sch.sigma_max = sigma_max;
  sch.sigma.resize(steps + 1);
  const double a = std::pow(sigma_max, 1.0 / rho);
  const double b = std::pow(sigma_min, 1.0 / rho);
  for (int i = 0; i < steps; ++i) {
    const double frac = static_cast<double>(i) / (steps - 1);
    sch.sigma[steps - i] = std::pow(a + frac * (b - a), rho);
  }
  sch.sigma[steps] = sigma_max;  // pin endpoints exactly
  sch.sigma[1] = sigma_min;
  sch.sigma[0] = 0.0;
  return sch;
}

void MixturePrior::validate() const {
  if (templates.empty()) throw std::invalid_argument("mixture prior needs at least one template");
  if (weights.size() != static_cast<Eigen::Index>(templates.size()))
    throw std::invalid_argument("mixture prior weight count mismatch");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < weights.size(); ++j) {
    if (!(weights[j] > 0.0)) throw std::invalid_argument("mixture weights must be positive");
    sum += weights[j];
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("mixture weights must sum to 1");
  if (component_std < 0.0) throw std::invalid_argument("component_std must be nonnegative");
  for (const Image& t : templates)
    if (!t.same_shape(templates.front()))
      throw std::invalid_argument("all templates must share one shape");
}

MixturePrior MixturePrior::uniform(std::vector<Image> templates, double component_std) {
  MixturePrior prior;
  prior.weights =
      Eigen::VectorXd::Constant(templates.size(), 1.0 / static_cast<double>(templates.size()));
  prior.templates = std::move(templates);
  prior.component_std = component_std;
  prior.validate();
  return prior;
}

Image analytic_denoiser(const Image& x, double sigma, const MixturePrior& prior) {
  if (!(sigma > 0.0)) throw std::invalid_argument("analytic_denoiser: sigma must be positive");
  const auto count = static_cast<Eigen::Index>(prior.templates.size());
  const double var_eff = sigma * sigma + prior.component_std * prior.component_std;

  Eigen::VectorXd logits(count);
  for (Eigen::Index j = 0; j < count; ++j) {
    double d2 = 0.0;
    for (int c = 0; c < 3; ++c)
      d2 += (x.ch[c] - prior.templates[j].ch[c]).matrix().squaredNorm();
    logits[j] = std::log(prior.weights[j]) - d2 / (2.0 * var_eff);
  }
  const double peak = logits.maxCoeff();
  Eigen::VectorXd post = (logits.array() - peak).exp();
  post /= post.sum();

  Image mu_hat(x.height(), x.width());
  for (Eigen::Index j = 0; j < count; ++j) {
    if (post[j] == 0.0) continue;
    for (int c = 0; c < 3; ++c) mu_hat.ch[c] += post[j] * prior.templates[j].ch[c];
  }
  if (prior.component_std == 0.0) return mu_hat;

  const double g2 = prior.component_std * prior.component_std;
  const double s2 = sigma * sigma;
  Image out(x.height(), x.width());
  for (int c = 0; c < 3; ++c) out.ch[c] = (g2 * x.ch[c] + s2 * mu_hat.ch[c]) / var_eff;
  return out;
}

LinearDecoder LinearDecoder::identity(int height, int width) {
  return LinearDecoder{Kind::identity, height, width};
}
LinearDecoder LinearDecoder::nearest2x(int latent_height, int latent_width) {
  return LinearDecoder{Kind::nearest2x, latent_height, latent_width};
}
LinearDecoder LinearDecoder::bilinear2x(int latent_height, int latent_width) {
  return LinearDecoder{Kind::bilinear2x, latent_height, latent_width};
}

int LinearDecoder::output_height() const {
  return kind == Kind::identity ? latent_height : 2 * latent_height;
}
int LinearDecoder::output_width() const {
  return kind == Kind::identity ? latent_width : 2 * latent_width;
}

namespace {

// Half-pixel-center 2x bilinear: output pixel i samples the latent at
// (i + 0.5)/2 - 0.5, clamped at the borders.
void bilinear_axis(int out_size, int in_size, std::vector<int>& i0, std::vector<int>& i1,
                   std::vector<double>& w1) {
  i0.resize(out_size);
  i1.resize(out_size);
  w1.resize(out_size);
  for (int i = 0; i < out_size; ++i) {
    double src = (i + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > in_size - 1.0) src = in_size - 1.0;
    const int lo = static_cast<int>(std::floor(src));
    i0[i] = lo;
    i1[i] = std::min(lo + 1, in_size - 1);
    w1[i] = src - lo;
  }
}

}  // namespace

Image LinearDecoder::forward(const Image& latent) const {
  if (latent.height() != latent_height || latent.width() != latent_width)
    throw std::invalid_argument("decoder: latent shape mismatch");
  switch (kind) {
    case Kind::identity:
      return latent;
    case Kind::nearest2x: {
      Image out(output_height(), output_width());
      for (int c = 0; c < 3; ++c)
        for (int r = 0; r < output_height(); ++r)
          for (int col = 0; col < output_width(); ++col)
            out.ch[c](r, col) = latent.ch[c](r / 2, col / 2);
      return out;
    }
    case Kind::bilinear2x: {
      std::vector<int> r0, r1, c0, c1;
      std::vector<double> wr, wc;
      bilinear_axis(output_height(), latent_height, r0, r1, wr);
      bilinear_axis(output_width(), latent_width, c0, c1, wc);
      Image out(output_height(), output_width());
      for (int c = 0; c < 3; ++c)
        for (int r = 0; r < output_height(); ++r)
          for (int col = 0; col < output_width(); ++col) {
            const auto& p = latent.ch[c];
            const double top = (1.0 - wc[col]) * p(r0[r], c0[col]) + wc[col] * p(r0[r], c1[col]);
            const double bot = (1.0 - wc[col]) * p(r1[r], c0[col]) + wc[col] * p(r1[r], c1[col]);
            out.ch[c](r, col) = (1.0 - wr[r]) * top + wr[r] * bot;
          }
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

Image LinearDecoder::adjoint(const Image& image_grad) const {
  if (image_grad.height() != output_height() || image_grad.width() != output_width())
    throw std::invalid_argument("decoder adjoint: image shape mismatch");
  switch (kind) {
    case Kind::identity:
      return image_grad;
    case Kind::nearest2x: {
      Image out(latent_height, latent_width);
      for (int c = 0; c < 3; ++c)
        for (int r = 0; r < output_height(); ++r)
          for (int col = 0; col < output_width(); ++col)
            out.ch[c](r / 2, col / 2) += image_grad.ch[c](r, col);
      return out;
    }
    case Kind::bilinear2x: {
      std::vector<int> r0, r1, c0, c1;
      std::vector<double> wr, wc;
      bilinear_axis(output_height(), latent_height, r0, r1, wr);
      bilinear_axis(output_width(), latent_width, c0, c1, wc);
      Image out(latent_height, latent_width);
      for (int c = 0; c < 3; ++c)
        for (int r = 0; r < output_height(); ++r)
          for (int col = 0; col < output_width(); ++col) {
            const double g = image_grad.ch[c](r, col);
            out.ch[c](r0[r], c0[col]) += (1.0 - wr[r]) * (1.0 - wc[col]) * g;
            out.ch[c](r0[r], c1[col]) += (1.0 - wr[r]) * wc[col] * g;
            out.ch[c](r1[r], c0[col]) += wr[r] * (1.0 - wc[col]) * g;
            out.ch[c](r1[r], c1[col]) += wr[r] * wc[col] * g;
          }
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

namespace {

Image draw_initial(std::uint64_t seed, Eigen::Index h, Eigen::Index w, double sigma_max) {
  SplitMix64 rng(seed);
  Image x(h, w);
  // R plane row-major, then G, then B; fixed order for reproducibility
  for (int c = 0; c < 3; ++c)
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index col = 0; col < w; ++col)
        x.ch[c](r, col) = sigma_max * rng.next_gaussian();
  return x;
}

struct TrajectoryParams {
  const NoiseSchedule& schedule;
  const MixturePrior& prior;
  const LinearDecoder* decoder = nullptr;  // null: states are pixel space
  const WatermarkKey* key = nullptr;       // null: unguided
  double scale = 0.0;
  const GuidanceOptions* options = nullptr;
};

Image run_trajectory(std::uint64_t seed, const TrajectoryParams& p,
                     std::vector<Image>* states_out) {
  const Image& shape = p.prior.templates.front();
  Image z = draw_initial(seed, shape.height(), shape.width(), p.schedule.sigma[p.schedule.steps]);
  for (int t = p.schedule.steps; t >= 1; --t) {
    const double sig_t = p.schedule.sigma[t];
    const double sig_prev = p.schedule.sigma[t - 1];
    const Image denoised = analytic_denoiser(z, sig_t, p.prior);
    Image bracket(z.height(), z.width());
    for (int c = 0; c < 3; ++c) bracket.ch[c] = (z.ch[c] - denoised.ch[c]) / sig_t;

    const bool masked =
        p.options && p.options->step_mask && !(*p.options->step_mask)[t - 1];
    if (p.key && p.scale != 0.0 && !masked) {
      const Image decoded = p.decoder ? p.decoder->forward(z) : z;
      std::vector<bool> violated;
      penalty_value(patch_luminances(decoded, p.key->layout, p.key->weights), *p.key,
                    p.options ? p.options->margin : 0.0, &violated);
      Image grad(decoded.height(), decoded.width());
      add_penalty_gradient(grad, *p.key, violated);
      const Image latent_grad = p.decoder ? p.decoder->adjoint(grad) : grad;
      double s_t = p.scale;
      if (p.options && p.options->scale_schedule) s_t *= p.options->scale_schedule(t, sig_t);
      for (int c = 0; c < 3; ++c) bracket.ch[c] += s_t * latent_grad.ch[c];
    }
    for (int c = 0; c < 3; ++c) z.ch[c] -= bracket.ch[c] * (sig_t - sig_prev);
    if (states_out) states_out->push_back(z);
  }
  return z;
}

SampleTrace run_guided(std::uint64_t seed, const NoiseSchedule& schedule,
                       const MixturePrior& prior, const LinearDecoder* decoder,
                       const WatermarkKey& key, double scale,
                       const CalibratedThreshold& threshold, const GuidanceOptions& options) {
  prior.validate();
  const Image& shape = prior.templates.front();
  const int out_h = decoder ? decoder->output_height() : static_cast<int>(shape.height());
  const int out_w = decoder ? decoder->output_width() : static_cast<int>(shape.width());
  if (out_h != key.layout.height || out_w != key.layout.width)
    throw std::invalid_argument("sampler output shape does not match key layout");
  if (threshold.n != key.layout.num_patches())
    throw std::invalid_argument("threshold patch count does not match key layout");
  if (scale < 0.0) throw std::invalid_argument("guidance scale must be nonnegative");
  if (options.retry_cap < 1) throw std::invalid_argument("retry cap must be at least 1");
  if (options.step_mask && static_cast<int>(options.step_mask->size()) != schedule.steps)
    throw std::invalid_argument("step mask length must equal step count");

  TrajectoryParams params{schedule, prior, decoder, &key, scale, &options};
  SampleTrace trace;
  trace.seed = seed;
  trace.schedule = schedule;
  trace.guidance_scale = scale;
  for (int attempt = 0; attempt < options.retry_cap; ++attempt) {
    trace.states.clear();
    Image z = run_trajectory(derive_seed(seed, static_cast<std::uint64_t>(attempt)), params,
                             options.record_states ? &trace.states : nullptr);
    Image img = decoder ? decoder->forward(z) : std::move(z);
    img.clamp01();
    const MatchResult m = match_rate(img, key);
    trace.attempt_match_rates.push_back(m.rate);
    trace.retries = attempt + 1;
    trace.final_image = std::move(img);
    trace.final_match_rate = m.rate;
    trace.final_match_count = m.count;
    if (m.count >= threshold.k_star) {
      trace.success = true;
      return trace;
    }
  }
  trace.success = false;  // retry cap exhausted; last attempt retained
  return trace;
}

}  // namespace

Image sample_unguided(std::uint64_t seed, const NoiseSchedule& schedule,
                      const MixturePrior& prior) {
  prior.validate();
  TrajectoryParams params{schedule, prior, nullptr, nullptr, 0.0, nullptr};
  Image img = run_trajectory(seed, params, nullptr);
  img.clamp01();
  return img;
}

SampleTrace sample_guided(std::uint64_t seed, const NoiseSchedule& schedule,
                          const MixturePrior& prior, const WatermarkKey& key, double scale,
                          const CalibratedThreshold& threshold, const GuidanceOptions& options) {
  return run_guided(seed, schedule, prior, nullptr, key, scale, threshold, options);
}

SampleTrace sample_guided_latent(std::uint64_t seed, const NoiseSchedule& schedule,
                                 const MixturePrior& latent_prior, const LinearDecoder& decoder,
                                 const WatermarkKey& key, double scale,
                                 const CalibratedThreshold& threshold,
                                 const GuidanceOptions& options) {
  const Image& shape = latent_prior.templates.front();
  if (shape.height() != decoder.latent_height || shape.width() != decoder.latent_width)
    throw std::invalid_argument("latent prior shape does not match decoder input");
  return run_guided(seed, schedule, latent_prior, &decoder, key, scale, threshold, options);
}

Image sample_hard_stepwise(std::uint64_t seed, const NoiseSchedule& schedule,
                           const MixturePrior& prior, const WatermarkKey& key, double margin) {
  prior.validate();
  const Image& shape = prior.templates.front();
  if (shape.height() != key.layout.height || shape.width() != key.layout.width)
    throw std::invalid_argument("sampler output shape does not match key layout");

  Image z = draw_initial(seed, shape.height(), shape.width(), schedule.sigma[schedule.steps]);
  for (int t = schedule.steps; t >= 1; --t) {
    const double sig_t = schedule.sigma[t];
    const double sig_prev = schedule.sigma[t - 1];
    const Image denoised = analytic_denoiser(z, sig_t, prior);
    for (int c = 0; c < 3; ++c)
      z.ch[c] -= ((z.ch[c] - denoised.ch[c]) / sig_t) * (sig_t - sig_prev);
    if (t - 1 >= 1) {
      // project the running prediction, fold the correction into the state
      const Image pred = analytic_denoiser(z, sig_prev, prior);
      const Image projected =
          inject_hard_projection_ex(pred, key, margin, 1.0, /*clamp=*/false).image;
      for (int c = 0; c < 3; ++c) z.ch[c] += projected.ch[c] - pred.ch[c];
    }
  }
  z.clamp01();
  return inject_hard_projection(z, key, margin);
}

double guidance_luminance_budget(const ChannelWeights& weights, int patch_size,
                                 const NoiseSchedule& schedule, double component_std,
                                 double scale) {
  // Each step's guidance kick to a violated patch's luminance is
  // s * (sum w^2 / k^2) * dsigma; the kick applied at level sigma survives the
  // remaining contraction with factor std / sqrt(sigma^2 + std^2) (the final
  // step survives in full).
  const double per_unit = weights.sum_sq() / (static_cast<double>(patch_size) * patch_size);
  double acc = 0.0;
  for (int t = 1; t <= schedule.steps; ++t) {
    const double ds = schedule.sigma[t] - schedule.sigma[t - 1];
    double survival = 1.0;
    if (t > 1) {
      const double sp = schedule.sigma[t - 1];
      survival = component_std > 0.0
                     ? component_std / std::sqrt(sp * sp + component_std * component_std)
                     : 0.0;
    }
    acc += ds * survival;
  }
  return scale * per_unit * acc;
}

double guidance_scale_for(const ChannelWeights& weights, int patch_size,
                          const NoiseSchedule& schedule, double component_std,
                          double luminance_budget) {
  const double unit = guidance_luminance_budget(weights, patch_size, schedule, component_std, 1.0);
  if (!(unit > 0.0)) throw std::invalid_argument("guidance budget is degenerate for this setup");
  return luminance_budget / unit;
}

double default_guidance_scale(int patch_size) {
  const NoiseSchedule sch = build_schedule(32, 0.002, 80.0, 7.0);
  return guidance_scale_for(ChannelWeights::luminance(), patch_size, sch, 0.05, 0.35);
}

}  // namespace luminark
