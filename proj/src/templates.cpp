#include "luminark/templates.hpp"

#include "luminark/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace luminark {

Image make_smooth_template(int height, int width, std::uint64_t seed) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("template dims must be positive");
  SplitMix64 rng(seed);

  constexpr int kModes = 6;
  double freq_r[kModes], freq_c[kModes], phase[kModes], amp[kModes];
  for (int m = 0; m < kModes; ++m) {
    freq_r[m] = rng.next_uniform(-3.0, 3.0);
    freq_c[m] = rng.next_uniform(-3.0, 3.0);
    phase[m] = rng.next_uniform(0.0, 2.0 * M_PI);
    amp[m] = 0.11 / std::sqrt(m + 1.0);
  }
  double gain[3], cfreq_r[3], cfreq_c[3], cphase[3];
  for (int c = 0; c < 3; ++c) {
    gain[c] = rng.next_uniform(0.85, 1.15);
    cfreq_r[c] = rng.next_uniform(-2.0, 2.0);
    cfreq_c[c] = rng.next_uniform(-2.0, 2.0);
    cphase[c] = rng.next_uniform(0.0, 2.0 * M_PI);
  }

  Image out(height, width);
  for (int r = 0; r < height; ++r) {
    const double y = static_cast<double>(r) / height;
    for (int col = 0; col < width; ++col) {
      const double x = static_cast<double>(col) / width;
      double base = 0.0;
      for (int m = 0; m < kModes; ++m)
        base += amp[m] * std::cos(2.0 * M_PI * (freq_r[m] * y + freq_c[m] * x) + phase[m]);
      for (int c = 0; c < 3; ++c)
        out.ch[c](r, col) =
            0.5 + gain[c] * base +
            0.04 * std::cos(2.0 * M_PI * (cfreq_r[c] * y + cfreq_c[c] * x) + cphase[c]);
    }
  }
  return out;
}

MixturePrior make_default_prior(int height, int width, int count, double component_std,
                                std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("prior needs at least one template");
  std::vector<Image> templates;
  templates.reserve(count);
  for (int j = 0; j < count; ++j)
    templates.push_back(
        make_smooth_template(height, width, derive_seed(seed, static_cast<std::uint64_t>(j))));
  return MixturePrior::uniform(std::move(templates), component_std);
}

}  // namespace luminark
