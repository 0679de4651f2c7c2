#pragma once

#include "luminark/diffusion.hpp"
#include "luminark/image.hpp"

#include <cstdint>

namespace luminark {

// Low-frequency random cosine field, values inside (0,1) without clamping.
// Pure arithmetic, so outputs are bit-stable across machines. Patch means
// spread roughly +/-0.1 around 0.5 at the default 64-pixel patch scale.
Image make_smooth_template(int height, int width, std::uint64_t seed);

// Uniform mixture of procedurally generated templates; template j uses
// seed + j.
MixturePrior make_default_prior(int height, int width, int count, double component_std,
                                std::uint64_t seed);

}  // namespace luminark
