#include "luminark/image.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace luminark {

PatchLayout PatchLayout::create(int height, int width, int patch_size) {
  if (height <= 0 || width <= 0 || patch_size <= 0)
    throw std::invalid_argument("PatchLayout: dimensions must be positive");
  if (height % patch_size != 0 || width % patch_size != 0)
    throw std::invalid_argument(
        "PatchLayout: " + std::to_string(height) + "x" + std::to_string(width) +
        " not divisible by patch size " + std::to_string(patch_size));
  return PatchLayout{height, width, patch_size};
}

void PatchLayout::require_match(const Image& img) const {
  if (!matches(img))
    throw std::invalid_argument(
        "image is " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
        ", layout expects " + std::to_string(height) + "x" + std::to_string(width));
}

std::vector<PatchRef> partition(const Image& image, const PatchLayout& layout) {
  layout.require_match(image);
  std::vector<PatchRef> patches;
  patches.reserve(layout.num_patches());
  for (int i = 0; i < layout.num_patches(); ++i)
    patches.push_back(PatchRef{layout.patch_row0(i), layout.patch_col0(i), layout.patch_size});
  return patches;
}

Image mirror_horizontal(const Image& image) {
  Image out;
  for (int c = 0; c < 3; ++c) out.ch[c] = image.ch[c].rowwise().reverse();
  return out;
}

std::vector<std::uint8_t> to_u8_rgb(const Image& image) {
  const auto h = image.height(), w = image.width();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w * 3);
  std::size_t idx = 0;
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c)
      for (int k = 0; k < 3; ++k) out[idx++] = quantize8(image.ch[k](r, c));
  return out;
}

Image from_u8_rgb(const std::uint8_t* data, int height, int width) {
  Image out(height, width);
  std::size_t idx = 0;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      for (int k = 0; k < 3; ++k) out.ch[k](r, c) = data[idx++] / 255.0;
  return out;
}

Image quantize_roundtrip(const Image& image) {
  Image out(image.height(), image.width());
  for (int k = 0; k < 3; ++k)
    out.ch[k] = image.ch[k].unaryExpr([](double v) { return quantize8(v) / 255.0; });
  return out;
}

double psnr_db(const Image& reference, const Image& candidate) {
  if (!reference.same_shape(candidate))
    throw std::invalid_argument("psnr_db: dimension mismatch");
  double se = 0.0;
  const auto h = reference.height(), w = reference.width();
  for (int k = 0; k < 3; ++k)
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index c = 0; c < w; ++c) {
        const double d = static_cast<double>(quantize8(reference.ch[k](r, c))) -
                         static_cast<double>(quantize8(candidate.ch[k](r, c)));
        se += d * d;
      }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / (3.0 * static_cast<double>(h) * static_cast<double>(w));
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double l2_distance(const Image& a, const Image& b) {
  double sq = 0.0;
  for (int k = 0; k < 3; ++k) sq += (a.ch[k] - b.ch[k]).matrix().squaredNorm();
  return std::sqrt(sq);
}

}  // namespace luminark
