#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <vector>

namespace luminark {

using Plane = Eigen::ArrayXXd;  // rows = image height, cols = image width

// Planar RGB image with values nominally in [0,1]. 8-bit conversion rules:
// normalized = value / 255, quantized = round(value * 255) clamped to [0,255].
struct Image {
  std::array<Plane, 3> ch;  // R, G, B

  Image() = default;
  Image(Eigen::Index height, Eigen::Index width)
      : ch{Plane::Zero(height, width), Plane::Zero(height, width),
           Plane::Zero(height, width)} {}

  Eigen::Index height() const { return ch[0].rows(); }
  Eigen::Index width() const { return ch[0].cols(); }
  bool same_shape(const Image& other) const {
    return height() == other.height() && width() == other.width();
  }

  void clamp01() {
    for (auto& p : ch) p = p.min(1.0).max(0.0);
  }

  void setZero() {
    for (auto& p : ch) p.setZero();
  }
};

// Non-overlapping k x k grid over an H x W image. Patches are indexed
// row-major: index 0 is top-left, index num_patches()-1 is bottom-right.
struct PatchLayout {
  int height = 0;
  int width = 0;
  int patch_size = 0;

  static PatchLayout create(int height, int width, int patch_size);

  int patches_per_row() const { return width / patch_size; }
  int patches_per_col() const { return height / patch_size; }
  int num_patches() const { return patches_per_row() * patches_per_col(); }

  int patch_row0(int index) const { return (index / patches_per_row()) * patch_size; }
  int patch_col0(int index) const { return (index % patches_per_row()) * patch_size; }

  bool matches(const Image& img) const {
    return img.height() == height && img.width() == width;
  }
  void require_match(const Image& img) const;
};

// Lightweight patch handle; block() gives the Eigen view for one channel.
struct PatchRef {
  int row0 = 0;
  int col0 = 0;
  int size = 0;

  auto block(const Image& img, int channel) const {
    return img.ch[channel].block(row0, col0, size, size);
  }
};

// Row-major, exhaustive, non-overlapping cover of the grid.
std::vector<PatchRef> partition(const Image& image, const PatchLayout& layout);

Image mirror_horizontal(const Image& image);

// 8-bit interleaved RGB <-> normalized planar.
std::vector<std::uint8_t> to_u8_rgb(const Image& image);
Image from_u8_rgb(const std::uint8_t* data, int height, int width);

inline std::uint8_t quantize8(double v) {
  double s = std::nearbyint(v * 255.0);
  if (s < 0.0) s = 0.0;
  if (s > 255.0) s = 255.0;
  return static_cast<std::uint8_t>(s);
}

// Round-trip through the 8-bit representation.
Image quantize_roundtrip(const Image& image);

// 10*log10(255^2 / MSE) on the 8-bit quantized values; +inf for identical images.
double psnr_db(const Image& reference, const Image& candidate);

double l2_distance(const Image& a, const Image& b);

}  // namespace luminark
