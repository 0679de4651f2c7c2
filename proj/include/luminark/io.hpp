#pragma once

#include "luminark/certify.hpp"
#include "luminark/key.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <string>

namespace luminark {

Image load_image(const std::filesystem::path& path);
// Lossless 8-bit RGB PNG; write-temp-rename.
void save_png(const Image& image, const std::filesystem::path& path);

void atomic_write_text(const std::filesystem::path& path, const std::string& text);

// Key file schema (version 1): {version, seed, height, width, patch_size,
// weights:[wr,wg,wb], c:[+/-1...], tau:[decimal strings, 17 significant
// digits]}. Loaders validate every key invariant.
nlohmann::ordered_json key_to_json(const WatermarkKey& key);
WatermarkKey key_from_json(const nlohmann::ordered_json& j);
void save_key(const WatermarkKey& key, const std::filesystem::path& path);
WatermarkKey load_key(const std::filesystem::path& path);

nlohmann::ordered_json report_to_json(const DetectionReport& report);
nlohmann::ordered_json threshold_to_json(const CalibratedThreshold& threshold);

// Shortest-round-trip decimal string (17 significant digits).
std::string format_double(double v);

// Bilinear resize (half-pixel centers, no antialias prefilter).
Image resize_bilinear(const Image& image, int height, int width);

}  // namespace luminark
