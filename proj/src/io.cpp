#include "luminark/io.hpp"

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace luminark {

using nlohmann::ordered_json;

Image load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image: " + path.string());
  Image out(bgr.rows, bgr.cols);
  for (int r = 0; r < bgr.rows; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      out.ch[0](r, c) = row[c][2] / 255.0;
      out.ch[1](r, c) = row[c][1] / 255.0;
      out.ch[2](r, c) = row[c][0] / 255.0;
    }
  }
  return out;
}

void save_png(const Image& image, const std::filesystem::path& path) {
  cv::Mat bgr(static_cast<int>(image.height()), static_cast<int>(image.width()), CV_8UC3);
  for (int r = 0; r < bgr.rows; ++r) {
    auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      row[c][0] = quantize8(image.ch[2](r, c));
      row[c][1] = quantize8(image.ch[1](r, c));
      row[c][2] = quantize8(image.ch[0](r, c));
    }
  }
  std::vector<uchar> buf;
  if (!cv::imencode(".png", bgr, buf))
    throw std::runtime_error("PNG encode failed for " + path.string());
  const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + tmp.string());
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  std::filesystem::rename(tmp, path);
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + tmp.string());
    f << text;
  }
  std::filesystem::rename(tmp, path);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

ordered_json key_to_json(const WatermarkKey& key) {
  ordered_json j;
  j["version"] = 1;
  j["seed"] = key.seed;
  j["height"] = key.layout.height;
  j["width"] = key.layout.width;
  j["patch_size"] = key.layout.patch_size;
  j["weights"] = {key.weights.wr, key.weights.wg, key.weights.wb};
  j["c"] = std::vector<int>(key.c.data(), key.c.data() + key.c.size());
  std::vector<std::string> tau;
  tau.reserve(key.tau.size());
  for (Eigen::Index i = 0; i < key.tau.size(); ++i) tau.push_back(format_double(key.tau[i]));
  j["tau"] = tau;
  return j;
}

WatermarkKey key_from_json(const ordered_json& j) {
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("unsupported key file version");
  WatermarkKey key;
  key.seed = j.at("seed").get<std::uint64_t>();
  key.layout = PatchLayout::create(j.at("height").get<int>(), j.at("width").get<int>(),
                                   j.at("patch_size").get<int>());
  const auto& w = j.at("weights");
  if (w.size() != 3) throw std::runtime_error("key weights must have 3 entries");
  key.weights = ChannelWeights{w[0].get<double>(), w[1].get<double>(), w[2].get<double>()};
  const auto& c = j.at("c");
  const auto& tau = j.at("tau");
  key.c.resize(static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) key.c[static_cast<Eigen::Index>(i)] = c[i].get<int>();
  key.tau.resize(static_cast<Eigen::Index>(tau.size()));
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const std::string s = tau[i].get<std::string>();
    key.tau[static_cast<Eigen::Index>(i)] = std::strtod(s.c_str(), nullptr);
  }
  key.validate();
  return key;
}

void save_key(const WatermarkKey& key, const std::filesystem::path& path) {
  atomic_write_text(path, key_to_json(key).dump(2) + "\n");
}

WatermarkKey load_key(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read key file: " + path.string());
  ordered_json j;
  f >> j;
  return key_from_json(j);
}

Image resize_bilinear(const Image& image, int height, int width) {
  cv::Mat in(static_cast<int>(image.height()), static_cast<int>(image.width()), CV_64FC3);
  for (int r = 0; r < in.rows; ++r) {
    auto* row = in.ptr<cv::Vec3d>(r);
    for (int c = 0; c < in.cols; ++c)
      row[c] = cv::Vec3d(image.ch[0](r, c), image.ch[1](r, c), image.ch[2](r, c));
  }
  cv::Mat out;
  cv::resize(in, out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  Image result(height, width);
  for (int r = 0; r < height; ++r) {
    const auto* row = out.ptr<cv::Vec3d>(r);
    for (int c = 0; c < width; ++c)
      for (int k = 0; k < 3; ++k) result.ch[k](r, c) = row[c][k];
  }
  return result;
}

ordered_json threshold_to_json(const CalibratedThreshold& t) {
  ordered_json j;
  j["n"] = t.n;
  j["target_fpr"] = t.target_fpr;
  j["k_star"] = t.k_star;
  j["t_match"] = t.t_match;
  j["p_at_k_star"] = t.p_at_k_star;
  return j;
}

ordered_json report_to_json(const DetectionReport& r) {
  ordered_json j;
  j["match_rate"] = r.match_rate;
  j["match_count"] = r.match_count;
  j["t_match"] = r.threshold.t_match;
  j["p_value"] = r.p_value;
  j["decision"] = r.decision;
  j["flip_used"] = r.flip_used;
  if (r.flip_match_rate)
    j["flip_match_rate"] = *r.flip_match_rate;
  else
    j["flip_match_rate"] = nullptr;
  return j;
}

}  // namespace luminark
