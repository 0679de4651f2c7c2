#include "luminark/attacks.hpp"

#include "luminark/rng.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <stdexcept>

namespace luminark {

namespace {

cv::Mat to_bgr8(const Image& img) {
  cv::Mat m(static_cast<int>(img.height()), static_cast<int>(img.width()), CV_8UC3);
  for (int r = 0; r < m.rows; ++r) {
    auto* row = m.ptr<cv::Vec3b>(r);
    for (int c = 0; c < m.cols; ++c) {
      row[c][0] = quantize8(img.ch[2](r, c));  // B
      row[c][1] = quantize8(img.ch[1](r, c));  // G
      row[c][2] = quantize8(img.ch[0](r, c));  // R
    }
  }
  return m;
}

Image from_bgr8(const cv::Mat& m) {
  Image out(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    const auto* row = m.ptr<cv::Vec3b>(r);
    for (int c = 0; c < m.cols; ++c) {
      out.ch[0](r, c) = row[c][2] / 255.0;
      out.ch[1](r, c) = row[c][1] / 255.0;
      out.ch[2](r, c) = row[c][0] / 255.0;
    }
  }
  return out;
}

cv::Mat scaling(const cv::Mat& in, int to) {
  cv::Mat down, up;
  cv::resize(in, down, cv::Size(to, to), 0, 0, cv::INTER_LINEAR);
  cv::resize(down, up, in.size(), 0, 0, cv::INTER_LINEAR);
  return up;
}

cv::Mat cropping(const cv::Mat& in, int border) {
  const cv::Rect roi(border, border, in.cols - 2 * border, in.rows - 2 * border);
  cv::Mat out;
  cv::resize(in(roi), out, in.size(), 0, 0, cv::INTER_LINEAR);
  return out;
}

cv::Mat jpeg_roundtrip(const cv::Mat& in, int quality) {
  std::vector<uchar> buf;
  cv::imencode(".jpg", in, buf, {cv::IMWRITE_JPEG_QUALITY, quality});
  return cv::imdecode(buf, cv::IMREAD_COLOR);
}

cv::Mat color_jitter(const cv::Mat& in, double factor, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const double fh = 1.0 + rng.next_uniform(-factor, factor);
  const double fs = 1.0 + rng.next_uniform(-factor, factor);
  const double fv = 1.0 + rng.next_uniform(-factor, factor);
  const double fc = 1.0 + rng.next_uniform(-factor, factor);

  cv::Mat hsv;
  cv::cvtColor(in, hsv, cv::COLOR_BGR2HSV);
  cv::Mat hsvf;
  hsv.convertTo(hsvf, CV_32FC3);
  for (int r = 0; r < hsvf.rows; ++r) {
    auto* row = hsvf.ptr<cv::Vec3f>(r);
    for (int c = 0; c < hsvf.cols; ++c) {
      // hue multiplied then clipped at 179, matching the reference battery
      row[c][0] = std::min(std::max(row[c][0] * static_cast<float>(fh), 0.0f), 179.0f);
      row[c][1] = std::min(std::max(row[c][1] * static_cast<float>(fs), 0.0f), 255.0f);
      row[c][2] = std::min(std::max(row[c][2] * static_cast<float>(fv), 0.0f), 255.0f);
    }
  }
  cv::Mat hsv8, jittered;
  hsvf.convertTo(hsv8, CV_8UC3);
  cv::cvtColor(hsv8, jittered, cv::COLOR_HSV2BGR);

  // contrast enhance around the ITU-R 601-2 gray mean (8-bit arithmetic)
  double lsum = 0.0;
  for (int r = 0; r < jittered.rows; ++r) {
    const auto* row = jittered.ptr<cv::Vec3b>(r);
    for (int c = 0; c < jittered.cols; ++c)
      lsum += (row[c][2] * 19595 + row[c][1] * 38470 + row[c][0] * 7471 + 0x8000) >> 16;
  }
  const int gray = static_cast<int>(lsum / (jittered.rows * jittered.cols) + 0.5);
  cv::Mat out = jittered.clone();
  for (int r = 0; r < out.rows; ++r) {
    auto* row = out.ptr<cv::Vec3b>(r);
    for (int c = 0; c < out.cols; ++c)
      for (int k = 0; k < 3; ++k) {
        const double v = gray + fc * (row[c][k] - gray);
        row[c][k] = cv::saturate_cast<uchar>(v);
      }
  }
  return out;
}

cv::Mat color_quantization(const cv::Mat& in, const AttackSpec& spec, std::uint64_t seed) {
  cv::Mat lab;
  cv::cvtColor(in, lab, cv::COLOR_BGR2Lab);
  cv::Mat samples = lab.reshape(1, lab.rows * lab.cols);
  cv::Mat samples32;
  samples.convertTo(samples32, CV_32F);

  cv::theRNG().state = seed | 1;  // deterministic restarts
  cv::Mat labels, centers;
  cv::kmeans(samples32, spec.quant_colors, labels,
             cv::TermCriteria(cv::TermCriteria::EPS + cv::TermCriteria::MAX_ITER,
                              spec.quant_iters, spec.quant_eps),
             spec.quant_attempts, cv::KMEANS_RANDOM_CENTERS, centers);

  cv::Mat centers8;
  centers.convertTo(centers8, CV_8U);
  cv::Mat quant(lab.size(), CV_8UC3);
  for (int r = 0; r < lab.rows; ++r) {
    auto* row = quant.ptr<cv::Vec3b>(r);
    for (int c = 0; c < lab.cols; ++c) {
      const int label = labels.at<int>(r * lab.cols + c);
      row[c] = cv::Vec3b(centers8.at<uchar>(label, 0), centers8.at<uchar>(label, 1),
                         centers8.at<uchar>(label, 2));
    }
  }
  cv::Mat out;
  cv::cvtColor(quant, out, cv::COLOR_Lab2BGR);
  return out;
}

cv::Mat gaussian_noise(const cv::Mat& in, double std_dev, std::uint64_t seed) {
  SplitMix64 rng(seed);
  cv::Mat out(in.size(), CV_8UC3);
  for (int r = 0; r < in.rows; ++r) {
    const auto* src = in.ptr<cv::Vec3b>(r);
    auto* dst = out.ptr<cv::Vec3b>(r);
    for (int c = 0; c < in.cols; ++c)
      for (int k = 0; k < 3; ++k) {
        double v = src[c][k] + std_dev * rng.next_gaussian();
        if (v < 0.0) v = 0.0;
        if (v > 255.0) v = 255.0;
        dst[c][k] = static_cast<uchar>(v);  // reference truncates after clipping
      }
  }
  return out;
}

cv::Mat unsharp_mask(const cv::Mat& in, const AttackSpec& spec) {
  cv::Mat inf, blurred;
  in.convertTo(inf, CV_32FC3);
  cv::GaussianBlur(inf, blurred, cv::Size(0, 0), spec.unsharp_radius);
  cv::Mat out = in.clone();
  const double gain = spec.unsharp_percent / 100.0;
  for (int r = 0; r < in.rows; ++r) {
    const auto* src = in.ptr<cv::Vec3b>(r);
    const auto* blr = blurred.ptr<cv::Vec3f>(r);
    auto* dst = out.ptr<cv::Vec3b>(r);
    for (int c = 0; c < in.cols; ++c)
      for (int k = 0; k < 3; ++k) {
        const double diff = src[c][k] - blr[c][k];
        if (std::abs(diff) > spec.unsharp_threshold)
          dst[c][k] = cv::saturate_cast<uchar>(src[c][k] + gain * diff);
      }
  }
  return out;
}

}  // namespace

AttackSpec AttackSpec::of(AttackKind kind, std::optional<std::uint64_t> seed) {
  AttackSpec spec;
  spec.kind = kind;
  spec.rng_seed = seed;
  return spec;
}

bool attack_is_stochastic(AttackKind kind) {
  return kind == AttackKind::color_jitter || kind == AttackKind::gaussian_noise ||
         kind == AttackKind::color_quantization;
}

const char* attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::scaling: return "scaling";
    case AttackKind::cropping: return "cropping";
    case AttackKind::jpeg: return "jpeg";
    case AttackKind::median_filter: return "median_filter";
    case AttackKind::gaussian_blur: return "gaussian_blur";
    case AttackKind::color_jitter: return "color_jitter";
    case AttackKind::color_quantization: return "color_quantization";
    case AttackKind::gaussian_noise: return "gaussian_noise";
    case AttackKind::unsharp_mask: return "unsharp_mask";
    case AttackKind::horizontal_flip: return "horizontal_flip";
  }
  return "?";
}

std::optional<AttackKind> parse_attack(const std::string& name) {
  for (AttackKind k :
       {AttackKind::scaling, AttackKind::cropping, AttackKind::jpeg, AttackKind::median_filter,
        AttackKind::gaussian_blur, AttackKind::color_jitter, AttackKind::color_quantization,
        AttackKind::gaussian_noise, AttackKind::unsharp_mask, AttackKind::horizontal_flip})
    if (name == attack_name(k)) return k;
  return std::nullopt;
}

Image apply_attack(const Image& image, const AttackSpec& spec) {
  if (image.height() == 0 || image.width() == 0)
    throw std::invalid_argument("apply_attack: empty image");
  if (attack_is_stochastic(spec.kind) && !spec.rng_seed)
    throw std::invalid_argument(std::string("attack '") + attack_name(spec.kind) +
                                "' is stochastic and needs rng_seed");
  if (spec.kind == AttackKind::horizontal_flip) return mirror_horizontal(image);

  const cv::Mat in = to_bgr8(image);
  cv::Mat out;
  switch (spec.kind) {
    case AttackKind::scaling: out = scaling(in, spec.scale_to); break;
    case AttackKind::cropping: out = cropping(in, spec.crop_border); break;
    case AttackKind::jpeg: out = jpeg_roundtrip(in, spec.jpeg_quality); break;
    case AttackKind::median_filter: cv::medianBlur(in, out, spec.median_ksize); break;
    case AttackKind::gaussian_blur:
      cv::GaussianBlur(in, out, cv::Size(spec.blur_ksize, spec.blur_ksize), spec.blur_sigma);
      break;
    case AttackKind::color_jitter: out = color_jitter(in, spec.jitter_factor, *spec.rng_seed); break;
    case AttackKind::color_quantization: out = color_quantization(in, spec, *spec.rng_seed); break;
    case AttackKind::gaussian_noise: out = gaussian_noise(in, spec.noise_std, *spec.rng_seed); break;
    case AttackKind::unsharp_mask: out = unsharp_mask(in, spec); break;
    case AttackKind::horizontal_flip: break;  // handled above
  }
  return from_bgr8(out);
}

std::map<AttackKind, Image> attack_battery(const Image& image, std::uint64_t seed) {
  static constexpr AttackKind kBattery[] = {
      AttackKind::scaling,        AttackKind::cropping,       AttackKind::jpeg,
      AttackKind::median_filter,  AttackKind::gaussian_blur,  AttackKind::color_jitter,
      AttackKind::color_quantization, AttackKind::gaussian_noise, AttackKind::unsharp_mask};
  std::map<AttackKind, Image> out;
  std::uint64_t ordinal = 0;
  for (AttackKind k : kBattery)
    out.emplace(k, apply_attack(image, AttackSpec::of(k, derive_seed(seed, ordinal++))));
  return out;
}

}  // namespace luminark
