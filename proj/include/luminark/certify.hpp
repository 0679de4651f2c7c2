#pragma once

#include "luminark/key.hpp"

#include <optional>
#include <stdexcept>

namespace luminark {

// Raised by calibrate_threshold when even k = N has tail probability above
// the requested rate (target_fpr < 2^-N).
struct UnachievableFprError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Calibrated decision rule: k_star is the smallest match count whose
// Binomial(N, 1/2) upper-tail probability is at most target_fpr.
struct CalibratedThreshold {
  int n = 0;
  double target_fpr = 0.0;
  int k_star = 0;
  double t_match = 0.0;  // k_star / n
  double p_at_k_star = 0.0;
};

struct DetectionReport {
  double match_rate = 0.0;
  int match_count = 0;
  CalibratedThreshold threshold;
  double p_value = 0.0;
  bool decision = false;
  bool flip_used = false;
  std::optional<double> flip_match_rate;
  std::optional<int> flip_match_count;
};

// P(X >= k) for X ~ Binomial(n, 1/2), relative error < 1e-15. Compensated
// double-double summation over the coefficient recurrence; no factorials.
double tail_probability(int n, int k);

CalibratedThreshold calibrate_threshold(int n, double target_fpr);

// exp(-n * D_KL(eps)) with D_KL(eps) = (1/2+eps)ln(1+2eps) + (1/2-eps)ln(1-2eps);
// the eps = 1/2 limit uses the 0*ln(0) = 0 convention, giving exactly 2^-n.
double kl_tail_bound(int n, double epsilon);

DetectionReport detect(const Image& image, const WatermarkKey& key,
                       const CalibratedThreshold& threshold);

// Runs detect on the image and on its horizontal mirror; decision is the OR.
DetectionReport detect_with_flip(const Image& image, const WatermarkKey& key,
                                 const CalibratedThreshold& threshold);

// Fast path when patch luminances are already available.
DetectionReport detect_from_luminances(const Eigen::VectorXd& lums, const WatermarkKey& key,
                                       const CalibratedThreshold& threshold);

}  // namespace luminark
