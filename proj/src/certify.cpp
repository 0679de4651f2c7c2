#include "luminark/certify.hpp"

#include <cmath>
#include <string>

namespace luminark {
namespace {

// Double-double arithmetic (value + error compensation term). Enough for
// ~31 significant digits, so the summed tail stays far below the 1e-15
// relative-error budget.
struct DD {
  double hi = 0.0;
  double lo = 0.0;
};

DD two_sum(double a, double b) {
  const double s = a + b;
  const double bb = s - a;
  return {s, (a - (s - bb)) + (b - bb)};
}

DD two_prod(double a, double b) {
  const double p = a * b;
  return {p, std::fma(a, b, -p)};
}

DD dd_add(DD a, DD b) {
  DD s = two_sum(a.hi, b.hi);
  s.lo += a.lo + b.lo;
  DD t = two_sum(s.hi, s.lo);
  return t;
}

DD dd_mul(DD a, DD b) {
  DD p = two_prod(a.hi, b.hi);
  p.lo += a.hi * b.lo + a.lo * b.hi;
  return two_sum(p.hi, p.lo);
}

DD dd_div(DD a, DD b) {
  const double q1 = a.hi / b.hi;
  DD r = dd_add(a, dd_mul({-q1, 0.0}, b));
  const double q2 = r.hi / b.hi;
  r = dd_add(r, dd_mul({-q2, 0.0}, b));
  const double q3 = r.hi / b.hi;
  return dd_add(two_sum(q1, q2), {q3, 0.0});
}

DD dd_from(double x) { return {x, 0.0}; }

}  // namespace

double tail_probability(int n, int k) {
  if (n <= 0) throw std::invalid_argument("tail_probability: n must be positive");
  if (k < 0 || k > n)
    throw std::invalid_argument("tail_probability: k=" + std::to_string(k) +
                                " out of range [0," + std::to_string(n) + "]");
  if (k == 0) return 1.0;

  // term(i) = C(n,i) * 2^-n, walked downward from term(n) = 2^-n via
  // C(n,i-1) = C(n,i) * i / (n-i+1). All terms and the sum lie in [0,1].
  DD term = dd_from(std::ldexp(1.0, -n));
  DD sum = term;
  for (int i = n; i > k; --i) {
    term = dd_div(dd_mul(term, dd_from(static_cast<double>(i))),
                  dd_from(static_cast<double>(n - i + 1)));
    sum = dd_add(sum, term);
  }
  return sum.hi + sum.lo;
}

CalibratedThreshold calibrate_threshold(int n, double target_fpr) {
  if (n <= 0) throw std::invalid_argument("calibrate_threshold: n must be positive");
  if (!(target_fpr > 0.0 && target_fpr < 1.0))
    throw std::invalid_argument("calibrate_threshold: target_fpr must lie in (0,1)");
  for (int k = 0; k <= n; ++k) {
    const double p = tail_probability(n, k);
    if (p <= target_fpr) {
      return CalibratedThreshold{n, target_fpr, k, static_cast<double>(k) / n, p};
    }
  }
  throw UnachievableFprError("target fpr " + std::to_string(target_fpr) +
                             " is below 2^-" + std::to_string(n) +
                             ", unachievable with " + std::to_string(n) + " patches");
}

double kl_tail_bound(int n, double epsilon) {
  if (n <= 0) throw std::invalid_argument("kl_tail_bound: n must be positive");
  if (!(epsilon >= 0.0 && epsilon <= 0.5))
    throw std::invalid_argument("kl_tail_bound: epsilon must lie in [0, 1/2]");
  double dkl = (0.5 + epsilon) * std::log1p(2.0 * epsilon);
  if (epsilon < 0.5) dkl += (0.5 - epsilon) * std::log1p(-2.0 * epsilon);
  return std::exp(-static_cast<double>(n) * dkl);
}

DetectionReport detect_from_luminances(const Eigen::VectorXd& lums, const WatermarkKey& key,
                                       const CalibratedThreshold& threshold) {
  if (threshold.n != key.layout.num_patches())
    throw std::invalid_argument("threshold was calibrated for a different patch count");
  const MatchResult m = match_rate_from_luminances(lums, key);
  DetectionReport report;
  report.match_rate = m.rate;
  report.match_count = m.count;
  report.threshold = threshold;
  report.p_value = tail_probability(threshold.n, m.count);
  report.decision = m.count >= threshold.k_star;  // the >= rule, exact in integers
  return report;
}

DetectionReport detect(const Image& image, const WatermarkKey& key,
                       const CalibratedThreshold& threshold) {
  return detect_from_luminances(patch_luminances(image, key.layout, key.weights), key,
                                threshold);
}

DetectionReport detect_with_flip(const Image& image, const WatermarkKey& key,
                                 const CalibratedThreshold& threshold) {
  DetectionReport report = detect(image, key, threshold);
  const DetectionReport mirrored = detect(mirror_horizontal(image), key, threshold);
  report.flip_used = true;
  report.flip_match_rate = mirrored.match_rate;
  report.flip_match_count = mirrored.match_count;
  report.decision = report.decision || mirrored.decision;
  return report;
}

}  // namespace luminark
