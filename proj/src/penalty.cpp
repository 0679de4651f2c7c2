#include "luminark/penalty.hpp"

#include <stdexcept>

namespace luminark {

double penalty_value(const Eigen::VectorXd& lums, const WatermarkKey& key, double margin,
                     std::vector<bool>* violated_out) {
  if (margin < 0.0) throw std::invalid_argument("penalty: margin must be nonnegative");
  const int n = key.layout.num_patches();
  if (lums.size() != n) throw std::invalid_argument("penalty: luminance vector length mismatch");
  if (violated_out) violated_out->assign(n, false);
  double value = 0.0;  // fixed patch-order summation, deterministic
  for (int i = 0; i < n; ++i) {
    const double term = key.c[i] * (key.tau[i] - lums[i]) + margin;
    if (term > 0.0) {
      value += term;
      if (violated_out) (*violated_out)[i] = true;
    }
  }
  return value;
}

void add_penalty_gradient(Image& grad_out, const WatermarkKey& key,
                          const std::vector<bool>& violated, double scale) {
  const int k = key.layout.patch_size;
  const double inv_k2 = 1.0 / (static_cast<double>(k) * k);
  for (int i = 0; i < key.layout.num_patches(); ++i) {
    if (!violated[i]) continue;
    const int r0 = key.layout.patch_row0(i), c0 = key.layout.patch_col0(i);
    for (int c = 0; c < 3; ++c)
      grad_out.ch[c].block(r0, c0, k, k) += scale * (-key.c[i] * key.weights[c] * inv_k2);
  }
}

PenaltyEval penalty(const Image& image, const WatermarkKey& key, double margin) {
  key.layout.require_match(image);
  PenaltyEval eval;
  const Eigen::VectorXd lums = patch_luminances(image, key.layout, key.weights);
  eval.value = penalty_value(lums, key, margin, &eval.violated);
  eval.gradient = Image(image.height(), image.width());
  add_penalty_gradient(eval.gradient, key, eval.violated);
  return eval;
}

SurrogateGap surrogate_gap(const Image& image, const WatermarkKey& key) {
  const Eigen::VectorXd lums = patch_luminances(image, key.layout, key.weights);
  SurrogateGap gap;
  gap.penalty_value = penalty_value(lums, key, 0.0);
  // Counted from the sign pattern so the N*(1 - match_rate) identity is
  // exact even when a luminance ties its threshold (the hinge is 0 there
  // but sgn(0)=+1 can still mismatch a c=-1 patch).
  const MatchResult m = match_rate_from_luminances(lums, key);
  gap.violations = key.layout.num_patches() - m.count;
  return gap;
}

}  // namespace luminark
