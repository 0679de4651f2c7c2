#pragma once

#include "luminark/key.hpp"

#include <vector>

namespace luminark {

// Hinge penalty sum_i max{0, c_i*(tau_i - l(p_i)) + margin} with its exact
// per-pixel gradient. For every pixel of a violated patch i and channel ch,
// d/dx = -c_i * w_ch / k^2; zero elsewhere. At a hinge kink (term exactly 0)
// the subgradient contribution is 0.
struct PenaltyEval {
  double value = 0.0;
  Image gradient;
  std::vector<bool> violated;  // hinge term strictly positive
};

PenaltyEval penalty(const Image& image, const WatermarkKey& key, double margin = 0.0);

// Scalar value + gradient-into only for the violated patches; avoids
// allocating the dense field inside iterative loops. grad_out accumulates.
double penalty_value(const Eigen::VectorXd& lums, const WatermarkKey& key, double margin,
                     std::vector<bool>* violated_out = nullptr);
void add_penalty_gradient(Image& grad_out, const WatermarkKey& key,
                          const std::vector<bool>& violated, double scale = 1.0);

struct SurrogateGap {
  double penalty_value = 0.0;
  int violations = 0;  // mismatched patches; equals N * (1 - match_rate)
};

SurrogateGap surrogate_gap(const Image& image, const WatermarkKey& key);

}  // namespace luminark
