#pragma once

#include "luminark/attacks.hpp"
#include "luminark/certify.hpp"
#include "luminark/diffusion.hpp"

#include <nlohmann/json_fwd.hpp>

#include <atomic>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace luminark::harness {

enum class WeightVariant { luminance, r_only, g_only, b_only, average, random_combo };
enum class InjectionMode { gd, hard_projection, guided, hard_stepwise };

const char* variant_name(WeightVariant v);
const char* mode_name(InjectionMode m);

// Random variant: three independent Exponential(1) draws normalized to sum 1
// (uniform on the 2-simplex). Deterministic given seed.
ChannelWeights weights_for_variant(WeightVariant v, std::uint64_t seed);

struct ExperimentConfig {
  int trials = 200;
  std::uint64_t seed = 1;
  PatchLayout layout{512, 512, 64};
  double fpr_target = 0.01;
  InjectionMode injection_mode = InjectionMode::gd;
  double margin = 0.01;
  std::vector<std::string> attacks;  // names plus "identity"; empty = default set
  WeightVariant weight_variant = WeightVariant::luminance;
  bool flip_or = false;
  double tau_low = 0.4;
  double tau_high = 0.6;
  // toy image source
  std::string image_source = "procedural";  // procedural | sampled | dir
  std::string image_dir;
  int prior_templates = 6;
  double prior_component_std = 0.05;
  std::uint64_t prior_seed = 1000;
  // sampler settings for guided / hard_stepwise modes
  int sampler_steps = 32;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  double guidance_budget = 0.35;
};

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::ordered_json& j);

struct WilsonInterval {
  double lo = 0.0;
  double hi = 1.0;
};
// 99% score interval; vacuous [0,1] at trials = 0.
WilsonInterval wilson99(int successes, int trials);

struct FprReport {
  ExperimentConfig config;
  CalibratedThreshold threshold;
  int trials = 0;
  int false_positives = 0;
  double empirical_fpr = 0.0;
  WilsonInterval ci;
  bool pass = false;
  // Proposition-style exact check at epsilon = 1/4
  double kl_epsilon = 0.25;
  double exact_tail_at_eps = 0.0;
  double kl_bound = 0.0;
  bool kl_pass = false;
};

FprReport run_fpr_study(const ExperimentConfig& cfg);

struct RobustnessRow {
  std::string attack;
  int trials = 0;
  int detected_watermarked = 0;
  int false_positives = 0;
  int injection_failures = 0;
  double accuracy = 0.0;           // watermarked class
  double balanced_accuracy = 0.0;  // (acc_wm + (1 - fp_rate)) / 2
};

struct RobustnessReport {
  ExperimentConfig config;
  CalibratedThreshold threshold;
  std::vector<RobustnessRow> rows;
};

RobustnessReport run_robustness_table(const ExperimentConfig& cfg);

struct AblationRow {
  std::string mode;
  std::string variant;
  int trials = 0;
  double mean_psnr_db = 0.0;       // vs the matched unguided/base image
  double mean_l2_to_template = 0.0;
  double detection_rate = 0.0;     // pre-attack, calibrated threshold
  double mean_retries = 0.0;       // sampler modes
};

struct AblationReport {
  ExperimentConfig config;
  CalibratedThreshold threshold;
  std::vector<AblationRow> rows;
  bool guided_beats_hard_stepwise = false;
  bool luminance_beats_random = false;  // ordering only; caveat when false
};

AblationReport run_ablation(const ExperimentConfig& cfg);

nlohmann::ordered_json fpr_report_to_json(const FprReport& r);
nlohmann::ordered_json robustness_report_to_json(const RobustnessReport& r);
std::string robustness_report_to_csv(const RobustnessReport& r);
nlohmann::ordered_json ablation_report_to_json(const AblationReport& r);
std::string ablation_report_to_csv(const AblationReport& r);

// LUMINARK_WORKERS bounds harness parallelism; default hardware concurrency.
int worker_count();

// Deterministic regardless of worker count: every index is pure given its
// derived seed and writes only its own slot.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace luminark::harness
