#include "luminark/harness.hpp"

#include "luminark/injector.hpp"
#include "luminark/io.hpp"
#include "luminark/penalty.hpp"
#include "luminark/rng.hpp"
#include "luminark/templates.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace luminark::harness {

using nlohmann::ordered_json;

const char* variant_name(WeightVariant v) {
  switch (v) {
    case WeightVariant::luminance: return "luminance";
    case WeightVariant::r_only: return "R";
    case WeightVariant::g_only: return "G";
    case WeightVariant::b_only: return "B";
    case WeightVariant::average: return "average";
    case WeightVariant::random_combo: return "random";
  }
  return "?";
}

const char* mode_name(InjectionMode m) {
  switch (m) {
    case InjectionMode::gd: return "gd";
    case InjectionMode::hard_projection: return "hard_projection";
    case InjectionMode::guided: return "guided";
    case InjectionMode::hard_stepwise: return "hard_stepwise";
  }
  return "?";
}

namespace {

WeightVariant parse_variant(const std::string& s) {
  for (WeightVariant v :
       {WeightVariant::luminance, WeightVariant::r_only, WeightVariant::g_only,
        WeightVariant::b_only, WeightVariant::average, WeightVariant::random_combo})
    if (s == variant_name(v)) return v;
  throw std::invalid_argument("unknown weight variant: " + s);
}

InjectionMode parse_mode(const std::string& s) {
  for (InjectionMode m : {InjectionMode::gd, InjectionMode::hard_projection,
                          InjectionMode::guided, InjectionMode::hard_stepwise})
    if (s == mode_name(m)) return m;
  throw std::invalid_argument("unknown injection mode: " + s);
}

}  // namespace

ChannelWeights weights_for_variant(WeightVariant v, std::uint64_t seed) {
  switch (v) {
    case WeightVariant::luminance: return ChannelWeights::luminance();
    case WeightVariant::r_only: return {1.0, 0.0, 0.0};
    case WeightVariant::g_only: return {0.0, 1.0, 0.0};
    case WeightVariant::b_only: return {0.0, 0.0, 1.0};
    case WeightVariant::average: return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    case WeightVariant::random_combo: {
      SplitMix64 rng(seed);
      const double a = rng.next_exponential();
      const double b = rng.next_exponential();
      const double c = rng.next_exponential();
      const double s = a + b + c;
      return {a / s, b / s, c / s};
    }
  }
  throw std::logic_error("unreachable");
}

WilsonInterval wilson99(int successes, int trials) {
  if (trials <= 0) return {0.0, 1.0};
  const double z = 2.5758293035489004;  // 99.5th percentile of N(0,1)
  const double n = trials;
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

int worker_count() {
  if (const char* env = std::getenv("LUMINARK_WORKERS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["trials"] = cfg.trials;
  j["seed"] = cfg.seed;
  j["layout"] = {{"height", cfg.layout.height},
                 {"width", cfg.layout.width},
                 {"patch_size", cfg.layout.patch_size}};
  j["fpr_target"] = cfg.fpr_target;
  j["injection"] = {{"mode", mode_name(cfg.injection_mode)}, {"margin", cfg.margin}};
  j["attacks"] = cfg.attacks;
  j["weight_variant"] = variant_name(cfg.weight_variant);
  j["flip_or"] = cfg.flip_or;
  j["tau"] = {{"low", cfg.tau_low}, {"high", cfg.tau_high}};
  j["images"] = {{"source", cfg.image_source}, {"dir", cfg.image_dir}};
  j["prior"] = {{"templates", cfg.prior_templates},
                {"component_std", cfg.prior_component_std},
                {"seed", cfg.prior_seed}};
  j["sampler"] = {{"steps", cfg.sampler_steps},
                  {"sigma_min", cfg.sigma_min},
                  {"sigma_max", cfg.sigma_max},
                  {"rho", cfg.rho},
                  {"guidance_budget", cfg.guidance_budget}};
  return j;
}

ExperimentConfig config_from_json(const ordered_json& j) {
  ExperimentConfig cfg;
  if (j.contains("trials")) cfg.trials = j["trials"].get<int>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("layout")) {
    const auto& l = j["layout"];
    cfg.layout = PatchLayout::create(l.at("height").get<int>(), l.at("width").get<int>(),
                                     l.at("patch_size").get<int>());
  }
  if (j.contains("fpr_target")) cfg.fpr_target = j["fpr_target"].get<double>();
  if (j.contains("injection")) {
    const auto& inj = j["injection"];
    if (inj.contains("mode")) cfg.injection_mode = parse_mode(inj["mode"].get<std::string>());
    if (inj.contains("margin")) cfg.margin = inj["margin"].get<double>();
  }
  if (j.contains("attacks")) cfg.attacks = j["attacks"].get<std::vector<std::string>>();
  if (j.contains("weight_variant"))
    cfg.weight_variant = parse_variant(j["weight_variant"].get<std::string>());
  if (j.contains("flip_or")) cfg.flip_or = j["flip_or"].get<bool>();
  if (j.contains("tau")) {
    cfg.tau_low = j["tau"].at("low").get<double>();
    cfg.tau_high = j["tau"].at("high").get<double>();
  }
  if (j.contains("images")) {
    const auto& im = j["images"];
    if (im.contains("source")) cfg.image_source = im["source"].get<std::string>();
    if (im.contains("dir")) cfg.image_dir = im["dir"].get<std::string>();
  }
  if (j.contains("prior")) {
    const auto& p = j["prior"];
    if (p.contains("templates")) cfg.prior_templates = p["templates"].get<int>();
    if (p.contains("component_std")) cfg.prior_component_std = p["component_std"].get<double>();
    if (p.contains("seed")) cfg.prior_seed = p["seed"].get<std::uint64_t>();
  }
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    if (s.contains("steps")) cfg.sampler_steps = s["steps"].get<int>();
    if (s.contains("sigma_min")) cfg.sigma_min = s["sigma_min"].get<double>();
    if (s.contains("sigma_max")) cfg.sigma_max = s["sigma_max"].get<double>();
    if (s.contains("rho")) cfg.rho = s["rho"].get<double>();
    if (s.contains("guidance_budget")) cfg.guidance_budget = s["guidance_budget"].get<double>();
  }
  return cfg;
}

namespace {

std::vector<Image> fixed_study_images(const ExperimentConfig& cfg, int count) {
  std::vector<Image> images;
  if (cfg.image_source == "dir" && !cfg.image_dir.empty()) {
    std::vector<std::filesystem::path> paths;
    for (const auto& entry : std::filesystem::directory_iterator(cfg.image_dir))
      if (entry.is_regular_file()) paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());  // replayable regardless of listing order
    for (const auto& p : paths) {
      try {
        Image img = load_image(p);
        if (cfg.layout.matches(img)) images.push_back(std::move(img));
      } catch (const std::exception&) {
        // per-item failure; run continues
      }
    }
  }
  if (images.empty()) {
    for (int i = 0; i < count; ++i)
      images.push_back(quantize_roundtrip(make_smooth_template(
          cfg.layout.height, cfg.layout.width, derive_seed(cfg.prior_seed, i))));
  }
  return images;
}

// One toy image per trial index, already 8-bit round-tripped.
Image trial_image(const ExperimentConfig& cfg, const MixturePrior* prior,
                  const NoiseSchedule* schedule, std::uint64_t trial_seed) {
  if (cfg.image_source == "sampled" && prior && schedule)
    return quantize_roundtrip(sample_unguided(trial_seed, *schedule, *prior));
  return quantize_roundtrip(
      make_smooth_template(cfg.layout.height, cfg.layout.width, trial_seed));
}

bool decide(const Image& img, const WatermarkKey& key, const CalibratedThreshold& thr,
            bool flip_or) {
  return flip_or ? detect_with_flip(img, key, thr).decision : detect(img, key, thr).decision;
}

}  // namespace

FprReport run_fpr_study(const ExperimentConfig& cfg) {
  if (cfg.trials < 1) throw std::invalid_argument("fpr study needs at least one trial");
  FprReport report;
  report.config = cfg;
  const int n = cfg.layout.num_patches();
  const double branch_fpr = cfg.flip_or ? cfg.fpr_target / 2.0 : cfg.fpr_target;
  report.threshold = calibrate_threshold(n, branch_fpr);
  const ChannelWeights weights = weights_for_variant(cfg.weight_variant, cfg.seed);

  const std::vector<Image> images = fixed_study_images(cfg, 4);
  std::vector<Eigen::VectorXd> lums, lums_flip;
  for (const Image& img : images) {
    lums.push_back(patch_luminances(img, cfg.layout, weights));
    if (cfg.flip_or)
      lums_flip.push_back(patch_luminances(mirror_horizontal(img), cfg.layout, weights));
  }

  std::vector<std::uint8_t> fp(cfg.trials, 0);
  parallel_for(cfg.trials, [&](int i) {
    const WatermarkKey key = generate_key(derive_seed(cfg.seed, i), cfg.layout, weights,
                                          cfg.tau_low, cfg.tau_high);
    const std::size_t img = static_cast<std::size_t>(i) % images.size();
    bool hit = match_rate_from_luminances(lums[img], key).count >= report.threshold.k_star;
    if (cfg.flip_or && !hit)
      hit = match_rate_from_luminances(lums_flip[img], key).count >= report.threshold.k_star;
    fp[i] = hit ? 1 : 0;
  });
  for (std::uint8_t b : fp) report.false_positives += b;

  report.trials = cfg.trials;
  report.empirical_fpr = static_cast<double>(report.false_positives) / cfg.trials;
  report.ci = wilson99(report.false_positives, cfg.trials);
  if (cfg.flip_or) {
    report.pass = report.empirical_fpr <= cfg.fpr_target;
  } else {
    const double p = report.threshold.p_at_k_star;
    const double se = std::sqrt(p * (1.0 - p) / cfg.trials);
    report.pass = cfg.trials == 1 || std::abs(report.empirical_fpr - p) <= 3.0 * se;
  }

  const int k_eps = static_cast<int>(std::ceil(n * (0.5 + report.kl_epsilon)));
  report.exact_tail_at_eps = tail_probability(n, k_eps);
  report.kl_bound = kl_tail_bound(n, report.kl_epsilon);
  report.kl_pass = report.exact_tail_at_eps <= report.kl_bound;
  return report;
}

RobustnessReport run_robustness_table(const ExperimentConfig& cfg) {
  if (cfg.trials < 1) throw std::invalid_argument("robustness table needs at least one trial");
  RobustnessReport report;
  report.config = cfg;
  const int n = cfg.layout.num_patches();
  report.threshold = calibrate_threshold(n, cfg.flip_or ? cfg.fpr_target / 2.0 : cfg.fpr_target);
  const ChannelWeights weights = weights_for_variant(cfg.weight_variant, cfg.seed);

  std::vector<std::string> attack_names = cfg.attacks;
  if (attack_names.empty())
    attack_names = {"identity",      "scaling",       "cropping", "jpeg", "median_filter",
                    "gaussian_blur", "gaussian_noise"};

  MixturePrior prior;
  NoiseSchedule schedule = build_schedule(cfg.sampler_steps, cfg.sigma_min, cfg.sigma_max, cfg.rho);
  const bool needs_prior = cfg.image_source == "sampled" ||
                           cfg.injection_mode == InjectionMode::guided ||
                           cfg.injection_mode == InjectionMode::hard_stepwise;
  if (needs_prior)
    prior = make_default_prior(cfg.layout.height, cfg.layout.width, cfg.prior_templates,
                               cfg.prior_component_std, cfg.prior_seed);

  struct TrialOut {
    std::vector<std::uint8_t> wm_detected;
    std::vector<std::uint8_t> fp;
    bool injection_failed = false;
  };
  std::vector<TrialOut> outs(cfg.trials);

  parallel_for(cfg.trials, [&](int t) {
    TrialOut& out = outs[t];
    out.wm_detected.assign(attack_names.size(), 0);
    out.fp.assign(attack_names.size(), 0);
    const std::uint64_t trial_seed = derive_seed(cfg.seed, 1000 + t);
    const WatermarkKey key =
        generate_key(derive_seed(cfg.seed, t), cfg.layout, weights, cfg.tau_low, cfg.tau_high);

    const Image clean = trial_image(cfg, needs_prior ? &prior : nullptr, &schedule, trial_seed);
    Image marked;
    switch (cfg.injection_mode) {
      case InjectionMode::gd: {
        InjectionConfig icfg = InjectionConfig::defaults_for(key);
        icfg.margin = cfg.margin;
        const InjectionResult res = inject_posthoc_gd(clean, key, icfg);
        out.injection_failed = !res.success;
        marked = quantize_roundtrip(res.image);
        break;
      }
      case InjectionMode::hard_projection:
        marked = quantize_roundtrip(inject_hard_projection(clean, key, cfg.margin));
        break;
      case InjectionMode::guided: {
        const double s = guidance_scale_for(weights, cfg.layout.patch_size, schedule,
                                            cfg.prior_component_std, cfg.guidance_budget);
        GuidanceOptions opts;
        opts.margin = cfg.margin;
        const SampleTrace trace =
            sample_guided(trial_seed, schedule, prior, key, s, report.threshold, opts);
        out.injection_failed = !trace.success;
        marked = quantize_roundtrip(trace.final_image);
        break;
      }
      case InjectionMode::hard_stepwise:
        marked = quantize_roundtrip(
            sample_hard_stepwise(trial_seed, schedule, prior, key, cfg.margin));
        break;
    }

    for (std::size_t a = 0; a < attack_names.size(); ++a) {
      const std::uint64_t attack_seed = derive_seed(cfg.seed, 7000 + t * 64 + static_cast<int>(a));
      Image attacked_wm, attacked_clean;
      if (attack_names[a] == "identity") {
        attacked_wm = marked;
        attacked_clean = clean;
      } else {
        const auto kind = parse_attack(attack_names[a]);
        if (!kind) throw std::invalid_argument("unknown attack: " + attack_names[a]);
        attacked_wm = apply_attack(marked, AttackSpec::of(*kind, attack_seed));
        attacked_clean = apply_attack(clean, AttackSpec::of(*kind, attack_seed + 1));
      }
      if (!out.injection_failed &&
          decide(attacked_wm, key, report.threshold, cfg.flip_or))
        out.wm_detected[a] = 1;
      if (decide(attacked_clean, key, report.threshold, cfg.flip_or)) out.fp[a] = 1;
    }
  });

  for (std::size_t a = 0; a < attack_names.size(); ++a) {
    RobustnessRow row;
    row.attack = attack_names[a];
    row.trials = cfg.trials;
    for (const TrialOut& out : outs) {
      row.detected_watermarked += out.wm_detected[a];
      row.false_positives += out.fp[a];
      if (out.injection_failed) ++row.injection_failures;
    }
    row.accuracy = static_cast<double>(row.detected_watermarked) / cfg.trials;
    const double fp_rate = static_cast<double>(row.false_positives) / cfg.trials;
    row.balanced_accuracy = 0.5 * (row.accuracy + (1.0 - fp_rate));
    report.rows.push_back(row);
  }
  return report;
}

AblationReport run_ablation(const ExperimentConfig& cfg) {
  if (cfg.trials < 1) throw std::invalid_argument("ablation needs at least one trial");
  AblationReport report;
  report.config = cfg;
  const int n = cfg.layout.num_patches();
  report.threshold = calibrate_threshold(n, cfg.fpr_target);

  const NoiseSchedule schedule =
      build_schedule(cfg.sampler_steps, cfg.sigma_min, cfg.sigma_max, cfg.rho);
  const MixturePrior prior = make_default_prior(
      cfg.layout.height, cfg.layout.width, cfg.prior_templates, cfg.prior_component_std,
      cfg.prior_seed);

  const InjectionMode modes[] = {InjectionMode::guided, InjectionMode::hard_stepwise,
                                 InjectionMode::hard_projection, InjectionMode::gd};
  const WeightVariant variants[] = {WeightVariant::luminance, WeightVariant::r_only,
                                    WeightVariant::g_only,    WeightVariant::b_only,
                                    WeightVariant::average,   WeightVariant::random_combo};

  auto l2_to_nearest_template = [&](const Image& img) {
    double best = std::numeric_limits<double>::infinity();
    for (const Image& t : prior.templates) best = std::min(best, l2_distance(img, t));
    return best;
  };

  for (InjectionMode mode : modes) {
    for (WeightVariant variant : variants) {
      AblationRow row;
      row.mode = mode_name(mode);
      row.variant = variant_name(variant);
      row.trials = cfg.trials;

      struct Cell {
        double psnr = 0.0;
        double l2 = 0.0;
        double detected = 0.0;
        double retries = 1.0;
      };
      std::vector<Cell> cells(cfg.trials);
      parallel_for(cfg.trials, [&](int t) {
        // random variant re-draws weights per trial
        const std::uint64_t wseed =
            variant == WeightVariant::random_combo ? derive_seed(cfg.seed, 500 + t) : cfg.seed;
        const ChannelWeights weights = weights_for_variant(variant, wseed);
        const WatermarkKey key = generate_key(derive_seed(cfg.seed, t), cfg.layout, weights,
                                              cfg.tau_low, cfg.tau_high);
        const std::uint64_t trial_seed = derive_seed(cfg.seed, 2000 + t);
        const Image base = sample_unguided(trial_seed, schedule, prior);

        Image marked;
        double retries = 1.0;
        bool ok = true;
        switch (mode) {
          case InjectionMode::guided: {
            const double s = guidance_scale_for(weights, cfg.layout.patch_size, schedule,
                                                cfg.prior_component_std, cfg.guidance_budget);
            GuidanceOptions opts;
            opts.margin = cfg.margin;
            const SampleTrace trace =
                sample_guided(trial_seed, schedule, prior, key, s, report.threshold, opts);
            marked = trace.final_image;
            retries = trace.retries;
            ok = trace.success;
            break;
          }
          case InjectionMode::hard_stepwise:
            marked = sample_hard_stepwise(trial_seed, schedule, prior, key, cfg.margin);
            break;
          case InjectionMode::hard_projection:
            marked = inject_hard_projection(base, key, cfg.margin);
            break;
          case InjectionMode::gd: {
            InjectionConfig icfg = InjectionConfig::defaults_for(key);
            icfg.margin = cfg.margin;
            const InjectionResult res = inject_posthoc_gd(base, key, icfg);
            marked = res.image;
            ok = res.success;
            break;
          }
        }
        Cell& cell = cells[t];
        cell.psnr = psnr_db(base, marked);
        cell.l2 = l2_to_nearest_template(marked);
        cell.retries = retries;
        cell.detected = (ok && detect(marked, key, report.threshold).decision) ? 1.0 : 0.0;
      });

      for (const Cell& c : cells) {
        row.mean_psnr_db += std::isinf(c.psnr) ? 100.0 : c.psnr;  // identical pair cap
        row.mean_l2_to_template += c.l2;
        row.detection_rate += c.detected;
        row.mean_retries += c.retries;
      }
      row.mean_psnr_db /= cfg.trials;
      row.mean_l2_to_template /= cfg.trials;
      row.detection_rate /= cfg.trials;
      row.mean_retries /= cfg.trials;
      report.rows.push_back(row);
    }
  }

  auto find_row = [&](const char* mode, const char* variant) -> const AblationRow& {
    for (const AblationRow& r : report.rows)
      if (r.mode == mode && r.variant == variant) return r;
    throw std::logic_error("ablation row missing");
  };
  const AblationRow& guided = find_row("guided", "luminance");
  const AblationRow& hard = find_row("hard_stepwise", "luminance");
  report.guided_beats_hard_stepwise = guided.mean_l2_to_template < hard.mean_l2_to_template &&
                                      guided.mean_psnr_db > hard.mean_psnr_db;
  report.luminance_beats_random =
      guided.mean_l2_to_template <= find_row("guided", "random").mean_l2_to_template;
  return report;
}

ordered_json fpr_report_to_json(const FprReport& r) {
  ordered_json j;
  j["config"] = config_to_json(r.config);
  j["threshold"] = threshold_to_json(r.threshold);
  j["trials"] = r.trials;
  j["false_positives"] = r.false_positives;
  j["empirical_fpr"] = r.empirical_fpr;
  j["wilson99"] = {{"lo", r.ci.lo}, {"hi", r.ci.hi}};
  j["pass"] = r.pass;
  j["kl_check"] = {{"epsilon", r.kl_epsilon},
                   {"exact_tail", r.exact_tail_at_eps},
                   {"bound", r.kl_bound},
                   {"pass", r.kl_pass}};
  return j;
}

ordered_json robustness_report_to_json(const RobustnessReport& r) {
  ordered_json j;
  j["config"] = config_to_json(r.config);
  j["threshold"] = threshold_to_json(r.threshold);
  j["rows"] = ordered_json::array();
  for (const RobustnessRow& row : r.rows)
    j["rows"].push_back({{"attack", row.attack},
                         {"trials", row.trials},
                         {"detected_watermarked", row.detected_watermarked},
                         {"false_positives", row.false_positives},
                         {"injection_failures", row.injection_failures},
                         {"accuracy", row.accuracy},
                         {"balanced_accuracy", row.balanced_accuracy}});
  return j;
}

std::string robustness_report_to_csv(const RobustnessReport& r) {
  std::ostringstream out;
  out << "attack,trials,detected_watermarked,false_positives,injection_failures,accuracy,"
         "balanced_accuracy\n";
  for (const RobustnessRow& row : r.rows)
    out << row.attack << ',' << row.trials << ',' << row.detected_watermarked << ','
        << row.false_positives << ',' << row.injection_failures << ',' << row.accuracy << ','
        << row.balanced_accuracy << '\n';
  return out.str();
}

ordered_json ablation_report_to_json(const AblationReport& r) {
  ordered_json j;
  j["config"] = config_to_json(r.config);
  j["threshold"] = threshold_to_json(r.threshold);
  j["rows"] = ordered_json::array();
  for (const AblationRow& row : r.rows)
    j["rows"].push_back({{"mode", row.mode},
                         {"variant", row.variant},
                         {"trials", row.trials},
                         {"mean_psnr_db", row.mean_psnr_db},
                         {"mean_l2_to_template", row.mean_l2_to_template},
                         {"detection_rate", row.detection_rate},
                         {"mean_retries", row.mean_retries}});
  j["orderings"] = {{"guided_beats_hard_stepwise", r.guided_beats_hard_stepwise},
                    {"luminance_beats_random", r.luminance_beats_random}};
  return j;
}

std::string ablation_report_to_csv(const AblationReport& r) {
  std::ostringstream out;
  out << "mode,variant,trials,mean_psnr_db,mean_l2_to_template,detection_rate,mean_retries\n";
  for (const AblationRow& row : r.rows)
    out << row.mode << ',' << row.variant << ',' << row.trials << ',' << row.mean_psnr_db << ','
        << row.mean_l2_to_template << ',' << row.detection_rate << ',' << row.mean_retries
        << '\n';
  return out.str();
}

}  // namespace luminark::harness
