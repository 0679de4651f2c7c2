#include "luminark/cli.hpp"

#include "luminark/attacks.hpp"
#include "luminark/certify.hpp"
#include "luminark/diffusion.hpp"
#include "luminark/harness.hpp"
#include "luminark/injector.hpp"
#include "luminark/io.hpp"
#include "luminark/penalty.hpp"
#include "luminark/templates.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace luminark::cli {

using nlohmann::ordered_json;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

// Operational failure carrying JSON diagnostics.
struct Failure : std::runtime_error {
  explicit Failure(ordered_json diag)
      : std::runtime_error(diag.value("error", "failure")), diagnostics(std::move(diag)) {}
  ordered_json diagnostics;
};

std::string json_double(double v) {
  return std::isinf(v) ? std::string("inf") : format_double(v);
}

ordered_json value_or_inf(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

// Nearest grid-divisible size for --resize-to-grid.
int nearest_multiple(int value, int k) {
  int m = static_cast<int>(std::llround(static_cast<double>(value) / k)) * k;
  if (m < k) m = k;
  return m;
}

Image load_for_key(const std::string& path, const WatermarkKey& key, bool resize_to_grid) {
  Image img = load_image(path);
  if (key.layout.matches(img)) return img;
  if (!resize_to_grid)
    throw Failure({{"error", "image dimensions do not match the key layout"},
                   {"image", {{"height", img.height()}, {"width", img.width()}}},
                   {"layout",
                    {{"height", key.layout.height},
                     {"width", key.layout.width},
                     {"patch_size", key.layout.patch_size}}},
                   {"hint", "pass --resize-to-grid to resample"}});
  return resize_bilinear(img, key.layout.height, key.layout.width);
}

struct SamplerArgs {
  int steps = 32;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  int templates = 6;
  double gamma = 0.05;
  std::uint64_t template_seed = 1000;

  void attach(CLI::App* cmd) {
    cmd->add_option("--steps", steps, "diffusion steps");
    cmd->add_option("--sigma-min", sigma_min, "lowest noise level");
    cmd->add_option("--sigma-max", sigma_max, "highest noise level");
    cmd->add_option("--rho", rho, "schedule curvature");
    cmd->add_option("--templates", templates, "mixture prior size");
    cmd->add_option("--gamma", gamma, "prior component std (0 = point masses)");
    cmd->add_option("--template-seed", template_seed, "prior template seed");
  }
};

ordered_json trace_to_json(const SampleTrace& trace) {
  ordered_json j;
  j["seed"] = trace.seed;
  j["guidance_scale"] = trace.guidance_scale;
  j["retries"] = trace.retries;
  j["success"] = trace.success;
  j["final_match_rate"] = trace.final_match_rate;
  j["final_match_count"] = trace.final_match_count;
  j["attempt_match_rates"] = trace.attempt_match_rates;
  ordered_json sched;
  sched["steps"] = trace.schedule.steps;
  sched["sigma_min"] = trace.schedule.sigma_min;
  sched["sigma_max"] = trace.schedule.sigma_max;
  sched["rho"] = trace.schedule.rho;
  sched["sigma"] = std::vector<double>(trace.schedule.sigma.data(),
                                       trace.schedule.sigma.data() + trace.schedule.sigma.size());
  j["schedule"] = sched;
  return j;
}

int cmd_keygen(const std::uint64_t seed, int height, int width, int patch_size, double tau_low,
               double tau_high, const std::vector<double>& weights, const std::string& out_path,
               bool json_out, bool quiet, std::ostream& out) {
  ChannelWeights w = ChannelWeights::luminance();
  if (!weights.empty()) {
    if (weights.size() != 3) throw CLI::ValidationError("--weights needs exactly 3 values");
    w = ChannelWeights{weights[0], weights[1], weights[2]};
  }
  const PatchLayout layout = PatchLayout::create(height, width, patch_size);
  const WatermarkKey key = generate_key(seed, layout, w, tau_low, tau_high);
  save_key(key, out_path);
  if (json_out) {
    ordered_json j;
    j["out"] = out_path;
    j["seed"] = seed;
    j["num_patches"] = layout.num_patches();
    out << j.dump() << "\n";
  } else if (!quiet) {
    out << "wrote key (" << layout.num_patches() << " patches) to " << out_path << "\n";
  }
  return kOk;
}

int cmd_calibrate(int n, double fpr, bool ladder, std::ostream& out) {
  if (ladder) {
    out << "k,p_k\n";
    for (int k = 0; k <= n; ++k) out << k << ',' << format_double(tail_probability(n, k)) << '\n';
    return kOk;
  }
  try {
    const CalibratedThreshold t = calibrate_threshold(n, fpr);
    out << threshold_to_json(t).dump() << "\n";
    return kOk;
  } catch (const UnachievableFprError& e) {
    throw Failure({{"error", e.what()}, {"n", n}, {"target_fpr", fpr}});
  }
}

int cmd_detect(const std::string& in_path, const std::string& key_path, double fpr, bool flip_or,
               bool resize_to_grid, std::ostream& out) {
  const WatermarkKey key = load_key(key_path);
  const Image img = load_for_key(in_path, key, resize_to_grid);
  // flip-OR combines two tests; each branch runs at fpr/2 so the union
  // still meets the requested rate
  const CalibratedThreshold threshold =
      calibrate_threshold(key.layout.num_patches(), flip_or ? fpr / 2.0 : fpr);
  const DetectionReport report =
      flip_or ? detect_with_flip(img, key, threshold) : detect(img, key, threshold);
  out << report_to_json(report).dump() << "\n";
  return kOk;
}

int cmd_inject(const std::string& mode, const std::string& in_path, const std::string& out_path,
               const std::string& key_path, double margin, double step_size, int max_iters,
               double target, bool resize_to_grid, bool quiet, std::ostream& out) {
  const WatermarkKey key = load_key(key_path);
  const Image img = load_for_key(in_path, key, resize_to_grid);

  ordered_json sidecar;
  bool success = true;
  if (mode == "gd") {
    InjectionConfig cfg = InjectionConfig::defaults_for(key);
    cfg.margin = margin;
    cfg.max_iterations = max_iters;
    cfg.target_match_rate = target;
    if (step_size > 0.0) cfg.step_size = step_size;
    const InjectionResult res = inject_posthoc_gd(img, key, cfg);
    save_png(res.image, out_path);
    sidecar["mode"] = "gd";
    sidecar["iterations_used"] = res.iterations_used;
    sidecar["final_match_rate"] = res.final_match_rate;
    sidecar["psnr_db"] = value_or_inf(res.psnr_db);
    sidecar["success"] = res.success;
    sidecar["final_penalty"] = res.final_penalty;
    success = res.success;
  } else if (mode == "project") {
    const HardProjectionResult res = inject_hard_projection_ex(img, key, margin);
    save_png(res.image, out_path);
    sidecar["mode"] = "project";
    sidecar["final_match_rate"] = match_rate(res.image, key).rate;
    sidecar["psnr_db"] = value_or_inf(psnr_db(img, res.image));
    sidecar["clamp_bound_patches"] = res.clamp_bound;
    sidecar["success"] = true;
  } else {
    throw CLI::ValidationError("--mode must be gd or project");
  }
  sidecar["margin"] = margin;
  sidecar["out"] = out_path;
  atomic_write_text(out_path + ".json", sidecar.dump(2) + "\n");
  if (!quiet) out << sidecar.dump() << "\n";
  if (!success) throw Failure(sidecar);
  return kOk;
}

int cmd_sample(bool guided, bool stepwise, bool latent, const std::string& decoder_kind,
               const std::string& key_path, double scale, std::uint64_t seed,
               const std::string& out_path, const std::string& trace_path, double fpr,
               double margin, int retry_cap, int height, int width, const SamplerArgs& sargs,
               bool quiet, std::ostream& out) {
  const NoiseSchedule schedule =
      build_schedule(sargs.steps, sargs.sigma_min, sargs.sigma_max, sargs.rho);

  if (!guided && !stepwise) {
    const MixturePrior prior =
        make_default_prior(height, width, sargs.templates, sargs.gamma, sargs.template_seed);
    const Image img = sample_unguided(seed, schedule, prior);
    save_png(img, out_path);
    if (!quiet) out << ordered_json{{"out", out_path}, {"seed", seed}}.dump() << "\n";
    return kOk;
  }

  const WatermarkKey key = load_key(key_path);
  if (stepwise) {
    const MixturePrior prior = make_default_prior(key.layout.height, key.layout.width,
                                                  sargs.templates, sargs.gamma,
                                                  sargs.template_seed);
    const Image img = sample_hard_stepwise(seed, schedule, prior, key, margin);
    save_png(img, out_path);
    if (!quiet)
      out << ordered_json{{"out", out_path},
                          {"seed", seed},
                          {"match_rate", match_rate(img, key).rate}}
                 .dump()
          << "\n";
    return kOk;
  }

  const CalibratedThreshold threshold = calibrate_threshold(key.layout.num_patches(), fpr);
  GuidanceOptions opts;
  opts.margin = margin;
  opts.retry_cap = retry_cap;

  SampleTrace trace;
  if (latent) {
    if (key.layout.height % 2 != 0 || key.layout.width % 2 != 0)
      throw CLI::ValidationError("latent sampling needs even image dimensions");
    const int lh = key.layout.height / 2, lw = key.layout.width / 2;
    const LinearDecoder decoder = decoder_kind == "bilinear2x"
                                      ? LinearDecoder::bilinear2x(lh, lw)
                                      : LinearDecoder::nearest2x(lh, lw);
    const MixturePrior prior =
        make_default_prior(lh, lw, sargs.templates, sargs.gamma, sargs.template_seed);
    if (scale <= 0.0)
      scale = guidance_scale_for(key.weights, key.layout.patch_size, schedule, sargs.gamma, 0.35);
    trace = sample_guided_latent(seed, schedule, prior, decoder, key, scale, threshold, opts);
  } else {
    const MixturePrior prior = make_default_prior(key.layout.height, key.layout.width,
                                                  sargs.templates, sargs.gamma,
                                                  sargs.template_seed);
    if (scale <= 0.0)
      scale = guidance_scale_for(key.weights, key.layout.patch_size, schedule, sargs.gamma, 0.35);
    trace = sample_guided(seed, schedule, prior, key, scale, threshold, opts);
  }

  save_png(trace.final_image, out_path);
  const ordered_json tj = trace_to_json(trace);
  if (!trace_path.empty()) atomic_write_text(trace_path, tj.dump(2) + "\n");
  if (!quiet) out << tj.dump() << "\n";
  if (!trace.success)
    throw Failure({{"error", "retry cap exhausted before reaching the match threshold"},
                   {"trace", tj}});
  return kOk;
}

int cmd_attack(const std::string& kind_name, const std::string& in_path,
               const std::string& out_path, std::uint64_t seed, bool have_seed, bool quiet,
               std::ostream& out) {
  const Image img = load_image(in_path);
  if (kind_name == "all") {
    std::filesystem::create_directories(out_path);
    const std::uint64_t battery_seed = have_seed ? seed : 0;
    const auto battery = attack_battery(img, battery_seed);
    ordered_json manifest;
    manifest["in"] = in_path;
    manifest["seed"] = battery_seed;
    manifest["attacks"] = ordered_json::array();
    for (const auto& [kind, attacked] : battery) {
      const std::string file = std::string(attack_name(kind)) + ".png";
      save_png(attacked, std::filesystem::path(out_path) / file);
      manifest["attacks"].push_back(
          {{"kind", attack_name(kind)}, {"file", file}, {"stochastic", attack_is_stochastic(kind)}});
    }
    atomic_write_text((std::filesystem::path(out_path) / "manifest.json").string(),
                      manifest.dump(2) + "\n");
    if (!quiet) out << manifest.dump() << "\n";
    return kOk;
  }
  const auto kind = parse_attack(kind_name);
  if (!kind) throw CLI::ValidationError("unknown attack kind: " + kind_name);
  AttackSpec spec = AttackSpec::of(*kind);
  if (have_seed) spec.rng_seed = seed;
  if (attack_is_stochastic(*kind) && !spec.rng_seed)
    throw CLI::ValidationError(std::string(attack_name(*kind)) + " needs --seed");
  save_png(apply_attack(img, spec), out_path);
  if (!quiet) out << ordered_json{{"kind", kind_name}, {"out", out_path}}.dump() << "\n";
  return kOk;
}

int cmd_inspect(const std::string& in_path, const std::string& key_path, double margin,
                bool resize_to_grid, std::ostream& out) {
  const WatermarkKey key = load_key(key_path);
  const Image img = load_for_key(in_path, key, resize_to_grid);
  const Eigen::VectorXd lums = patch_luminances(img, key.layout, key.weights);
  const Eigen::VectorXi bits = binary_pattern_from_luminances(lums, key);
  out << "patch,row0,col0,l,tau,c,bit,matched,slack,violated\n";
  for (int i = 0; i < key.layout.num_patches(); ++i) {
    const double slack = key.c[i] * (lums[i] - key.tau[i]);
    const bool violated = key.c[i] * (key.tau[i] - lums[i]) + margin > 0.0;
    out << i << ',' << key.layout.patch_row0(i) << ',' << key.layout.patch_col0(i) << ','
        << format_double(lums[i]) << ',' << format_double(key.tau[i]) << ',' << key.c[i] << ','
        << bits[i] << ',' << (bits[i] == key.c[i] ? 1 : 0) << ',' << format_double(slack) << ','
        << (violated ? 1 : 0) << '\n';
  }
  return kOk;
}

int cmd_eval(const std::string& config_path, const std::string& out_dir, bool quiet,
             std::ostream& out) {
  std::ifstream f(config_path);
  if (!f) throw Failure({{"error", "cannot read config: " + config_path}});
  ordered_json cj;
  f >> cj;
  const std::string study = cj.value("study", "all");
  const harness::ExperimentConfig cfg = harness::config_from_json(cj);

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  ordered_json manifest;
  manifest["config"] = cj;
  manifest["outputs"] = ordered_json::array();

  auto emit = [&](const std::string& name, const ordered_json& j, const std::string& csv) {
    atomic_write_text((dir / (name + ".json")).string(), j.dump(2) + "\n");
    manifest["outputs"].push_back(name + ".json");
    if (!csv.empty()) {
      atomic_write_text((dir / (name + ".csv")).string(), csv);
      manifest["outputs"].push_back(name + ".csv");
    }
  };

  if (study == "fpr" || study == "all") {
    const auto report = harness::run_fpr_study(cfg);
    emit("fpr", harness::fpr_report_to_json(report), "");
    if (!quiet)
      out << "fpr: empirical=" << report.empirical_fpr << " expected=" << report.threshold.p_at_k_star
          << (report.pass ? " PASS" : " FAIL") << "\n";
  }
  if (study == "robustness" || study == "all") {
    const auto report = harness::run_robustness_table(cfg);
    emit("robustness", harness::robustness_report_to_json(report),
         harness::robustness_report_to_csv(report));
    if (!quiet)
      for (const auto& row : report.rows)
        out << "robustness: " << row.attack << " acc=" << row.accuracy
            << " fp=" << row.false_positives << "\n";
  }
  if (study == "ablation" || study == "all") {
    const auto report = harness::run_ablation(cfg);
    emit("ablation", harness::ablation_report_to_json(report),
         harness::ablation_report_to_csv(report));
    if (!quiet)
      out << "ablation: guided_beats_hard_stepwise="
          << (report.guided_beats_hard_stepwise ? "yes" : "no") << "\n";
  }
  atomic_write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Luminark: certified patch-luminance image watermarking"};
  app.require_subcommand(1);

  bool quiet = false;
  app.add_flag("--quiet", quiet, "suppress informational output");

  // keygen
  auto* keygen = app.add_subcommand("keygen", "generate a watermark key file");
  std::uint64_t kg_seed = 0;
  int kg_h = 512, kg_w = 512, kg_k = 64;
  double kg_lo = 0.4, kg_hi = 0.6;
  std::vector<double> kg_weights;
  std::string kg_out;
  bool kg_json = false;
  keygen->add_option("--seed", kg_seed, "generator seed")->required();
  keygen->add_option("--height", kg_h, "image height");
  keygen->add_option("--width", kg_w, "image width");
  keygen->add_option("--patch-size", kg_k, "patch edge length");
  keygen->add_option("--tau-low", kg_lo, "threshold interval low end");
  keygen->add_option("--tau-high", kg_hi, "threshold interval high end");
  keygen->add_option("--weights", kg_weights, "channel weights wr wg wb")->expected(3);
  keygen->add_option("--out", kg_out, "key file path")->required();
  keygen->add_flag("--json", kg_json, "machine-readable output");

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "compute the match-rate threshold");
  int cb_n = 64;
  double cb_fpr = 0.01;
  bool cb_ladder = false;
  calibrate->add_option("--n", cb_n, "number of patches")->required();
  calibrate->add_option("--fpr", cb_fpr, "target false positive rate")->required();
  calibrate->add_flag("--ladder", cb_ladder, "print the full (k, p_k) ladder as CSV");

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "run certified detection on an image");
  std::string dt_in, dt_key;
  double dt_fpr = 0.01;
  bool dt_flip = false, dt_resize = false;
  detect_cmd->add_option("--in", dt_in, "image path")->required();
  detect_cmd->add_option("--key", dt_key, "key file path")->required();
  detect_cmd->add_option("--fpr", dt_fpr, "target false positive rate");
  detect_cmd->add_flag("--flip-or", dt_flip, "also test the horizontal mirror (fpr/2 per branch)");
  detect_cmd->add_flag("--resize-to-grid", dt_resize, "bilinear-resize to the key layout");

  // inject
  auto* inject = app.add_subcommand("inject", "embed the watermark into an image");
  std::string ij_mode = "gd", ij_in, ij_out, ij_key;
  double ij_margin = 0.0, ij_step = 0.0, ij_target = 1.0;
  int ij_iters = 256;
  bool ij_resize = false;
  inject->add_option("--mode", ij_mode, "gd | project");
  inject->add_option("--in", ij_in, "input image")->required();
  inject->add_option("--out", ij_out, "output PNG")->required();
  inject->add_option("--key", ij_key, "key file path")->required();
  inject->add_option("--margin", ij_margin, "luminance slack to enforce");
  inject->add_option("--step-size", ij_step, "gd step size (default derived from the key)");
  inject->add_option("--max-iters", ij_iters, "gd iteration cap");
  inject->add_option("--target", ij_target, "gd target match rate");
  inject->add_flag("--resize-to-grid", ij_resize, "bilinear-resize to the key layout");

  // sample
  auto* sample = app.add_subcommand("sample", "run the toy diffusion sampler");
  bool sp_guided = false, sp_stepwise = false, sp_latent = false;
  std::string sp_decoder = "nearest2x", sp_key, sp_out, sp_trace;
  double sp_scale = 0.0, sp_fpr = 0.01, sp_margin = 0.0;
  std::uint64_t sp_seed = 0;
  int sp_retry = 64, sp_h = 256, sp_w = 256;
  SamplerArgs sp_args;
  sample->add_flag("--guided", sp_guided, "watermark-guided sampling (needs --key)");
  sample->add_flag("--stepwise", sp_stepwise, "hard step-wise projection baseline (needs --key)");
  sample->add_flag("--latent", sp_latent, "sample in latent space through a linear decoder");
  sample->add_option("--decoder", sp_decoder, "nearest2x | bilinear2x");
  sample->add_option("--key", sp_key, "key file path");
  sample->add_option("--scale", sp_scale, "guidance scale (default: swept per patch size)");
  sample->add_option("--seed", sp_seed, "trace seed")->required();
  sample->add_option("--out", sp_out, "output PNG")->required();
  sample->add_option("--trace", sp_trace, "trace JSON path");
  sample->add_option("--fpr", sp_fpr, "target fpr for the acceptance threshold");
  sample->add_option("--margin", sp_margin, "guidance penalty margin");
  sample->add_option("--retry-cap", sp_retry, "restart cap");
  sample->add_option("--height", sp_h, "unguided output height");
  sample->add_option("--width", sp_w, "unguided output width");
  sp_args.attach(sample);

  // attack
  auto* attack = app.add_subcommand("attack", "apply a robustness transformation");
  std::string at_kind, at_in, at_out;
  std::uint64_t at_seed = 0;
  attack->add_option("--kind", at_kind, "attack name or 'all'")->required();
  attack->add_option("--in", at_in, "input image")->required();
  attack->add_option("--out", at_out, "output PNG (directory for 'all')")->required();
  auto* at_seed_opt = attack->add_option("--seed", at_seed, "seed for stochastic kinds");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "dump per-patch statistics as CSV");
  std::string is_in, is_key;
  double is_margin = 0.0;
  bool is_resize = false;
  inspect->add_option("--in", is_in, "image path")->required();
  inspect->add_option("--key", is_key, "key file path")->required();
  inspect->add_option("--margin", is_margin, "margin used for the violated column");
  inspect->add_flag("--resize-to-grid", is_resize, "bilinear-resize to the key layout");

  // eval
  auto* eval = app.add_subcommand("eval", "run harness studies from a config file");
  std::string ev_config, ev_out;
  eval->add_option("--config", ev_config, "experiment config JSON")->required();
  eval->add_option("--out", ev_out, "output directory")->required();

  std::vector<std::string> argv_copy = args;
  try {
    std::vector<const char*> argv;
    argv.push_back("luminark");
    for (const auto& a : argv_copy) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (keygen->parsed())
      return cmd_keygen(kg_seed, kg_h, kg_w, kg_k, kg_lo, kg_hi, kg_weights, kg_out, kg_json,
                        quiet, out);
    if (calibrate->parsed()) return cmd_calibrate(cb_n, cb_fpr, cb_ladder, out);
    if (detect_cmd->parsed())
      return cmd_detect(dt_in, dt_key, dt_fpr, dt_flip, dt_resize, out);
    if (inject->parsed())
      return cmd_inject(ij_mode, ij_in, ij_out, ij_key, ij_margin, ij_step, ij_iters, ij_target,
                        ij_resize, quiet, out);
    if (sample->parsed()) {
      if ((sp_guided || sp_stepwise) && sp_key.empty())
        throw CLI::ValidationError("--guided/--stepwise need --key");
      return cmd_sample(sp_guided, sp_stepwise, sp_latent, sp_decoder, sp_key, sp_scale, sp_seed,
                        sp_out, sp_trace, sp_fpr, sp_margin, sp_retry, sp_h, sp_w, sp_args, quiet,
                        out);
    }
    if (attack->parsed())
      return cmd_attack(at_kind, at_in, at_out, at_seed, at_seed_opt->count() > 0, quiet, out);
    if (inspect->parsed()) return cmd_inspect(is_in, is_key, is_margin, is_resize, out);
    if (eval->parsed()) return cmd_eval(ev_config, ev_out, quiet, out);
    err << "usage error: no subcommand\n";
    return kUsage;
  } catch (const CLI::ValidationError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const Failure& e) {
    out << e.diagnostics.dump() << "\n";
    return kFailure;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    out << ordered_json{{"error", e.what()}}.dump() << "\n";
    return kFailure;
  }
}

}  // namespace luminark::cli
