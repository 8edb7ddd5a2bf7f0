// avvp: batch CLI for the imbalance-aware weakly-supervised multimodal
// training engine. Subcommands: generate, train, evaluate, ablate, gradcheck.
// Exit codes: 0 success, 1 usage/argument error, 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "avvp/grad_check.hpp"
#include "avvp/synth.hpp"
#include "avvp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw avvp::IoError("cannot open config file: " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw avvp::ConfigError("config parse error at byte " + std::to_string(e.byte) + ": " +
                            e.what());
  }
}

// File config first, then explicit CLI flags on top; the merged document is
// what reports echo.
struct RunFlags {
  std::string config_path, dataset, out, mode, dgm_flag, noise, scope, averaging, aggregation;
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma, lr, threshold, min_iou;
  std::optional<std::size_t> epochs, batch, hidden;
  std::optional<bool> adam, force_omega_one;
  std::optional<double> aux_weight;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--data", dataset, "dataset directory");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--mode", mode, "pipeline mode: traditional|msdu")
        ->check(CLI::IsMember({"traditional", "msdu"}));
    cmd->add_option("--dgm", dgm_flag, "gradient modulation: off|score|discrepancy|fusion")
        ->check(CLI::IsMember({"off", "score", "discrepancy", "fusion"}));
    cmd->add_option("--gamma", gamma, "modulation strength");
    cmd->add_option("--noise", noise, "generalization noise: on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--batch", batch, "batch size");
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--hidden", hidden, "hidden dimension");
    cmd->add_option("--adam", adam, "use the Adam variant");
    cmd->add_option("--scope", scope, "modulation scope: owned|encoders_only")
        ->check(CLI::IsMember({"owned", "encoders_only"}));
    cmd->add_option("--force-omega-one", force_omega_one, "force omega to 1 (diagnostics)");
    cmd->add_option("--aux-weight", aux_weight, "measurement-branch loss weight (msdu mode)");
    cmd->add_option("--aggregation", aggregation, "video pooling: attentive|mean_pool")
        ->check(CLI::IsMember({"attentive", "mean_pool"}));
    cmd->add_option("--threshold", threshold, "snippet decision threshold");
    cmd->add_option("--min-iou", min_iou, "event matching IoU threshold");
    cmd->add_option("--averaging", averaging, "F-score averaging: micro|macro")
        ->check(CLI::IsMember({"micro", "macro"}));
  }

  json merged() const {
    json j = load_config_file(config_path);
    if (!dataset.empty()) j["dataset"] = dataset;
    if (!out.empty()) j["out"] = out;
    if (seed) j["seed"] = *seed;
    if (!mode.empty()) j["mode"] = mode;
    if (!dgm_flag.empty()) j["dgm"] = dgm_flag;
    if (gamma) j["gamma"] = *gamma;
    if (!noise.empty()) j["noise"] = noise;
    if (epochs) j["epochs"] = *epochs;
    if (batch) j["batch_size"] = *batch;
    if (lr) j["learning_rate"] = *lr;
    if (hidden) j["hidden_dim"] = *hidden;
    if (adam) j["adam"] = *adam;
    if (!scope.empty()) j["scope"] = scope;
    if (force_omega_one) j["force_omega_one"] = *force_omega_one;
    if (!aggregation.empty()) j["aggregation"] = aggregation;
    if (aux_weight) j["aux_weight"] = *aux_weight;
    if (threshold) j["threshold"] = *threshold;
    if (min_iou) j["min_iou"] = *min_iou;
    if (!averaging.empty()) j["averaging"] = averaging;
    return j;
  }
};

std::array<avvp::synth::Dataset, 3> load_and_split(const avvp::RunConfig& rc) {
  if (rc.dataset_dir.empty()) throw avvp::ConfigError("no dataset directory given");
  const avvp::synth::Dataset full = avvp::synth::load(rc.dataset_dir);
  return avvp::synth::split(full, rc.split_fractions);
}

int cmd_generate(const json& cfg) {
  avvp::synth::SynthConfig sc;
  const json g = cfg.contains("generate") ? cfg["generate"] : cfg;
  if (g.contains("videos")) sc.videos = g["videos"].get<std::size_t>();
  if (g.contains("snippets")) sc.snippets = g["snippets"].get<std::size_t>();
  if (g.contains("classes")) sc.classes = g["classes"].get<std::size_t>();
  if (g.contains("d_audio")) sc.d_audio = g["d_audio"].get<std::size_t>();
  if (g.contains("d_visual")) sc.d_visual = g["d_visual"].get<std::size_t>();
  if (g.contains("dominance")) sc.dominance = g["dominance"].get<double>();
  if (g.contains("noise_scale")) sc.noise_scale = g["noise_scale"].get<double>();
  if (g.contains("event_density")) sc.event_density = g["event_density"].get<double>();
  if (cfg.contains("seed")) sc.seed = cfg["seed"].get<std::uint64_t>();
  if (g.contains("seed")) sc.seed = g["seed"].get<std::uint64_t>();
  const std::string out = cfg.value("out", std::string{});
  if (out.empty()) throw avvp::ConfigError("generate: --out directory required");

  const avvp::synth::Dataset ds = avvp::synth::generate(sc);
  avvp::synth::save(ds, out);
  std::ifstream mf(fs::path(out) / "manifest.json");
  std::cout << mf.rdbuf();
  return 0;
}

int cmd_train(const json& cfg, const std::string& resume) {
  avvp::RunConfig rc = avvp::RunConfig::from_json(cfg);
  auto [train, val, test] = load_and_split(rc);
  avvp::TrainOutput out = avvp::train_run(rc, train, val, test, &std::cerr, resume);
  if (!rc.out_dir.empty()) {
    avvp::write_run_artifacts(rc.out_dir, rc, out);
    std::cout << "wrote " << rc.out_dir << "\n";
  }
  std::cout << "final loss " << out.report.loss_total.back() << ", test segment Type@AV "
            << out.report.test_metrics.segment_type_at_av << "\n";
  return 0;
}

int cmd_evaluate(const json& cfg, const std::string& ckpt, const std::string& split_name) {
  avvp::RunConfig rc = avvp::RunConfig::from_json(cfg);
  auto [train, val, test] = load_and_split(rc);
  const avvp::synth::Dataset& ds = split_name == "train" ? train : split_name == "val" ? val : test;
  const avvp::metrics::MetricsReport r = avvp::evaluate_checkpoint(ckpt, ds, rc.eval, rc.batch_size);
  const std::string dump = r.to_json().dump(2);
  if (!rc.out_dir.empty()) {
    fs::create_directories(rc.out_dir);
    std::ofstream f(fs::path(rc.out_dir) / "metrics.json", std::ios::trunc);
    f << dump << "\n";
  }
  std::cout << dump << "\n";
  return 0;
}

int cmd_ablate(const json& cfg) {
  avvp::AblationSpec spec;
  spec.base = avvp::RunConfig::from_json(cfg);
  if (cfg.contains("ablate")) {
    const json& a = cfg["ablate"];
    if (a.contains("arms")) spec.arms = a["arms"].get<std::vector<std::string>>();
    if (a.contains("gammas")) spec.gammas = a["gammas"].get<std::vector<double>>();
    if (a.contains("seeds")) spec.seeds = a["seeds"].get<std::vector<std::uint64_t>>();
  }
  if (spec.base.out_dir.empty()) throw avvp::ConfigError("ablate: --out directory required");
  auto [train, val, test] = load_and_split(spec.base);
  const auto rows = avvp::run_ablation(spec, train, val, test, &std::cerr);
  fs::create_directories(spec.base.out_dir);
  avvp::write_ablation_csv(fs::path(spec.base.out_dir) / "ablation.csv", rows);
  avvp::write_ablation_summary_csv(fs::path(spec.base.out_dir) / "ablation_summary.csv", rows);
  std::cout << "wrote " << rows.size() << " rows to " << spec.base.out_dir << "/ablation.csv\n";
  for (const auto& r : rows) {
    if (r.status != "ok") return 2;  // partial failures recorded, grid completed
  }
  return 0;
}

int cmd_gradcheck(double tolerance) {
  const auto checks = avvp::run_gradcheck_suite(tolerance);
  const bool ok = avvp::report_checks(checks, std::cout);
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"imbalance-aware weakly-supervised multimodal training engine"};
  app.require_subcommand(1);

  RunFlags gen_flags, train_flags, eval_flags, ablate_flags;
  std::string resume, ckpt, split_name = "test";
  double gc_tolerance = 1e-3;
  json gen_inline = json::object();

  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset directory");
  gen_flags.add_to(gen);
  std::optional<std::size_t> g_videos, g_T, g_C, g_da, g_dv;
  std::optional<double> g_delta, g_noise_scale, g_density;
  gen->add_option("--videos", g_videos, "video count");
  gen->add_option("--snippets", g_T, "snippets per video");
  gen->add_option("--classes", g_C, "event classes");
  gen->add_option("--d-audio", g_da, "audio feature dim");
  gen->add_option("--d-visual", g_dv, "visual feature dim");
  gen->add_option("--delta", g_delta, "dominance in [0,1]")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--noise-scale", g_noise_scale, "feature noise scale");
  gen->add_option("--density", g_density, "expected events per video");

  auto* train = app.add_subcommand("train", "train a model and emit reports");
  train_flags.add_to(train);
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a dataset split");
  eval_flags.add_to(eval);
  eval->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  eval->add_option("--split", split_name, "train|val|test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  auto* ablate = app.add_subcommand("ablate", "run an ablation grid and emit a CSV table");
  ablate_flags.add_to(ablate);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference verification suite");
  gradcheck->add_option("--tolerance", gc_tolerance, "relative error tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      json cfg = gen_flags.merged();
      json g = cfg.contains("generate") ? cfg["generate"] : json::object();
      if (g_videos) g["videos"] = *g_videos;
      if (g_T) g["snippets"] = *g_T;
      if (g_C) g["classes"] = *g_C;
      if (g_da) g["d_audio"] = *g_da;
      if (g_dv) g["d_visual"] = *g_dv;
      if (g_delta) g["dominance"] = *g_delta;
      if (g_noise_scale) g["noise_scale"] = *g_noise_scale;
      if (g_density) g["event_density"] = *g_density;
      cfg["generate"] = g;
      return cmd_generate(cfg);
    }
    if (train->parsed()) return cmd_train(train_flags.merged(), resume);
    if (eval->parsed()) return cmd_evaluate(eval_flags.merged(), ckpt, split_name);
    if (ablate->parsed()) return cmd_ablate(ablate_flags.merged());
    if (gradcheck->parsed()) return cmd_gradcheck(gc_tolerance);
  } catch (const avvp::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const avvp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
