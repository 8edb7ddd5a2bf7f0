#include "avvp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace avvp {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream, std::uint64_t idx) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1) + idx * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

const char* scope_name(dgm::ModulationScope s) {
  return s == dgm::ModulationScope::owned ? "owned" : "encoders_only";
}

dgm::ModulationScope scope_from_name(const std::string& s) {
  if (s == "owned") return dgm::ModulationScope::owned;
  if (s == "encoders_only") return dgm::ModulationScope::encoders_only;
  throw ConfigError("unknown modulation scope '" + s + "'");
}

const char* aggregation_name(AggregationKind a) {
  return a == AggregationKind::attentive ? "attentive" : "mean_pool";
}

AggregationKind aggregation_from_name(const std::string& s) {
  if (s == "attentive") return AggregationKind::attentive;
  if (s == "mean_pool") return AggregationKind::mean_pool;
  throw ConfigError("unknown aggregation '" + s + "'");
}

const char* averaging_name(metrics::Averaging a) {
  return a == metrics::Averaging::micro ? "micro" : "macro";
}

metrics::Averaging averaging_from_name(const std::string& s) {
  if (s == "micro") return metrics::Averaging::micro;
  if (s == "macro") return metrics::Averaging::macro;
  throw ConfigError("unknown averaging '" + s + "'");
}

}  // namespace

std::string csv_num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

nlohmann::json RunConfig::to_json() const {
  return {{"dataset", dataset_dir},
          {"out", out_dir},
          {"seed", seed},
          {"mode", pipeline_name(mode)},
          {"dgm", dgm_mode ? dgm::imbalance_mode_name(*dgm_mode) : "off"},
          {"gamma", gamma},
          {"noise", noise ? "on" : "off"},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"lr_decay_factor", lr_decay_factor},
          {"lr_decay_every", lr_decay_every},
          {"hidden_dim", hidden_dim},
          {"adam", adam},
          {"scope", scope_name(scope)},
          {"force_omega_one", force_omega_one},
          {"aggregation", aggregation_name(aggregation)},
          {"aux_weight", aux_weight},
          {"threshold", eval.threshold},
          {"min_iou", eval.min_iou},
          {"averaging", averaging_name(eval.averaging)},
          {"split_fractions", split_fractions}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig rc;
  if (j.contains("dataset")) rc.dataset_dir = j["dataset"].get<std::string>();
  if (j.contains("out")) rc.out_dir = j["out"].get<std::string>();
  if (j.contains("seed")) rc.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("mode")) rc.mode = pipeline_from_name(j["mode"].get<std::string>());
  if (j.contains("dgm")) {
    const std::string s = j["dgm"].get<std::string>();
    rc.dgm_mode = s == "off" ? std::nullopt
                             : std::optional<dgm::ImbalanceMode>(dgm::imbalance_mode_from_name(s));
  }
  if (j.contains("gamma")) rc.gamma = j["gamma"].get<double>();
  if (j.contains("noise")) {
    const std::string s = j["noise"].get<std::string>();
    if (s != "on" && s != "off") throw ConfigError("noise must be 'on' or 'off'");
    rc.noise = s == "on";
  }
  if (j.contains("epochs")) rc.epochs = j["epochs"].get<std::size_t>();
  if (j.contains("batch_size")) rc.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("learning_rate")) rc.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("lr_decay_factor")) rc.lr_decay_factor = j["lr_decay_factor"].get<double>();
  if (j.contains("lr_decay_every")) rc.lr_decay_every = j["lr_decay_every"].get<std::size_t>();
  if (j.contains("hidden_dim")) rc.hidden_dim = j["hidden_dim"].get<std::size_t>();
  if (j.contains("adam")) rc.adam = j["adam"].get<bool>();
  if (j.contains("scope")) rc.scope = scope_from_name(j["scope"].get<std::string>());
  if (j.contains("force_omega_one")) rc.force_omega_one = j["force_omega_one"].get<bool>();
  if (j.contains("aggregation")) {
    rc.aggregation = aggregation_from_name(j["aggregation"].get<std::string>());
  }
  if (j.contains("aux_weight")) rc.aux_weight = j["aux_weight"].get<double>();
  if (j.contains("threshold")) rc.eval.threshold = j["threshold"].get<double>();
  if (j.contains("min_iou")) rc.eval.min_iou = j["min_iou"].get<double>();
  if (j.contains("averaging")) rc.eval.averaging = averaging_from_name(j["averaging"].get<std::string>());
  if (j.contains("split_fractions")) rc.split_fractions = j["split_fractions"].get<std::array<double, 3>>();
  return rc;
}

ModelConfig RunConfig::model_config(const synth::Dataset& ds) const {
  ModelConfig mc;
  mc.d_audio = ds.cfg.d_audio;
  mc.d_visual = ds.cfg.d_visual;
  mc.d_hidden = hidden_dim;
  mc.num_classes = ds.cfg.classes;
  mc.mode = mode;
  mc.aggregation = aggregation;
  return mc;
}

dgm::OptimizerConfig RunConfig::optimizer_config() const {
  dgm::OptimizerConfig oc;
  oc.learning_rate = learning_rate;
  oc.gamma = gamma;
  oc.mode = dgm_mode.value_or(dgm::ImbalanceMode::fusion);
  oc.noise_enabled = noise;
  oc.lr_decay_factor = lr_decay_factor;
  oc.lr_decay_every = lr_decay_every;
  oc.epochs = epochs;
  oc.use_adam = adam;
  oc.scope = scope;
  oc.force_omega_one = force_omega_one;
  return oc;
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json imb = nlohmann::json::array();
  for (const auto& e : imbalance) {
    imb.push_back({{"epoch", e.epoch},
                   {"batches", e.batches},
                   {"degenerate_batches", e.degenerate_batches},
                   {"mean_omega_v_minus_a", e.mean_omega_v_minus_a},
                   {"mean_mu_a", e.mean_mu_a},
                   {"mean_mu_v", e.mean_mu_v}});
  }
  return {{"config", config_echo},
          {"losses", {{"loss_a", loss_a}, {"loss_v", loss_v}, {"loss_total", loss_total}}},
          {"imbalance_epochs", imb},
          {"final_loss_gap", final_loss_gap},
          {"confounded_modality_losses", confounded_modality_losses},
          {"metrics", {{"val", val_metrics.to_json()}, {"test", test_metrics.to_json()}}},
          {"counters", {{"omega_calls", omega_calls}, {"mu_calls", mu_calls}}},
          {"start_epoch", start_epoch},
          {"epochs_run", epochs_run},
          {"wall_clock_seconds", wall_clock_seconds}};
}

std::pair<LabelArray, LabelArray> predict_labels(AvvpModel& model, const synth::Dataset& ds,
                                                 std::size_t batch_size, double threshold) {
  const std::size_t N = ds.num_videos(), T = ds.cfg.snippets, C = ds.cfg.classes;
  LabelArray pred_a(N, T, C), pred_v(N, T, C);
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < N; begin += batch_size) {
    const std::size_t end = std::min(N, begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    VideoBatch vb = ds.make_batch(idx);
    Tape tape;
    auto fw = model.forward(tape, vb);
    const LabelArray ba = metrics::binarize(tape.value(fw.p_a), threshold);
    const LabelArray bv = metrics::binarize(tape.value(fw.p_v), threshold);
    std::copy_n(ba.v.data(), ba.v.size(), pred_a.v.data() + begin * T * C);
    std::copy_n(bv.v.data(), bv.v.size(), pred_v.v.data() + begin * T * C);
  }
  return {std::move(pred_a), std::move(pred_v)};
}

metrics::MetricsReport evaluate_dataset(AvvpModel& model, const synth::Dataset& ds,
                                        std::size_t batch_size, const metrics::EvalOptions& opts) {
  auto [pred_a, pred_v] = predict_labels(model, ds, batch_size, opts.threshold);
  return metrics::full_report(pred_a, pred_v, ds.truth_audio, ds.truth_visual, opts);
}

metrics::MetricsReport evaluate_checkpoint(const std::filesystem::path& ckpt,
                                           const synth::Dataset& ds,
                                           const metrics::EvalOptions& opts,
                                           std::size_t batch_size) {
  nlohmann::json meta;
  ParameterStore params = ParameterStore::load(ckpt, &meta);
  if (!meta.contains("model")) throw ConfigError("checkpoint carries no model metadata");
  const auto& jm = meta["model"];
  ModelConfig mc;
  mc.d_audio = jm.at("d_audio").get<std::size_t>();
  mc.d_visual = jm.at("d_visual").get<std::size_t>();
  mc.d_hidden = jm.at("d_hidden").get<std::size_t>();
  mc.num_classes = jm.at("num_classes").get<std::size_t>();
  mc.mode = pipeline_from_name(jm.at("mode").get<std::string>());
  mc.aggregation = aggregation_from_name(jm.at("aggregation").get<std::string>());
  if (mc.d_audio != ds.cfg.d_audio || mc.d_visual != ds.cfg.d_visual ||
      mc.num_classes != ds.cfg.classes) {
    throw ConfigError("checkpoint dims (Da=" + std::to_string(mc.d_audio) +
                      ", Dv=" + std::to_string(mc.d_visual) +
                      ", C=" + std::to_string(mc.num_classes) + ") do not match dataset (Da=" +
                      std::to_string(ds.cfg.d_audio) + ", Dv=" + std::to_string(ds.cfg.d_visual) +
                      ", C=" + std::to_string(ds.cfg.classes) + ")");
  }
  AvvpModel model(mc, std::move(params));
  return evaluate_dataset(model, ds, batch_size, opts);
}

TrainOutput train_run(const RunConfig& rc, const synth::Dataset& train, const synth::Dataset& val,
                      const synth::Dataset& test, std::ostream* log,
                      const std::string& resume_checkpoint) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig mc = rc.model_config(train);
  dgm::DgmOptimizer opt(rc.optimizer_config());

  std::size_t start_epoch = 0;
  std::optional<AvvpModel> model;
  if (!resume_checkpoint.empty()) {
    nlohmann::json meta;
    ParameterStore params = ParameterStore::load(resume_checkpoint, &meta);
    start_epoch = meta.value("epoch", std::size_t{0});
    model.emplace(mc, std::move(params));
  } else {
    model.emplace(mc, rc.seed);
  }

  const bool dgm_on = rc.dgm_mode.has_value();
  const bool msdu = rc.mode == PipelineMode::msdu;
  std::mt19937_64 noise_rng(mix(rc.seed, 4, 0));

  TrainOutput out;
  out.report.start_epoch = start_epoch;
  out.report.confounded_modality_losses = !msdu;

  const std::size_t N = train.num_videos();
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = start_epoch; epoch < rc.epochs; ++epoch) {
    const auto ep_t0 = std::chrono::steady_clock::now();
    const double lr = opt.lr_for_epoch(epoch);
    std::mt19937_64 shuffle_rng(mix(rc.seed, 3, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double ep_loss_a = 0.0, ep_loss_v = 0.0, ep_loss = 0.0;
    std::size_t batches = 0;
    EpochImbalance ei;
    ei.epoch = epoch;
    double om = 0.0, ma = 0.0, mv = 0.0;

    for (std::size_t begin = 0; begin < N; begin += rc.batch_size) {
      const std::size_t end = std::min(N, begin + rc.batch_size);
      const std::size_t batch_id = begin / rc.batch_size;
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(begin),
                                   order.begin() + static_cast<long>(end));
      VideoBatch vb = train.make_batch(idx);
      try {
        Tape tape;
        auto fw = model->forward(tape, vb);
        Val loss = mmil_loss(tape, fw.p_video, vb.labels);
        double loss_a_val, loss_v_val;
        if (msdu) {
          Val la = mmil_loss(tape, fw.s_ms_a, vb.labels);
          Val lv = mmil_loss(tape, fw.s_ms_v, vb.labels);
          loss_a_val = tape.scalar(la);
          loss_v_val = tape.scalar(lv);
          loss = tape.add(loss, tape.affine(tape.add(la, lv), rc.aux_weight, 0.0));
        } else {
          loss_a_val = bce_value(
              dgm::modality_video_scores(tape.value(fw.p_a), tape.value(fw.a_a)), vb.labels);
          loss_v_val = bce_value(
              dgm::modality_video_scores(tape.value(fw.p_v), tape.value(fw.a_v)), vb.labels);
        }
        const double loss_val = tape.scalar(loss);
        if (!std::isfinite(loss_val)) throw NumericError("loss is not finite");

        tape.backward(loss);

        if (dgm_on) {
          const Tensor s_a = msdu ? tape.value(fw.s_ms_a)
                                  : dgm::modality_video_scores(tape.value(fw.p_a), tape.value(fw.a_a));
          const Tensor s_v = msdu ? tape.value(fw.s_ms_v)
                                  : dgm::modality_video_scores(tape.value(fw.p_v), tape.value(fw.a_v));
          const dgm::ImbalanceReport rep = opt.measure(s_a, s_v, vb.labels);
          if (rep.degenerate && log) {
            (*log) << "warning: degenerate batch (epoch " << epoch << ", batch " << batch_id
                   << "), omega forced to 1\n";
          }
          opt.step(model->params(), rep, lr, noise_rng);
          out.imbalance_rows.push_back({epoch, batch_id, rep});
          om += rep.omega_v_minus_a;
          ma += rep.mu_a;
          mv += rep.mu_v;
          ei.degenerate_batches += rep.degenerate;
        } else {
          opt.step_plain(model->params(), lr);
        }

        ep_loss_a += loss_a_val;
        ep_loss_v += loss_v_val;
        ep_loss += loss_val;
        ++batches;
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << e.what() << " at epoch " << epoch << " batch " << batch_id << " (videos";
        for (std::size_t i : idx) os << ' ' << i;
        os << ")";
        throw NumericError(os.str());
      }
    }

    out.report.loss_a.push_back(ep_loss_a / static_cast<double>(batches));
    out.report.loss_v.push_back(ep_loss_v / static_cast<double>(batches));
    out.report.loss_total.push_back(ep_loss / static_cast<double>(batches));
    if (dgm_on) {
      ei.batches = batches;
      ei.mean_omega_v_minus_a = om / static_cast<double>(batches);
      ei.mean_mu_a = ma / static_cast<double>(batches);
      ei.mean_mu_v = mv / static_cast<double>(batches);
      out.report.imbalance.push_back(ei);
    }
    if (log) {
      (*log) << "epoch " << epoch << " lr " << lr << " loss " << out.report.loss_total.back()
             << " loss_a " << out.report.loss_a.back() << " loss_v " << out.report.loss_v.back()
             << " (" << std::chrono::duration<double>(std::chrono::steady_clock::now() - ep_t0).count()
             << "s)\n";
    }
  }

  out.report.epochs_run = rc.epochs - start_epoch;
  if (!out.report.loss_a.empty()) {
    out.report.final_loss_gap = std::abs(out.report.loss_a.back() - out.report.loss_v.back());
  }
  out.report.val_metrics = evaluate_dataset(*model, val, rc.batch_size, rc.eval);
  out.report.test_metrics = evaluate_dataset(*model, test, rc.batch_size, rc.eval);
  out.report.omega_calls = opt.omega_calls();
  out.report.mu_calls = opt.mu_calls();
  out.report.config_echo = rc.to_json();
  out.report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.params = std::move(model->params());
  return out;
}

void write_run_artifacts(const std::filesystem::path& out_dir, const RunConfig& rc,
                         const TrainOutput& out) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "losses.csv", std::ios::trunc);
    f << "epoch,loss_a,loss_v,loss_total\n";
    for (std::size_t e = 0; e < out.report.loss_total.size(); ++e) {
      f << (out.report.start_epoch + e) << ',' << csv_num(out.report.loss_a[e]) << ','
        << csv_num(out.report.loss_v[e]) << ',' << csv_num(out.report.loss_total[e]) << "\n";
    }
  }
  {
    std::ofstream f(out_dir / "imbalance.csv", std::ios::trunc);
    f << "epoch,batch,omega_v_minus_a,mu_a,mu_v,score_sum_a,score_sum_v,disc_sum_a,disc_sum_v\n";
    for (const auto& r : out.imbalance_rows) {
      f << r.epoch << ',' << r.batch << ',' << csv_num(r.report.omega_v_minus_a) << ','
        << csv_num(r.report.mu_a) << ',' << csv_num(r.report.mu_v) << ','
        << csv_num(r.report.score_sum_a) << ',' << csv_num(r.report.score_sum_v) << ','
        << csv_num(r.report.disc_sum_a) << ',' << csv_num(r.report.disc_sum_v) << "\n";
    }
  }
  {
    std::ofstream f(out_dir / "run_report.json", std::ios::trunc);
    f << out.report.to_json().dump(2) << "\n";
  }
  {
    std::ofstream f(out_dir / "metrics.json", std::ios::trunc);
    f << out.report.test_metrics.to_json().dump(2) << "\n";
  }
  nlohmann::json meta;
  meta["epoch"] = rc.epochs;
  meta["seed"] = rc.seed;
  meta["model"] = {{"d_audio", out.params.at("enc_a.w1").shape[0]},
                   {"d_visual", out.params.at("enc_v.w1").shape[0]},
                   {"d_hidden", rc.hidden_dim},
                   {"num_classes", out.params.has("head.cls_w")
                                       ? out.params.at("head.cls_w").shape[1]
                                       : out.params.at("head_a.cls_w").shape[1]},
                   {"mode", pipeline_name(rc.mode)},
                   {"aggregation", aggregation_name(rc.aggregation)}};
  out.params.save(out_dir / "model.ckpt", meta);
}

RunConfig arm_config(const RunConfig& base, const std::string& arm, double gamma,
                     std::uint64_t seed) {
  RunConfig rc = base;
  rc.seed = seed;
  rc.gamma = gamma;
  if (arm == "baseline") {
    rc.mode = PipelineMode::traditional;
    rc.dgm_mode = std::nullopt;
  } else if (arm == "dgm") {
    rc.mode = PipelineMode::traditional;
    if (!rc.dgm_mode) rc.dgm_mode = dgm::ImbalanceMode::fusion;
  } else if (arm == "msdu") {
    rc.mode = PipelineMode::msdu;
    rc.dgm_mode = std::nullopt;
  } else if (arm == "dgm_msdu") {
    rc.mode = PipelineMode::msdu;
    if (!rc.dgm_mode) rc.dgm_mode = dgm::ImbalanceMode::fusion;
  } else {
    throw ConfigError("unknown ablation arm '" + arm + "'");
  }
  return rc;
}

std::vector<AblationRow> run_ablation(const AblationSpec& spec, const synth::Dataset& train,
                                      const synth::Dataset& val, const synth::Dataset& test,
                                      std::ostream* log) {
  std::vector<AblationRow> rows;
  for (const std::string& arm : spec.arms) {
    for (double gamma : spec.gammas) {
      for (std::uint64_t seed : spec.seeds) {
        AblationRow row;
        row.arm = arm;
        row.gamma = gamma;
        row.seed = seed;
        try {
          const RunConfig rc = arm_config(spec.base, arm, gamma, seed);
          TrainOutput out = train_run(rc, train, val, test, nullptr);
          row.test = out.report.test_metrics;
          row.final_loss_gap = out.report.final_loss_gap;
        } catch (const std::exception& e) {
          row.status = e.what();
        }
        if (log) {
          (*log) << "cell arm=" << arm << " gamma=" << gamma << " seed=" << seed << " -> "
                 << (row.status == "ok" ? "ok" : row.status) << "\n";
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

namespace {
struct CellStats {
  double mean = 0.0, sd = 0.0;
};

CellStats stats_of(const std::vector<double>& xs) {
  CellStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.sd += (x - s.mean) * (x - s.mean);
  s.sd = xs.size() > 1 ? std::sqrt(s.sd / static_cast<double>(xs.size() - 1)) : 0.0;
  return s;
}
}  // namespace

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  f << "arm,gamma,seed,status," << metrics::MetricsReport::csv_header()
    << ",final_loss_gap,cell_mean_segment_type_at_av,cell_sd_segment_type_at_av\n";
  for (const auto& r : rows) {
    // mean/sd over the ok-status rows of this row's cell
    std::vector<double> cell;
    for (const auto& o : rows) {
      if (o.arm == r.arm && o.gamma == r.gamma && o.status == "ok") {
        cell.push_back(o.test.segment_type_at_av);
      }
    }
    const CellStats cs = stats_of(cell);
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    f << r.arm << ',' << csv_num(r.gamma) << ',' << r.seed << ',' << status << ','
      << r.test.csv_row() << ',' << csv_num(r.final_loss_gap) << ',' << csv_num(cs.mean) << ','
      << csv_num(cs.sd) << "\n";
  }
}

void write_ablation_summary_csv(const std::filesystem::path& path,
                                const std::vector<AblationRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  f << "arm,gamma,seeds_ok,mean_segment_type_at_av,sd_segment_type_at_av,mean_segment_v,"
       "sd_segment_v,mean_event_type_at_av,sd_event_type_at_av,mean_final_loss_gap,"
       "sd_final_loss_gap\n";
  std::vector<std::pair<std::string, double>> cells;
  for (const auto& r : rows) {
    if (std::find(cells.begin(), cells.end(), std::make_pair(r.arm, r.gamma)) == cells.end()) {
      cells.emplace_back(r.arm, r.gamma);
    }
  }
  for (const auto& [arm, gamma] : cells) {
    std::vector<double> type_av, seg_v, ev_type, gap;
    for (const auto& r : rows) {
      if (r.arm != arm || r.gamma != gamma || r.status != "ok") continue;
      type_av.push_back(r.test.segment_type_at_av);
      seg_v.push_back(r.test.segment_v);
      ev_type.push_back(r.test.event_type_at_av);
      gap.push_back(r.final_loss_gap);
    }
    const CellStats a = stats_of(type_av), b = stats_of(seg_v), c = stats_of(ev_type),
                    d = stats_of(gap);
    f << arm << ',' << csv_num(gamma) << ',' << type_av.size() << ',' << csv_num(a.mean) << ','
      << csv_num(a.sd) << ',' << csv_num(b.mean) << ',' << csv_num(b.sd) << ',' << csv_num(c.mean)
      << ',' << csv_num(c.sd) << ',' << csv_num(d.mean) << ',' << csv_num(d.sd) << "\n";
  }
}

}  // namespace avvp
