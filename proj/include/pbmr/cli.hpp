#pragma once

// Command-line front end: convert, synth, train, eval, predict, plot.
// Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pbmr/checkpoint.hpp"
#include "pbmr/ingest.hpp"
#include "pbmr/report.hpp"
#include "pbmr/synth.hpp"
#include "pbmr/trainer.hpp"

namespace pbmr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct SynthOptions {
  SynthSpec spec;
  std::uint64_t seed = 0;
  std::string out;
};

struct ConvertOptions {
  std::string data;
  std::string out;
  int channels = 1;
};

struct TrainOptions {
  std::string data;
  std::string out;
  std::string arch = "tiny";
  std::string optimizer = "sgd";
  std::string loss = "mse";
  OptimizerConfig opt;
  std::size_t batch_size = 128;
  std::size_t epochs = 1000;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  int channels = 1;
  int head_hidden = 128;
  bool no_baselines = false;
  bool quiet = false;
};

struct EvalOptions {
  std::vector<std::string> checkpoints;
  std::string data;
  std::string out;
  std::size_t batch_size = 128;
};

struct PredictOptions {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::size_t batch_size = 128;
};

struct PlotOptions {
  std::vector<std::string> reports;
  std::vector<std::string> labels;
  std::string out;
};

namespace detail {

inline void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

inline std::size_t resolve_jobs(std::size_t requested, std::size_t folds) {
  if (requested > 0) return requested;
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  return std::min(folds, hw);
}

inline TrainConfig train_config(const TrainOptions& o) {
  TrainConfig cfg;
  cfg.batch_size = o.batch_size;
  cfg.epochs = o.epochs;
  cfg.loss = parse_loss(o.loss);
  cfg.folds = o.folds;
  cfg.seed = o.seed;
  cfg.optimizer = o.opt;
  cfg.optimizer.kind = parse_optimizer(o.optimizer);
  cfg.arch = ArchConfig::preset(parse_arch(o.arch), o.channels, o.head_hidden);
  cfg.jobs = resolve_jobs(o.jobs, o.folds);
  cfg.baselines = !o.no_baselines;
  return cfg;
}

} // namespace detail

inline int cmd_synth(const SynthOptions& o, std::ostream& out) {
  o.spec.validate();
  const auto syn = generate_synthetic(o.spec, o.seed);
  const fs::path dir = o.out;
  write_dataset_dir(syn.dataset, dir);
  std::size_t missing = 0;
  for (const auto& f : syn.dataset.frames) missing += f.missing_count();
  json config = {{"command", "synth"},
                 {"sensors", o.spec.sensors},
                 {"time_steps", o.spec.time_steps},
                 {"samples", o.spec.samples},
                 {"missing_rate", o.spec.missing_rate},
                 {"noise", o.spec.noise},
                 {"seed", o.seed}};
  detail::write_json(dir / "report.json", {{"config", config}, {"missing_cells", missing}});
  out << "wrote " << o.spec.samples << " samples (" << o.spec.sensors << " sensors x " << o.spec.time_steps
      << " steps, " << missing << " missing cells) to " << dir.string() << '\n';
  return 0;
}

inline int cmd_convert(const ConvertOptions& o, std::ostream& out) {
  if (o.channels < 1) throw ValidationError("convert: channels must be >= 1");
  const auto ds = load_dataset_dir(o.data);
  const fs::path dir = o.out;
  std::vector<BlobEntry> entries;
  std::vector<std::size_t> per_sensor(ds.manifest.rows(), 0);
  std::size_t filled = 0;
  for (const auto& frame : ds.frames) {
    for (std::size_t i = 0; i < frame.rows; ++i)
      for (std::size_t j = 0; j < frame.cols; ++j)
        if (frame.is_missing(i, j)) ++per_sensor[i];
    filled += frame.missing_count();
    const auto img = normalize(forward_fill(frame), ds.manifest, static_cast<std::size_t>(o.channels));
    entries.push_back({frame.sample_id, {img.channels, img.rows, img.cols}, {img.data.begin(), img.data.end()}});
  }
  json header = {{"format", "pbmr-tensors"}, {"manifest", to_json(ds.manifest)}, {"channels", o.channels}};
  write_blob_archive(dir / "tensors.json", dir / "tensors.bin", std::move(header), entries);

  json sensors = json::object();
  for (std::size_t i = 0; i < per_sensor.size(); ++i) sensors[ds.manifest.sensors[i].name] = per_sensor[i];
  json config = {{"command", "convert"}, {"data", o.data}, {"channels", o.channels}};
  detail::write_json(dir / "report.json", {{"config", config},
                                           {"samples", ds.frames.size()},
                                           {"filled_cells", filled},
                                           {"filled_per_sensor", sensors}});
  out << "converted " << ds.frames.size() << " samples, filled " << filled << " cells\n";
  for (std::size_t i = 0; i < per_sensor.size(); ++i)
    out << "  " << ds.manifest.sensors[i].name << ": " << per_sensor[i] << '\n';
  return 0;
}

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
  const TrainConfig cfg = detail::train_config(o);
  const auto ds = load_dataset_dir(o.data);
  const fs::path dir = o.out;
  EpochCallback progress;
  if (!o.quiet) {
    progress = [&out](const EpochRecord& r) {
      char line[160];
      std::snprintf(line, sizeof(line), "fold %zu epoch %zu train_loss %.6g val_mae %.6g val_rmse %.6g val_r2 %.6g\n",
                    r.fold, r.epoch, r.train_loss, r.val_mae, r.val_rmse, r.val_r2);
      out << line << std::flush;
    };
  }
  const auto result = train(ds, cfg, progress);

  render_curves(result.report, dir);
  for (std::size_t f = 0; f < result.nets.size(); ++f)
    save_checkpoint(result.nets[f], dir / ("fold_" + std::to_string(f)));

  json config = to_json(cfg);
  config["command"] = "train";
  config["data"] = o.data;
  json report = to_json(result.report);
  report["config"] = config;
  report["parameter_count"] = result.nets.front().parameter_count();
  detail::write_json(dir / "report.json", report);

  const auto& s = result.report.summary;
  out << "summary mae " << s.mae << " rmse " << s.rmse << " r2 " << s.r2 << '\n';
  if (result.report.baselines) {
    const auto& b = *result.report.baselines;
    out << "baselines linreg_mae " << b.linreg_mae << " mean_predictor_mae " << b.mean_predictor_mae << '\n';
  }
  return 0;
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  if (o.batch_size < 1) throw ValidationError("eval: batch size must be >= 1");
  const auto ds = load_dataset_dir(o.data);
  json rows = json::array();
  SummaryMetrics mean;
  for (const auto& path : o.checkpoints) {
    const auto net = load_checkpoint(path);
    const auto data = prepare(ds, static_cast<std::size_t>(net.config().channels_in), true);
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto m = evaluate_metrics(predict_prepared(net, data, idx, o.batch_size), data.targets);
    rows.push_back({{"checkpoint", path},
                    {"mae", m.mae},
                    {"rmse", m.rmse},
                    {"r2", pbmr::detail::finite_or_null(m.r2)}});
    mean.mae += m.mae;
    mean.rmse += m.rmse;
    mean.r2 += m.r2;
    out << path << ": mae " << m.mae << " rmse " << m.rmse << " r2 " << m.r2 << '\n';
  }
  const double k = static_cast<double>(o.checkpoints.size());
  json config = {{"command", "eval"}, {"data", o.data}, {"checkpoints", o.checkpoints}, {"batch_size", o.batch_size}};
  detail::write_json(fs::path(o.out) / "report.json",
                     {{"config", config},
                      {"samples", ds.frames.size()},
                      {"checkpoints", rows},
                      {"summary",
                       {{"mae", mean.mae / k}, {"rmse", mean.rmse / k}, {"r2", pbmr::detail::finite_or_null(mean.r2 / k)}}}});
  return 0;
}

inline int cmd_predict(const PredictOptions& o, std::ostream& out) {
  if (o.batch_size < 1) throw ValidationError("predict: batch size must be >= 1");
  const auto net = load_checkpoint(o.checkpoint);
  const auto ds = load_dataset_dir(o.data);
  const auto preds = predict(net, ds.frames, ds.manifest, o.batch_size);
  const fs::path path = o.out;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  {
    std::ofstream csv(path, std::ios::binary);
    if (!csv) throw RuntimeFailure("cannot write " + path.string());
    csv << "sample_id,prediction\n";
    for (const auto& [id, y] : preds) csv << id << ',' << pbmr::detail::format_exact(y) << '\n';
    if (!csv) throw RuntimeFailure("failed writing " + path.string());
  }
  json config = {{"command", "predict"},
                 {"checkpoint", o.checkpoint},
                 {"data", o.data},
                 {"out", o.out},
                 {"batch_size", o.batch_size},
                 {"arch", to_json(net.config())}};
  detail::write_json(path.string() + ".report.json", {{"config", config}, {"samples", preds.size()}});
  out << "wrote " << preds.size() << " predictions to " << path.string() << '\n';
  return 0;
}

inline int cmd_plot(const PlotOptions& o, std::ostream& out) {
  if (!o.labels.empty() && o.labels.size() != o.reports.size())
    throw ValidationError("plot: got " + std::to_string(o.labels.size()) + " labels for " +
                          std::to_string(o.reports.size()) + " reports");
  std::vector<std::pair<std::string, MetricsReport>> runs;
  for (std::size_t i = 0; i < o.reports.size(); ++i) {
    const std::string label = o.labels.empty() ? fs::path(o.reports[i]).parent_path().filename().string() : o.labels[i];
    runs.emplace_back(label.empty() ? "run " + std::to_string(i) : label, report_from_json(detail::read_json(o.reports[i])));
  }
  const fs::path dir = o.out;
  if (runs.size() == 1) {
    render_curves(runs.front().second, dir);
  } else {
    render_comparison(runs, dir);
  }
  std::vector<std::string> labels;
  for (const auto& r : runs) labels.push_back(r.first);
  json config = {{"command", "plot"}, {"reports", o.reports}, {"labels", labels}};
  detail::write_json(dir / "report.json", {{"config", config}});
  out << "wrote mae.svg, rmse.svg, r2.svg to " << dir.string() << '\n';
  return 0;
}

/// Parses argv and dispatches to one verb.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Pattern-based multivariable regression: sensors-to-image conversion, CNN training and evaluation",
               "pbmr"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.get_formatter()->column_width(44);
  app.set_help_flag("-h,--help", "Print this help message (all verbs and flags) and exit");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic pattern dataset");
  synth->add_option("--sensors", so.spec.sensors, "Sensor rows per sample");
  synth->add_option("--time-steps", so.spec.time_steps, "Time steps per sensor row");
  synth->add_option("--samples", so.spec.samples, "Number of samples");
  synth->add_option("--missing-rate", so.spec.missing_rate, "Probability that a reading is dropped");
  synth->add_option("--noise", so.spec.noise, "Noise level for readings and targets");
  synth->add_option("--seed", so.seed, "Random seed")->envname("PBMR_SEED");
  synth->add_option("--out", so.out, "Output dataset directory")->required();

  ConvertOptions co;
  auto* convert = app.add_subcommand("convert", "Fill and normalize a dataset, dump the image tensors");
  convert->add_option("--data", co.data, "Dataset directory (manifest.json, samples.csv)")->required();
  convert->add_option("--out", co.out, "Output directory")->required();
  convert->add_option("--channels", co.channels, "Image channels (grid replicated per channel)");

  TrainOptions to;
  auto* trainc = app.add_subcommand("train", "k-fold cross-validated training");
  trainc->add_option("--data", to.data, "Dataset directory with targets.csv")->required();
  trainc->add_option("--out", to.out, "Run directory")->required();
  trainc->add_option("--arch", to.arch, "Architecture preset")->check(CLI::IsMember({"tiny", "small", "resmini"}));
  trainc->add_option("--optimizer", to.optimizer, "Optimizer")->check(CLI::IsMember({"sgd", "adam", "lars"}));
  trainc->add_option("--lr", to.opt.lr, "Learning rate");
  trainc->add_option("--momentum", to.opt.momentum, "SGD momentum");
  trainc->add_option("--beta1", to.opt.beta1, "Adam first-moment decay");
  trainc->add_option("--beta2", to.opt.beta2, "Adam second-moment decay");
  trainc->add_option("--eps", to.opt.eps, "Adam epsilon");
  trainc->add_option("--trust-coefficient", to.opt.trust_coefficient, "LARS trust coefficient");
  trainc->add_option("--weight-decay", to.opt.weight_decay, "Weight decay");
  trainc->add_option("--batch-size", to.batch_size, "Mini-batch size");
  trainc->add_option("--epochs", to.epochs, "Epochs per fold");
  trainc->add_option("--folds", to.folds, "Cross-validation folds");
  trainc->add_option("--loss", to.loss, "Training loss")->check(CLI::IsMember({"mse", "l1"}));
  trainc->add_option("--seed", to.seed, "Random seed")->envname("PBMR_SEED");
  trainc->add_option("--jobs", to.jobs, "Folds trained in parallel (0: folds capped at hardware threads)");
  trainc->add_option("--channels", to.channels, "Image channels");
  trainc->add_option("--head-hidden", to.head_hidden, "Hidden width of the regression head");
  trainc->add_flag("--no-baselines", to.no_baselines, "Skip the least-squares and mean-predictor baselines");
  trainc->add_flag("--quiet", to.quiet, "Do not print per-epoch progress");

  EvalOptions eo;
  auto* evalc = app.add_subcommand("eval", "Score checkpoints on a labelled dataset");
  evalc->add_option("--checkpoint", eo.checkpoints, "Checkpoint prefix (repeatable), e.g. runs/a/fold_0")->required();
  evalc->add_option("--data", eo.data, "Dataset directory with targets.csv")->required();
  evalc->add_option("--out", eo.out, "Output directory for report.json")->required();
  evalc->add_option("--batch-size", eo.batch_size, "Inference batch size");

  PredictOptions po;
  auto* predictc = app.add_subcommand("predict", "Predict targets with one checkpoint");
  predictc->add_option("--checkpoint", po.checkpoint, "Checkpoint prefix, e.g. runs/a/fold_0")->required();
  predictc->add_option("--data", po.data, "Dataset directory")->required();
  predictc->add_option("--out", po.out, "Output CSV (sample_id,prediction); report at <out>.report.json")->required();
  predictc->add_option("--batch-size", po.batch_size, "Inference batch size");

  PlotOptions lo;
  auto* plot = app.add_subcommand("plot", "Render metric curves from one or more run reports");
  plot->add_option("--report", lo.reports, "report.json of a train run (repeatable)")->required();
  plot->add_option("--label", lo.labels, "Legend label per report (repeatable)");
  plot->add_option("--out", lo.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help("", CLI::AppFormatMode::All) : subs.front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(so, out);
    if (convert->parsed()) return cmd_convert(co, out);
    if (trainc->parsed()) return cmd_train(to, out);
    if (evalc->parsed()) return cmd_eval(eo, out);
    if (predictc->parsed()) return cmd_predict(po, out);
    if (plot->parsed()) return cmd_plot(lo, out);
  } catch (const pbmr::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

} // namespace pbmr::cli
