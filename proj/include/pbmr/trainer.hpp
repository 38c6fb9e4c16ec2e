#pragma once

// k-fold cross-validated training of RegressionNet<float>.
//
// Each fold owns its network, optimizer and RNG streams (all derived from
// the run seed and the fold index), so folds can run on separate threads
// without changing any result. Batch order for (fold, epoch) is drawn from a
// counter-derived stream.

#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pbmr/folds.hpp"
#include "pbmr/imageize.hpp"
#include "pbmr/ingest.hpp"
#include "pbmr/metrics.hpp"
#include "pbmr/model.hpp"
#include "pbmr/optim.hpp"
#include "pbmr/report.hpp"

namespace pbmr {

enum class LossKind { mse, l1 };

inline std::string to_string(LossKind kind) { return kind == LossKind::mse ? "mse" : "l1"; }

inline LossKind parse_loss(const std::string& name) {
  if (name == "mse") return LossKind::mse;
  if (name == "l1") return LossKind::l1;
  throw ValidationError("unknown loss '" + name + "' (expected mse or l1)");
}

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 1000;
  LossKind loss = LossKind::mse;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer; ///< optimizer.lr is the learning rate
  ArchConfig arch = ArchConfig::preset(ArchKind::tiny);
  std::size_t jobs = 1;      ///< folds trained concurrently
  bool baselines = true;     ///< also fit the least-squares and mean baselines

  void validate(std::size_t samples) const {
    if (batch_size < 1) throw ValidationError("train: batch size must be >= 1");
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (folds < 2) throw ValidationError("train: folds must be >= 2");
    if (folds > samples)
      throw ValidationError("train: " + std::to_string(folds) + " folds but only " + std::to_string(samples) + " samples");
    if (jobs < 1) throw ValidationError("train: jobs must be >= 1");
    optimizer.validate();
    arch.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.optimizer.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"loss", to_string(c.loss)},
          {"folds", c.folds},
          {"seed", c.seed},
          {"jobs", c.jobs},
          {"optimizer", to_json(c.optimizer)},
          {"arch", to_json(c.arch)},
          {"target_scaling", "none (raw units)"},
          {"model_selection", "best validation MAE per fold"}};
}

/// Filled, normalized samples laid out as float images ready for batching.
struct PreparedData {
  std::size_t channels = 1, rows = 0, cols = 0;
  std::vector<std::string> ids;
  std::vector<float> images;   ///< sample-major, channels x rows x cols each
  std::vector<double> targets; ///< NaN where absent
  std::size_t filled_cells = 0;

  std::size_t image_size() const { return channels * rows * cols; }
  std::size_t size() const { return ids.size(); }
};

inline PreparedData prepare(const Dataset& ds, std::size_t channels, bool require_targets) {
  PreparedData p;
  p.channels = channels;
  p.rows = ds.manifest.rows();
  p.cols = ds.manifest.time_steps;
  p.images.reserve(ds.frames.size() * p.image_size());
  for (const auto& frame : ds.frames) {
    if (require_targets && !frame.target)
      throw ValidationError("train: sample '" + frame.sample_id + "' has no target");
    p.filled_cells += frame.missing_count();
    const ImageTensor img = normalize(forward_fill(frame), ds.manifest, channels);
    for (double v : img.data) p.images.push_back(static_cast<float>(v));
    p.ids.push_back(frame.sample_id);
    p.targets.push_back(frame.target.value_or(std::numeric_limits<double>::quiet_NaN()));
  }
  return p;
}

namespace detail {

inline Tensor<float> gather_batch(const PreparedData& data, std::span<const std::size_t> indices) {
  const std::size_t sz = data.image_size();
  std::vector<float> buf(indices.size() * sz);
  for (std::size_t b = 0; b < indices.size(); ++b)
    std::copy_n(data.images.begin() + static_cast<std::ptrdiff_t>(indices[b] * sz), sz,
                buf.begin() + static_cast<std::ptrdiff_t>(b * sz));
  return Tensor<float>::from({indices.size(), data.channels, data.rows, data.cols}, std::move(buf));
}

} // namespace detail

/// Forward passes without graph recording, batch by batch.
inline std::vector<double> predict_prepared(const RegressionNet<float>& net, const PreparedData& data,
                                            std::span<const std::size_t> indices, std::size_t batch_size = 128) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const auto y = net.forward(detail::gather_batch(data, chunk));
    for (float v : y.data()) out.push_back(static_cast<double>(v));
  }
  return out;
}

struct TrainResult {
  std::vector<RegressionNet<float>> nets; ///< best-validation-MAE network per fold
  MetricsReport report;
  FoldPlan plan;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

struct FoldOutcome {
  RegressionNet<float> best;
  std::vector<EpochRecord> records;
  FoldSummary summary;
};

inline FoldOutcome train_fold(const PreparedData& data, const FoldPlan& plan, std::size_t fold, const TrainConfig& cfg,
                              const EpochCallback& on_epoch) {
  const auto train_idx = plan.training(fold);
  const auto val_idx = plan.validation(fold);
  if (train_idx.empty()) throw ValidationError("train: fold " + std::to_string(fold) + " has an empty training set");
  std::vector<double> val_targets;
  for (auto i : val_idx) val_targets.push_back(data.targets[i]);

  auto net = RegressionNet<float>::build(cfg.arch, derive_seed(cfg.seed, {fold, 1}));
  // Raw-unit targets can sit far from zero; starting the output at the
  // training mean keeps the first updates from saturating the ReLUs.
  double target_mean = 0;
  for (auto i : train_idx) target_mean += data.targets[i];
  target_mean /= static_cast<double>(train_idx.size());
  net.parameter("head.fc2.bias")[0] = static_cast<float>(target_mean);
  Optimizer<float> opt(cfg.optimizer);
  FoldOutcome outcome;
  outcome.summary.fold = fold;
  outcome.summary.train_size = train_idx.size();
  outcome.summary.val_size = val_idx.size();
  double best_mae = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order = train_idx;
  std::vector<float> batch_targets;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order = train_idx;
    Rng rng(derive_seed(cfg.seed, {fold, epoch, 2}));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> chunk(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      batch_targets.clear();
      for (auto i : chunk) batch_targets.push_back(static_cast<float>(data.targets[i]));
      const auto target = Tensor<float>::from({chunk.size(), 1}, batch_targets);
      const auto pred = net.forward(gather_batch(data, chunk));
      const auto loss = cfg.loss == LossKind::mse ? mse_loss(pred, target) : l1_loss(pred, target);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw RuntimeFailure("train: non-finite loss in fold " + std::to_string(fold) + " epoch " +
                             std::to_string(epoch) + " (try a smaller learning rate)");
      }
      backward(loss);
      opt.step(net.parameters());
      zero_grad(std::span(net.parameters()));
      loss_sum += value * static_cast<double>(chunk.size());
    }
    EpochRecord rec;
    rec.fold = fold;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const auto preds = predict_prepared(net, data, val_idx, cfg.batch_size);
    const auto m = evaluate_metrics(preds, val_targets);
    rec.val_mae = m.mae;
    rec.val_rmse = m.rmse;
    rec.val_r2 = m.r2;
    if (m.mae < best_mae) {
      best_mae = m.mae;
      outcome.best = net.clone();
      outcome.summary.best_epoch = epoch;
      outcome.summary.mae = m.mae;
      outcome.summary.rmse = m.rmse;
      outcome.summary.r2 = m.r2;
    }
    outcome.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (outcome.summary.best_epoch == 0) {
    throw RuntimeFailure("train: fold " + std::to_string(fold) + " never produced a finite validation MAE");
  }
  for (auto& p : outcome.best.parameters()) p.value.impl()->grad.clear();
  return outcome;
}

inline Eigen::MatrixXd feature_rows(const PreparedData& data, std::span<const std::size_t> indices) {
  const std::size_t plane = data.rows * data.cols;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(plane));
  for (std::size_t r = 0; r < indices.size(); ++r)
    for (std::size_t c = 0; c < plane; ++c)
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = data.images[indices[r] * data.image_size() + c];
  return x;
}

} // namespace detail

/// Least-squares on the flattened normalized grid and the training-mean
/// predictor, both evaluated on the same folds as the network. Metrics are
/// averaged over folds.
inline Baselines compute_baselines(const PreparedData& data, const FoldPlan& plan) {
  Baselines b;
  for (std::size_t f = 0; f < plan.folds; ++f) {
    const auto train_idx = plan.training(f);
    const auto val_idx = plan.validation(f);
    std::vector<double> y_train, y_val;
    for (auto i : train_idx) y_train.push_back(data.targets[i]);
    for (auto i : val_idx) y_val.push_back(data.targets[i]);

    const auto model = LeastSquares::fit(detail::feature_rows(data, train_idx), y_train);
    const Eigen::VectorXd pred = model.predict(detail::feature_rows(data, val_idx));
    const std::vector<double> p(pred.data(), pred.data() + pred.size());
    const auto m = evaluate_metrics(p, y_val);
    b.linreg_mae += m.mae;
    b.linreg_rmse += m.rmse;
    b.linreg_r2 += m.r2;

    double mean = 0;
    for (double t : y_train) mean += t;
    mean /= static_cast<double>(y_train.size());
    const std::vector<double> constant(y_val.size(), mean);
    b.mean_predictor_mae += mae(constant, y_val);
  }
  const double k = static_cast<double>(plan.folds);
  b.linreg_mae /= k;
  b.linreg_rmse /= k;
  b.linreg_r2 /= k;
  b.mean_predictor_mae /= k;
  return b;
}

inline TrainResult train(const Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate(ds.frames.size());
  const PreparedData data = prepare(ds, static_cast<std::size_t>(cfg.arch.channels_in), true);

  TrainResult result;
  result.plan = make_folds(data.ids, cfg.folds, cfg.seed);
  std::vector<std::optional<detail::FoldOutcome>> outcomes(cfg.folds);
  std::vector<std::exception_ptr> errors(cfg.folds);
  std::mutex callback_mutex;
  const EpochCallback guarded = on_epoch ? EpochCallback([&](const EpochRecord& r) {
    std::lock_guard lock(callback_mutex);
    on_epoch(r);
  })
                                         : EpochCallback{};

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t f = next++; f < cfg.folds; f = next++) {
      try {
        outcomes[f] = detail::train_fold(data, result.plan, f, cfg, guarded);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::min(cfg.jobs, cfg.folds);
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  auto& report = result.report;
  for (auto& o : outcomes) {
    report.records.insert(report.records.end(), o->records.begin(), o->records.end());
    report.folds.push_back(o->summary);
    report.summary.mae += o->summary.mae;
    report.summary.rmse += o->summary.rmse;
    report.summary.r2 += o->summary.r2;
    result.nets.push_back(std::move(o->best));
  }
  const double k = static_cast<double>(cfg.folds);
  report.summary.mae /= k;
  report.summary.rmse /= k;
  report.summary.r2 /= k;
  if (cfg.baselines) report.baselines = compute_baselines(data, result.plan);
  return result;
}

/// forward_fill -> normalize -> forward; predictions in raw target units.
inline std::vector<std::pair<std::string, double>> predict(const RegressionNet<float>& net,
                                                           const std::vector<SampleFrame>& frames,
                                                           const DatasetManifest& manifest,
                                                           std::size_t batch_size = 128) {
  Dataset ds{manifest, frames};
  const PreparedData data = prepare(ds, static_cast<std::size_t>(net.config().channels_in), false);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto values = predict_prepared(net, data, idx, batch_size);
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < values.size(); ++i) out.emplace_back(data.ids[i], values[i]);
  return out;
}

} // namespace pbmr
