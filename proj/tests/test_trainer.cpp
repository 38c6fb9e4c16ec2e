#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "pbmr/checkpoint.hpp"
#include "pbmr/synth.hpp"
#include "pbmr/trainer.hpp"
#include "test_util.hpp"

using namespace pbmr;
using testutil::TempDir;

namespace {

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("id" + std::to_string(i));
  return out;
}

Dataset small_dataset(std::size_t samples, std::size_t steps, std::uint64_t seed, double noise = 0.05) {
  SynthSpec spec;
  spec.samples = samples;
  spec.time_steps = steps;
  spec.noise = noise;
  return generate_synthetic(spec, seed).dataset;
}

TrainConfig quick_config(std::size_t epochs, std::size_t folds) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.folds = folds;
  cfg.batch_size = 16;
  cfg.seed = 3;
  cfg.arch.head_hidden = 16;
  return cfg;
}

} // namespace

TEST(Folds, PartitionInvariants) {
  for (auto [n, k] : std::vector<std::pair<std::size_t, std::size_t>>{
           {10, 5}, {11, 5}, {128, 2}, {93, 7}, {4, 2}, {2, 2}, {1000, 9}}) {
    const auto plan = make_folds(ids(n), k, 17);
    ASSERT_EQ(plan.assignment.size(), n);
    const auto sizes = plan.sizes();
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1u);
    std::vector<int> seen(n, 0);
    for (std::size_t f = 0; f < k; ++f) {
      for (auto i : plan.validation(f)) ++seen[i];
      const auto train = plan.training(f);
      EXPECT_EQ(train.size() + plan.validation(f).size(), n);
      for (auto i : train) EXPECT_NE(plan.assignment[i], f);
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Folds, Examples) {
  auto sorted_sizes = [](const FoldPlan& p) {
    auto s = p.sizes();
    std::sort(s.rbegin(), s.rend());
    return s;
  };
  EXPECT_EQ(sorted_sizes(make_folds(ids(10), 5, 1)), (std::vector<std::size_t>{2, 2, 2, 2, 2}));
  EXPECT_EQ(sorted_sizes(make_folds(ids(11), 5, 1)), (std::vector<std::size_t>{3, 2, 2, 2, 2}));
  EXPECT_EQ(make_folds(ids(50), 5, 9).assignment, make_folds(ids(50), 5, 9).assignment);
  EXPECT_NE(make_folds(ids(50), 5, 9).assignment, make_folds(ids(50), 5, 10).assignment);
  EXPECT_EQ(make_folds(ids(6), 3, 1).fold_of("id4"), make_folds(ids(6), 3, 1).assignment[4]);
}

TEST(Folds, KOutOfRange) {
  EXPECT_THROW(make_folds(ids(10), 1, 0), ValidationError);
  EXPECT_THROW(make_folds(ids(3), 4, 0), ValidationError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_EQ(c.batch_size, 128u);
  EXPECT_EQ(c.epochs, 1000u);
  EXPECT_EQ(c.optimizer.lr, 1e-3);
  EXPECT_EQ(c.folds, 5u);
  EXPECT_EQ(c.loss, LossKind::mse);
  EXPECT_THROW(c.validate(4), ValidationError);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(100), ValidationError);
  c = {};
  c.epochs = 0;
  EXPECT_THROW(c.validate(100), ValidationError);
  c = {};
  c.folds = 1;
  EXPECT_THROW(c.validate(100), ValidationError);
  EXPECT_THROW(parse_loss("huber"), ValidationError);
}

TEST(Train, RecordsEveryEpochOfEveryFold) {
  const auto ds = small_dataset(24, 16, 1);
  const auto cfg = quick_config(3, 3);
  std::size_t callbacks = 0;
  const auto result = train(ds, cfg, [&](const EpochRecord&) { ++callbacks; });
  EXPECT_EQ(result.report.records.size(), 9u);
  EXPECT_EQ(callbacks, 9u);
  ASSERT_EQ(result.nets.size(), 3u);
  ASSERT_EQ(result.report.folds.size(), 3u);
  double mae_sum = 0;
  for (const auto& f : result.report.folds) {
    EXPECT_GE(f.best_epoch, 1u);
    EXPECT_LE(f.best_epoch, 3u);
    EXPECT_EQ(f.train_size + f.val_size, 24u);
    mae_sum += f.mae;
  }
  EXPECT_DOUBLE_EQ(result.report.summary.mae, mae_sum / 3);
  ASSERT_TRUE(result.report.baselines.has_value());
  for (const auto& r : result.report.records) {
    EXPECT_TRUE(std::isfinite(r.train_loss));
    EXPECT_GE(r.val_rmse, r.val_mae);
  }
}

TEST(Train, BestCheckpointReproducesBestValidationMae) {
  const auto ds = small_dataset(30, 16, 2);
  const auto cfg = quick_config(4, 3);
  const auto result = train(ds, cfg);
  const auto data = prepare(ds, 1, true);
  for (std::size_t f = 0; f < 3; ++f) {
    const auto val = result.plan.validation(f);
    std::vector<double> targets;
    for (auto i : val) targets.push_back(data.targets[i]);
    const auto preds = predict_prepared(result.nets[f], data, val);
    EXPECT_DOUBLE_EQ(mae(preds, targets), result.report.folds[f].mae);
  }
}

TEST(Train, TwoSamplesPerFoldAppearInValidationOnce) {
  const auto ds = small_dataset(4, 8, 3);
  auto cfg = quick_config(1, 2);
  cfg.baselines = false;
  const auto result = train(ds, cfg);
  std::multiset<std::size_t> seen;
  for (std::size_t f = 0; f < 2; ++f)
    for (auto i : result.plan.validation(f)) seen.insert(i);
  EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3}));
}

TEST(Train, DeterministicAcrossRunsAndJobCounts) {
  const auto ds = small_dataset(30, 16, 4);
  auto cfg = quick_config(3, 3);
  const auto a = train(ds, cfg);
  cfg.jobs = 3;
  const auto b = train(ds, cfg);
  EXPECT_EQ(to_json(a.report).dump(), to_json(b.report).dump());
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t i = 0; i < a.nets[f].parameters().size(); ++i) {
      const auto pa = a.nets[f].parameters()[i].value.data(), pb = b.nets[f].parameters()[i].value.data();
      EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin()));
    }
}

TEST(Train, MissingTargetIsRejected) {
  auto ds = small_dataset(10, 8, 5);
  ds.frames[3].target.reset();
  EXPECT_THROW(train(ds, quick_config(1, 2)), ValidationError);
}

TEST(Train, DivergenceIsReportedAsRuntimeFailure) {
  const auto ds = small_dataset(16, 8, 6);
  auto cfg = quick_config(50, 2);
  cfg.optimizer.lr = 1e6;
  cfg.optimizer.momentum = 0.99;
  EXPECT_THROW(train(ds, cfg), RuntimeFailure);
}

TEST(Train, ConstantTargetLossIsNonIncreasingAfterWarmup) {
  auto ds = small_dataset(32, 16, 7);
  for (auto& f : ds.frames) f.target = 5.0;
  auto cfg = quick_config(60, 2);
  cfg.baselines = false;
  // Heavy-ball momentum rings on this problem; plain descent is monotone.
  cfg.optimizer.momentum = 0;
  const auto result = train(ds, cfg);
  for (std::size_t fold = 0; fold < 2; ++fold) {
    std::vector<double> loss;
    for (const auto& r : result.report.records)
      if (r.fold == fold) loss.push_back(r.train_loss);
    for (std::size_t e = 11; e < loss.size(); ++e) EXPECT_LE(loss[e], loss[e - 1] * 1.05) << "epoch " << e + 1;
    EXPECT_LT(loss.back(), loss[9]);
  }
  // Constant validation targets leave R^2 undefined.
  EXPECT_TRUE(std::isnan(result.report.records.front().val_r2));
}

TEST(Predict, ConvergedNetFitsNoiseFreeTrainingSamples) {
  const auto ds = small_dataset(40, 24, 8, 0.0);
  const auto data = prepare(ds, 1, true);
  auto arch = ArchConfig::preset(ArchKind::tiny, 1, 32);
  auto net = RegressionNet<float>::build(arch, 5);
  double mean = 0;
  for (double t : data.targets) mean += t;
  net.parameter("head.fc2.bias")[0] = static_cast<float>(mean / static_cast<double>(data.size()));
  OptimizerConfig oc;
  oc.kind = OptimizerKind::adam;
  Optimizer<float> opt(oc);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<float> y(data.targets.begin(), data.targets.end());
  const auto target = Tensor<float>::from({all.size(), 1}, y);
  for (int step = 0; step < 1500; ++step) {
    backward(mse_loss(net.forward(detail::gather_batch(data, all)), target));
    opt.step(net.parameters());
    zero_grad(std::span(net.parameters()));
  }
  const auto preds = predict(net, ds.frames, ds.manifest);
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    ASSERT_EQ(preds[i].first, ds.frames[i].sample_id);
    const double t = *ds.frames[i].target;
    EXPECT_LE(std::abs(preds[i].second - t), 0.05 * std::abs(t)) << preds[i].first;
  }
}

TEST(Predict, DuplicatedFramesGiveIdenticalPredictions) {
  const auto ds = small_dataset(5, 16, 9);
  const auto net = RegressionNet<float>::build(ArchConfig::preset(ArchKind::tiny), 1);
  std::vector<SampleFrame> frames{ds.frames[2], ds.frames[0], ds.frames[2]};
  const auto preds = predict(net, frames, ds.manifest);
  ASSERT_EQ(preds.size(), 3u);
  EXPECT_EQ(preds[0].second, preds[2].second);
  EXPECT_EQ(preds[0].first, preds[2].first);
}

TEST(Predict, ChannelAndShapeMismatchesAreErrors) {
  const auto ds = small_dataset(3, 16, 10);
  const auto rgb = RegressionNet<float>::build(ArchConfig::preset(ArchKind::tiny, 3), 1);
  EXPECT_NO_THROW(predict(rgb, ds.frames, ds.manifest));
  SynthSpec spec;
  spec.sensors = 3;
  spec.samples = 2;
  spec.time_steps = 16;
  const auto narrow = generate_synthetic(spec, 1).dataset;
  const auto tiny = RegressionNet<float>::build(ArchConfig::preset(ArchKind::tiny), 1);
  EXPECT_THROW(predict(tiny, narrow.frames, narrow.manifest), ValidationError);
  EXPECT_THROW(predict(tiny, ds.frames, narrow.manifest), ValidationError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(11);
  for (auto kind : {ArchKind::tiny, ArchKind::small}) {
    const auto net = RegressionNet<float>::build(ArchConfig::preset(kind, 2, 32), 12);
    TempDir dir;
    save_checkpoint(net, dir / "fold_0");
    const auto back = load_checkpoint(dir / "fold_0");
    EXPECT_EQ(back.config(), net.config());
    ASSERT_EQ(back.parameters().size(), net.parameters().size());
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
      EXPECT_EQ(back.parameters()[i].name, net.parameters()[i].name);
      const auto a = net.parameters()[i].value.data(), b = back.parameters()[i].value.data();
      ASSERT_EQ(a.size(), b.size());
      EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
    }
    std::vector<float> x(3 * 2 * 7 * 20);
    for (auto& v : x) v = static_cast<float>(rng.uniform());
    const auto batch = Tensor<float>::from({3, 2, 7, 20}, x);
    const auto ya = net.forward(batch), yb = back.forward(batch);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ya[i], yb[i]);
  }
}

TEST(Checkpoint, TruncatedBlobNamesTheParameter) {
  const auto net = RegressionNet<float>::build(ArchConfig::preset(ArchKind::tiny), 1);
  TempDir dir;
  save_checkpoint(net, dir / "c");
  const auto bin = checkpoint_bin_path(dir / "c");
  std::filesystem::resize_file(bin, std::filesystem::file_size(bin) - 4 * 400);
  try {
    load_checkpoint(dir / "c");
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("head.fc1.weight"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, VersionAndLengthAreChecked) {
  const auto net = RegressionNet<float>::build(ArchConfig::preset(ArchKind::tiny), 1);
  TempDir dir;
  save_checkpoint(net, dir / "c");
  const auto json_path = checkpoint_json_path(dir / "c");
  auto header = nlohmann::json::parse(testutil::read_file(json_path));
  header["version"] = 2;
  testutil::write_file(json_path, header.dump());
  EXPECT_THROW(load_checkpoint(dir / "c"), ValidationError);

  save_checkpoint(net, dir / "d");
  std::ofstream(checkpoint_bin_path(dir / "d"), std::ios::binary | std::ios::app).write("\0\0\0\0", 4);
  EXPECT_THROW(load_checkpoint(dir / "d"), ValidationError);
  EXPECT_THROW(load_checkpoint(dir / "missing"), ValidationError);
}

TEST(Checkpoint, BytesAreLittleEndianFloat32) {
  auto net = RegressionNet<float>::build(ArchConfig::preset(ArchKind::tiny), 1);
  net.parameters()[0].value[0] = 1.0f;
  TempDir dir;
  save_checkpoint(net, dir / "c");
  const auto bytes = testutil::read_file(checkpoint_bin_path(dir / "c"));
  EXPECT_EQ(bytes.substr(0, 4), std::string("\x00\x00\x80\x3f", 4));
  EXPECT_EQ(bytes.size(), 4 * net.parameter_count());
}
