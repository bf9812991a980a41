#include "ddrnet/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include <gtest/gtest.h>

using namespace ddrnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ddrnet_train_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset tiny_dataset(const NetworkConfig& cfg, std::size_t count) {
  Dataset d;
  const GenConfig g = gen_config_for(cfg);
  for (std::size_t i = 0; i < count; ++i) {
    d.names.push_back("scene_" + std::to_string(i));
    d.samples.push_back(generate_scene(500 + i, g));
  }
  return d;
}

}  // namespace

TEST(Schedule, EmptyWeightDoublesEveryFiftyEpochs) {
  EXPECT_DOUBLE_EQ(empty_weight(0), 0.05);
  EXPECT_DOUBLE_EQ(empty_weight(49), 0.05);
  EXPECT_DOUBLE_EQ(empty_weight(50), 0.1);
  EXPECT_DOUBLE_EQ(empty_weight(100), 0.2);
  EXPECT_DOUBLE_EQ(empty_weight(200), 0.8);
  EXPECT_DOUBLE_EQ(empty_weight(250), 1.0);
  EXPECT_DOUBLE_EQ(empty_weight(100000), 1.0);
}

TEST(Schedule, LearningRateHoldsWhileLossMoves) {
  EXPECT_DOUBLE_EQ(lr_schedule({}), 0.01);
  EXPECT_DOUBLE_EQ(lr_schedule({1.0, 0.9, 0.8}), 0.01);
}

TEST(Schedule, FiveFlatDeltasDropOnce) {
  EXPECT_DOUBLE_EQ(lr_schedule(std::vector<double>(5, 0.5)), 0.01);  // four deltas only
  EXPECT_EQ(lr_drops(std::vector<double>(6, 0.5)), 1u);
  EXPECT_DOUBLE_EQ(lr_schedule(std::vector<double>(6, 0.5)), 0.001);
}

TEST(Schedule, WindowResetsAfterDrop) {
  // A drop after delta 5; the next needs five fresh deltas, not one.
  EXPECT_EQ(lr_drops(std::vector<double>(7, 0.5)), 1u);
  EXPECT_EQ(lr_drops(std::vector<double>(10, 0.5)), 1u);
  EXPECT_EQ(lr_drops(std::vector<double>(11, 0.5)), 2u);
  EXPECT_DOUBLE_EQ(lr_schedule(std::vector<double>(11, 0.5)), 0.0001);
}

TEST(Schedule, LargeDeltaBreaksTheRun) {
  std::vector<double> h{0.5, 0.5, 0.5, 0.5, 0.5, 0.4, 0.4, 0.4};
  EXPECT_EQ(lr_drops(h), 0u);
  // Changes just under and well over the threshold.
  EXPECT_EQ(lr_drops({1.0, 1.0 - 5e-5, 1.0 - 1e-4, 1.0 - 1.5e-4, 1.0 - 2e-4, 1.0 - 2.5e-4}), 1u);
  EXPECT_EQ(lr_drops({0.0, 2e-4, 4e-4, 6e-4, 8e-4, 1e-3}), 0u);
}

TEST(Checkpoint, RoundTripsRecords) {
  const fs::path dir = scratch_dir("ckpt_roundtrip");
  NamedTensors records;
  records.emplace_back("a", Tensor(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 0.1}));
  records.emplace_back("bytes", Tensor(Shape{3}, std::vector<double>{0, 7, 255}, DType::UInt8));
  save_checkpoint((dir / "x.ckpt").string(), records);
  const NamedTensors back = load_checkpoint((dir / "x.ckpt").string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].first, "a");
  EXPECT_EQ(back[0].second, records[0].second);
  EXPECT_EQ(back[1].first, "bytes");
  EXPECT_EQ(back[1].second.dtype(), DType::UInt8);
  EXPECT_FALSE(fs::exists(dir / "x.ckpt.tmp"));
}

TEST(Checkpoint, CorruptFilesAreFormatErrors) {
  const fs::path dir = scratch_dir("ckpt_corrupt");
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), FormatError);

  NamedTensors records;
  records.emplace_back("w", Tensor(Shape{4}, 1.5));
  save_checkpoint((dir / "good.ckpt").string(), records);
  const std::string bytes = slurp(dir / "good.ckpt");

  std::ofstream((dir / "short.ckpt"), std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  EXPECT_THROW(load_checkpoint((dir / "short.ckpt").string()), FormatError);

  std::string bad = bytes;
  bad[0] = 'X';
  std::ofstream((dir / "magic.ckpt"), std::ios::binary) << bad;
  EXPECT_THROW(load_checkpoint((dir / "magic.ckpt").string()), FormatError);

  bad = bytes;
  bad[4] = 9;
  std::ofstream((dir / "version.ckpt"), std::ios::binary) << bad;
  EXPECT_THROW(load_checkpoint((dir / "version.ckpt").string()), FormatError);
}

TEST(Trainer, OneEpochWritesCheckpointAndOneLogRow) {
  const NetworkConfig cfg = preset_config("desk");
  const Dataset data = tiny_dataset(cfg, 2);
  TrainOptions opt;
  opt.epochs = 1;
  opt.out_dir = scratch_dir("one_epoch").string();
  Trainer t(cfg, opt);
  t.fit(data);
  EXPECT_EQ(t.state().epoch, 1u);
  ASSERT_EQ(t.state().loss_history.size(), 1u);
  EXPECT_TRUE(std::isfinite(t.state().loss_history[0]));
  EXPECT_TRUE(fs::exists(fs::path(opt.out_dir) / "checkpoint.ckpt"));
  const std::string log = slurp(fs::path(opt.out_dir) / "log.tsv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);  // header + one row
  EXPECT_EQ(log.rfind("epoch\tloss\tlr\tw_empty\n", 0), 0u);
}

TEST(Trainer, RerunIsByteIdentical) {
  const NetworkConfig cfg = preset_config("desk");
  const Dataset data = tiny_dataset(cfg, 2);
  std::vector<fs::path> dirs;
  for (const char* tag : {"rerun_a", "rerun_b"}) {
    TrainOptions opt;
    opt.epochs = 2;
    opt.out_dir = scratch_dir(tag).string();
    Trainer(cfg, opt).fit(data);
    dirs.emplace_back(opt.out_dir);
  }
  for (const char* file : {"checkpoint.ckpt", "log.tsv", "log.json"}) {
    EXPECT_EQ(slurp(dirs[0] / file), slurp(dirs[1] / file)) << file;
  }
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const NetworkConfig cfg = preset_config("desk");
  const Dataset data = tiny_dataset(cfg, 3);  // odd count: a short final batch

  TrainOptions full;
  full.epochs = 3;
  full.out_dir = scratch_dir("resume_full").string();
  Trainer(cfg, full).fit(data);

  TrainOptions first = full;
  first.epochs = 1;
  first.out_dir = scratch_dir("resume_part").string();
  Trainer(cfg, first).fit(data);

  TrainOptions rest = full;
  rest.out_dir = first.out_dir;
  auto resumed = Trainer::resume((fs::path(first.out_dir) / "checkpoint.ckpt").string(), rest);
  EXPECT_EQ(resumed->state().epoch, 1u);
  resumed->fit(data);

  for (const char* file : {"checkpoint.ckpt", "log.tsv", "log.json"}) {
    EXPECT_EQ(slurp(fs::path(full.out_dir) / file), slurp(fs::path(rest.out_dir) / file)) << file;
  }
}

TEST(Trainer, ResumeRejectsForeignCheckpoint) {
  const fs::path dir = scratch_dir("foreign");
  NamedTensors records;
  records.emplace_back("w", Tensor(Shape{1}, 1.0));
  save_checkpoint((dir / "x.ckpt").string(), records);
  EXPECT_THROW(Trainer::resume((dir / "x.ckpt").string(), {}), FormatError);
  EXPECT_THROW(load_network((dir / "x.ckpt").string()), FormatError);
}

TEST(Trainer, DepthOnlyModalityTrains) {
  NetworkConfig cfg = preset_config("desk");
  cfg.modality = Modality::Depth;
  const Dataset data = tiny_dataset(cfg, 2);
  TrainOptions opt;
  opt.epochs = 3;
  Trainer t(cfg, opt);
  t.fit(data);
  ASSERT_EQ(t.state().loss_history.size(), 3u);
  EXPECT_LT(t.state().loss_history.back(), t.state().loss_history.front());
  for (const auto& p : t.network().params().parameters()) EXPECT_EQ(p.name.rfind("rgb.", 0), std::string::npos);
}

TEST(Trainer, NonFiniteWeightsAbortWithCheckpoint) {
  const NetworkConfig cfg = preset_config("desk");
  const Dataset data = tiny_dataset(cfg, 2);
  TrainOptions opt;
  opt.out_dir = scratch_dir("abort").string();
  Trainer t(cfg, opt);
  t.network().params().find("head_2.bias").var->value.fill(std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(t.fit(data), NumericalError);
  EXPECT_TRUE(fs::exists(fs::path(opt.out_dir) / "abort.ckpt"));
  EXPECT_FALSE(fs::exists(fs::path(opt.out_dir) / "checkpoint.ckpt"));
}

TEST(Trainer, CheckpointedNetworkPredictsLikeTheTrainer) {
  const NetworkConfig cfg = preset_config("desk");
  const Dataset data = tiny_dataset(cfg, 2);
  TrainOptions opt;
  opt.out_dir = scratch_dir("load_network").string();
  Trainer t(cfg, opt);
  t.fit(data);
  const auto net = load_network((fs::path(opt.out_dir) / "checkpoint.ckpt").string());
  EXPECT_EQ(predict_sample(*net, data.samples[0]), predict_sample(t.network(), data.samples[0]));
  const MetricsReport a = evaluate_dataset(*net, data);
  const MetricsReport b = evaluate_dataset(t.network(), data);
  EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(Dataset, LoadsManifestSplits) {
  const NetworkConfig cfg = preset_config("desk");
  const fs::path dir = scratch_dir("dataset");
  generate_dataset(dir.string(), 3, 40, gen_config_for(cfg), 1);
  const Dataset train = load_dataset(dir.string());
  const Dataset val = load_dataset(dir.string(), "val");
  const Dataset all = load_dataset(dir.string(), "");
  EXPECT_EQ(train.samples.size(), 2u);
  EXPECT_EQ(val.samples.size(), 1u);
  EXPECT_EQ(all.samples.size(), 3u);
  EXPECT_EQ(all.samples[2], val.samples[0]);
  EXPECT_EQ(train.samples[0], generate_scene(40, gen_config_for(cfg)));
}
