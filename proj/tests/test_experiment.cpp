#include <sstream>

#include <gtest/gtest.h>

#include "gearcnn/errors.hpp"
#include "gearcnn/experiment.hpp"
#include "gearcnn/synthgear.hpp"
#include "temp_dir.hpp"

using namespace gearcnn;

namespace {

// 9 conditions x 20 records, cheap enough for one-epoch sweeps.
const LabeledDataset& small_corpus() {
  static const LabeledDataset corpus = [] {
    const auto records = generate_dataset(GearboxConfig{}, canonical_conditions(), 20, 31);
    return encode_corpus(records, PipelineConfig{});
  }();
  return corpus;
}

ExperimentConfig quick_config() {
  ExperimentConfig c;
  c.fractions = {0.05};
  c.repeats = 5;
  c.epochs = 1;
  return c;
}

const Checkpoint& source_checkpoint() {
  static const Checkpoint ckpt = make_checkpoint(build_network(mini_spec(6), 4), "untrained");
  return ckpt;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string csv_of(const SweepResult& r) {
  std::ostringstream os;
  write_results_csv(os, r);
  return os.str();
}

}  // namespace

TEST(Config, DefaultsAndJsonRoundTrip) {
  const ExperimentConfig d;
  EXPECT_EQ(d.fractions, (std::vector<double>{0.8, 0.6, 0.4, 0.2, 0.1, 0.05, 0.02}));
  EXPECT_EQ(d.repeats, 5u);
  EXPECT_EQ(d.epochs, 15u);
  EXPECT_EQ(d.batch_size, 5u);
  EXPECT_EQ(d.lr_transferred, 1e-4);
  EXPECT_EQ(d.lr_new, 1e-2);
  EXPECT_EQ(d.momentum_transfer, 0.9);
  EXPECT_EQ(d.momentum_local, 0.5);

  ExperimentConfig c;
  c.fractions = {0.3};
  c.decimate = 4;
  c.encoder = Encoder::PlotRaster;
  c.source.per_class = 7;
  const nlohmann::json j = c;
  const ExperimentConfig back = j.get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.encoder, Encoder::PlotRaster);
  EXPECT_EQ(back.source.per_class, 7u);
}

TEST(Config, RejectsUnknownKeysAndBadFiles) {
  EXPECT_THROW(nlohmann::json({{"epoch", 3}}).get<ExperimentConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"source", {{"lr_decay", 1}}}}).get<ExperimentConfig>(), ConfigError);
  const ExperimentConfig partial = nlohmann::json({{"repeats", 2}}).get<ExperimentConfig>();
  EXPECT_EQ(partial.repeats, 2u);
  EXPECT_EQ(partial.epochs, 15u);

  TempDir dir("config");
  EXPECT_THROW(load_experiment_config(dir / "absent.json"), ConfigError);
  write_file(dir / "broken.json", "{\"repeats\": ");
  EXPECT_THROW(load_experiment_config(dir / "broken.json"), ConfigError);
}

TEST(Methods, ParseList) {
  EXPECT_EQ(parse_methods("transfer,local"), (std::vector<Method>{Method::Transfer, Method::Local}));
  EXPECT_EQ(parse_methods("local"), (std::vector<Method>{Method::Local}));
  EXPECT_THROW(parse_methods("transfer,scratch"), ConfigError);
}

TEST(RunSeed, IndependentOfOtherFractions) {
  const auto s = run_seed(2024, Method::Local, 0.05, 3);
  EXPECT_EQ(s, run_seed(2024, Method::Local, 0.05, 3));
  EXPECT_NE(s, run_seed(2024, Method::Transfer, 0.05, 3));
  EXPECT_NE(s, run_seed(2024, Method::Local, 0.02, 3));
  EXPECT_NE(s, run_seed(2024, Method::Local, 0.05, 4));

  // A run does not depend on which other fractions share the sweep.
  ExperimentConfig a = quick_config();
  a.repeats = 1;
  ExperimentConfig b = a;
  b.fractions = {0.4, 0.05};
  const auto ra = run_sweep(a, {Method::Local}, small_corpus(), nullptr);
  const auto rb = run_sweep(b, {Method::Local}, small_corpus(), nullptr);
  EXPECT_EQ(ra.mean_of(Method::Local, 0.05), rb.mean_of(Method::Local, 0.05));
}

TEST(Sweep, RowCountsAndExactMeans) {
  const SweepResult r = run_sweep(quick_config(), {Method::Transfer, Method::Local}, small_corpus(),
                                  &source_checkpoint());
  ASSERT_EQ(r.runs.size(), 10u);
  ASSERT_EQ(r.means.size(), 2u);
  for (const auto& m : r.means) {
    double total = 0.0;
    for (const RunResult& run : r.runs) {
      if (run.method == m.method) total += run.accuracy;
    }
    EXPECT_EQ(m.accuracy, total / 5.0);
  }
  const auto rows = lines(csv_of(r));
  ASSERT_EQ(rows.size(), 13u);
  EXPECT_EQ(rows[0], "method,fraction,repeat,accuracy");
  EXPECT_EQ(rows[1].rfind("transfer,0.05,0,", 0), 0u) << rows[1];
  EXPECT_EQ(rows[11].rfind("transfer,0.05,mean,", 0), 0u) << rows[11];
  EXPECT_EQ(rows[12].rfind("local,0.05,mean,", 0), 0u) << rows[12];
}

TEST(Sweep, SameSeedSameFiles) {
  TempDir dir("sweep");
  ExperimentConfig c = quick_config();
  c.repeats = 2;
  const auto methods = parse_methods("transfer,local");
  run_sweep(c, methods, small_corpus(), &source_checkpoint(), {dir / "a", true});
  run_sweep(c, methods, small_corpus(), &source_checkpoint(), {dir / "b", true});
  EXPECT_EQ(read_file(dir / "a" / "results.csv"), read_file(dir / "b" / "results.csv"));
  for (const char* run : {"transfer_f0.05_r1", "local_f0.05_r0"}) {
    const std::string h = std::string("history/") + run + ".csv";
    const std::string k = std::string("checkpoints/") + run + ".ckpt";
    EXPECT_EQ(read_file(dir / "a" / h), read_file(dir / "b" / h)) << run;
    EXPECT_FALSE(read_file(dir / "a" / k).empty()) << run;
    EXPECT_EQ(read_file(dir / "a" / k), read_file(dir / "b" / k)) << run;
  }
}

TEST(Sweep, TransferWithoutCheckpointSaysPretrain) {
  try {
    run_sweep(quick_config(), {Method::Transfer}, small_corpus(), nullptr);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run pretrain first"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(run_sweep(quick_config(), {Method::Local}, small_corpus(), nullptr));
}

TEST(RunOnce, LocalUsesScratchVariantAndFrozenTransferKeepsLayers) {
  const ExperimentConfig c = quick_config();
  const RunOutput local = run_once(c, Method::Local, 0.2, 0, small_corpus(), nullptr);
  EXPECT_EQ(local.network.spec().name, "mini-local");
  EXPECT_EQ(local.result.history.size(), 8u);  // 9 x 4 samples in batches of 5

  ExperimentConfig f = c;
  f.freeze = true;
  const RunOutput t = run_once(f, Method::Transfer, 0.2, 0, small_corpus(), &source_checkpoint());
  EXPECT_EQ(t.network.spec().name, "mini");
  EXPECT_EQ(t.network.spec().num_classes, 9u);
  const auto tensors = t.network.parameter_tensors();
  const auto layout = parameter_layout(t.network.spec());
  std::size_t frozen = 0;
  for (std::size_t i = 0; i < tensors.size() && layout[i].layer < f.n_transfer_layers; ++i, ++frozen) {
    EXPECT_TRUE(bitwise_equal(*tensors[i], source_checkpoint().parameters[i].tensor)) << layout[i].name;
  }
  EXPECT_EQ(frozen, 14u);  // five convolutions and two dense layers
}

TEST(PretrainSource, IgnoresTargetDecimation) {
  ExperimentConfig c;
  c.source = {3, 4, 1, 4, 1e-2, 0.5};
  const PretrainResult a = pretrain_source(c);
  c.decimate = 4;
  const PretrainResult b = pretrain_source(c);
  EXPECT_EQ(a.network.spec().num_classes, 3u);
  const auto pa = a.network.parameter_tensors(), pb = b.network.parameter_tensors();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bitwise_equal(*pa[i], *pb[i]));
}
