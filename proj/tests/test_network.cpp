#include <random>
#include <set>

#include <gtest/gtest.h>

#include "gearcnn/checkpoint.hpp"
#include "gearcnn/errors.hpp"
#include "gearcnn/gradcheck.hpp"
#include "gearcnn/network.hpp"
#include "gearcnn/optim.hpp"
#include "gearcnn/transfer.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace gearcnn;

namespace {

std::vector<std::string> roster(const NetworkSpec& spec) {
  std::vector<std::string> out;
  for (const auto& l : spec.layers()) out.push_back(layer_type(l));
  return out;
}

Tensor random_image(std::mt19937_64& rng, const Shape& shape = {32, 32, 3}) {
  return oracle::random_tensor(shape, rng, 0.0, 1.0);
}

bool same_parameters(const Network& a, const Network& b, std::size_t first, std::size_t last) {
  const auto pa = a.parameter_tensors(), pb = b.parameter_tensors();
  std::size_t t = 0;
  for (std::size_t i = 0; i < a.layer_count(); ++i) {
    const std::size_t n = a.parameter_count(i) ? 2 : 0;
    for (std::size_t k = 0; k < n; ++k, ++t) {
      if (i >= first && i < last && !bitwise_equal(*pa[t], *pb[t])) return false;
    }
  }
  return true;
}

}  // namespace

TEST(Spec, Paper24Roster) {
  const NetworkSpec spec = paper24_spec();
  EXPECT_EQ(spec.layer_count(), 24u);
  EXPECT_EQ(spec.stages.size(), 8u);
  const std::vector<std::string> expected = {
      "conv", "relu", "lrn",  "maxpool", "conv",    "relu",    "lrn",   "maxpool",
      "conv", "relu", "conv", "relu",    "conv",    "relu",    "maxpool", "dense",
      "relu", "dropout", "dense", "relu", "dropout", "dense", "softmax", "classification"};
  EXPECT_EQ(roster(spec), expected);
  const auto shapes = infer_shapes(spec);
  EXPECT_EQ(shapes[0], (Shape{55, 55, 96}));
  EXPECT_EQ(shapes[14], (Shape{6, 6, 256}));
  EXPECT_EQ(shapes[15], (Shape{4096}));
  EXPECT_EQ(shapes[23], (Shape{9}));
  const auto layout = parameter_layout(spec);
  EXPECT_EQ(layout[0].name, "conv1.weights");
  EXPECT_EQ(layout[0].shape, (Shape{11, 11, 3, 96}));
  EXPECT_EQ(shape_size(layout[0].shape) + shape_size(layout[1].shape), 34944u);
}

TEST(Spec, LocalCnnKeepsStagesOneTwoEight) {
  const NetworkSpec local = local_cnn_spec();
  ASSERT_EQ(local.stages.size(), 3u);
  const auto full = paper24_spec();
  for (std::size_t i = 0; i < full.stages[0].size(); ++i) {
    EXPECT_TRUE(same_layer_config(local.stages[0][i], full.stages[0][i]));
  }
  const auto& c2 = std::get<ConvConfig>(local.stages[1][0]);
  EXPECT_EQ(c2.filter_height, 5u);
  EXPECT_EQ(c2.num_filters, 256u);
  EXPECT_EQ(std::get<DenseConfig>(local.stages[2][0]).units, 9u);
  EXPECT_EQ(infer_shapes(local).back(), (Shape{9}));
  EXPECT_EQ(spec_by_name("mini-local").layer_count(), 11u);
  EXPECT_EQ(local_variant(local).name, "local-cnn");
  EXPECT_EQ(local_variant(local).layer_count(), local.layer_count());
}

TEST(Spec, JsonRoundTrip) {
  for (const char* name : {"paper-24", "local-cnn", "mini", "mini-local"}) {
    const NetworkSpec spec = spec_by_name(name);
    const nlohmann::json j = spec;
    const NetworkSpec back = j.get<NetworkSpec>();
    EXPECT_EQ(nlohmann::json(back), j) << name;
  }
  EXPECT_THROW(spec_by_name("vgg"), ConfigError);
}

TEST(Spec, NonComposingLayerIsNamed) {
  NetworkSpec spec = mini_spec();
  std::get<ConvConfig>(spec.stages[4][0]).filter_height = 40;
  try {
    infer_shapes(spec);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 13 (conv)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(build_network(spec, 1), ConfigError);
}

TEST(Build, DeterministicAndCounted) {
  const Network a = build_network(mini_spec(), 42), b = build_network(mini_spec(), 42);
  EXPECT_TRUE(same_parameters(a, b, 0, a.layer_count()));
  const Network c = build_network(mini_spec(), 43);
  EXPECT_FALSE(same_parameters(a, c, 0, a.layer_count()));
  EXPECT_EQ(a.parameter_count(0), 5u * 5 * 3 * 8 + 8);
  EXPECT_EQ(a.parameter_count(1), 0u);
  EXPECT_EQ(a.layer_name(0), "conv1");
  EXPECT_EQ(a.layer_name(17), "drop6");
  EXPECT_EQ(a.layer_name(23), "output");
  for (const Tensor* t : a.parameter_tensors()) EXPECT_TRUE(std::isfinite(t->sum()));
}

TEST(Forward, ProbabilitiesAndDeterminism) {
  Network n = build_network(mini_spec(), 5);
  std::mt19937_64 rng(1);
  const Tensor x = random_image(rng);
  n.set_mode(Mode::Eval);
  const Tensor p = n.forward(x);
  ASSERT_EQ(p.shape(), (Shape{9}));
  EXPECT_NEAR(p.sum(), 1.0, 1e-10);
  EXPECT_TRUE(bitwise_equal(p, n.forward(x)));
  EXPECT_TRUE(bitwise_equal(p, n.infer(x)));
  EXPECT_THROW(n.forward(Tensor({31, 32, 3})), ConfigError);
}

TEST(Forward, MatchesLayerComposition) {
  const Network n = build_network(mini_spec(), 6);
  std::mt19937_64 rng(2);
  Tensor x = random_image(rng);
  for (std::size_t i = 0; i < n.layer_count(); ++i) {
    const Layer& l = n.layer(i);
    if (auto* c = std::get_if<ConvSpec>(&l)) {
      x = oracle::conv(x, *c);
    } else if (std::holds_alternative<Relu>(l)) {
      for (double& v : x.data()) v = std::max(v, 0.0);
    } else if (auto* r = std::get_if<LRNSpec>(&l)) {
      x = oracle::lrn(x, *r);
    } else if (auto* m = std::get_if<MaxPoolSpec>(&l)) {
      x = maxpool_forward(x, *m);
    } else if (auto* d = std::get_if<DenseSpec>(&l)) {
      x = oracle::dense(x, *d);
    } else if (std::holds_alternative<Softmax>(l)) {
      double mx = x[0], s = 0.0;
      for (double v : x.data()) mx = std::max(mx, v);
      for (double& v : x.data()) s += (v = std::exp(v - mx));
      for (double& v : x.data()) v /= s;
    }
  }
  EXPECT_LE(max_abs_difference(n.infer(random_image(rng = std::mt19937_64(2))), x), 1e-12);
}

TEST(Forward, PredictMatchesLogitArgmax) {
  const Network n = build_network(mini_spec(), 7);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    const Tensor x = random_image(rng);
    const auto acts = n.activations(x);
    EXPECT_EQ(predict(n, x), argmax(acts[21]));
  }
}

TEST(Backward, WholeNetworkFiniteDifference) {
  Network n = build_network(mini_spec(), 8);
  const GradCheckReport r = check_network_gradients(n, 1e-5, 6, 9);
  EXPECT_EQ(r.checked, 6u * 16);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
  Network local = build_network(spec_by_name("mini-local"), 8);
  EXPECT_LT(check_network_gradients(local, 1e-5, 10, 10).max_relative_error, 1e-4);
}

TEST(Accuracy, ExtremesAndErrors) {
  const Network n = build_network(mini_spec(), 10);
  std::mt19937_64 rng(4);
  LabeledDataset right, wrong;
  for (int i = 0; i < 12; ++i) {
    const Tensor x = random_image(rng);
    const std::size_t p = predict(n, x);
    right.push_back({x, p, ""});
    wrong.push_back({x, (p + 1) % 9, ""});
  }
  EXPECT_EQ(evaluate_accuracy(n, right), 1.0);
  EXPECT_EQ(evaluate_accuracy(n, wrong), 0.0);
  EXPECT_THROW(evaluate_accuracy(n, {}), DataError);
}

TEST(Accuracy, UntrainedIsNearChance) {
  std::mt19937_64 rng(5);
  LabeledDataset balanced;
  for (std::size_t i = 0; i < 900; ++i) balanced.push_back({random_image(rng), i % 9, ""});
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    total += evaluate_accuracy(build_network(mini_spec(), 100 + seed), balanced);
  }
  const double mean = total / 10.0;
  EXPECT_GE(mean, 0.06);
  EXPECT_LE(mean, 0.17);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir("ckpt_rt");
  const Network n = build_network(mini_spec(), 11);
  save_checkpoint(n, dir / "a.ckpt", "unit test");
  const Checkpoint c = read_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(c.provenance, "unit test");
  EXPECT_EQ(c.spec.name, "mini");
  const Network back = load_checkpoint(dir / "a.ckpt");
  EXPECT_TRUE(same_parameters(n, back, 0, n.layer_count()));
  save_checkpoint(back, dir / "b.ckpt", "unit test");
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));
  write_checkpoint(c, dir / "c.ckpt");
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "c.ckpt"));
}

TEST(Checkpoint, SinglePrecisionStorage) {
  TempDir dir("ckpt_f32");
  const Network n = build_network(mini_spec(), 12);
  save_checkpoint(n, dir / "f.ckpt", "", DType::Float32);
  const Network back = load_checkpoint(dir / "f.ckpt");
  const auto a = n.parameter_tensors(), b = back.parameter_tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i]->size(); ++k) {
      EXPECT_EQ((*b[i])[k], static_cast<double>(static_cast<float>((*a[i])[k])));
    }
  }
}

TEST(Checkpoint, DistinctErrorKinds) {
  TempDir dir("ckpt_err");
  const Network n = build_network(spec_by_name("mini-local"), 13);
  save_checkpoint(n, dir / "good.ckpt");
  const std::string good = read_file(dir / "good.ckpt");
  auto kind_of = [&](const std::string& bytes) {
    write_file(dir / "bad.ckpt", bytes);
    try {
      read_checkpoint(dir / "bad.ckpt");
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "no error";
    return CheckpointError::Kind::Io;
  };
  using K = CheckpointError::Kind;

  std::string magic = good;
  magic[0] = 'X';
  EXPECT_EQ(kind_of(magic), K::NotACheckpoint);
  EXPECT_EQ(kind_of(""), K::NotACheckpoint);

  std::string version = good;
  version[4] = 2;
  EXPECT_EQ(kind_of(version), K::VersionMismatch);

  EXPECT_EQ(kind_of(good.substr(0, good.size() - 3)), K::Truncated);
  EXPECT_EQ(kind_of(good + "x"), K::Integrity);

  // A spec declaring 9 filters in conv1 against stored 8-filter tensors.
  Checkpoint c = read_checkpoint(dir / "good.ckpt");
  std::get<ConvConfig>(c.spec.stages[0][0]).num_filters = 9;
  write_checkpoint(c, dir / "mismatch.ckpt");
  try {
    read_checkpoint(dir / "mismatch.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), K::Integrity);
  }
  try {
    read_checkpoint(dir / "missing.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), K::Io);
  }
}

TEST(Transplant, CopiesFirstLayersAndReinitializesRest) {
  const Network source = build_network(mini_spec(), 14);
  const Checkpoint ckpt = make_checkpoint(source);
  const TransferPlan plan = TransferPlan::from_rates(21, 24, 1e-4, 1e-2);
  EXPECT_DOUBLE_EQ(plan.lr_multiplier_transferred, 0.01);
  const Network target = transplant(ckpt, mini_spec(), plan, 99);
  EXPECT_TRUE(same_parameters(source, target, 0, 21));
  const auto s = source.parameter_tensors(), t = target.parameter_tensors();
  EXPECT_FALSE(bitwise_equal(*s.end()[-2], *t.end()[-2]));
  EXPECT_DOUBLE_EQ(target.lr_multiplier(0), 0.01);
  EXPECT_DOUBLE_EQ(target.lr_multiplier(21), 1.0);
  // The fresh head matches a network initialized from the same seed.
  const Network fresh = build_network(mini_spec(), 99);
  EXPECT_TRUE(same_parameters(fresh, target, 21, 24));
}

TEST(Transplant, StructuralMismatchNamesLayer) {
  const Checkpoint ckpt = make_checkpoint(build_network(mini_spec(), 15));
  NetworkSpec other = mini_spec();
  std::get<ConvConfig>(other.stages[2][0]).num_filters = 24;
  try {
    transplant(ckpt, other, TransferPlan::from_rates(21, 24, 1e-4, 1e-2), 1);
    FAIL();
  } catch (const TransplantError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 9 (conv3)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(transplant(ckpt, mini_spec(), TransferPlan::from_rates(24, 24, 1e-4, 1e-2), 1),
               TransplantError);
  EXPECT_THROW(transplant(ckpt, mini_spec(), TransferPlan::from_rates(21, 11, 1e-4, 1e-2), 1),
               TransplantError);
  // Stages 1 and 2 are shared by the local variant.
  EXPECT_NO_THROW(transplant(ckpt, spec_by_name("mini-local"),
                             TransferPlan::from_rates(8, 11, 1e-4, 1e-2), 1));
}

TEST(Transplant, FrozenLayersSurviveTraining) {
  const Network source = build_network(mini_spec(), 16);
  Network target =
      transplant(make_checkpoint(source), mini_spec(), TransferPlan::from_rates(21, 24, 0, 1e-2, true), 17);
  const Network before = target;
  std::mt19937_64 rng(6);
  LabeledDataset data;
  for (std::size_t i = 0; i < 50; ++i) data.push_back({random_image(rng), i % 9, ""});
  Optimizer opt = make_optimizer(target, 1e-2, 0.9);
  train_epoch(target, data, 1, opt, {}, 3);
  EXPECT_EQ(opt.config.iteration, 50u);
  EXPECT_TRUE(same_parameters(source, target, 0, 21));
  EXPECT_FALSE(same_parameters(before, target, 21, 24));
}

TEST(FeatureMaps, FilesPerConvolution) {
  TempDir dir("features");
  std::mt19937_64 rng(7);
  const Tensor x = random_image(rng);
  const Network mini = build_network(mini_spec(), 18);
  const auto files = dump_feature_maps(mini, x, dir / "mini");
  ASSERT_EQ(files.size(), 5u);
  const NamedTensor first = load_tensor(files[0]);
  EXPECT_EQ(first.name, "relu1");
  EXPECT_EQ(first.tensor.shape(), (Shape{32, 32, 8}));
  EXPECT_TRUE(bitwise_equal(first.tensor, mini.activations(x)[1]));
  for (double v : first.tensor.data()) EXPECT_GE(v, 0.0);
  const auto again = dump_feature_maps(mini, x, dir / "again");
  for (std::size_t i = 0; i < files.size(); ++i) {
    EXPECT_EQ(read_file(files[i]), read_file(again[i]));
  }
  EXPECT_EQ(dump_feature_maps(build_network(spec_by_name("mini-local"), 1), x, dir / "l").size(), 2u);
}
