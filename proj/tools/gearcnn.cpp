// Command-line front end: dataset synthesis, pretraining, transfer and the
// fraction sweep.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gearcnn/checkpoint.hpp"
#include "gearcnn/errors.hpp"
#include "gearcnn/experiment.hpp"
#include "gearcnn/gradcheck.hpp"
#include "gearcnn/network.hpp"
#include "gearcnn/seed.hpp"
#include "gearcnn/signal.hpp"
#include "gearcnn/synthgear.hpp"

namespace fs = std::filesystem;
using namespace gearcnn;

namespace {

struct PipelineArgs {
  std::size_t decimate = 1;
  std::string encoder = "reshape";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--decimate", decimate, "Angle-domain decimation factor")->capture_default_str();
    cmd->add_option("--encoder", encoder, "reshape or plot_raster")->capture_default_str();
  }
  PipelineConfig for_spec(const NetworkSpec& spec) const {
    ExperimentConfig c;
    c.decimate = decimate;
    c.encoder = encoder_from_name(encoder);
    return pipeline_for(c, spec);
  }
};

void write_history(const std::string& path, const TrainHistory& history) {
  if (path.empty()) return;
  std::ofstream out(path);
  write_history_csv(out, history);
  if (!out) throw Error("failed writing " + path);
}

std::size_t classes_in(const fs::path& data_dir) {
  int top = -1;
  for (const ManifestEntry& e : read_manifest(data_dir / "manifest.json")) top = std::max(top, e.condition);
  if (top < 0) throw DataError(data_dir.string() + " has an empty manifest");
  return static_cast<std::size_t>(top) + 1;
}

// --- synth-data --------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 2024;
  std::size_t per_condition = 104;
  GearboxConfig gearbox;
  std::string encoder = "reshape";
};

void synth_data(const SynthArgs& a) {
  auto corpus = generate_dataset(a.gearbox, canonical_conditions(), a.per_condition, a.seed);
  write_dataset(a.out, corpus, encoder_from_name(a.encoder));
  std::printf("wrote %zu records to %s\n", corpus.size(), a.out.c_str());
}

// --- pretrain ----------------------------------------------------------------

struct PretrainArgs {
  std::string arch = "mini";
  std::string data;
  bool source = false;
  std::size_t source_classes = 6;
  std::size_t source_per_class = 400;
  std::size_t epochs = 15;
  std::size_t batch = 20;
  double lr = 1e-2;
  double momentum = 0.5;
  double gamma = 5e-4;
  std::uint64_t seed = 2024;
  std::string out;
  std::string history;
  PipelineArgs pipeline;
};

void run_pretrain(const PretrainArgs& a) {
  PretrainResult r = [&] {
    if (a.source) {
      ExperimentConfig c;
      c.arch_name = a.arch;
      c.seed = a.seed;
      c.gamma = a.gamma;
      c.decimate = a.pipeline.decimate;
      c.encoder = encoder_from_name(a.pipeline.encoder);
      c.source = {a.source_classes, a.source_per_class, a.epochs, a.batch, a.lr, a.momentum};
      return pretrain_source(c);
    }
    const NetworkSpec spec = spec_by_name(a.arch, classes_in(a.data));
    const LabeledDataset data = load_image_dataset(a.data, a.pipeline.for_spec(spec));
    return pretrain(spec, data, a.epochs, a.batch, a.lr, a.momentum, a.gamma, a.seed);
  }();
  const std::string task = a.source ? "source task" : a.data;
  save_checkpoint(r.network, a.out,
                  "pretrain " + task + " seed " + std::to_string(a.seed) + " epochs " +
                      std::to_string(a.epochs));
  write_history(a.history, r.history);
  std::printf("train accuracy %.4f, checkpoint %s\n", r.train_accuracy, a.out.c_str());
}

// --- train / transfer-train ----------------------------------------------------

struct TrainArgs {
  std::string arch;
  std::string data;
  std::string from;
  double fraction = 0.8;
  std::size_t repeat = 0;
  std::size_t epochs = 15;
  std::size_t batch = 5;
  double lr = 1e-2;
  double lr_transferred = 1e-4;
  double momentum = 0.5;
  std::size_t n_transfer = 21;
  bool freeze = false;
  double gamma = 5e-4;
  std::uint64_t seed = 2024;
  std::string out;
  std::string history;
  PipelineArgs pipeline;
};

void run_training(const TrainArgs& a, Method method) {
  ExperimentConfig c;
  c.arch_name = a.arch;
  c.epochs = a.epochs;
  c.batch_size = a.batch;
  c.lr_new = a.lr;
  c.lr_transferred = a.lr_transferred;
  c.momentum_local = a.momentum;
  c.momentum_transfer = a.momentum;
  c.n_transfer_layers = a.n_transfer;
  c.freeze = a.freeze;
  c.gamma = a.gamma;
  c.seed = a.seed;
  c.decimate = a.pipeline.decimate;
  c.encoder = encoder_from_name(a.pipeline.encoder);
  c.num_classes = classes_in(a.data);
  const NetworkSpec spec = spec_by_name(c.arch_name, c.num_classes);
  const LabeledDataset corpus = load_image_dataset(a.data, pipeline_for(c, spec));

  std::optional<Checkpoint> source;
  if (method == Method::Transfer) source = read_checkpoint(a.from);
  RunOutput r = run_once(c, method, a.fraction, a.repeat, corpus, source ? &*source : nullptr);
  if (!a.out.empty()) {
    save_checkpoint(r.network, a.out,
                    method_name(method) + " " + run_label(method, a.fraction, a.repeat) +
                        " seed " + std::to_string(a.seed));
  }
  write_history(a.history, r.result.history);
  std::printf("%s fraction %g: validation accuracy %.4f\n", r.network.spec().name.c_str(),
              a.fraction, r.result.accuracy);
}

void add_training_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--data", a.data, "Dataset directory from synth-data")->required();
  cmd->add_option("--fraction", a.fraction, "Training fraction per condition")->capture_default_str();
  cmd->add_option("--repeat", a.repeat, "Repeat index (selects the split)")->capture_default_str();
  cmd->add_option("--epochs", a.epochs)->capture_default_str();
  cmd->add_option("--batch", a.batch)->capture_default_str();
  cmd->add_option("--gamma", a.gamma, "Weight-decay coefficient")->capture_default_str();
  cmd->add_option("--seed", a.seed)->capture_default_str();
  cmd->add_option("--out", a.out, "Write the trained checkpoint here");
  cmd->add_option("--history", a.history, "Write the per-batch history CSV here");
  a.pipeline.add_to(cmd);
}

// --- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  PipelineArgs pipeline;
};

void run_eval(const EvalArgs& a) {
  const Network net = load_checkpoint(a.ckpt);
  const LabeledDataset data = load_image_dataset(a.data, a.pipeline.for_spec(net.spec()));
  std::printf("accuracy %.4f over %zu samples\n", evaluate_accuracy(net, data), data.size());
}

// --- sweep ---------------------------------------------------------------------

struct SweepArgs {
  std::string config;
  std::string methods = "transfer,local";
  std::optional<std::size_t> decimate;
  std::string checkpoint;
  std::string data;
  std::string out;
  bool save_checkpoints = false;
};

void run_sweep_command(const SweepArgs& a) {
  ExperimentConfig c = a.config.empty() ? ExperimentConfig{} : load_experiment_config(a.config);
  if (a.decimate) c.decimate = *a.decimate;
  if (!a.checkpoint.empty()) c.checkpoint = a.checkpoint;
  if (!a.data.empty()) c.data = a.data;
  if (c.data.empty()) throw ConfigError("no dataset given (set \"data\" or pass --data; run synth-data first)");
  const auto methods = parse_methods(a.methods);

  std::optional<Checkpoint> source;
  for (Method m : methods) {
    if (m != Method::Transfer) continue;
    if (c.checkpoint.empty()) {
      throw ConfigError("method 'transfer' needs a pretrained checkpoint (run pretrain first)");
    }
    source = read_checkpoint(c.checkpoint);
  }
  const NetworkSpec spec = spec_by_name(c.arch_name, c.num_classes);
  const LabeledDataset corpus = load_image_dataset(c.data, pipeline_for(c, spec));
  const SweepResult r =
      run_sweep(c, methods, corpus, source ? &*source : nullptr, {fs::path(a.out), a.save_checkpoints});
  for (const auto& m : r.means) {
    std::printf("%-8s fraction %-5g mean accuracy %.4f\n", method_name(m.method).c_str(), m.fraction,
                m.accuracy);
  }
  std::printf("results in %s\n", (fs::path(a.out) / "results.csv").string().c_str());
}

// --- gradcheck -------------------------------------------------------------------

struct GradcheckArgs {
  std::string arch = "mini";
  double eps = 1e-5;
  double tol = 1e-4;
  std::size_t samples = 8;
  std::uint64_t seed = 1;
};

int run_gradcheck(const GradcheckArgs& a) {
  Network net = build_network(spec_by_name(a.arch), derive_seed({a.seed, 2}));
  const GradCheckReport r = check_network_gradients(net, a.eps, a.samples, a.seed);
  std::printf("%zu coordinates checked, max relative error %.3g (%s)\n", r.checked,
              r.max_relative_error, r.worst_parameter.c_str());
  if (r.max_relative_error >= a.tol) {
    std::fprintf(stderr, "error: relative error %.3g exceeds tolerance %.3g\n", r.max_relative_error,
                 a.tol);
    return 1;
  }
  return 0;
}

// --- dump-features ---------------------------------------------------------------

struct DumpArgs {
  std::string ckpt;
  std::string input;
  std::string out;
  PipelineArgs pipeline;
};

void run_dump(const DumpArgs& a) {
  const Network net = load_checkpoint(a.ckpt);
  Tensor image;
  if (fs::path(a.input).extension() == ".csv") {
    const TimeRecord rec = read_time_record(a.input);
    image = record_to_image(rec, 0, a.pipeline.for_spec(net.spec())).pixels;
  } else {
    image = load_tensor(a.input).tensor;
  }
  if (image.shape() != net.spec().input_shape) {
    throw DataError("input " + shape_to_string(image.shape()) + " does not match network input " +
                    shape_to_string(net.spec().input_shape));
  }
  for (const fs::path& p : dump_feature_maps(net, image, a.out)) {
    std::printf("%s %s\n", p.string().c_str(), shape_to_string(load_tensor(p).tensor.shape()).c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gear fault diagnosis with transferred convolutional features"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate the synthetic gearbox corpus");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
  synth_cmd->add_option("--per-condition", synth.per_condition)->capture_default_str();
  synth_cmd->add_option("--noise", synth.gearbox.noise_std, "Noise standard deviation")->capture_default_str();
  synth_cmd->add_option("--speed-hz", synth.gearbox.nominal_speed_hz)->capture_default_str();
  synth_cmd->add_option("--fluctuation-pct", synth.gearbox.speed_fluctuation_pct)->capture_default_str();
  synth_cmd->add_option("--encoder", synth.encoder, "Encoder recorded in the manifest")->capture_default_str();

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Train a network from scratch and save it");
  pre_cmd->add_option("--arch", pre.arch)->capture_default_str();
  auto* data_opt = pre_cmd->add_option("--data", pre.data, "Dataset directory from synth-data");
  auto* source_flag = pre_cmd->add_flag("--source", pre.source, "Use the synthetic source task");
  data_opt->excludes(source_flag);
  pre_cmd->add_option("--source-classes", pre.source_classes)->capture_default_str();
  pre_cmd->add_option("--source-per-class", pre.source_per_class)->capture_default_str();
  pre_cmd->add_option("--epochs", pre.epochs)->capture_default_str();
  pre_cmd->add_option("--batch", pre.batch)->capture_default_str();
  pre_cmd->add_option("--lr", pre.lr)->capture_default_str();
  pre_cmd->add_option("--momentum", pre.momentum)->capture_default_str();
  pre_cmd->add_option("--gamma", pre.gamma)->capture_default_str();
  pre_cmd->add_option("--seed", pre.seed)->capture_default_str();
  pre_cmd->add_option("--out", pre.out, "Checkpoint path")->required();
  pre_cmd->add_option("--history", pre.history, "Write the per-batch history CSV here");
  pre.pipeline.add_to(pre_cmd);

  TrainArgs train;
  train.arch = "local-cnn";
  auto* train_cmd = app.add_subcommand(
      "train", "Train the scratch variant (stages 1, 2 and the classifier) of --arch");
  train_cmd->add_option("--arch", train.arch)->capture_default_str();
  train_cmd->add_option("--lr", train.lr)->capture_default_str();
  train_cmd->add_option("--momentum", train.momentum)->capture_default_str();
  add_training_options(train_cmd, train);

  TrainArgs transfer;
  transfer.arch = "mini";
  transfer.momentum = 0.9;
  auto* transfer_cmd =
      app.add_subcommand("transfer-train", "Transplant a pretrained network and fine-tune it");
  transfer_cmd->add_option("--from", transfer.from, "Pretrained checkpoint")->required();
  transfer_cmd->add_option("--arch", transfer.arch)->capture_default_str();
  transfer_cmd->add_option("--n-transfer", transfer.n_transfer, "Layers copied from the checkpoint")
      ->capture_default_str();
  transfer_cmd->add_option("--lr-transferred", transfer.lr_transferred)->capture_default_str();
  transfer_cmd->add_option("--lr-new", transfer.lr)->capture_default_str();
  transfer_cmd->add_option("--momentum", transfer.momentum)->capture_default_str();
  transfer_cmd->add_flag("--freeze", transfer.freeze, "Keep transferred layers fixed");
  add_training_options(transfer_cmd, transfer);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", eval.ckpt)->required();
  eval_cmd->add_option("--data", eval.data)->required();
  eval.pipeline.add_to(eval_cmd);

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Transfer versus local over training fractions");
  sweep_cmd->add_option("--config", sweep.config, "ExperimentConfig JSON");
  sweep_cmd->add_option("--methods", sweep.methods)->capture_default_str();
  sweep_cmd->add_option("--decimate", sweep.decimate, "Override the config's decimation factor");
  sweep_cmd->add_option("--checkpoint", sweep.checkpoint, "Override the pretrained checkpoint");
  sweep_cmd->add_option("--data", sweep.data, "Override the dataset directory");
  sweep_cmd->add_option("--out", sweep.out, "Output directory")->required();
  sweep_cmd->add_flag("--save-checkpoints", sweep.save_checkpoints, "Keep every final network");

  GradcheckArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of a whole network");
  grad_cmd->add_option("--arch", grad.arch)->capture_default_str();
  grad_cmd->add_option("--eps", grad.eps)->capture_default_str();
  grad_cmd->add_option("--tol", grad.tol)->capture_default_str();
  grad_cmd->add_option("--samples", grad.samples, "Coordinates per parameter tensor")->capture_default_str();
  grad_cmd->add_option("--seed", grad.seed)->capture_default_str();

  DumpArgs dump;
  auto* dump_cmd = app.add_subcommand("dump-features", "Write per-stage convolution activations");
  dump_cmd->add_option("--ckpt", dump.ckpt)->required();
  dump_cmd->add_option("--input", dump.input, "Image tensor file or signal CSV")->required();
  dump_cmd->add_option("--out", dump.out)->required();
  dump.pipeline.add_to(dump_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth_cmd->parsed()) {
      synth_data(synth);
    } else if (pre_cmd->parsed()) {
      if (!pre.source && pre.data.empty()) throw ConfigError("pretrain needs --data DIR or --source");
      run_pretrain(pre);
    } else if (train_cmd->parsed()) {
      run_training(train, Method::Local);
    } else if (transfer_cmd->parsed()) {
      run_training(transfer, Method::Transfer);
    } else if (eval_cmd->parsed()) {
      run_eval(eval);
    } else if (sweep_cmd->parsed()) {
      run_sweep_command(sweep);
    } else if (grad_cmd->parsed()) {
      return run_gradcheck(grad);
    } else if (dump_cmd->parsed()) {
      run_dump(dump);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
