#include "gearcnn/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "gearcnn/errors.hpp"
#include "gearcnn/seed.hpp"
#include "gearcnn/synthgear.hpp"
#include "gearcnn/transfer.hpp"

namespace gearcnn {

namespace {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw Error("cannot create " + p.string() + ": " + ec.message());
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"arch_name", c.arch_name},
                     {"fractions", c.fractions},
                     {"repeats", c.repeats},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr_transferred", c.lr_transferred},
                     {"lr_new", c.lr_new},
                     {"momentum_transfer", c.momentum_transfer},
                     {"momentum_local", c.momentum_local},
                     {"seed", c.seed},
                     {"n_transfer_layers", c.n_transfer_layers},
                     {"freeze", c.freeze},
                     {"gamma", c.gamma},
                     {"decimate", c.decimate},
                     {"encoder", encoder_name(c.encoder)},
                     {"num_classes", c.num_classes},
                     {"checkpoint", c.checkpoint},
                     {"data", c.data},
                     {"source", {{"num_classes", c.source.num_classes},
                                 {"per_class", c.source.per_class},
                                 {"epochs", c.source.epochs},
                                 {"batch_size", c.source.batch_size},
                                 {"lr", c.source.lr},
                                 {"momentum", c.source.momentum}}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const std::set<std::string> known = {
      "arch_name", "fractions", "repeats",   "epochs",   "batch_size",
      "lr_transferred", "lr_new", "momentum_transfer", "momentum_local", "seed",
      "n_transfer_layers", "freeze", "gamma", "decimate", "encoder",
      "num_classes", "checkpoint", "data", "source"};
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown experiment config key '" + key + "'");
  }
  c.arch_name = j.value("arch_name", c.arch_name);
  c.fractions = j.value("fractions", c.fractions);
  c.repeats = j.value("repeats", c.repeats);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_transferred = j.value("lr_transferred", c.lr_transferred);
  c.lr_new = j.value("lr_new", c.lr_new);
  c.momentum_transfer = j.value("momentum_transfer", c.momentum_transfer);
  c.momentum_local = j.value("momentum_local", c.momentum_local);
  c.seed = j.value("seed", c.seed);
  c.n_transfer_layers = j.value("n_transfer_layers", c.n_transfer_layers);
  c.freeze = j.value("freeze", c.freeze);
  c.gamma = j.value("gamma", c.gamma);
  c.decimate = j.value("decimate", c.decimate);
  c.encoder = encoder_from_name(j.value("encoder", encoder_name(c.encoder)));
  c.num_classes = j.value("num_classes", c.num_classes);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  c.data = j.value("data", c.data);
  if (j.contains("source")) {
    static const std::set<std::string> source_keys = {"num_classes", "per_class", "epochs",
                                                      "batch_size", "lr", "momentum"};
    const auto& s = j.at("source");
    if (!s.is_object()) throw ConfigError("'source' must be a JSON object");
    for (const auto& [key, value] : s.items()) {
      if (!source_keys.count(key)) throw ConfigError("unknown source config key '" + key + "'");
    }
    c.source.num_classes = s.value("num_classes", c.source.num_classes);
    c.source.per_class = s.value("per_class", c.source.per_class);
    c.source.epochs = s.value("epochs", c.source.epochs);
    c.source.batch_size = s.value("batch_size", c.source.batch_size);
    c.source.lr = s.value("lr", c.source.lr);
    c.source.momentum = s.value("momentum", c.source.momentum);
    if (c.source.batch_size == 0) throw ConfigError("source batch_size must be at least 1");
  }
  if (c.repeats == 0) throw ConfigError("repeats must be at least 1");
  if (c.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (c.decimate == 0) throw ConfigError("decimate must be at least 1");
  for (double f : c.fractions) train_count(f, 104);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string method_name(Method m) { return m == Method::Transfer ? "transfer" : "local"; }

Method method_from_name(const std::string& name) {
  if (name == "transfer") return Method::Transfer;
  if (name == "local") return Method::Local;
  throw ConfigError("unknown method '" + name + "' (expected transfer or local)");
}

std::vector<Method> parse_methods(const std::string& comma_list) {
  std::vector<Method> out;
  std::stringstream ss(comma_list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(method_from_name(item));
  }
  if (out.empty()) throw ConfigError("no methods given");
  return out;
}

std::uint64_t run_seed(std::uint64_t base_seed, Method method, double fraction, std::size_t repeat) {
  return derive_seed({base_seed, hash_name(method_name(method)),
                      static_cast<std::uint64_t>(std::llround(fraction * 1e6)), repeat});
}

PipelineConfig pipeline_for(const ExperimentConfig& config, const NetworkSpec& spec) {
  PipelineConfig p;
  p.decimate_factor = config.decimate;
  p.encoder = config.encoder;
  p.height = spec.input_shape.at(0);
  p.width = spec.input_shape.at(1);
  return p;
}

std::string run_label(Method method, double fraction, std::size_t repeat) {
  return method_name(method) + "_f" + short_real(fraction) + "_r" + std::to_string(repeat);
}

RunOutput run_once(const ExperimentConfig& config, Method method, double fraction,
                   std::size_t repeat, const LabeledDataset& corpus, const Checkpoint* source) {
  if (corpus.empty()) throw DataError("empty corpus");
  std::size_t per_condition = 0;
  for (const ImageSample& s : corpus) per_condition += s.label == corpus.front().label;
  const std::uint64_t seed = run_seed(config.seed, method, fraction, repeat);
  const SplitResult split = split_dataset(
      corpus, DatasetSplit::from_fraction(fraction, per_condition, derive_seed({seed, 1})));

  const NetworkSpec full = spec_by_name(config.arch_name, config.num_classes);
  const std::uint64_t init_seed = derive_seed({seed, 2});
  std::optional<Network> network;
  double momentum = config.momentum_local;
  if (method == Method::Transfer) {
    if (!source) {
      throw ConfigError("method 'transfer' needs a pretrained checkpoint (run pretrain first)");
    }
    const TransferPlan plan = TransferPlan::from_rates(
        config.n_transfer_layers, full.layer_count(), config.lr_transferred, config.lr_new,
        config.freeze);
    network.emplace(transplant(*source, full, plan, init_seed));
    momentum = config.momentum_transfer;
  } else {
    network.emplace(build_network(local_variant(full), init_seed));
  }

  Optimizer opt = make_optimizer(*network, config.lr_new, momentum);
  const LossConfig loss{config.gamma, config.num_classes};
  RunOutput out{{method, fraction, repeat, 0.0, {}}, std::move(*network)};
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto h = train_epoch(out.network, split.train, config.batch_size, opt, loss,
                               derive_seed({seed, 3, e}));
    out.result.history.insert(out.result.history.end(), h.begin(), h.end());
  }
  out.network.set_mode(Mode::Eval);
  out.result.accuracy = evaluate_accuracy(out.network, split.validation);
  return out;
}

double SweepResult::mean_of(Method method, double fraction) const {
  for (const Mean& m : means) {
    if (m.method == method && m.fraction == fraction) return m.accuracy;
  }
  throw ConfigError("no mean for " + method_name(method) + " at fraction " + short_real(fraction));
}

SweepResult run_sweep(const ExperimentConfig& config, const std::vector<Method>& methods,
                      const LabeledDataset& corpus, const Checkpoint* source,
                      const SweepOutputs& outputs) {
  for (Method m : methods) {
    if (m == Method::Transfer && !source) {
      throw ConfigError("method 'transfer' needs a pretrained checkpoint (run pretrain first)");
    }
  }
  if (outputs.dir) {
    ensure_dir(*outputs.dir / "history");
    if (outputs.save_checkpoints) ensure_dir(*outputs.dir / "checkpoints");
  }
  SweepResult result;
  for (double f : config.fractions) {
    for (Method m : methods) {
      double total = 0.0;
      for (std::size_t r = 0; r < config.repeats; ++r) {
        RunOutput run = run_once(config, m, f, r, corpus, source);
        total += run.result.accuracy;
        if (outputs.dir) {
          const std::string label = run_label(m, f, r);
          std::ofstream h(*outputs.dir / "history" / (label + ".csv"));
          write_history_csv(h, run.result.history);
          if (!h) throw Error("failed writing history for " + label);
          if (outputs.save_checkpoints) {
            save_checkpoint(run.network, *outputs.dir / "checkpoints" / (label + ".ckpt"),
                            "sweep " + label + " seed " + std::to_string(config.seed));
          }
        }
        result.runs.push_back(std::move(run.result));
      }
      result.means.push_back({m, f, total / static_cast<double>(config.repeats)});
    }
  }
  if (outputs.dir) {
    std::ofstream csv(*outputs.dir / "results.csv");
    write_results_csv(csv, result);
    if (!csv) throw Error("failed writing results.csv");
  }
  return result;
}

void write_results_csv(std::ostream& out, const SweepResult& result) {
  out << "method,fraction,repeat,accuracy\n";
  for (const RunResult& r : result.runs) {
    out << method_name(r.method) << ',' << short_real(r.fraction) << ',' << r.repeat << ','
        << format_real(r.accuracy) << '\n';
  }
  for (const auto& m : result.means) {
    out << method_name(m.method) << ',' << short_real(m.fraction) << ",mean,"
        << format_real(m.accuracy) << '\n';
  }
}

PretrainResult pretrain(const NetworkSpec& spec, const LabeledDataset& data, std::size_t epochs,
                        std::size_t batch_size, double lr, double momentum, double gamma,
                        std::uint64_t seed) {
  PretrainResult out{build_network(spec, derive_seed({seed, 2})), {}, 0.0};
  Optimizer opt = make_optimizer(out.network, lr, momentum);
  const LossConfig loss{gamma, spec.num_classes};
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto h = train_epoch(out.network, data, batch_size, opt, loss, derive_seed({seed, 3, e}));
    out.history.insert(out.history.end(), h.begin(), h.end());
  }
  out.network.set_mode(Mode::Eval);
  out.train_accuracy = evaluate_accuracy(out.network, data);
  return out;
}

PretrainResult pretrain_source(const ExperimentConfig& config) {
  const NetworkSpec spec = spec_by_name(config.arch_name, config.source.num_classes);
  const std::uint64_t seed = derive_seed({config.seed, hash_name("source")});
  // The source network is fixed ahead of any target study, so it never sees
  // the target's decimation.
  PipelineConfig pipeline = pipeline_for(config, spec);
  pipeline.decimate_factor = 1;
  const LabeledDataset data = generate_source_task(
      derive_seed({seed, 1}), config.source.num_classes, config.source.per_class, pipeline);
  return pretrain(spec, data, config.source.epochs, config.source.batch_size, config.source.lr,
                  config.source.momentum, config.gamma, seed);
}

}  // namespace gearcnn
