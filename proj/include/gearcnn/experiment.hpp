#ifndef GEARCNN_EXPERIMENT_HPP
#define GEARCNN_EXPERIMENT_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gearcnn/checkpoint.hpp"
#include "gearcnn/dataset.hpp"
#include "gearcnn/network.hpp"
#include "gearcnn/optim.hpp"
#include "gearcnn/signal.hpp"

namespace gearcnn {

// Pretraining on the synthetic source task, the stand-in for a large
// natural-image corpus.
struct SourcePretrainConfig {
  std::size_t num_classes = 6;
  std::size_t per_class = 400;
  std::size_t epochs = 15;
  std::size_t batch_size = 20;
  double lr = 1e-2;
  double momentum = 0.5;
};

struct ExperimentConfig {
  std::string arch_name = "mini";
  std::vector<double> fractions = {0.8, 0.6, 0.4, 0.2, 0.1, 0.05, 0.02};
  std::size_t repeats = 5;
  std::size_t epochs = 15;
  std::size_t batch_size = 5;
  double lr_transferred = 1e-4;
  double lr_new = 1e-2;
  double momentum_transfer = 0.9;
  double momentum_local = 0.5;
  std::uint64_t seed = 2024;
  std::size_t n_transfer_layers = 21;
  bool freeze = false;
  double gamma = 5e-4;
  std::size_t decimate = 1;
  Encoder encoder = Encoder::Reshape;
  std::size_t num_classes = 9;
  std::string checkpoint;  // pretrained source network, for "transfer"
  std::string data;        // dataset directory with manifest.json
  SourcePretrainConfig source;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

enum class Method { Transfer, Local };
std::string method_name(Method m);
Method method_from_name(const std::string& name);
std::vector<Method> parse_methods(const std::string& comma_list);

std::uint64_t run_seed(std::uint64_t base_seed, Method method, double fraction, std::size_t repeat);

PipelineConfig pipeline_for(const ExperimentConfig& config, const NetworkSpec& spec);

struct RunResult {
  Method method = Method::Transfer;
  double fraction = 0.0;
  std::size_t repeat = 0;
  double accuracy = 0.0;
  TrainHistory history;
};

struct RunOutput {
  RunResult result;
  Network network;
};

// One training attempt: fresh split, fresh network (transplanted or local),
// `epochs` passes, validation accuracy.
RunOutput run_once(const ExperimentConfig& config, Method method, double fraction,
                   std::size_t repeat, const LabeledDataset& corpus, const Checkpoint* source);

struct SweepResult {
  std::vector<RunResult> runs;
  // Mean accuracy per (method, fraction), in first-seen order.
  struct Mean {
    Method method;
    double fraction;
    double accuracy;
  };
  std::vector<Mean> means;

  double mean_of(Method method, double fraction) const;
};

struct SweepOutputs {
  std::optional<std::filesystem::path> dir;  // results.csv, history/, checkpoints/
  bool save_checkpoints = false;
};

// Runs every (fraction, repeat, method).
SweepResult run_sweep(const ExperimentConfig& config, const std::vector<Method>& methods,
                      const LabeledDataset& corpus, const Checkpoint* source,
                      const SweepOutputs& outputs = {});

// Columns: method,fraction,repeat,accuracy; mean rows carry repeat "mean".
void write_results_csv(std::ostream& out, const SweepResult& result);

struct PretrainResult {
  Network network;
  TrainHistory history;
  double train_accuracy = 0.0;
};

PretrainResult pretrain(const NetworkSpec& spec, const LabeledDataset& data, std::size_t epochs,
                        std::size_t batch_size, double lr, double momentum, double gamma,
                        std::uint64_t seed);

// Generates the source task through the experiment's encoder at full angle
// resolution (config.decimate is ignored) and pretrains `arch_name` on it.
PretrainResult pretrain_source(const ExperimentConfig& config);

std::string run_label(Method method, double fraction, std::size_t repeat);

}  // namespace gearcnn

#endif  // GEARCNN_EXPERIMENT_HPP
