#ifndef GEARCNN_SYNTHGEAR_HPP
#define GEARCNN_SYNTHGEAR_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gearcnn/dataset.hpp"
#include "gearcnn/signal.hpp"

namespace gearcnn {

struct GearboxConfig {
  std::size_t pinion_teeth = 32;
  std::size_t gear_teeth = 80;
  std::size_t second_stage_pinion_teeth = 48;
  std::size_t second_stage_gear_teeth = 64;
  double nominal_speed_hz = 10.0;
  double speed_fluctuation_pct = 2.0;
  double noise_std = 0.8;
  std::size_t harmonics = 3;
  double sample_rate_hz = 20000.0;
  double duration_s = 0.65;
  // Shaft angle of the damaged tooth as a fraction of a revolution.
  double fault_angle = 0.37;
};

enum class FaultFamily { None, MissingTooth, RootCrack, Spalling, Chipping };

struct ConditionSpec {
  int label = 0;
  std::string name;
  FaultFamily family = FaultFamily::None;
  double impulse_amplitude = 0.0;
  double modulation_depth = 0.0;
  double severity_scale = 0.0;
};

// healthy, missing_tooth, root_crack, spalling, chip_1 .. chip_5.
std::vector<ConditionSpec> canonical_conditions();

// Span after the fault angle, in 1/900 revolution, outside which the fault
// terms of `condition` vanish.
double fault_window(const ConditionSpec& condition);

// Input-shaft angle in radians. Speed follows
// f0 * (1 + p sin(2 pi fm t + psi)) from a random starting angle.
struct ShaftMotion {
  double start_angle = 0.0;
  double nominal_hz = 10.0;
  double fluctuation = 0.0;  // p, as a fraction
  double modulation_hz = 1.0;
  double modulation_phase = 0.0;

  double angle(double t) const;
  double speed_hz(double t) const;
  // Times t in [0, duration] at which angle(t) crosses a multiple of 2 pi.
  std::vector<double> pulse_times(double duration) const;
};

struct SyntheticRecord {
  TimeRecord record;
  ShaftMotion motion;
  double fault_angle = 0.0;  // fraction of a revolution
};

SyntheticRecord generate_signal(const GearboxConfig& config, const ConditionSpec& condition,
                                std::uint64_t seed);

struct CorpusRecord {
  TimeRecord record;
  ManifestEntry entry;  // file/tach left empty until written
};

// Per-signal seed derive_seed({seed, label, index}).
std::uint64_t signal_seed(std::uint64_t seed, int label, std::size_t index);

std::vector<CorpusRecord> generate_dataset(const GearboxConfig& config,
                                           const std::vector<ConditionSpec>& conditions,
                                           std::size_t signals_per_condition, std::uint64_t seed);

// Writes every record as CSV plus manifest.json under `dir`.
std::vector<ManifestEntry> write_dataset(const std::filesystem::path& dir,
                                         std::vector<CorpusRecord>& corpus,
                                         Encoder encoder = Encoder::Reshape);

// Encodes a corpus through the angle pipeline.
LabeledDataset encode_corpus(const std::vector<CorpusRecord>& corpus, const PipelineConfig& config);

// Burst-pattern images: classes differ in burst count, width and level,
// drawn on carriers that avoid the mesh orders.
LabeledDataset generate_source_task(std::uint64_t seed, std::size_t num_classes,
                                    std::size_t samples_per_class,
                                    const PipelineConfig& config = {});

}  // namespace gearcnn

#endif  // GEARCNN_SYNTHGEAR_HPP
