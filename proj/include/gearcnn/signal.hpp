#ifndef GEARCNN_SIGNAL_HPP
#define GEARCNN_SIGNAL_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gearcnn/dataset.hpp"

namespace gearcnn {

struct TimeRecord {
  std::vector<double> samples;  // sample n is taken at n / sample_rate_hz
  double sample_rate_hz = 20000.0;
  std::vector<double> tach_pulse_times_s;  // one pulse per shaft revolution
};

struct AngleRecord {
  std::vector<double> samples;
  std::size_t samples_per_revolution = 900;
  std::size_t revolutions = 4;
  int condition_label = 0;
};

inline constexpr std::size_t kSamplesPerRevolution = 900;
inline constexpr std::size_t kRevolutions = 4;

// Angle-even resampling starting at the first tach pulse. Shaft angle is
// linear in time between consecutive pulses and the signal is linearly
// interpolated in time.
AngleRecord angle_resample(const TimeRecord& record,
                           std::size_t samples_per_revolution = kSamplesPerRevolution,
                           std::size_t revolutions = kRevolutions, int condition_label = 0);

// Keeps every factor-th sample.
AngleRecord decimate(const AngleRecord& record, std::size_t factor);

enum class Encoder { Reshape, PlotRaster };
std::string encoder_name(Encoder encoder);
Encoder encoder_from_name(const std::string& name);

// Rows and columns of the most square factorization of n (rows <= cols).
std::pair<std::size_t, std::size_t> square_grid(std::size_t n);

// Signal to [H, W, 3] image in [0, 1]. A constant signal encodes as 0.5.
ImageSample encode_image(const AngleRecord& record, Encoder encoder, std::size_t height,
                         std::size_t width, std::string source_id = {});

// |X_k|^2 of the real DFT, k = 0 .. n/2.
std::vector<double> power_spectrum(std::span<const double> signal);

struct DatasetSplit {
  double train_fraction = 0.8;
  std::size_t per_condition_train_count = 83;
  std::uint64_t split_seed = 0;

  // round(fraction * per_condition_total), at least 1.
  static DatasetSplit from_fraction(double fraction, std::size_t per_condition_total,
                                    std::uint64_t seed);
};

std::size_t train_count(double fraction, std::size_t per_condition_total);

struct SplitResult {
  LabeledDataset train;
  LabeledDataset validation;
};

// Per condition, a seeded uniform choice of per_condition_train_count
// samples goes to train and the rest to validation.
SplitResult split_dataset(const LabeledDataset& corpus, const DatasetSplit& split);

// ---------------------------------------------------------------------------
// Files.

// One sample per line after an optional "# rate_hz=<r>" header.
void write_signal_csv(const std::filesystem::path& path, std::span<const double> samples,
                      double sample_rate_hz);
// Returns the samples; the header rate, if any, is stored in *rate_hz.
std::vector<double> read_signal_csv(const std::filesystem::path& path, double* rate_hz = nullptr);

// "<dir>/<stem>.tach.csv" next to a signal file.
std::filesystem::path tach_path_for(const std::filesystem::path& signal_path);

void write_time_record(const std::filesystem::path& signal_path, const TimeRecord& record);
// The tach file defaults to tach_path_for(signal_path).
TimeRecord read_time_record(const std::filesystem::path& signal_path,
                            double default_rate_hz = 0.0,
                            const std::filesystem::path& tach_path = {});

struct ManifestEntry {
  std::string file;  // signal CSV, relative to the manifest directory
  std::string tach;
  int condition = 0;
  std::string condition_name;
  double severity = 0.0;
  std::string encoder = "reshape";
  std::uint64_t seed = 0;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

struct PipelineConfig {
  std::size_t samples_per_revolution = kSamplesPerRevolution;
  std::size_t revolutions = kRevolutions;
  std::size_t decimate_factor = 1;
  Encoder encoder = Encoder::Reshape;
  std::size_t height = 32;
  std::size_t width = 32;
};

ImageSample record_to_image(const TimeRecord& record, int label, const PipelineConfig& config,
                            std::string source_id = {});

// Loads every manifest entry under `dir` ("manifest.json") and encodes it.
LabeledDataset load_image_dataset(const std::filesystem::path& dir, const PipelineConfig& config);

}  // namespace gearcnn

#endif  // GEARCNN_SIGNAL_HPP
