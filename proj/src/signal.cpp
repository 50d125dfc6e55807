#include "gearcnn/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "gearcnn/errors.hpp"
#include "gearcnn/seed.hpp"

namespace gearcnn {

namespace {

// Linear interpolation of uniformly sampled data at fractional index u.
double sample_at(const std::vector<double>& x, double u) {
  const double last = static_cast<double>(x.size() - 1);
  if (u < 0.0 || u > last) {
    throw DataError("interpolation point " + std::to_string(u) + " outside the record");
  }
  const auto i = static_cast<std::size_t>(u);
  if (i + 1 >= x.size()) return x.back();
  const double f = u - static_cast<double>(i);
  return x[i] + f * (x[i + 1] - x[i]);
}

void fill_channels(Tensor& image, std::size_t h, std::size_t w, double v) {
  for (std::size_t c = 0; c < 3; ++c) image.at(h, w, c) = v;
}

Tensor encode_reshape(const std::vector<double>& unit, std::size_t H, std::size_t W) {
  const auto [rows, cols] = square_grid(unit.size());
  Tensor image({H, W, 3});
  const double sr = static_cast<double>(rows) / static_cast<double>(H);
  const double sc = static_cast<double>(cols) / static_cast<double>(W);
  for (std::size_t i = 0; i < H; ++i) {
    const double y = std::clamp((static_cast<double>(i) + 0.5) * sr - 0.5, 0.0,
                                static_cast<double>(rows - 1));
    const auto r0 = static_cast<std::size_t>(y);
    const std::size_t r1 = std::min(r0 + 1, rows - 1);
    const double fy = y - static_cast<double>(r0);
    for (std::size_t j = 0; j < W; ++j) {
      const double x = std::clamp((static_cast<double>(j) + 0.5) * sc - 0.5, 0.0,
                                  static_cast<double>(cols - 1));
      const auto c0 = static_cast<std::size_t>(x);
      const std::size_t c1 = std::min(c0 + 1, cols - 1);
      const double fx = x - static_cast<double>(c0);
      const double top = unit[r0 * cols + c0] * (1 - fx) + unit[r0 * cols + c1] * fx;
      const double bottom = unit[r1 * cols + c0] * (1 - fx) + unit[r1 * cols + c1] * fx;
      fill_channels(image, i, j, top * (1 - fy) + bottom * fy);
    }
  }
  return image;
}

Tensor encode_plot(const std::vector<double>& unit, std::size_t H, std::size_t W) {
  Tensor image({H, W, 3}, 1.0);
  const std::size_t n = unit.size();
  auto column = [&](std::size_t k) {
    return n == 1 ? 0.0 : static_cast<double>(k) * static_cast<double>(W - 1) / static_cast<double>(n - 1);
  };
  auto row = [&](std::size_t k) { return (1.0 - unit[k]) * static_cast<double>(H - 1); };
  auto plot = [&](double x, double y) {
    const auto c = static_cast<std::size_t>(std::lround(x));
    const auto r = static_cast<std::size_t>(std::lround(y));
    fill_channels(image, std::min(r, H - 1), std::min(c, W - 1), 0.0);
  };
  plot(column(0), row(0));
  for (std::size_t k = 1; k < n; ++k) {
    const double x0 = column(k - 1), y0 = row(k - 1), x1 = column(k), y1 = row(k);
    const double span = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
    const auto steps = static_cast<std::size_t>(std::ceil(span));
    for (std::size_t s = 1; s <= steps; ++s) {
      const double t = static_cast<double>(s) / static_cast<double>(steps);
      plot(x0 + t * (x1 - x0), y0 + t * (y1 - y0));
    }
    if (steps == 0) plot(x1, y1);
  }
  return image;
}

std::ifstream open_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream create_text(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

std::vector<double> read_number_lines(const std::filesystem::path& path, double* rate_hz) {
  auto in = open_text(path);
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (line[0] == '#') {
      const auto pos = line.find("rate_hz=");
      if (pos != std::string::npos && rate_hz) *rate_hz = std::stod(line.substr(pos + 8));
      continue;
    }
    try {
      std::size_t used = 0;
      values.push_back(std::stod(line, &used));
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": not a number");
    }
  }
  return values;
}

void write_number_lines(std::ostream& out, std::span<const double> values) {
  char buf[40];
  for (double v : values) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    out << buf;
  }
}

}  // namespace

AngleRecord angle_resample(const TimeRecord& record, std::size_t samples_per_revolution,
                           std::size_t revolutions, int condition_label) {
  if (samples_per_revolution == 0 || revolutions == 0) {
    throw ConfigError("samples per revolution and revolutions must be positive");
  }
  if (record.sample_rate_hz <= 0.0) throw DataError("sample rate must be positive");
  if (record.samples.size() < 2) throw DataError("time record has fewer than two samples");
  const auto& pulses = record.tach_pulse_times_s;
  const std::size_t available = pulses.empty() ? 0 : pulses.size() - 1;
  if (available < revolutions) {
    throw DataError("tach covers " + std::to_string(available) + " revolutions (" +
                    std::to_string(pulses.size()) + " pulses), " + std::to_string(revolutions) +
                    " requested");
  }
  const double end = static_cast<double>(record.samples.size() - 1) / record.sample_rate_hz;
  for (std::size_t k = 0; k <= revolutions; ++k) {
    if (k > 0 && !(pulses[k] > pulses[k - 1])) {
      throw DataError("tach pulse times must be strictly increasing");
    }
    if (pulses[k] < 0.0 || pulses[k] > end) {
      throw DataError("tach pulse at " + std::to_string(pulses[k]) + " s lies outside the record");
    }
  }

  AngleRecord out;
  out.samples_per_revolution = samples_per_revolution;
  out.revolutions = revolutions;
  out.condition_label = condition_label;
  out.samples.resize(samples_per_revolution * revolutions);
  const double spr = static_cast<double>(samples_per_revolution);
  for (std::size_t r = 0; r < revolutions; ++r) {
    const double t0 = pulses[r], dt = pulses[r + 1] - pulses[r];
    for (std::size_t k = 0; k < samples_per_revolution; ++k) {
      const double t = t0 + dt * (static_cast<double>(k) / spr);
      out.samples[r * samples_per_revolution + k] =
          sample_at(record.samples, t * record.sample_rate_hz);
    }
  }
  return out;
}

AngleRecord decimate(const AngleRecord& record, std::size_t factor) {
  if (factor == 0) throw ConfigError("decimation factor must be positive");
  if (record.samples.size() % factor != 0) {
    throw ConfigError("record length " + std::to_string(record.samples.size()) +
                      " is not divisible by decimation factor " + std::to_string(factor));
  }
  if (record.samples_per_revolution % factor != 0) {
    throw ConfigError("samples per revolution " + std::to_string(record.samples_per_revolution) +
                      " is not divisible by decimation factor " + std::to_string(factor));
  }
  AngleRecord out = record;
  out.samples_per_revolution = record.samples_per_revolution / factor;
  out.samples.resize(record.samples.size() / factor);
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] = record.samples[factor * i];
  return out;
}

std::string encoder_name(Encoder encoder) {
  return encoder == Encoder::Reshape ? "reshape" : "plot_raster";
}

Encoder encoder_from_name(const std::string& name) {
  if (name == "reshape") return Encoder::Reshape;
  if (name == "plot_raster" || name == "plot") return Encoder::PlotRaster;
  throw ConfigError("unknown encoder '" + name + "' (expected reshape or plot_raster)");
}

std::pair<std::size_t, std::size_t> square_grid(std::size_t n) {
  if (n == 0) throw ConfigError("cannot factor an empty record");
  std::size_t rows = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (rows * rows > n) --rows;
  while ((rows + 1) * (rows + 1) <= n) ++rows;
  while (n % rows != 0) --rows;
  return {rows, n / rows};
}

ImageSample encode_image(const AngleRecord& record, Encoder encoder, std::size_t height,
                         std::size_t width, std::string source_id) {
  if (record.samples.empty()) throw DataError("cannot encode an empty record");
  if (height == 0 || width == 0) throw ConfigError("image size must be positive");
  ImageSample sample;
  sample.label = static_cast<std::size_t>(std::max(record.condition_label, 0));
  sample.source_id = std::move(source_id);

  const auto& x = record.samples;
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> unit(x.size());
  double lo = 0.0, hi = 0.0;
  if (sd > 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) unit[i] = (x[i] - mean) / sd;
    const auto [mn, mx] = std::minmax_element(unit.begin(), unit.end());
    lo = *mn;
    hi = *mx;
  }
  if (!(hi > lo)) {
    sample.pixels = Tensor({height, width, 3}, 0.5);
    return sample;
  }
  for (double& v : unit) v = (v - lo) / (hi - lo);

  sample.pixels = encoder == Encoder::Reshape ? encode_reshape(unit, height, width)
                                              : encode_plot(unit, height, width);
  return sample;
}

std::vector<double> power_spectrum(std::span<const double> signal) {
  if (signal.empty()) return {};
  const int n = static_cast<int>(signal.size());
  std::vector<double> in(signal.begin(), signal.end());
  std::vector<fftw_complex> out(static_cast<std::size_t>(n / 2 + 1));
  fftw_plan plan = fftw_plan_dft_r2c_1d(n, in.data(), out.data(), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  std::vector<double> power(out.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
  }
  return power;
}

std::size_t train_count(double fraction, std::size_t per_condition_total) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("training fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(per_condition_total)));
  return std::max<std::size_t>(n, 1);
}

DatasetSplit DatasetSplit::from_fraction(double fraction, std::size_t per_condition_total,
                                         std::uint64_t seed) {
  return {fraction, train_count(fraction, per_condition_total), seed};
}

SplitResult split_dataset(const LabeledDataset& corpus, const DatasetSplit& split) {
  if (split.per_condition_train_count == 0) throw ConfigError("train count must be positive");
  std::map<std::size_t, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_label[corpus[i].label].push_back(i);

  SplitResult result;
  for (auto& [label, members] : by_label) {
    if (members.size() < split.per_condition_train_count) {
      throw DataError("condition " + std::to_string(label) + " has " +
                      std::to_string(members.size()) + " samples, " +
                      std::to_string(split.per_condition_train_count) + " needed for training");
    }
    std::mt19937_64 rng(derive_seed({split.split_seed, label}));
    std::shuffle(members.begin(), members.end(), rng);
    std::sort(members.begin(), members.begin() + static_cast<long>(split.per_condition_train_count));
    std::sort(members.begin() + static_cast<long>(split.per_condition_train_count), members.end());
    for (std::size_t k = 0; k < members.size(); ++k) {
      (k < split.per_condition_train_count ? result.train : result.validation)
          .push_back(corpus[members[k]]);
    }
  }
  return result;
}

void write_signal_csv(const std::filesystem::path& path, std::span<const double> samples,
                      double sample_rate_hz) {
  auto out = create_text(path);
  char buf[64];
  std::snprintf(buf, sizeof buf, "# rate_hz=%.17g\n", sample_rate_hz);
  out << buf;
  write_number_lines(out, samples);
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<double> read_signal_csv(const std::filesystem::path& path, double* rate_hz) {
  return read_number_lines(path, rate_hz);
}

std::filesystem::path tach_path_for(const std::filesystem::path& signal_path) {
  return signal_path.parent_path() / (signal_path.stem().string() + ".tach.csv");
}

void write_time_record(const std::filesystem::path& signal_path, const TimeRecord& record) {
  write_signal_csv(signal_path, record.samples, record.sample_rate_hz);
  auto out = create_text(tach_path_for(signal_path));
  write_number_lines(out, record.tach_pulse_times_s);
  if (!out) throw DataError("failed writing tach file for " + signal_path.string());
}

TimeRecord read_time_record(const std::filesystem::path& signal_path, double default_rate_hz,
                            const std::filesystem::path& tach_path) {
  TimeRecord record;
  double rate = default_rate_hz;
  record.samples = read_signal_csv(signal_path, &rate);
  if (!(rate > 0.0)) {
    throw DataError(signal_path.string() + " has no rate_hz header and no default rate was given");
  }
  record.sample_rate_hz = rate;
  record.tach_pulse_times_s =
      read_number_lines(tach_path.empty() ? tach_path_for(signal_path) : tach_path, nullptr);
  return record;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const ManifestEntry& e : entries) {
    j.push_back({{"file", e.file},
                 {"tach", e.tach},
                 {"condition", e.condition},
                 {"condition_name", e.condition_name},
                 {"severity", e.severity},
                 {"encoder", e.encoder},
                 {"seed", e.seed}});
  }
  auto out = create_text(path);
  out << j.dump(1) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  auto in = open_text(path);
  std::vector<ManifestEntry> entries;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j) {
      ManifestEntry m;
      m.file = e.at("file").get<std::string>();
      m.tach = e.value("tach", std::string{});
      m.condition = e.at("condition").get<int>();
      m.condition_name = e.value("condition_name", std::string{});
      m.severity = e.value("severity", 0.0);
      m.encoder = e.value("encoder", std::string("reshape"));
      m.seed = e.value("seed", std::uint64_t{0});
      if (m.condition < 0) throw DataError("negative condition label");
      entries.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": invalid manifest: " + e.what());
  }
  return entries;
}

ImageSample record_to_image(const TimeRecord& record, int label, const PipelineConfig& config,
                            std::string source_id) {
  AngleRecord angle =
      angle_resample(record, config.samples_per_revolution, config.revolutions, label);
  if (config.decimate_factor != 1) angle = decimate(angle, config.decimate_factor);
  return encode_image(angle, config.encoder, config.height, config.width, std::move(source_id));
}

LabeledDataset load_image_dataset(const std::filesystem::path& dir, const PipelineConfig& config) {
  const auto manifest = dir / "manifest.json";
  if (!std::filesystem::exists(manifest)) {
    throw DataError("no manifest.json in " + dir.string() + " (run synth-data first)");
  }
  LabeledDataset out;
  for (const ManifestEntry& e : read_manifest(manifest)) {
    const TimeRecord record =
        read_time_record(dir / e.file, 0.0, e.tach.empty() ? std::filesystem::path{} : dir / e.tach);
    out.push_back(record_to_image(record, e.condition, config, e.file));
  }
  return out;
}

}  // namespace gearcnn
