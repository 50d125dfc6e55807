#include "gearcnn/synthgear.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "gearcnn/errors.hpp"
#include "gearcnn/seed.hpp"

namespace gearcnn {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Fault geometry is laid out in units of angle-even samples at this resolution.
constexpr double kRevUnits = 900.0;
// Mesh period of the 32-tooth pinion, in kRevUnits.
constexpr double kToothPitch = kRevUnits / 32.0;

double envelope(double x, double width) {
  if (x < 0.0 || x >= width) return 0.0;
  const double s = std::sin(std::numbers::pi * x / width);
  return s * s;
}

double pulse(double x, double width, double period) {
  return envelope(x, width) * (1.0 + 0.5 * std::sin(kTwoPi * x / period));
}

// Position after the fault angle within the current revolution, in kRevUnits.
double offset_after(double shaft_angle, double fault_angle) {
  double u = shaft_angle / kTwoPi - fault_angle;
  u -= std::floor(u);
  return u * kRevUnits;
}

struct FaultTerms {
  double additive = 0.0;
  double modulation = 0.0;  // m in (1 + m) applied to the mesh signal
};

// Extents of the fault terms, in kRevUnits.
constexpr double kMissingToothDip = 300.0, kMissingToothPulse = 120.0;
constexpr double kCrackPulse = 60.0;
constexpr double kSpallDip = 360.0, kSpallPulse = 80.0, kSpallGap = 240.0;
constexpr double kChipBase = 100.0, kChipGrowth = 400.0;

double chip_width(double severity) { return kChipBase + kChipGrowth * severity; }

FaultTerms fault_terms(const ConditionSpec& c, double x, double jitter) {
  const double a = c.impulse_amplitude * c.severity_scale * jitter;
  const double depth = c.modulation_depth * c.severity_scale;
  FaultTerms f;
  switch (c.family) {
    case FaultFamily::None:
      break;
    case FaultFamily::MissingTooth:
      f.modulation = -depth * envelope(x, kMissingToothDip);
      f.additive = a * pulse(x, kMissingToothPulse, kToothPitch);
      break;
    case FaultFamily::RootCrack:
      f.additive = a * pulse(x, kCrackPulse, kToothPitch / 2.0);
      break;
    case FaultFamily::Spalling:
      f.modulation = -depth * envelope(x, kSpallDip);
      f.additive = a * (pulse(x, kSpallPulse, kToothPitch) +
                        pulse(x - kSpallGap, kSpallPulse, kToothPitch));
      break;
    case FaultFamily::Chipping:
      f.additive = a * pulse(x, chip_width(c.severity_scale), kToothPitch);
      break;
  }
  return f;
}

}  // namespace

double fault_window(const ConditionSpec& c) {
  switch (c.family) {
    case FaultFamily::None:
      return 0.0;
    case FaultFamily::MissingTooth:
      return std::max(kMissingToothDip, kMissingToothPulse);
    case FaultFamily::RootCrack:
      return kCrackPulse;
    case FaultFamily::Spalling:
      return std::max(kSpallDip, kSpallGap + kSpallPulse);
    case FaultFamily::Chipping:
      return chip_width(c.severity_scale);
  }
  return 0.0;
}

std::vector<ConditionSpec> canonical_conditions() {
  std::vector<ConditionSpec> out = {
      {0, "healthy", FaultFamily::None, 0.0, 0.0, 0.0},
      {1, "missing_tooth", FaultFamily::MissingTooth, 4.0, 0.9, 1.0},
      {2, "root_crack", FaultFamily::RootCrack, 5.0, 0.0, 1.0},
      {3, "spalling", FaultFamily::Spalling, 4.0, 0.5, 1.0},
  };
  for (int k = 1; k <= 5; ++k) {
    out.push_back({3 + k, "chip_" + std::to_string(k), FaultFamily::Chipping, 4.5, 0.0, (k + 1) / 6.0});
  }
  return out;
}

double ShaftMotion::angle(double t) const {
  const double w = kTwoPi * modulation_hz;
  const double wobble =
      fluctuation == 0.0 ? 0.0 : fluctuation / w * (std::cos(modulation_phase) - std::cos(w * t + modulation_phase));
  return start_angle + kTwoPi * nominal_hz * (t + wobble);
}

double ShaftMotion::speed_hz(double t) const {
  return nominal_hz * (1.0 + fluctuation * std::sin(kTwoPi * modulation_hz * t + modulation_phase));
}

std::vector<double> ShaftMotion::pulse_times(double duration) const {
  std::vector<double> out;
  auto k = static_cast<long>(std::ceil(start_angle / kTwoPi));
  for (;; ++k) {
    const double target = kTwoPi * static_cast<double>(k);
    double t = (target - start_angle) / (kTwoPi * nominal_hz);
    for (int it = 0; it < 60; ++it) {
      const double step = (angle(t) - target) / (kTwoPi * speed_hz(t));
      t -= step;
      if (std::abs(step) < 1e-15) break;
    }
    if (t > duration) break;
    if (t >= 0.0) out.push_back(t);
  }
  return out;
}

SyntheticRecord generate_signal(const GearboxConfig& config, const ConditionSpec& condition,
                                std::uint64_t seed) {
  if (config.nominal_speed_hz <= 0.0 || config.sample_rate_hz <= 0.0) {
    throw ConfigError("speed and sample rate must be positive");
  }
  if (config.speed_fluctuation_pct < 0.0 || config.speed_fluctuation_pct >= 50.0) {
    throw ConfigError("speed fluctuation must lie in [0, 50) percent");
  }
  const double min_revs = config.duration_s * config.nominal_speed_hz *
                          (1.0 - config.speed_fluctuation_pct / 100.0);
  if (min_revs < 6.0) {
    throw ConfigError("duration " + std::to_string(config.duration_s) +
                      " s covers fewer than 6 revolutions at the configured speed");
  }

  // Draw order is fixed and independent of the condition.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SyntheticRecord out;
  ShaftMotion& m = out.motion;
  m.nominal_hz = config.nominal_speed_hz;
  m.fluctuation = config.speed_fluctuation_pct / 100.0;
  m.start_angle = kTwoPi * unit(rng);
  m.modulation_hz = 0.5 + 1.5 * unit(rng);
  m.modulation_phase = kTwoPi * unit(rng);
  std::vector<double> amp(config.harmonics);
  for (std::size_t h = 0; h < config.harmonics; ++h) {
    amp[h] = (1.0 + 0.1 * gauss(rng)) / static_cast<double>(h + 1);
  }
  const double jitter = std::max(0.5, 1.0 + 0.05 * gauss(rng));
  out.fault_angle = config.fault_angle;

  TimeRecord& r = out.record;
  r.sample_rate_hz = config.sample_rate_hz;
  const auto n = static_cast<std::size_t>(std::floor(config.duration_s * config.sample_rate_hz)) + 1;
  r.samples.resize(n);
  const double z = static_cast<double>(config.pinion_teeth);
  for (std::size_t i = 0; i < n; ++i) {
    const double theta = m.angle(static_cast<double>(i) / config.sample_rate_hz);
    const FaultTerms f = fault_terms(condition, offset_after(theta, out.fault_angle), jitter);
    double mesh = 0.0;
    for (std::size_t h = 0; h < config.harmonics; ++h) {
      const double order = static_cast<double>(h + 1) * z;
      mesh += amp[h] * std::cos(order * theta + 0.7 * static_cast<double>(h + 1));
    }
    r.samples[i] = mesh * (1.0 + f.modulation) + f.additive;
  }
  if (config.noise_std > 0.0) {
    for (double& v : r.samples) v += config.noise_std * gauss(rng);
  }
  r.tach_pulse_times_s = m.pulse_times(static_cast<double>(n - 1) / config.sample_rate_hz);
  return out;
}

std::uint64_t signal_seed(std::uint64_t seed, int label, std::size_t index) {
  return derive_seed({seed, static_cast<std::uint64_t>(label), index});
}

std::vector<CorpusRecord> generate_dataset(const GearboxConfig& config,
                                           const std::vector<ConditionSpec>& conditions,
                                           std::size_t signals_per_condition, std::uint64_t seed) {
  if (signals_per_condition == 0) throw ConfigError("signals per condition must be at least 1");
  std::vector<CorpusRecord> corpus;
  corpus.reserve(conditions.size() * signals_per_condition);
  for (const ConditionSpec& c : conditions) {
    for (std::size_t i = 0; i < signals_per_condition; ++i) {
      const std::uint64_t s = signal_seed(seed, c.label, i);
      CorpusRecord rec;
      rec.record = generate_signal(config, c, s).record;
      rec.entry.condition = c.label;
      rec.entry.condition_name = c.name;
      rec.entry.severity = c.severity_scale;
      rec.entry.seed = s;
      corpus.push_back(std::move(rec));
    }
  }
  return corpus;
}

std::vector<ManifestEntry> write_dataset(const std::filesystem::path& dir,
                                         std::vector<CorpusRecord>& corpus, Encoder encoder) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  std::vector<std::size_t> counter(64, 0);
  for (CorpusRecord& rec : corpus) {
    const auto label = static_cast<std::size_t>(rec.entry.condition);
    if (label >= counter.size()) counter.resize(label + 1, 0);
    char stem[64];
    std::snprintf(stem, sizeof stem, "c%d_%s_%03zu", rec.entry.condition,
                  rec.entry.condition_name.c_str(), counter[label]++);
    rec.entry.file = std::string(stem) + ".csv";
    rec.entry.tach = std::string(stem) + ".tach.csv";
    rec.entry.encoder = encoder_name(encoder);
    write_time_record(dir / rec.entry.file, rec.record);
    entries.push_back(rec.entry);
  }
  write_manifest(dir / "manifest.json", entries);
  return entries;
}

LabeledDataset encode_corpus(const std::vector<CorpusRecord>& corpus, const PipelineConfig& config) {
  LabeledDataset out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const CorpusRecord& rec = corpus[i];
    std::string id = rec.entry.file.empty()
                         ? rec.entry.condition_name + "#" + std::to_string(i)
                         : rec.entry.file;
    out.push_back(record_to_image(rec.record, rec.entry.condition, config, std::move(id)));
  }
  return out;
}

namespace {

// Burst prototypes of the source classes, in kRevUnits: `count` unipolar
// transients of the given width, `spacing` apart, with a ripple on top.
struct SourceShape {
  double amplitude;
  double width;
  int count;
  double spacing;
};

constexpr std::array<SourceShape, 6> kSourceShapes = {{
    {0.0, 0.0, 0, 0.0},       // carrier only
    {3.0, 90.0, 1, 0.0},      // short pulse
    {2.5, 200.0, 1, 0.0},     // medium pulse
    {2.0, 450.0, 1, 0.0},     // long pulse
    {3.0, 150.0, 2, 450.0},   // pulse pair
    {3.0, 100.0, 3, 300.0},   // pulse triplet
}};


// Carrier orders per revolution; none is a multiple of the 32-tooth mesh.
constexpr std::array<double, 6> kCarrierOrders = {19.0, 23.0, 27.0, 41.0, 45.0, 53.0};

}  // namespace

LabeledDataset generate_source_task(std::uint64_t seed, std::size_t num_classes,
                                    std::size_t samples_per_class, const PipelineConfig& config) {
  if (num_classes < 2) throw ConfigError("source task needs at least two classes");
  if (samples_per_class == 0) throw ConfigError("source task needs at least one sample per class");
  const std::size_t spr = config.samples_per_revolution, revs = config.revolutions;

  LabeledDataset out;
  out.reserve(num_classes * samples_per_class);
  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    // Class 0 is the bare carrier; the rest cycle through the burst shapes,
    // each pass at a weaker level.
    const std::size_t bursts = kSourceShapes.size() - 1;
    const SourceShape& shape = kSourceShapes[cls == 0 ? 0 : 1 + (cls - 1) % bursts];
    const double level = cls == 0 ? 0.0 : 2.0 / (1.0 + 3.0 * static_cast<double>((cls - 1) / bursts));
    for (std::size_t i = 0; i < samples_per_class; ++i) {
      std::mt19937_64 rng(derive_seed({seed, cls, i}));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::normal_distribution<double> gauss(0.0, 1.0);
      const double order = kCarrierOrders[rng() % kCarrierOrders.size()];
      const double phase1 = kTwoPi * unit(rng), phase2 = kTwoPi * unit(rng);
      const double a1 = 0.8 + 0.4 * unit(rng), a2 = 0.3 * unit(rng);
      const double noise = 0.05 + 0.15 * unit(rng);
      const double where = 0.25 * unit(rng);
      const double width_jitter = 0.8 + 0.4 * unit(rng);
      const double amp = level * (0.5 + 0.8 * unit(rng));
      const double period = 15.0 + 20.0 * unit(rng);

      AngleRecord rec;
      rec.samples_per_revolution = spr;
      rec.revolutions = revs;
      rec.condition_label = static_cast<int>(cls);
      rec.samples.resize(spr * revs);
      for (std::size_t k = 0; k < rec.samples.size(); ++k) {
        const double theta = kTwoPi * static_cast<double>(k) / static_cast<double>(spr);
        double u = theta / kTwoPi - where;
        u -= std::floor(u);
        const double x = u * kRevUnits;
        const double w = shape.width * width_jitter;
        double burst = 0.0;
        for (int j = 0; j < shape.count; ++j) burst += pulse(x - j * shape.spacing, w, period);
        burst *= shape.amplitude;
        const double carrier =
            a1 * std::cos(order * theta + phase1) + a2 * std::cos(2.0 * order * theta + phase2);
        rec.samples[k] = carrier + amp * burst + noise * gauss(rng);
      }
      if (config.decimate_factor != 1) rec = decimate(rec, config.decimate_factor);
      out.push_back(encode_image(rec, config.encoder, config.height, config.width,
                                 "source/" + std::to_string(cls) + "/" + std::to_string(i)));
    }
  }
  return out;
}

}  // namespace gearcnn
