#include "ecgstudy/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "ecgstudy/errors.hpp"

namespace ecgstudy {

Signal Segment::as_signal() const {
  return Signal{fmt::format("{}#{}", parent_id, segment_index), lead_name, samples,
                sampling_rate_hz};
}

void validate(const Segment& segment) {
  if (segment.samples.empty()) {
    fail(ErrorCode::validation, fmt::format("segment {}#{} is empty", segment.parent_id,
                                            segment.segment_index));
  }
  if (!(segment.sampling_rate_hz > 0.0)) {
    fail(ErrorCode::validation, "segment sampling rate must be positive");
  }
  const double duration = static_cast<double>(segment.samples.size()) / segment.sampling_rate_hz;
  if (duration < kMinSegmentSeconds || duration > kMaxSegmentSeconds) {
    fail(ErrorCode::validation,
         fmt::format("segment {}#{} lasts {:.3f} s, outside [{}, {}] s", segment.parent_id,
                     segment.segment_index, duration, kMinSegmentSeconds, kMaxSegmentSeconds));
  }
}

Signal extract_lead(const EcgRecord& record, const std::string& lead_name) {
  const auto it = std::find(record.lead_names.begin(), record.lead_names.end(), lead_name);
  if (it == record.lead_names.end()) {
    std::string available;
    for (const auto& name : record.lead_names) {
      if (!available.empty()) available += ", ";
      available += name;
    }
    fail(ErrorCode::lead_not_found, fmt::format("record '{}' has no lead '{}' (available: {})",
                                                record.record_id, lead_name, available));
  }
  const auto index = static_cast<std::size_t>(it - record.lead_names.begin());
  return Signal{record.record_id, lead_name, record.samples[index], record.sampling_rate_hz};
}

namespace {

// Largest n with n / fs <= seconds.
std::size_t max_samples_within(double seconds, double fs) {
  auto n = static_cast<std::size_t>(std::floor(seconds * fs));
  while (static_cast<double>(n + 1) / fs <= seconds) ++n;
  while (n > 0 && static_cast<double>(n) / fs > seconds) --n;
  return n;
}

// Smallest n with n / fs >= seconds.
std::size_t min_samples_covering(double seconds, double fs) {
  auto n = static_cast<std::size_t>(std::ceil(seconds * fs));
  while (n > 0 && static_cast<double>(n - 1) / fs >= seconds) --n;
  while (static_cast<double>(n) / fs < seconds) ++n;
  return n;
}

}  // namespace

std::vector<Window> plan_windows(std::size_t sample_count, double sampling_rate_hz) {
  if (!(sampling_rate_hz > 0.0)) fail(ErrorCode::argument, "sampling rate must be positive");
  const std::size_t longest = max_samples_within(kMaxSegmentSeconds, sampling_rate_hz);
  const std::size_t shortest = min_samples_covering(kMinSegmentSeconds, sampling_rate_hz);
  if (sample_count < shortest) {
    fail(ErrorCode::too_short,
         fmt::format("signal lasts {:.3f} s, need at least {} s",
                     static_cast<double>(sample_count) / sampling_rate_hz, kMinSegmentSeconds));
  }
  std::vector<Window> windows;
  std::size_t pos = 0;
  while (sample_count - pos > longest) {
    windows.push_back({pos, longest});
    pos += longest;
  }
  const std::size_t remainder = sample_count - pos;
  if (remainder >= shortest) {
    windows.push_back({pos, remainder});
  } else {
    windows.push_back({sample_count - shortest, shortest});
  }
  return windows;
}

std::vector<Segment> split_segments(const Signal& signal) {
  std::vector<Segment> segments;
  const auto windows = plan_windows(signal.samples.size(), signal.sampling_rate_hz);
  segments.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    Segment seg;
    seg.parent_id = signal.source_id;
    seg.segment_index = i;
    seg.lead_name = signal.lead_name;
    seg.samples.assign(signal.samples.begin() + static_cast<std::ptrdiff_t>(w.start),
                       signal.samples.begin() + static_cast<std::ptrdiff_t>(w.start + w.length));
    seg.sampling_rate_hz = signal.sampling_rate_hz;
    seg.start_sample = w.start;
    seg.start_s = static_cast<double>(w.start) / signal.sampling_rate_hz;
    seg.duration_s = static_cast<double>(w.length) / signal.sampling_rate_hz;
    segments.push_back(std::move(seg));
  }
  return segments;
}

Signal resample(const Signal& signal, double target_hz) {
  if (!(target_hz > 0.0) || !std::isfinite(target_hz)) {
    fail(ErrorCode::argument, fmt::format("target rate must be positive, got {}", target_hz));
  }
  if (!(signal.sampling_rate_hz > 0.0)) {
    fail(ErrorCode::argument, "source sampling rate must be positive");
  }
  if (signal.samples.empty()) fail(ErrorCode::argument, "cannot resample an empty signal");
  if (target_hz == signal.sampling_rate_hz) return signal;

  const std::size_t n = signal.samples.size();
  const double ratio = signal.sampling_rate_hz / target_hz;
  const auto n_out = static_cast<std::size_t>(
                         std::floor(static_cast<double>(n - 1) / ratio + 1e-9)) + 1;
  Signal out{signal.source_id, signal.lead_name, std::vector<double>(n_out), target_hz};
  for (std::size_t k = 0; k < n_out; ++k) {
    const double pos = static_cast<double>(k) * signal.sampling_rate_hz / target_hz;
    auto i = static_cast<std::size_t>(std::floor(pos));
    if (i >= n - 1) {
      out.samples[k] = signal.samples[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(i);
    out.samples[k] = signal.samples[i] + frac * (signal.samples[i + 1] - signal.samples[i]);
  }
  return out;
}

std::vector<double> normalize(std::span<const double> samples) {
  if (samples.empty()) fail(ErrorCode::argument, "cannot normalize an empty signal");
  const double n = static_cast<double>(samples.size());
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double scale = 1.0 / (std::sqrt(ss / n) + kNormalizeEpsilon);
  std::vector<double> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = (samples[i] - mean) * scale;
  // Re-center: removes the rounding residue of the first pass.
  const double residue = std::accumulate(out.begin(), out.end(), 0.0) / n;
  for (double& x : out) x -= residue;
  return out;
}

Signal normalize(const Signal& signal) {
  return Signal{signal.source_id, signal.lead_name, normalize(std::span(signal.samples)),
                signal.sampling_rate_hz};
}

// ---------------------------------------------------------------------------
// Synthetic corpus.
//
// Beats are sums of Gaussian bumps placed relative to the R peak. All
// morphology constants below are fixed; only timing, amplitude scale and the
// class-specific perturbations are random.

namespace {

struct Wave {
  double offset_s;
  double amplitude_uv;
  double width_s;
};

constexpr Wave kP{-0.20, 120.0, 0.025};
constexpr Wave kQ{-0.035, -120.0, 0.010};
constexpr Wave kR{0.0, 1000.0, 0.012};
constexpr Wave kS{0.035, -220.0, 0.010};
constexpr Wave kT{0.26, 280.0, 0.045};

constexpr double kNsrRrJitter = 0.02;         // uniform +-2 % around the mean RR
constexpr double kAfibRrLow = 0.45;           // RR ~ mean * U(0.45, 1.55)
constexpr double kAfibRrHigh = 1.55;
constexpr double kMinRrSeconds = 0.3;
constexpr double kWideQrsFactor = 2.8;
constexpr double kMeasurementNoiseUv = 8.0;
constexpr double kWanderUv = 40.0;

void add_wave(std::vector<double>& x, double fs, double center_s, const Wave& w, double gain,
              double width_scale = 1.0) {
  const double width = w.width_s * width_scale;
  const double t0 = center_s + w.offset_s;
  const auto lo = static_cast<long>(std::floor((t0 - 5.0 * width) * fs));
  const auto hi = static_cast<long>(std::ceil((t0 + 5.0 * width) * fs));
  for (long k = std::max(0L, lo); k <= hi && k < static_cast<long>(x.size()); ++k) {
    const double d = (static_cast<double>(k) / fs - t0) / width;
    x[static_cast<std::size_t>(k)] += gain * w.amplitude_uv * std::exp(-0.5 * d * d);
  }
}

struct BeatStyle {
  bool p_wave = true;
  bool conducted = true;  // false: P wave only (dropped QRS-T)
  double qrs_width_scale = 1.0;
  double r_scale = 1.0;
  double s_scale = 1.0;
};

void add_beat(std::vector<double>& x, double fs, double r_time, double gain, const BeatStyle& style) {
  if (style.p_wave) add_wave(x, fs, r_time, kP, gain);
  if (!style.conducted) return;
  add_wave(x, fs, r_time, kQ, gain, style.qrs_width_scale);
  add_wave(x, fs, r_time, kR, gain * style.r_scale, style.qrs_width_scale);
  add_wave(x, fs, r_time, kS, gain * style.s_scale, style.qrs_width_scale);
  add_wave(x, fs, r_time, kT, gain);
}

std::vector<double> beat_times(std::mt19937_64& rng, double duration, double mean_rr, double lo,
                               double hi) {
  std::uniform_real_distribution<double> factor(lo, hi);
  std::uniform_real_distribution<double> first(0.1, 0.1 + mean_rr);
  std::vector<double> times;
  double t = first(rng);
  while (t < duration + 0.5) {
    times.push_back(t);
    t += std::max(kMinRrSeconds, mean_rr * factor(rng));
  }
  return times;
}

void add_common_artifacts(std::vector<double>& x, double fs, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, kMeasurementNoiseUv);
  std::uniform_real_distribution<double> wander_f(0.15, 0.35);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double f = wander_f(rng);
  const double ph = phase(rng);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double t = static_cast<double>(k) / fs;
    x[k] += kWanderUv * std::sin(2.0 * std::numbers::pi * f * t + ph) + noise(rng);
  }
}

std::vector<double> synth_noise(std::mt19937_64& rng, std::size_t n, double fs) {
  std::vector<double> x(n, 0.0);
  std::bernoulli_distribution flatline(0.5);
  if (flatline(rng)) {
    // Lead-off / near-flatline: tiny noise on a slow drift.
    std::normal_distribution<double> noise(0.0, 4.0);
    std::uniform_real_distribution<double> drift(-15.0, 15.0);
    const double slope = drift(rng);
    for (std::size_t k = 0; k < n; ++k) {
      x[k] = slope * static_cast<double>(k) / fs / 10.0 + noise(rng);
    }
    return x;
  }
  // Band-limited noise: white noise through a moving average, plus motion bursts.
  std::uniform_int_distribution<int> width_dist(3, 15);
  std::uniform_real_distribution<double> rms_dist(150.0, 450.0);
  std::normal_distribution<double> white(0.0, 1.0);
  const int width = width_dist(rng);
  std::vector<double> raw(n + static_cast<std::size_t>(width));
  for (double& v : raw) v = white(rng);
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (int j = 0; j < width; ++j) acc += raw[k + static_cast<std::size_t>(j)];
    x[k] = acc / std::sqrt(static_cast<double>(width));
  }
  const double rms = rms_dist(rng);
  std::uniform_real_distribution<double> f_dist(0.5, 3.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double f = f_dist(rng);
  const double ph = phase(rng);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / fs;
    x[k] = rms * x[k] + 0.8 * rms * std::sin(2.0 * std::numbers::pi * f * t + ph);
  }
  return x;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

void validate(const SynthSpec& spec) {
  if (spec.duration_s < kMinSegmentSeconds || spec.duration_s > kMaxSegmentSeconds) {
    fail(ErrorCode::argument,
         fmt::format("synthetic duration {} s outside [10, 30] s", spec.duration_s));
  }
  if (!(spec.sampling_rate_hz >= 100.0) || !std::isfinite(spec.sampling_rate_hz)) {
    fail(ErrorCode::argument, "synthetic sampling rate must be at least 100 Hz");
  }
  if (!(spec.heart_rate_min_bpm > 0.0) || spec.heart_rate_max_bpm < spec.heart_rate_min_bpm ||
      spec.heart_rate_max_bpm > 200.0) {
    fail(ErrorCode::argument, "heart rate range must be nonempty within (0, 200] bpm");
  }
}

EcgRecord synthesize(const SynthSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  const double fs = spec.sampling_rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * fs));
  std::vector<double> x(n, 0.0);

  std::uniform_real_distribution<double> hr_dist(spec.heart_rate_min_bpm, spec.heart_rate_max_bpm);
  std::uniform_real_distribution<double> gain_dist(0.7, 1.3);
  const double mean_rr = 60.0 / hr_dist(rng);
  const double gain = gain_dist(rng);

  switch (spec.rhythm) {
    case Rhythm::nsr: {
      for (double t : beat_times(rng, spec.duration_s, mean_rr, 1.0 - kNsrRrJitter,
                                 1.0 + kNsrRrJitter)) {
        add_beat(x, fs, t, gain, BeatStyle{});
      }
      add_common_artifacts(x, fs, rng);
      break;
    }
    case Rhythm::afib: {
      for (double t : beat_times(rng, spec.duration_s, mean_rr, kAfibRrLow, kAfibRrHigh)) {
        add_beat(x, fs, t, gain, BeatStyle{.p_wave = false});
      }
      // Fibrillatory baseline: 4-9 Hz, slowly frequency-modulated.
      std::uniform_real_distribution<double> f_dist(4.0, 9.0);
      std::uniform_real_distribution<double> amp_dist(30.0, 70.0);
      std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
      const double f0 = f_dist(rng);
      const double amp = amp_dist(rng);
      const double mod_phase = phase(rng);
      double ph = phase(rng);
      for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) / fs;
        const double f = std::clamp(f0 + 0.8 * std::sin(2.0 * std::numbers::pi * 0.3 * t + mod_phase),
                                    4.0, 9.0);
        ph += 2.0 * std::numbers::pi * f / fs;
        x[k] += amp * (std::sin(ph) + 0.3 * std::sin(2.0 * ph));
      }
      add_common_artifacts(x, fs, rng);
      break;
    }
    case Rhythm::other: {
      std::bernoulli_distribution wide_qrs(0.5);
      const auto times = beat_times(rng, spec.duration_s, mean_rr, 1.0 - kNsrRrJitter,
                                    1.0 + kNsrRrJitter);
      if (wide_qrs(rng)) {
        const BeatStyle style{.qrs_width_scale = kWideQrsFactor, .r_scale = 0.8, .s_scale = 2.0};
        for (double t : times) add_beat(x, fs, t, gain, style);
      } else {
        // Second-degree block: every `period`-th P wave is not conducted.
        std::uniform_int_distribution<int> period_dist(3, 4);
        const auto period = static_cast<std::size_t>(period_dist(rng));
        for (std::size_t i = 0; i < times.size(); ++i) {
          add_beat(x, fs, times[i], gain, BeatStyle{.conducted = (i % period) != period - 1});
        }
      }
      add_common_artifacts(x, fs, rng);
      break;
    }
    case Rhythm::noise:
      x = synth_noise(rng, n, fs);
      break;
  }

  EcgRecord record;
  record.record_id = spec.record_id.empty()
                         ? fmt::format("synth-{}-{:016x}", lower(to_string(spec.rhythm)), spec.seed)
                         : spec.record_id;
  record.sampling_rate_hz = fs;
  record.lead_names = {"I"};
  record.samples = {std::move(x)};
  record.reference_label = spec.rhythm;
  return record;
}

std::vector<EcgRecord> synth_dataset(std::span<const SynthSpec> specs) {
  for (const auto& spec : specs) validate(spec);
  std::vector<EcgRecord> records;
  records.reserve(specs.size());
  for (const auto& spec : specs) records.push_back(synthesize(spec));
  return records;
}

std::vector<SynthSpec> balanced_specs(std::size_t per_class, std::uint64_t seed,
                                      double sampling_rate_hz) {
  std::vector<SynthSpec> specs;
  specs.reserve(per_class * kNumRhythms);
  for (Rhythm r : kModelClasses) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::uint64_t item_seed =
          splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(r) * 0x100000000ULL + i));
      SynthSpec spec;
      spec.rhythm = r;
      spec.seed = item_seed;
      // Duration from the item seed so it does not depend on per_class.
      spec.duration_s = kMinSegmentSeconds +
                        (kMaxSegmentSeconds - kMinSegmentSeconds) *
                            static_cast<double>(splitmix64(item_seed) >> 11) * 0x1.0p-53;
      spec.duration_s = std::round(spec.duration_s * 100.0) / 100.0;
      spec.sampling_rate_hz = sampling_rate_hz;
      spec.record_id = fmt::format("{}-{:04d}", lower(to_string(r)), i);
      specs.push_back(spec);
    }
  }
  return specs;
}

}  // namespace ecgstudy
