#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgstudy/ecg_io.hpp"
#include "ecgstudy/labels.hpp"

namespace ecgstudy {

inline constexpr double kMinSegmentSeconds = 10.0;
inline constexpr double kMaxSegmentSeconds = 30.0;
/// Rate every segment is brought to before the scalogram stage.
inline constexpr double kModelSamplingRateHz = 250.0;
inline constexpr double kNormalizeEpsilon = 1e-8;

/// One lead of one record.
struct Signal {
  std::string source_id;
  std::string lead_name;
  std::vector<double> samples;  // microvolts, or unitless once normalized
  double sampling_rate_hz = 0.0;

  double duration_s() const { return static_cast<double>(samples.size()) / sampling_rate_hz; }
};

struct Segment {
  std::string parent_id;
  std::size_t segment_index = 0;
  std::string lead_name;
  std::vector<double> samples;
  double sampling_rate_hz = 0.0;
  double start_s = 0.0;
  double duration_s = 0.0;
  std::size_t start_sample = 0;

  Signal as_signal() const;
};

/// Throws Error(validation) if the segment breaks the 10-30 s window contract.
void validate(const Segment& segment);

Signal extract_lead(const EcgRecord& record, const std::string& lead_name);

/// Sample range [start, start + length) of one split window.
struct Window {
  std::size_t start = 0;
  std::size_t length = 0;
};

// Greedy 30 s windows from the start. A final remainder of at least 10 s is kept
// as-is; a shorter remainder is replaced by the 10 s window ending at the last sample.
std::vector<Window> plan_windows(std::size_t sample_count, double sampling_rate_hz);
std::vector<Segment> split_segments(const Signal& signal);

Signal resample(const Signal& signal, double target_hz);
Signal normalize(const Signal& signal);
std::vector<double> normalize(std::span<const double> samples);

struct SynthSpec {
  Rhythm rhythm = Rhythm::nsr;
  double duration_s = 10.0;
  double sampling_rate_hz = kModelSamplingRateHz;
  double heart_rate_min_bpm = 60.0;
  double heart_rate_max_bpm = 100.0;
  std::uint64_t seed = 0;
  std::string record_id;  // generated from class and seed when empty
};

void validate(const SynthSpec& spec);

/// Single-lead ("I") labeled record for one spec; fully determined by the spec.
EcgRecord synthesize(const SynthSpec& spec);
std::vector<EcgRecord> synth_dataset(std::span<const SynthSpec> specs);

/// `per_class` specs per rhythm (all four classes), durations drawn in [10, 30] s.
std::vector<SynthSpec> balanced_specs(std::size_t per_class, std::uint64_t seed,
                                      double sampling_rate_hz = kModelSamplingRateHz);

}  // namespace ecgstudy
