#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "ecgstudy/errors.hpp"
#include "ecgstudy/preprocess.hpp"
#include "oracles.hpp"

using namespace ecgstudy;

namespace {

Signal flat(double seconds, double fs, double value = 0.0) {
  return {"s", "I", std::vector<double>(static_cast<std::size_t>(std::llround(seconds * fs)), value), fs};
}

std::vector<std::pair<double, double>> bounds(const std::vector<Segment>& segs) {
  std::vector<std::pair<double, double>> out;
  for (const auto& s : segs) out.emplace_back(s.start_s, s.start_s + s.duration_s);
  return out;
}

using Bounds = std::vector<std::pair<double, double>>;

}  // namespace

TEST_CASE("extract_lead: projection and missing lead") {
  EcgRecord rec;
  rec.record_id = "twelve";
  rec.sampling_rate_hz = 500.0;
  for (const char* name : {"I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"}) {
    rec.lead_names.emplace_back(name);
    rec.samples.push_back({static_cast<double>(rec.samples.size()), 7.0});
  }
  const auto lead = extract_lead(rec, "I");
  CHECK(lead.samples == rec.samples[0]);
  CHECK(lead.source_id == "twelve");

  EcgRecord one{"one", 250.0, {"I"}, {{1.0}}, std::nullopt};
  try {
    extract_lead(one, "II");
    FAIL("expected lead_not_found");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::lead_not_found);
    CHECK(std::string(e.what()).find("I") != std::string::npos);
  }
}

TEST_CASE("split: worked cases") {
  CHECK(bounds(split_segments(flat(25, 250))) == Bounds{{0, 25}});
  CHECK(bounds(split_segments(flat(70, 250))) == Bounds{{0, 30}, {30, 60}, {60, 70}});
  CHECK(bounds(split_segments(flat(65, 250))) == Bounds{{0, 30}, {30, 60}, {55, 65}});
  CHECK(bounds(split_segments(flat(10, 250))) == Bounds{{0, 10}});
  CHECK(bounds(split_segments(flat(30, 250))) == Bounds{{0, 30}});
}

TEST_CASE("split: short signals are refused") {
  try {
    split_segments(flat(9.99, 250));
    FAIL("expected too_short");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::too_short);
  }
}

TEST_CASE("split: random durations obey window bounds and cover the signal") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dur(10.0, 300.0);
  for (int i = 0; i < 300; ++i) {
    const double fs = (i % 3 == 0) ? 360.0 : 250.0;
    const auto n = static_cast<std::size_t>(std::ceil(dur(rng) * fs));
    const auto windows = plan_windows(n, fs);
    std::vector<bool> covered(n, false);
    for (const auto& w : windows) {
      const double seconds = static_cast<double>(w.length) / fs;
      CHECK(seconds >= 10.0);
      CHECK(seconds <= 30.0);
      REQUIRE(w.start + w.length <= n);
      for (std::size_t k = w.start; k < w.start + w.length; ++k) covered[k] = true;
    }
    CHECK(std::all_of(covered.begin(), covered.end(), [](bool c) { return c; }));
  }
}

TEST_CASE("split: segments carry provenance and validate") {
  Signal s = flat(70, 250);
  for (std::size_t i = 0; i < s.samples.size(); ++i) s.samples[i] = static_cast<double>(i);
  const auto segs = split_segments(s);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    CHECK(segs[i].segment_index == i);
    CHECK(segs[i].parent_id == "s");
    CHECK(segs[i].samples.front() == static_cast<double>(segs[i].start_sample));
    CHECK_NOTHROW(validate(segs[i]));
  }
}

TEST_CASE("resample: identity, interpolation and counts") {
  Signal ramp{"r", "I", {0, 1, 2, 3}, 4.0};
  CHECK(resample(ramp, 4.0).samples == ramp.samples);
  const auto up = resample(ramp, 8.0);
  CHECK(up.sampling_rate_hz == 8.0);
  CHECK(std::find(up.samples.begin(), up.samples.end(), 0.5) != up.samples.end());
  CHECK(std::find(up.samples.begin(), up.samples.end(), 1.5) != up.samples.end());

  const auto down = resample(flat(10, 500, 1.0), 250.0);
  CHECK(down.samples.size() >= 2499);
  CHECK(down.samples.size() <= 2501);

  try {
    resample(ramp, 0.0);
    FAIL("expected argument error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::argument);
  }
}

TEST_CASE("normalize: constant and alternating inputs") {
  for (double v : normalize(flat(10, 250, 3.0)).samples) CHECK(v == 0.0);
  std::vector<double> alt(100);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = (i % 2) ? 1.0 : -1.0;
  for (double v : normalize(alt)) CHECK(std::abs(std::abs(v) - 1.0) < 1e-6);
}

TEST_CASE("normalize: zero mean and unit variance on random input") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> d(40.0, 12.0);
  std::vector<double> x(1000);
  for (auto& v : x) v = d(rng);
  const auto z = normalize(x);
  double mean = 0.0, sq = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(z.size());
  for (double v : z) sq += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(sq / static_cast<double>(z.size()) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("synth: rhythm irregularity measured by peak detection") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto afib = synthesize({Rhythm::afib, 30.0, 250.0, 60.0, 100.0, seed, {}});
    const auto nsr = synthesize({Rhythm::nsr, 30.0, 250.0, 60.0, 100.0, seed, {}});
    const auto afib_cv = oracle::rr_cv(oracle::detect_peaks(afib.samples[0], 250.0));
    const auto nsr_cv = oracle::rr_cv(oracle::detect_peaks(nsr.samples[0], 250.0));
    CAPTURE(seed);
    CHECK(afib_cv > 0.15);
    CHECK(nsr_cv < 0.05);
  }
}

TEST_CASE("synth: deterministic per spec and labeled") {
  const SynthSpec spec{Rhythm::other, 12.5, 360.0, 60.0, 100.0, 42, {}};
  const auto a = synthesize(spec);
  const auto b = synthesize(spec);
  CHECK(a.samples == b.samples);
  CHECK(a.reference_label == Rhythm::other);
  CHECK(a.lead_names == std::vector<std::string>{"I"});
  CHECK(a.duration_s() == doctest::Approx(12.5).epsilon(1e-3));
  CHECK_NOTHROW(validate(a));
}

TEST_CASE("synth: balanced specs cover every class in range") {
  const auto specs = balanced_specs(10, 7);
  CHECK(specs.size() == 40);
  std::map<Rhythm, int> counts;
  std::set<std::string> ids;
  for (const auto& s : specs) {
    ++counts[s.rhythm];
    ids.insert(s.record_id);
    CHECK(s.duration_s >= 10.0);
    CHECK(s.duration_s <= 30.0);
  }
  for (Rhythm r : kModelClasses) CHECK(counts[r] == 10);
  CHECK(ids.size() == 40);
  const auto again = balanced_specs(10, 7);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CHECK(again[i].seed == specs[i].seed);
    CHECK(again[i].duration_s == specs[i].duration_s);
  }
}

TEST_CASE("synth: corpus segment count never drops below record count") {
  const auto specs = balanced_specs(5, 3);
  const auto records = synth_dataset(specs);
  std::size_t segments = 0;
  for (const auto& r : records) segments += split_segments(extract_lead(r, "I")).size();
  CHECK(segments >= records.size());
}
