#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "ecgstudy/ecg_io.hpp"
#include "ecgstudy/scalogram.hpp"

namespace oracle {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ecgstudy-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// P(score_pos > score_neg) + P(tie) / 2 over every positive/negative pair.
inline double pairwise_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Counts (ref, pred) pairs by scanning the label lists once per cell.
inline std::size_t recount(std::span<const std::string> refs, std::span<const std::string> preds,
                           const std::string& r, const std::string& p) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) n += refs[i] == r && preds[i] == p;
  return n;
}

/// Kappa straight from the label lists, without building a matrix.
inline double kappa_from_lists(std::span<const std::string> a, std::span<const std::string> b) {
  const double n = static_cast<double>(a.size());
  std::vector<std::string> labels(a.begin(), a.end());
  labels.insert(labels.end(), b.begin(), b.end());
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i];
  double chance = 0.0;
  for (const auto& l : labels) {
    const double ca = static_cast<double>(std::count(a.begin(), a.end(), l));
    const double cb = static_cast<double>(std::count(b.begin(), b.end(), l));
    chance += (ca / n) * (cb / n);
  }
  const double pa = agree / n;
  return (pa - chance) / (1.0 - chance);
}

/// R-peak times by thresholded local maxima with a refractory gap.
inline std::vector<double> detect_peaks(std::span<const double> x, double fs) {
  double hi = 0.0;
  for (double v : x) hi = std::max(hi, v);
  const double threshold = 0.5 * hi;
  const auto refractory = static_cast<std::size_t>(0.25 * fs);
  std::vector<double> peaks;
  std::size_t last = 0;
  bool any = false;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    if (x[i] < threshold || x[i] < x[i - 1] || x[i] < x[i + 1]) continue;
    if (any && i - last < refractory) {
      if (x[i] > x[last]) {
        last = i;
        peaks.back() = static_cast<double>(i) / fs;
      }
      continue;
    }
    peaks.push_back(static_cast<double>(i) / fs);
    last = i;
    any = true;
  }
  return peaks;
}

inline double rr_cv(std::span<const double> peaks) {
  std::vector<double> rr;
  for (std::size_t i = 1; i < peaks.size(); ++i) rr.push_back(peaks[i] - peaks[i - 1]);
  double mean = 0.0;
  for (double v : rr) mean += v;
  mean /= static_cast<double>(rr.size());
  double var = 0.0;
  for (double v : rr) var += (v - mean) * (v - mean);
  var /= static_cast<double>(rr.size());
  return std::sqrt(var) / mean;
}

/// Sine of `freq_hz` sampled at `fs` for `seconds`.
inline std::vector<double> sine(double freq_hz, double fs, double seconds, double amplitude = 1.0) {
  const auto n = static_cast<std::size_t>(seconds * fs);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / fs);
  }
  return x;
}

/// Pseudo-frequency whose Morlet response to `x` at sample `t` is largest over a
/// dense log-spaced sweep, evaluated by direct summation.
inline double dense_sweep_peak(std::span<const double> x, double fs, std::size_t t,
                               std::size_t n_scales = 512, double f_lo = 0.5, double f_hi = 40.0) {
  const double w0 = 6.0;
  double best_f = 0.0;
  double best_mag = -1.0;
  for (std::size_t k = 0; k < n_scales; ++k) {
    const double f = f_lo * std::pow(f_hi / f_lo, static_cast<double>(k) / static_cast<double>(n_scales - 1));
    const double s = w0 / (2.0 * std::numbers::pi * f);
    std::complex<double> acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double u = (static_cast<double>(j) - static_cast<double>(t)) / (s * fs);
      if (std::abs(u) > 10.0) continue;
      const auto psi = std::pow(std::numbers::pi, -0.25) * std::exp(std::complex<double>(0.0, w0 * u)) *
                       std::exp(-u * u / 2.0);
      acc += x[j] * std::conj(psi);
    }
    const double mag = std::abs(acc) / (std::sqrt(s) * fs);
    if (mag > best_mag) {
      best_mag = mag;
      best_f = f;
    }
  }
  return best_f;
}

/// Random multi-lead record whose samples are exact multiples of 1/gain mV.
inline ecgstudy::EcgRecord random_record(std::mt19937_64& rng, double gain, std::size_t max_leads = 3,
                                         std::size_t max_samples = 400) {
  std::uniform_int_distribution<std::size_t> leads(1, max_leads);
  std::uniform_int_distribution<std::size_t> count(1, max_samples);
  std::uniform_int_distribution<int> raw(-32767, 32767);
  std::uniform_int_distribution<int> rate(1, 4);
  ecgstudy::EcgRecord r;
  r.record_id = "rec" + std::to_string(rng() % 100000);
  r.sampling_rate_hz = 125.0 * rate(rng);
  const std::size_t nl = leads(rng);
  const std::size_t ns = count(rng);
  static const char* names[] = {"I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};
  for (std::size_t l = 0; l < nl; ++l) {
    r.lead_names.emplace_back(names[l]);
    std::vector<double> s(ns);
    for (auto& v : s) v = raw(rng) * 1000.0 / gain;
    r.samples.push_back(std::move(s));
  }
  return r;
}

}  // namespace oracle
