#pragma once

#include <complex>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ecgstudy {

inline constexpr double kDefaultOmega0 = 6.0;

/// Morlet scales ordered from highest to lowest pseudo-frequency.
struct ScaleGrid {
  std::vector<double> scales;  // seconds, strictly increasing
  double omega0 = kDefaultOmega0;
  double f_min_hz = 0.0;
  double f_max_hz = 0.0;

  std::size_t size() const { return scales.size(); }
  double pseudo_frequency(std::size_t i) const;
};

ScaleGrid scale_grid(double f_min_hz = 0.5, double f_max_hz = 40.0, std::size_t n_scales = 64,
                     double omega0 = kDefaultOmega0);

/// psi(u) = pi^(-1/4) exp(i omega0 u) exp(-u^2 / 2)
std::complex<double> morlet_eval(double u, double omega0 = kDefaultOmega0);

/// Row-major n_scales x n_time matrix.
template <typename T>
struct ScaleTimeMatrix {
  std::size_t n_scales = 0;
  std::size_t n_time = 0;
  std::vector<T> values;

  T& at(std::size_t s, std::size_t t) { return values[s * n_time + t]; }
  const T& at(std::size_t s, std::size_t t) const { return values[s * n_time + t]; }
};

using CwtCoefficients = ScaleTimeMatrix<std::complex<double>>;

struct Scalogram {
  ScaleTimeMatrix<double> magnitude;
  double sampling_rate_hz = 0.0;
  ScaleGrid grid;
  std::string segment_id;
};

// W(s, t) = s^(-1/2) sum_k x[k] conj(psi((k - t) / (s fs))) / fs, zero padded.
// FFT-based linear convolution with the wavelet truncated where its envelope
// falls below double precision.
CwtCoefficients cwt_coefficients(std::span<const double> signal, double sampling_rate_hz,
                                 const ScaleGrid& grid);
/// Same transform by direct summation over every sample; O(n^2) per scale.
CwtCoefficients cwt_coefficients_direct(std::span<const double> signal, double sampling_rate_hz,
                                        const ScaleGrid& grid);

Scalogram cwt(std::span<const double> signal, double sampling_rate_hz, const ScaleGrid& grid,
              std::string segment_id = {});

/// height x width image, row-major, values in [0, 1].
struct ModelImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

inline constexpr std::size_t kImageHeight = 64;
inline constexpr std::size_t kImageWidth = 256;

/// Block-average time, interpolate scales, log1p, then per-image min-max.
ModelImage to_model_input(const Scalogram& scalogram, std::size_t height = kImageHeight,
                          std::size_t width = kImageWidth);

/// Binary (P5) graymap of an image, for visual inspection.
std::string to_pgm(const ModelImage& image);
void write_pgm(const ModelImage& image, const std::filesystem::path& path);

}  // namespace ecgstudy
