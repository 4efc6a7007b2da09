#include "ecgstudy/scalogram.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>
#include <fmt/format.h>

#include "ecgstudy/ecg_io.hpp"
#include "ecgstudy/errors.hpp"

namespace ecgstudy {

namespace {

// |psi(u)| < 3e-18 beyond this many envelope standard deviations.
constexpr double kWaveletSupport = 9.0;

const double kMorletNorm = std::pow(std::numbers::pi, -0.25);

std::size_t fast_fft_size(std::size_t n) {
  // Smallest 2^a 3^b 5^c >= n.
  std::size_t best = 1;
  while (best < n) best *= 2;
  for (std::size_t p5 = 1; p5 < best; p5 *= 5) {
    for (std::size_t p35 = p5; p35 < best; p35 *= 3) {
      std::size_t v = p35;
      while (v < n) v *= 2;
      best = std::min(best, v);
    }
  }
  return best;
}

void check_signal(std::span<const double> signal, double fs, const ScaleGrid& grid) {
  if (signal.size() < 2) fail(ErrorCode::input, "CWT needs at least 2 samples");
  if (!(fs > 0.0) || !std::isfinite(fs)) fail(ErrorCode::input, "sampling rate must be positive");
  if (grid.scales.empty()) fail(ErrorCode::argument, "empty scale grid");
  for (std::size_t i = 0; i < signal.size(); ++i) {
    if (!std::isfinite(signal[i])) {
      fail(ErrorCode::input, fmt::format("non-finite sample at index {}", i));
    }
  }
}

struct FftwFree {
  void operator()(fftw_complex* p) const { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

FftwBuffer make_buffer(std::size_t n) {
  return FftwBuffer(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
}

// The FFTW planner is not reentrant; execution of a finished plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class FftPlan {
 public:
  FftPlan(std::size_t n, fftw_complex* in, fftw_complex* out, int sign) {
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_1d(static_cast<int>(n), in, out, sign, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  void execute() const { fftw_execute(plan_); }

 private:
  fftw_plan plan_;
};

}  // namespace

double ScaleGrid::pseudo_frequency(std::size_t i) const {
  return omega0 / (2.0 * std::numbers::pi * scales.at(i));
}

ScaleGrid scale_grid(double f_min_hz, double f_max_hz, std::size_t n_scales, double omega0) {
  if (!(f_min_hz > 0.0) || !(f_max_hz > f_min_hz) || !std::isfinite(f_max_hz)) {
    fail(ErrorCode::argument,
         fmt::format("scale grid needs 0 < f_min < f_max, got [{}, {}]", f_min_hz, f_max_hz));
  }
  if (n_scales < 2) fail(ErrorCode::argument, "scale grid needs at least 2 scales");
  if (!(omega0 > 0.0)) fail(ErrorCode::argument, "omega0 must be positive");

  ScaleGrid grid;
  grid.omega0 = omega0;
  grid.f_min_hz = f_min_hz;
  grid.f_max_hz = f_max_hz;
  grid.scales.resize(n_scales);
  const double log_ratio = std::log(f_min_hz / f_max_hz);
  for (std::size_t i = 0; i < n_scales; ++i) {
    double f;
    if (i == 0) {
      f = f_max_hz;
    } else if (i == n_scales - 1) {
      f = f_min_hz;
    } else {
      f = f_max_hz * std::exp(log_ratio * static_cast<double>(i) / static_cast<double>(n_scales - 1));
    }
    grid.scales[i] = omega0 / (2.0 * std::numbers::pi * f);
  }
  return grid;
}

std::complex<double> morlet_eval(double u, double omega0) {
  const double envelope = kMorletNorm * std::exp(-0.5 * u * u);
  return {envelope * std::cos(omega0 * u), envelope * std::sin(omega0 * u)};
}

CwtCoefficients cwt_coefficients(std::span<const double> signal, double sampling_rate_hz,
                                 const ScaleGrid& grid) {
  check_signal(signal, sampling_rate_hz, grid);
  const std::size_t n = signal.size();
  const double fs = sampling_rate_hz;

  std::vector<std::size_t> half_width(grid.size());
  std::size_t widest = 0;
  for (std::size_t s = 0; s < grid.size(); ++s) {
    const double reach = std::ceil(kWaveletSupport * grid.scales[s] * fs);
    half_width[s] = std::min<std::size_t>(n - 1, static_cast<std::size_t>(reach));
    widest = std::max(widest, half_width[s]);
  }
  // Circular convolution of length L is alias-free on [0, n) when L >= n + widest.
  const std::size_t length = fast_fft_size(n + widest);

  auto x_time = make_buffer(length);
  auto x_freq = make_buffer(length);
  auto work = make_buffer(length);
  auto work_freq = make_buffer(length);
  FftPlan forward_x(length, x_time.get(), x_freq.get(), FFTW_FORWARD);
  FftPlan forward_kernel(length, work.get(), work_freq.get(), FFTW_FORWARD);
  FftPlan inverse(length, work_freq.get(), work.get(), FFTW_BACKWARD);

  for (std::size_t k = 0; k < length; ++k) {
    x_time[k][0] = k < n ? signal[k] : 0.0;
    x_time[k][1] = 0.0;
  }
  forward_x.execute();

  CwtCoefficients out{grid.size(), n, std::vector<std::complex<double>>(grid.size() * n)};
  const double inv_length = 1.0 / static_cast<double>(length);
  for (std::size_t s = 0; s < grid.size(); ++s) {
    const double scale = grid.scales[s];
    const double weight = 1.0 / (fs * std::sqrt(scale));
    const double inv_width = 1.0 / (scale * fs);
    // W[t] = sum_k x[k] h[t - k] with h[j] = psi(j / (s fs)) / (fs sqrt(s)),
    // since conj(psi(-u)) = psi(u). Negative taps wrap to the end of the buffer.
    std::fill_n(&work[0][0], 2 * length, 0.0);
    const auto m = static_cast<long>(half_width[s]);
    for (long j = -m; j <= m; ++j) {
      const auto tap = weight * morlet_eval(static_cast<double>(j) * inv_width, grid.omega0);
      const std::size_t idx = j >= 0 ? static_cast<std::size_t>(j)
                                     : length - static_cast<std::size_t>(-j);
      work[idx][0] = tap.real();
      work[idx][1] = tap.imag();
    }
    forward_kernel.execute();
    for (std::size_t k = 0; k < length; ++k) {
      const std::complex<double> a(x_freq[k][0], x_freq[k][1]);
      const std::complex<double> b(work_freq[k][0], work_freq[k][1]);
      const auto c = a * b;
      work_freq[k][0] = c.real();
      work_freq[k][1] = c.imag();
    }
    inverse.execute();
    for (std::size_t t = 0; t < n; ++t) {
      out.at(s, t) = {work[t][0] * inv_length, work[t][1] * inv_length};
    }
  }
  return out;
}

CwtCoefficients cwt_coefficients_direct(std::span<const double> signal, double sampling_rate_hz,
                                        const ScaleGrid& grid) {
  check_signal(signal, sampling_rate_hz, grid);
  const std::size_t n = signal.size();
  const double fs = sampling_rate_hz;
  CwtCoefficients out{grid.size(), n, std::vector<std::complex<double>>(grid.size() * n)};
  for (std::size_t s = 0; s < grid.size(); ++s) {
    const double scale = grid.scales[s];
    const double weight = 1.0 / (fs * std::sqrt(scale));
    for (std::size_t t = 0; t < n; ++t) {
      std::complex<double> acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double u = (static_cast<double>(k) - static_cast<double>(t)) / (scale * fs);
        acc += signal[k] * std::conj(morlet_eval(u, grid.omega0));
      }
      out.at(s, t) = weight * acc;
    }
  }
  return out;
}

Scalogram cwt(std::span<const double> signal, double sampling_rate_hz, const ScaleGrid& grid,
              std::string segment_id) {
  const auto coeffs = cwt_coefficients(signal, sampling_rate_hz, grid);
  Scalogram out;
  out.magnitude = {coeffs.n_scales, coeffs.n_time, std::vector<double>(coeffs.values.size())};
  for (std::size_t i = 0; i < coeffs.values.size(); ++i) {
    out.magnitude.values[i] = std::abs(coeffs.values[i]);
  }
  out.sampling_rate_hz = sampling_rate_hz;
  out.grid = grid;
  out.segment_id = std::move(segment_id);
  return out;
}

ModelImage to_model_input(const Scalogram& scalogram, std::size_t height, std::size_t width) {
  const auto& mag = scalogram.magnitude;
  if (mag.n_scales == 0 || mag.n_time == 0) fail(ErrorCode::argument, "empty scalogram");
  if (height == 0 || width == 0) fail(ErrorCode::argument, "image dimensions must be positive");

  // Time axis: block averages over [floor(c T / W), floor((c + 1) T / W)).
  std::vector<double> reduced(mag.n_scales * width);
  for (std::size_t c = 0; c < width; ++c) {
    std::size_t lo = c * mag.n_time / width;
    std::size_t hi = (c + 1) * mag.n_time / width;
    lo = std::min(lo, mag.n_time - 1);
    hi = std::max(hi, lo + 1);
    for (std::size_t s = 0; s < mag.n_scales; ++s) {
      double acc = 0.0;
      for (std::size_t t = lo; t < hi; ++t) acc += mag.at(s, t);
      reduced[s * width + c] = acc / static_cast<double>(hi - lo);
    }
  }

  ModelImage image{height, width, std::vector<double>(height * width)};
  for (std::size_t r = 0; r < height; ++r) {
    double pos = 0.0;
    if (mag.n_scales > 1 && height > 1) {
      pos = static_cast<double>(r) * static_cast<double>(mag.n_scales - 1) /
            static_cast<double>(height - 1);
    }
    const auto i0 = std::min(static_cast<std::size_t>(pos), mag.n_scales - 1);
    const std::size_t i1 = std::min(i0 + 1, mag.n_scales - 1);
    const double frac = pos - static_cast<double>(i0);
    for (std::size_t c = 0; c < width; ++c) {
      const double a = reduced[i0 * width + c];
      const double v = frac == 0.0 ? a : a + frac * (reduced[i1 * width + c] - a);
      image.pixels[r * width + c] = std::log1p(v);
    }
  }

  const auto [lo_it, hi_it] = std::minmax_element(image.pixels.begin(), image.pixels.end());
  const double lo = *lo_it;
  const double span = *hi_it - lo;
  if (!(span > 1e-12 * std::max(1.0, std::abs(*hi_it)))) {
    std::fill(image.pixels.begin(), image.pixels.end(), 0.0);
  } else {
    for (double& p : image.pixels) p = (p - lo) / span;
  }
  return image;
}

std::string to_pgm(const ModelImage& image) {
  std::string out = fmt::format("P5\n{} {}\n255\n", image.width, image.height);
  out.reserve(out.size() + image.pixels.size());
  for (double p : image.pixels) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(
        std::lround(std::clamp(p, 0.0, 1.0) * 255.0))));
  }
  return out;
}

void write_pgm(const ModelImage& image, const std::filesystem::path& path) {
  write_text_file(path, to_pgm(image));
}

}  // namespace ecgstudy
