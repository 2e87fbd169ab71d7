#include "miccal/fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <mutex>

namespace miccal {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

struct Fft::Impl {
  fftw_complex* buf = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
};

Fft::Fft(int n) : n_(n), impl_(std::make_unique<Impl>()) {
  std::lock_guard<std::mutex> lock(planner_mutex());
  impl_->buf = fftw_alloc_complex(static_cast<std::size_t>(n));
  impl_->fwd = fftw_plan_dft_1d(n, impl_->buf, impl_->buf, FFTW_FORWARD,
                                FFTW_ESTIMATE);
  impl_->inv = fftw_plan_dft_1d(n, impl_->buf, impl_->buf, FFTW_BACKWARD,
                                FFTW_ESTIMATE);
}

Fft::~Fft() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(impl_->fwd);
  fftw_destroy_plan(impl_->inv);
  fftw_free(impl_->buf);
}

std::vector<std::complex<double>> Fft::forward(
    std::span<const std::complex<double>> in) const {
  std::memset(impl_->buf, 0, sizeof(fftw_complex) * n_);
  std::memcpy(impl_->buf, in.data(),
              sizeof(std::complex<double>) * std::min<std::size_t>(in.size(), n_));
  fftw_execute(impl_->fwd);
  std::vector<std::complex<double>> out(n_);
  std::memcpy(out.data(), impl_->buf, sizeof(std::complex<double>) * n_);
  return out;
}

std::vector<std::complex<double>> Fft::inverse(
    std::span<const std::complex<double>> in) const {
  std::memset(impl_->buf, 0, sizeof(fftw_complex) * n_);
  std::memcpy(impl_->buf, in.data(),
              sizeof(std::complex<double>) * std::min<std::size_t>(in.size(), n_));
  fftw_execute(impl_->inv);
  std::vector<std::complex<double>> out(n_);
  const double scale = 1.0 / n_;
  for (int i = 0; i < n_; ++i) {
    out[i] = std::complex<double>(impl_->buf[i][0] * scale,
                                  impl_->buf[i][1] * scale);
  }
  return out;
}

}  // namespace miccal
