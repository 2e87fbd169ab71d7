#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

namespace miccal {

// Complex FFT of a fixed size, backed by FFTW. One instance is not safe
// for concurrent use; create one per worker. Plan creation and destruction
// are internally serialized.
class Fft {
 public:
  explicit Fft(int n);
  ~Fft();
  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;

  int size() const { return n_; }

  std::vector<std::complex<double>> forward(
      std::span<const std::complex<double>> in) const;
  // Includes the 1/n normalization.
  std::vector<std::complex<double>> inverse(
      std::span<const std::complex<double>> in) const;

 private:
  int n_;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace miccal
