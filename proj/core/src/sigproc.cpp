#include "miccal/sigproc.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "miccal/fft.hpp"

namespace miccal {

void FrameSpec::validate() const {
  if (frame_len <= 0 || hop <= 0 || hop > frame_len) {
    raise(ErrorCode::ConfigInvalid, "need 0 < hop <= frame_len");
  }
  if (!(sample_rate > 0.0)) {
    raise(ErrorCode::ConfigInvalid, "sample_rate must be set and positive");
  }
  if (!(speed_of_sound > 0.0)) {
    raise(ErrorCode::ConfigInvalid, "speed_of_sound must be positive");
  }
}

int FrameSpec::max_lag() const {
  const int room_lag =
      static_cast<int>(std::ceil(room_diameter * sample_rate / speed_of_sound));
  return std::min(frame_len / 2, room_lag);
}

int frame_count(std::size_t signal_len, const FrameSpec& spec) {
  if (signal_len < static_cast<std::size_t>(spec.frame_len)) return 0;
  return static_cast<int>((signal_len - spec.frame_len) / spec.hop) + 1;
}

double frame_center_time(int frame_index, const FrameSpec& spec) {
  return (static_cast<double>(frame_index) * spec.hop +
          0.5 * spec.frame_len) /
         spec.sample_rate;
}

std::vector<std::span<const double>> frame_signal(
    std::span<const double> channel, const FrameSpec& spec) {
  spec.validate();
  const int n = frame_count(channel.size(), spec);
  if (n == 0) {
    raise(ErrorCode::SignalTooShort,
          "signal of " + std::to_string(channel.size()) +
              " samples is shorter than one frame");
  }
  std::vector<std::span<const double>> frames;
  frames.reserve(n);
  for (int t = 0; t < n; ++t) {
    frames.push_back(channel.subspan(static_cast<std::size_t>(t) * spec.hop,
                                     spec.frame_len));
  }
  return frames;
}

Correlation gcc_phat(std::span<const double> frame1,
                     std::span<const double> frame2, int max_lag,
                     int oversample) {
  if (frame1.size() != frame2.size() || frame1.empty()) {
    raise(ErrorCode::CountMismatch, "frames must have equal nonzero length");
  }
  if (max_lag < 1 || oversample < 1) {
    raise(ErrorCode::ConfigInvalid, "max_lag and oversample must be >= 1");
  }

  double e1 = 0.0, e2 = 0.0;
  for (double v : frame1) e1 += v * v;
  for (double v : frame2) e2 += v * v;
  if (e1 <= 0.0 || e2 <= 0.0) {
    raise(ErrorCode::ZeroEnergyFrame, "frame has zero energy");
  }

  const int frame_len = static_cast<int>(frame1.size());
  // Zero-padding makes the circular correlation linear over the lag window.
  const int n = next_pow2(2 * frame_len);
  Fft fft(n);

  std::vector<std::complex<double>> a(n), b(n);
  for (int i = 0; i < frame_len; ++i) {
    a[i] = frame1[i];
    b[i] = frame2[i];
  }
  const auto A = fft.forward(a);
  const auto B = fft.forward(b);

  // Cross-power spectrum with PHAT weighting. corr(lag) = sum_t
  // f1(t) f2(t+lag), so the spectrum is conj(F1) * F2.
  std::vector<std::complex<double>> g(n);
  double max_mag = 0.0;
  for (int i = 0; i < n; ++i) {
    g[i] = std::conj(A[i]) * B[i];
    max_mag = std::max(max_mag, std::abs(g[i]));
  }
  const double floor = 1e-12 * max_mag;
  int active = 0;
  for (int i = 0; i < n; ++i) {
    const double mag = std::abs(g[i]);
    if (mag <= floor) {
      g[i] = 0.0;
    } else {
      g[i] /= mag;
      ++active;
    }
  }
  if (active == 0) {
    raise(ErrorCode::ZeroEnergyFrame, "cross-spectrum vanished");
  }

  // Spectral zero-padding interpolates the correlation onto a grid with
  // `oversample` points per sample, which the quadratic peak refinement
  // needs to stay within its accuracy budget on sinc-shaped peaks.
  const int nos = n * oversample;
  std::vector<std::complex<double>> gpad(nos, 0.0);
  if (oversample == 1) {
    gpad = g;
  } else {
    for (int i = 0; i < n / 2; ++i) gpad[i] = g[i];
    for (int i = 1; i < n / 2; ++i) gpad[nos - i] = g[n - i];
    gpad[n / 2] = 0.5 * g[n / 2];
    gpad[nos - n / 2] = 0.5 * std::conj(g[n / 2]);
  }

  Fft ifft(nos);
  const auto corr_full = ifft.inverse(gpad);

  Correlation out;
  out.max_lag = max_lag;
  out.oversample = oversample;
  const int count = 2 * max_lag * oversample + 1;
  out.values.resize(count);
  const double scale = static_cast<double>(nos) / active;
  for (int i = 0; i < count; ++i) {
    int idx = i - max_lag * oversample;  // grid index, may be negative
    if (idx < 0) idx += nos;
    out.values[i] = corr_full[idx].real() * scale;
  }
  return out;
}

std::vector<CorrelationPeak> top_peaks(const Correlation& corr, int k,
                                       double threshold) {
  if (k < 1) raise(ErrorCode::ConfigInvalid, "k must be >= 1");
  std::vector<CorrelationPeak> found;
  const auto& y = corr.values;
  for (std::size_t i = 1; i + 1 < y.size(); ++i) {
    if (!(y[i] > y[i - 1] && y[i] > y[i + 1])) continue;  // strict maxima
    if (y[i] <= threshold) continue;
    const double denom = y[i - 1] - 2.0 * y[i] + y[i + 1];
    double delta = 0.0;
    if (denom < 0.0) {
      delta = 0.5 * (y[i - 1] - y[i + 1]) / denom;
      delta = std::clamp(delta, -0.5, 0.5);
    }
    CorrelationPeak p;
    p.lag = corr.lag_at(i) + delta / corr.oversample;
    p.score = y[i] - 0.25 * (y[i - 1] - y[i + 1]) * delta;
    found.push_back(p);
  }
  std::stable_sort(found.begin(), found.end(),
                   [](const CorrelationPeak& a, const CorrelationPeak& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return std::abs(a.lag) < std::abs(b.lag);
                   });
  if (static_cast<int>(found.size()) > k) found.resize(k);
  return found;
}

ScoreMatrixResult score_matrix(std::span<const double> channel1,
                               std::span<const double> channel2, int index1,
                               int index2, const FrameSpec& spec, int k,
                               double threshold, bool keep_matrix) {
  spec.validate();
  const auto frames1 = frame_signal(channel1, spec);
  const auto frames2 = frame_signal(channel2, spec);
  const int n_frames = static_cast<int>(std::min(frames1.size(), frames2.size()));
  const int max_lag = spec.max_lag();
  const int oversample = 4;
  const int lag_count = 2 * max_lag * oversample + 1;

  ScoreMatrixResult out;
  out.matrix.pair_i1 = index1;
  out.matrix.pair_i2 = index2;
  if (keep_matrix) {
    out.matrix.values.setZero(lag_count, n_frames);
    out.matrix.lag_m.resize(lag_count);
    for (int i = 0; i < lag_count; ++i) {
      out.matrix.lag_m[i] = (static_cast<double>(i) / oversample - max_lag) *
                            spec.meters_per_sample();
    }
  }
  out.matrix.frame_time_s.resize(n_frames);

  for (int t = 0; t < n_frames; ++t) {
    out.matrix.frame_time_s[t] = frame_center_time(t, spec);
    Correlation corr;
    try {
      corr = gcc_phat(frames1[t], frames2[t], max_lag, oversample);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ZeroEnergyFrame) continue;  // silent frame
      throw;
    }
    if (keep_matrix) {
      for (int i = 0; i < lag_count; ++i) {
        out.matrix.values(i, t) = static_cast<float>(corr.values[i]);
      }
    }
    for (const auto& cp : top_peaks(corr, k, threshold)) {
      Peak p;
      p.pair_i1 = index1;
      p.pair_i2 = index2;
      p.frame_index = t;
      p.time_s = out.matrix.frame_time_s[t];
      p.range_diff = cp.lag * spec.meters_per_sample();
      p.score = cp.score;
      out.peaks.push_back(p);
    }
  }
  return out;
}

namespace {

// RMS over a centered boxcar, via a running sum of squares.
std::vector<double> rms_energy(const std::vector<double>& x, int window) {
  const int n = static_cast<int>(x.size());
  std::vector<double> cum(n + 1, 0.0);
  for (int i = 0; i < n; ++i) cum[i + 1] = cum[i] + x[i] * x[i];
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    const int a = std::max(0, i - window + 1);
    const double e = (cum[i + 1] - cum[a]) / std::max(1, i + 1 - a);
    out[i] = std::sqrt(e);
  }
  return out;
}

}  // namespace

ClapDetection detect_claps(const std::vector<std::vector<double>>& channels,
                           const FrameSpec& spec) {
  spec.validate();
  if (channels.size() < 2) {
    raise(ErrorCode::ConfigInvalid, "clap detection needs >= 2 channels");
  }
  const double rate = spec.sample_rate;
  const int short_win = std::max(1, static_cast<int>(0.010 * rate));
  const int base_win = std::max(short_win + 1, static_cast<int>(0.100 * rate));
  const double flank_ratio = 6.0;
  // Refractory period between onsets on one channel.
  const int holdoff = static_cast<int>(0.050 * rate);

  ClapDetection out;
  out.onsets_per_channel.resize(channels.size());

  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto& x = channels[c];
    const int n = static_cast<int>(x.size());
    if (n < base_win + short_win) continue;
    const auto rms = rms_energy(x, short_win);
    std::vector<double> cum(n + 1, 0.0);
    for (int i = 0; i < n; ++i) cum[i + 1] = cum[i] + x[i] * x[i];
    int last = -holdoff;
    for (int i = base_win; i < n; ++i) {
      const double base =
          std::sqrt((cum[i] - cum[i - base_win]) / base_win) + 1e-12;
      if (rms[i] > flank_ratio * base && i - last >= holdoff) {
        out.onsets_per_channel[c].push_back(i / rate);
        last = i;
      }
    }
  }

  // Match onsets across channels: a window of the maximum physical delay
  // around each channel-1 onset must contain exactly one onset per channel,
  // and neighbouring claps must not overlap the window.
  const double window = spec.room_diameter / spec.speed_of_sound;
  const std::size_t m = channels.size();
  const auto& ref = out.onsets_per_channel[0];
  for (std::size_t e = 0; e < ref.size(); ++e) {
    const double t1 = ref[e];
    // Claps too close together are ambiguous; drop both.
    if (e > 0 && t1 - ref[e - 1] < 2.0 * window) continue;
    if (e + 1 < ref.size() && ref[e + 1] - t1 < 2.0 * window) continue;

    ClapEvent event;
    event.onset_times.resize(m);
    event.onset_times[0] = t1;
    bool complete = true;
    for (std::size_t c = 1; c < m && complete; ++c) {
      const auto& on = out.onsets_per_channel[c];
      int hits = 0;
      double t = 0.0;
      for (double v : on) {
        if (std::abs(v - t1) <= window) {
          ++hits;
          t = v;
        }
      }
      if (hits != 1) {
        complete = false;
      } else {
        event.onset_times[c] = t;
      }
    }
    if (!complete) continue;
    event.u.resize(m);
    for (std::size_t c = 0; c < m; ++c) {
      event.u[c] = spec.speed_of_sound * (event.onset_times[c] - t1);
    }
    out.events.push_back(std::move(event));
  }
  return out;
}

}  // namespace miccal
