#include "miccal/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "miccal/rng.hpp"

namespace miccal {

namespace {

Eigen::Matrix3Xd random_points(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Matrix3Xd pts(3, n);
  for (int j = 0; j < n; ++j) {
    for (int a = 0; a < 3; ++a) pts(a, j) = gauss(rng);
  }
  return pts;
}

Eigen::MatrixXd build_u(const Eigen::Matrix3Xd& mics,
                        const Eigen::Matrix3Xd& sources,
                        const Eigen::VectorXd& offsets) {
  Eigen::MatrixXd U(mics.cols(), sources.cols());
  for (Eigen::Index i = 0; i < mics.cols(); ++i) {
    for (Eigen::Index j = 0; j < sources.cols(); ++j) {
      U(i, j) = (mics.col(i) - sources.col(j)).norm() + offsets(j);
    }
  }
  return U;
}

}  // namespace

Scene generate_random_scene(int m, int n, std::uint64_t seed) {
  if (m < 1 || n < 1) {
    raise(ErrorCode::ConfigInvalid, "scene needs m >= 1 mics, n >= 1 events");
  }
  std::mt19937_64 rng(SeedSplitter(seed).derive(1));
  const Eigen::Matrix3Xd mics = random_points(m, rng);
  const Eigen::Matrix3Xd sources = random_points(n, rng);

  Scene scene;
  scene.microphones.reserve(m);
  for (int i = 0; i < m; ++i) {
    scene.microphones.push_back({i + 1, mics.col(i)});
  }
  scene.source_path.samples.reserve(n);
  for (int j = 0; j < n; ++j) {
    scene.source_path.samples.push_back({0.1 * j, sources.col(j)});
  }
  scene.recompute_offsets();
  return scene;
}

AbstractInstance generate_abstract_instance(int m, int n, double offset_sigma,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(SeedSplitter(seed).derive(2));
  AbstractInstance inst;
  inst.mics = random_points(m, rng);
  inst.sources = random_points(n, rng);
  std::normal_distribution<double> gauss(0.0, offset_sigma);
  inst.offsets.resize(n);
  for (int j = 0; j < n; ++j) inst.offsets(j) = gauss(rng);
  inst.U = build_u(inst.mics, inst.sources, inst.offsets);
  return inst;
}

AbstractInstance generate_planar_abstract_instance(int m, int n,
                                                   double offset_sigma,
                                                   std::uint64_t seed) {
  AbstractInstance inst = generate_abstract_instance(m, n, offset_sigma, seed);
  inst.mics.row(2).setZero();
  inst.U = build_u(inst.mics, inst.sources, inst.offsets);
  return inst;
}

std::vector<ImagePath> image_sources(const Scene& scene, int max_order,
                                     double reflection_coeff) {
  if (max_order < 0 || max_order > 2) {
    raise(ErrorCode::ConfigInvalid, "max_order must be in {0, 1, 2}");
  }
  std::vector<ImagePath> paths;
  const int plane_count = static_cast<int>(scene.planes.size());
  for (const auto& mic : scene.microphones) {
    int k = 1;
    paths.push_back({mic.id, k++, mic.position, 1.0});
    if (max_order >= 1) {
      for (int a = 0; a < plane_count; ++a) {
        paths.push_back({mic.id, k++,
                         mirror_point(mic.position, scene.planes[a]),
                         reflection_coeff});
      }
    }
    if (max_order >= 2) {
      for (int a = 0; a < plane_count; ++a) {
        for (int b = 0; b < plane_count; ++b) {
          if (a == b) continue;  // double reflection in one plane is identity
          const Vec3 once = mirror_point(mic.position, scene.planes[a]);
          paths.push_back({mic.id, k++, mirror_point(once, scene.planes[b]),
                           reflection_coeff * reflection_coeff});
        }
      }
    }
  }
  return paths;
}

SynthTdoa synth_tdoa(const Scene& scene, const NoiseSpec& noise) {
  const Eigen::Index m = static_cast<Eigen::Index>(scene.mic_count());
  const Eigen::Index n = static_cast<Eigen::Index>(scene.source_path.size());
  if (scene.offsets.size() != static_cast<std::size_t>(n)) {
    raise(ErrorCode::SchemaError, "scene offsets out of sync with path");
  }

  SynthTdoa out;
  out.tdoa = TdoaMatrix(m, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out.tdoa.event_times[j] = scene.source_path.samples[j].t;
    const Vec3 s = scene.source_path.samples[j].pos;
    for (Eigen::Index i = 0; i < m; ++i) {
      out.tdoa.U(i, j) =
          (s - scene.microphones[i].position).norm() + scene.offsets[j];
    }
  }

  std::mt19937_64 rng(SeedSplitter(noise.seed).derive(3));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> spread(-1.0, 1.0);

  out.inlier_mask = BoolMask::Constant(m, n, true);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (noise.tdoa_sigma > 0.0) {
        out.tdoa.U(i, j) += noise.tdoa_sigma * gauss(rng);
      }
      if (noise.outlier_rate > 0.0 && unit(rng) < noise.outlier_rate) {
        out.tdoa.U(i, j) += noise.outlier_magnitude * spread(rng);
        out.inlier_mask(i, j) = false;
      }
      if (noise.missing_rate > 0.0 && unit(rng) < noise.missing_rate) {
        out.tdoa.mask(i, j) = false;
        out.inlier_mask(i, j) = false;
        out.tdoa.U(i, j) = 0.0;
      }
    }
  }
  return out;
}

namespace {

constexpr int kSincHalfTaps = 16;  // 32-tap windowed sinc

double kaiser_i0(double x) {
  // series expansion of the modified Bessel function I0
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 32; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

// Kaiser window sampled on a fine grid over |d| <= kSincHalfTaps.
const std::vector<double>& kaiser_table() {
  static const std::vector<double> table = [] {
    constexpr int kTableSize = 1 << 15;
    const double beta = 8.0;
    const double i0_beta = kaiser_i0(beta);
    std::vector<double> t(kTableSize + 2);
    for (int i = 0; i <= kTableSize; ++i) {
      const double u = static_cast<double>(i) / kTableSize;  // d / halfTaps
      t[i] = kaiser_i0(beta * std::sqrt(std::max(0.0, 1.0 - u * u))) / i0_beta;
    }
    t[kTableSize + 1] = 0.0;
    return t;
  }();
  return table;
}

double kaiser_window(double d) {
  const double u = std::abs(d) / kSincHalfTaps;
  if (u >= 1.0) return 0.0;
  const auto& table = kaiser_table();
  const double x = u * (static_cast<double>(table.size()) - 2.0);
  const int i = static_cast<int>(x);
  const double f = x - i;
  return (1.0 - f) * table[i] + f * table[i + 1];
}

// Windowed-sinc read of x at fractional index pos; zero outside the signal.
double sinc_interp(const std::vector<double>& x, double pos) {
  const int n = static_cast<int>(x.size());
  const int center = static_cast<int>(std::floor(pos));
  if (center < -kSincHalfTaps || center >= n + kSincHalfTaps) return 0.0;
  const double frac = pos - center;
  if (frac < 1e-12 && center >= 0 && center < n) {
    // On-grid read; the sinc kernel reduces to a unit impulse.
    return x[center];
  }
  double acc = 0.0;
  const int lo = std::max(center - kSincHalfTaps + 1, 0);
  const int hi = std::min(center + kSincHalfTaps, n - 1);
  // sin(pi*(pos-k)) alternates sign with k; compute it once.
  const double s = std::sin(std::numbers::pi * frac);
  double sign = ((center - lo) % 2 == 0) ? 1.0 : -1.0;
  for (int k = lo; k <= hi; ++k) {
    const double d = pos - k;
    const double sinc = sign * s / (std::numbers::pi * d);
    acc += x[k] * sinc * kaiser_window(d);
    sign = -sign;
  }
  return acc;
}

}  // namespace

MultichannelClip synth_audio(const Scene& scene,
                             const std::vector<double>& source_waveform,
                             double sample_rate, double snr_db, int max_order,
                             double reflection_coeff,
                             std::uint64_t noise_seed) {
  if (sample_rate < 8000.0) {
    raise(ErrorCode::ConfigInvalid, "sample_rate must be >= 8000 Hz");
  }
  if (source_waveform.size() < 2) {
    raise(ErrorCode::InvalidSignal, "source waveform empty");
  }
  const double waveform_span =
      static_cast<double>(source_waveform.size()) / sample_rate;
  if (!scene.source_path.empty() &&
      waveform_span + 1e-9 <
          scene.source_path.t_end() - scene.source_path.t_begin()) {
    raise(ErrorCode::InvalidSignal,
          "source waveform shorter than the source path time span");
  }

  const auto paths = image_sources(scene, max_order, reflection_coeff);

  // Longest path delay determines the tail needed after the waveform ends.
  double max_delay = 0.0;
  for (const auto& p : paths) {
    for (const auto& s : scene.source_path.samples) {
      max_delay = std::max(
          max_delay, (s.pos - p.mirrored_position).norm() / scene.speed_of_sound);
    }
  }
  const int n_samples = static_cast<int>(source_waveform.size()) +
                        static_cast<int>(std::ceil(max_delay * sample_rate)) +
                        2 * kSincHalfTaps;

  MultichannelClip clip;
  clip.sample_rate = sample_rate;
  clip.channels.assign(scene.mic_count(),
                       std::vector<double>(n_samples, 0.0));

  const double t0 = scene.source_path.empty() ? 0.0 : scene.source_path.t_begin();

  // Delays vary slowly (source speed << v), so evaluate the geometric delay
  // on a coarse grid and interpolate linearly in between.
  constexpr int kDelayBlock = 64;
  const int n_blocks = n_samples / kDelayBlock + 2;
  std::vector<double> block_delay(n_blocks);

  for (const auto& p : paths) {
    auto& channel = clip.channels[static_cast<std::size_t>(p.mic_id - 1)];
    for (int b = 0; b < n_blocks; ++b) {
      const double t = t0 + static_cast<double>(b * kDelayBlock) / sample_rate;
      const Vec3 s = scene.source_path.position_at(t);
      block_delay[b] = (s - p.mirrored_position).norm() / scene.speed_of_sound;
    }
    for (int tau = 0; tau < n_samples; ++tau) {
      const int b = tau / kDelayBlock;
      const double frac = static_cast<double>(tau - b * kDelayBlock) / kDelayBlock;
      const double delay = (1.0 - frac) * block_delay[b] + frac * block_delay[b + 1];
      const double src_pos = tau - delay * sample_rate;
      channel[tau] += p.gain * sinc_interp(source_waveform, src_pos);
    }
  }

  if (std::isfinite(snr_db)) {
    std::mt19937_64 rng(SeedSplitter(noise_seed).derive(4));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& channel : clip.channels) {
      double power = 0.0;
      for (double v : channel) power += v * v;
      power /= std::max<std::size_t>(channel.size(), 1);
      const double noise_std =
          std::sqrt(power / std::pow(10.0, snr_db / 10.0));
      for (double& v : channel) v += noise_std * gauss(rng);
    }
  }
  return clip;
}

std::vector<double> make_noise_waveform(double duration_s, double sample_rate,
                                        std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(std::ceil(duration_s * sample_rate));
  std::mt19937_64 rng(SeedSplitter(seed).derive(5));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = gauss(rng);
  return x;
}

}  // namespace miccal
