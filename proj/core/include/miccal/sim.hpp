#pragma once

#include <cstdint>
#include <vector>

#include "miccal/model.hpp"
#include "miccal/tdoa.hpp"

namespace miccal {

// One propagation path to a (possibly mirrored) microphone position.
// k = 1 is the direct path with gain 1; reflections carry gain rho^order.
struct ImagePath {
  int mic_id = 0;
  int path_index = 1;
  Vec3 mirrored_position = Vec3::Zero();
  double gain = 1.0;
};

struct NoiseSpec {
  double tdoa_sigma = 0.0;       // meters
  double outlier_rate = 0.0;     // fraction of entries replaced
  double missing_rate = 0.0;     // fraction of entries masked
  double outlier_magnitude = 1.0;  // meters, uniform outlier scale
  std::uint64_t seed = 0;
};

struct SynthTdoa {
  TdoaMatrix tdoa;
  BoolMask inlier_mask;  // observed and not replaced by an outlier
};

// Offset-free abstract instance for solver studies: positions i.i.d.
// standard normal, offsets Gaussian with the given std (not tied to the
// geometry, so this is not a physically consistent Scene).
struct AbstractInstance {
  Eigen::MatrixXd U;        // u_ij = ||r_i - s_j|| + o_j
  Eigen::VectorXd offsets;  // o_true
  Eigen::Matrix3Xd mics;
  Eigen::Matrix3Xd sources;
};

// Physically consistent random scene: mic and source positions i.i.d.
// standard normal (meters), offsets o_j = -||s_j - r_1||, no planes.
Scene generate_random_scene(int m, int n, std::uint64_t seed);

AbstractInstance generate_abstract_instance(int m, int n, double offset_sigma,
                                            std::uint64_t seed);

// Planar-microphone variant (mics confined to z = 0) for the K = 2 cases.
AbstractInstance generate_planar_abstract_instance(int m, int n,
                                                   double offset_sigma,
                                                   std::uint64_t seed);

// All image paths of the scene's planes up to max_order in {0, 1, 2}.
// Order-2 entries are compositions of two distinct planes.
std::vector<ImagePath> image_sources(const Scene& scene, int max_order,
                                     double reflection_coeff = 0.7);

// Direct-path TDOA matrix from the scene with Gaussian noise, uniform
// outliers and missing-data masking per the noise spec.
SynthTdoa synth_tdoa(const Scene& scene, const NoiseSpec& noise);

struct MultichannelClip {
  std::vector<std::vector<double>> channels;
  double sample_rate = 0.0;
};

// Multichannel audio: per channel, the sum over image paths of the
// gain-scaled, fractionally delayed source waveform plus white noise at
// snr_db (per channel, relative to its clean signal). snr_db = inf
// disables the noise.
MultichannelClip synth_audio(const Scene& scene,
                             const std::vector<double>& source_waveform,
                             double sample_rate, double snr_db, int max_order,
                             double reflection_coeff = 0.7,
                             std::uint64_t noise_seed = 0);

// Gaussian white-noise source signal, unit RMS.
std::vector<double> make_noise_waveform(double duration_s, double sample_rate,
                                        std::uint64_t seed);

}  // namespace miccal
