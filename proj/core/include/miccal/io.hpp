#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "miccal/model.hpp"
#include "miccal/sigproc.hpp"
#include "miccal/tdoa.hpp"

namespace miccal {

// Scene JSON: {microphones: [[x,y,z]], source_path: [{t, pos}],
// planes: [{normal, d}], speed_of_sound, offsets,
// mirrored_microphones: [{mic_id, path_index, position, plane?}]}.
// Units are meters and seconds throughout.
std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);
void save_scene(const Scene& scene, const std::filesystem::path& path);
Scene load_scene(const std::filesystem::path& path);

// TDOA matrix CSV (row = mic, column = event, NaN = missing) plus a JSON
// sidecar {event_times, frame_spec?} next to it ("<stem>.meta.json").
void save_tdoa_csv(const TdoaMatrix& tdoa, const std::filesystem::path& path);
TdoaMatrix load_tdoa_csv(const std::filesystem::path& path);

// Peaks CSV: pair_i1,pair_i2,frame,time_s,range_diff_m,score
void save_peaks_csv(const std::vector<Peak>& peaks,
                    const std::filesystem::path& path);
std::vector<Peak> load_peaks_csv(const std::filesystem::path& path);

// Track samples CSV: pair_i1,pair_i2,frame,time_s,w_m
struct TrackSampleRow {
  int pair_i1 = 0;
  int pair_i2 = 0;
  double frame = 0.0;
  double time_s = 0.0;
  double w_m = 0.0;
};
void save_track_csv(const std::vector<TrackSampleRow>& rows,
                    const std::filesystem::path& path);
std::vector<TrackSampleRow> load_track_csv(const std::filesystem::path& path);

// PCM WAV. Readers accept 8/16/24/32-bit integer and 32-bit float data;
// the writer emits 32-bit float (default) or 16-bit integer frames.
struct WavData {
  std::vector<std::vector<double>> channels;
  double sample_rate = 0.0;
};
WavData load_wav(const std::filesystem::path& path);
void save_wav(const WavData& data, const std::filesystem::path& path,
              bool float32 = true);

void write_text_file(const std::filesystem::path& path,
                     const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace miccal
