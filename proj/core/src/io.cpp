#include "miccal/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace miccal {

using nlohmann::json;

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    raise(ErrorCode::SchemaError, "expected [x,y,z] triple");
  }
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json plane_to_json(const Plane& p) {
  return json{{"normal", vec3_to_json(p.unit_normal)}, {"d", p.offset_d}};
}

Plane plane_from_json(const json& j) {
  return Plane(vec3_from_json(j.at("normal")), j.at("d").get<double>());
}

}  // namespace

std::string scene_to_json(const Scene& scene) {
  json j;
  j["microphones"] = json::array();
  for (const auto& m : scene.microphones) {
    j["microphones"].push_back(vec3_to_json(m.position));
  }
  j["source_path"] = json::array();
  for (const auto& s : scene.source_path.samples) {
    j["source_path"].push_back(json{{"t", s.t}, {"pos", vec3_to_json(s.pos)}});
  }
  j["planes"] = json::array();
  for (const auto& p : scene.planes) {
    j["planes"].push_back(plane_to_json(p));
  }
  j["speed_of_sound"] = scene.speed_of_sound;
  j["offsets"] = scene.offsets;
  if (!scene.mirrored_microphones.empty()) {
    j["mirrored_microphones"] = json::array();
    for (const auto& mm : scene.mirrored_microphones) {
      json e{{"mic_id", mm.mic_id},
             {"path_index", mm.path_index},
             {"position", vec3_to_json(mm.position)}};
      if (mm.has_plane) e["plane"] = plane_to_json(mm.plane);
      j["mirrored_microphones"].push_back(e);
    }
  }
  return j.dump(2) + "\n";
}

Scene scene_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::SchemaError, std::string("scene json: ") + e.what());
  }
  try {
    Scene scene;
    int id = 1;
    for (const auto& m : j.at("microphones")) {
      scene.microphones.push_back({id++, vec3_from_json(m)});
    }
    for (const auto& s : j.at("source_path")) {
      scene.source_path.samples.push_back(
          {s.at("t").get<double>(), vec3_from_json(s.at("pos"))});
    }
    if (j.contains("planes")) {
      for (const auto& p : j["planes"]) {
        scene.planes.push_back(plane_from_json(p));
      }
    }
    scene.speed_of_sound = j.at("speed_of_sound").get<double>();
    if (j.contains("offsets")) {
      scene.offsets = j["offsets"].get<std::vector<double>>();
    }
    if (j.contains("mirrored_microphones")) {
      for (const auto& e : j["mirrored_microphones"]) {
        MirroredMicrophone mm;
        mm.mic_id = e.at("mic_id").get<int>();
        mm.path_index = e.at("path_index").get<int>();
        mm.position = vec3_from_json(e.at("position"));
        if (e.contains("plane")) {
          mm.has_plane = true;
          mm.plane = plane_from_json(e["plane"]);
        }
        scene.mirrored_microphones.push_back(mm);
      }
    }
    if (scene.speed_of_sound <= 0.0) {
      raise(ErrorCode::SchemaError, "speed_of_sound must be positive");
    }
    if (!scene.offsets.empty() &&
        scene.offsets.size() != scene.source_path.size()) {
      raise(ErrorCode::SchemaError, "offsets length != source path length");
    }
    return scene;
  } catch (const json::exception& e) {
    raise(ErrorCode::SchemaError, std::string("scene json: ") + e.what());
  }
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(ErrorCode::SchemaError, "cannot write " + path.string());
  f << text;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(ErrorCode::SchemaError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  write_text_file(path, scene_to_json(scene));
}

Scene load_scene(const std::filesystem::path& path) {
  return scene_from_json(read_text_file(path));
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p.replace_extension(".meta.json");
  return p;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NaN";
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

void save_tdoa_csv(const TdoaMatrix& tdoa, const std::filesystem::path& path) {
  std::ostringstream ss;
  for (Eigen::Index i = 0; i < tdoa.rows(); ++i) {
    for (Eigen::Index j = 0; j < tdoa.cols(); ++j) {
      if (j) ss << ',';
      ss << (tdoa.mask(i, j) ? format_double(tdoa.U(i, j)) : "NaN");
    }
    ss << '\n';
  }
  write_text_file(path, ss.str());

  json meta;
  meta["event_times"] = tdoa.event_times;
  write_text_file(sidecar_path(path), meta.dump(2) + "\n");
}

TdoaMatrix load_tdoa_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      if (cell == "NaN" || cell == "nan" || cell.empty()) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        try {
          row.push_back(std::stod(cell));
        } catch (const std::exception&) {
          raise(ErrorCode::SchemaError,
                "bad numeric cell '" + cell + "' in " + path.string());
        }
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      raise(ErrorCode::SchemaError, "ragged csv in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) raise(ErrorCode::SchemaError, "empty csv " + path.string());

  TdoaMatrix out(static_cast<Eigen::Index>(rows.size()),
                 static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const double v = rows[i][j];
      if (std::isnan(v)) {
        out.mask(i, j) = false;
        out.U(i, j) = 0.0;
      } else {
        out.U(i, j) = v;
      }
    }
  }
  const auto meta_path = sidecar_path(path);
  if (std::filesystem::exists(meta_path)) {
    try {
      json meta = json::parse(read_text_file(meta_path));
      if (meta.contains("event_times")) {
        out.event_times = meta["event_times"].get<std::vector<double>>();
      }
    } catch (const json::exception& e) {
      raise(ErrorCode::SchemaError, std::string("tdoa sidecar: ") + e.what());
    }
  }
  if (out.event_times.size() != static_cast<std::size_t>(out.cols())) {
    out.event_times.resize(out.cols());
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out.event_times[j] = static_cast<double>(j);
    }
  }
  return out;
}

void save_peaks_csv(const std::vector<Peak>& peaks,
                    const std::filesystem::path& path) {
  std::ostringstream ss;
  ss << "pair_i1,pair_i2,frame,time_s,range_diff_m,score\n";
  for (const auto& p : peaks) {
    ss << p.pair_i1 << ',' << p.pair_i2 << ',' << p.frame_index << ','
       << format_double(p.time_s) << ',' << format_double(p.range_diff) << ','
       << format_double(p.score) << '\n';
  }
  write_text_file(path, ss.str());
}

std::vector<Peak> load_peaks_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<Peak> peaks;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("pair_i1", 0) == 0) continue;
    }
    Peak p;
    std::istringstream ls(line);
    std::string cell;
    try {
      std::getline(ls, cell, ','); p.pair_i1 = std::stoi(cell);
      std::getline(ls, cell, ','); p.pair_i2 = std::stoi(cell);
      std::getline(ls, cell, ','); p.frame_index = std::stoi(cell);
      std::getline(ls, cell, ','); p.time_s = std::stod(cell);
      std::getline(ls, cell, ','); p.range_diff = std::stod(cell);
      std::getline(ls, cell, ','); p.score = std::stod(cell);
    } catch (const std::exception&) {
      raise(ErrorCode::SchemaError, "bad peaks row in " + path.string());
    }
    peaks.push_back(p);
  }
  return peaks;
}

void save_track_csv(const std::vector<TrackSampleRow>& rows,
                    const std::filesystem::path& path) {
  std::ostringstream ss;
  ss << "pair_i1,pair_i2,frame,time_s,w_m\n";
  for (const auto& r : rows) {
    ss << r.pair_i1 << ',' << r.pair_i2 << ',' << format_double(r.frame) << ','
       << format_double(r.time_s) << ',' << format_double(r.w_m) << '\n';
  }
  write_text_file(path, ss.str());
}

std::vector<TrackSampleRow> load_track_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<TrackSampleRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("pair_i1", 0) == 0) continue;
    }
    TrackSampleRow r;
    std::istringstream ls(line);
    std::string cell;
    try {
      std::getline(ls, cell, ','); r.pair_i1 = std::stoi(cell);
      std::getline(ls, cell, ','); r.pair_i2 = std::stoi(cell);
      std::getline(ls, cell, ','); r.frame = std::stod(cell);
      std::getline(ls, cell, ','); r.time_s = std::stod(cell);
      std::getline(ls, cell, ','); r.w_m = std::stod(cell);
    } catch (const std::exception&) {
      raise(ErrorCode::SchemaError, "bad track row in " + path.string());
    }
    rows.push_back(r);
  }
  return rows;
}

// ---- WAV ----

namespace {

template <typename T>
T read_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(p[i]) << (8 * i);
  }
  return v;
}

void append_le(std::string& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

}  // namespace

WavData load_wav(const std::filesystem::path& path) {
  const std::string raw = read_text_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  const std::size_t len = raw.size();
  if (len < 12 || std::memcmp(p, "RIFF", 4) != 0 ||
      std::memcmp(p + 8, "WAVE", 4) != 0) {
    raise(ErrorCode::SchemaError, "not a RIFF/WAVE file: " + path.string());
  }

  int format = 0, channels = 0, bits = 0;
  double rate = 0.0;
  std::size_t data_off = 0, data_len = 0;

  std::size_t off = 12;
  while (off + 8 <= len) {
    const char* tag = reinterpret_cast<const char*>(p + off);
    const std::uint32_t chunk_len = read_le<std::uint32_t>(p + off + 4);
    const std::size_t body = off + 8;
    if (std::memcmp(tag, "fmt ", 4) == 0 && body + 16 <= len) {
      format = read_le<std::uint16_t>(p + body);
      channels = read_le<std::uint16_t>(p + body + 2);
      rate = read_le<std::uint32_t>(p + body + 4);
      bits = read_le<std::uint16_t>(p + body + 14);
      if (format == 0xfffe && chunk_len >= 40 && body + 26 <= len) {
        format = read_le<std::uint16_t>(p + body + 24);  // subformat tag
      }
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data_off = body;
      data_len = std::min<std::size_t>(chunk_len, len - body);
    }
    off = body + chunk_len + (chunk_len & 1u);
  }

  if (channels <= 0 || rate <= 0.0 || data_off == 0) {
    raise(ErrorCode::SchemaError, "missing fmt/data chunk: " + path.string());
  }
  const bool is_float = format == 3;
  if (!is_float && format != 1) {
    raise(ErrorCode::SchemaError, "unsupported wav format tag");
  }
  if (is_float && bits != 32) {
    raise(ErrorCode::SchemaError, "float wav must be 32-bit");
  }
  if (!is_float && bits != 8 && bits != 16 && bits != 24 && bits != 32) {
    raise(ErrorCode::SchemaError, "unsupported pcm bit depth");
  }

  const int bytes_per = bits / 8;
  const std::size_t frame_bytes = static_cast<std::size_t>(bytes_per) * channels;
  const std::size_t frames = data_len / frame_bytes;

  WavData out;
  out.sample_rate = rate;
  out.channels.assign(channels, std::vector<double>(frames));
  const unsigned char* d = p + data_off;
  for (std::size_t f = 0; f < frames; ++f) {
    for (int c = 0; c < channels; ++c) {
      const unsigned char* s = d + f * frame_bytes + c * bytes_per;
      double v = 0.0;
      if (is_float) {
        float fv;
        std::memcpy(&fv, s, 4);
        v = fv;
      } else if (bits == 8) {
        v = (static_cast<int>(s[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(read_le<std::uint16_t>(s)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t iv = s[0] | (s[1] << 8) | (s[2] << 16);
        if (iv & 0x800000) iv |= ~0xffffff;
        v = iv / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(read_le<std::uint32_t>(s)) / 2147483648.0;
      }
      out.channels[c][f] = v;
    }
  }
  return out;
}

void save_wav(const WavData& data, const std::filesystem::path& path,
              bool float32) {
  if (data.channels.empty() || data.sample_rate <= 0.0) {
    raise(ErrorCode::SchemaError, "wav data needs channels and a sample rate");
  }
  const std::size_t frames = data.channels.front().size();
  for (const auto& c : data.channels) {
    if (c.size() != frames) {
      raise(ErrorCode::CountMismatch, "wav channels differ in length");
    }
  }
  const int channels = static_cast<int>(data.channels.size());
  const int bits = float32 ? 32 : 16;
  const int bytes_per = bits / 8;
  const std::uint32_t data_bytes =
      static_cast<std::uint32_t>(frames * channels * bytes_per);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  append_le(out, 36 + data_bytes, 4);
  out += "WAVE";
  out += "fmt ";
  append_le(out, 16, 4);
  append_le(out, float32 ? 3 : 1, 2);
  append_le(out, static_cast<std::uint32_t>(channels), 2);
  append_le(out, static_cast<std::uint32_t>(data.sample_rate), 4);
  append_le(out,
            static_cast<std::uint32_t>(data.sample_rate) * channels * bytes_per,
            4);
  append_le(out, static_cast<std::uint32_t>(channels * bytes_per), 2);
  append_le(out, static_cast<std::uint32_t>(bits), 2);
  out += "data";
  append_le(out, data_bytes, 4);

  for (std::size_t f = 0; f < frames; ++f) {
    for (int c = 0; c < channels; ++c) {
      const double v = data.channels[c][f];
      if (float32) {
        const float fv = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &fv, 4);
        append_le(out, u, 4);
      } else {
        const double clamped = std::clamp(v, -1.0, 1.0);
        const auto iv = static_cast<std::int16_t>(
            std::lround(clamped * 32767.0));
        append_le(out, static_cast<std::uint16_t>(iv), 2);
      }
    }
  }
  write_text_file(path, out);
}

}  // namespace miccal
