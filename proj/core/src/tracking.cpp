#include "miccal/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "miccal/rng.hpp"

namespace miccal {

double Track::mean_score() const {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (const auto& x : samples) s += x.score;
  return s / static_cast<double>(samples.size());
}

namespace {

struct Line {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<int> inlier_idx;  // indices into the window peak list
};

// Least-squares refit of a line on the given peaks.
void refit_line(const std::vector<Peak>& peaks, const std::vector<int>& idx,
                double* slope, double* intercept) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(idx.size());
  for (int k : idx) {
    const double x = peaks[k].frame_index;
    const double y = peaks[k].range_diff;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-12) {
    *slope = 0.0;
    *intercept = sy / n;
  } else {
    *slope = (n * sxy - sx * sy) / denom;
    *intercept = (sy - *slope * sx) / n;
  }
}

int shared_inliers(const std::vector<int>& a, const std::vector<int>& b) {
  int shared = 0;
  for (int x : a) {
    if (std::find(b.begin(), b.end(), x) != b.end()) ++shared;
  }
  return shared;
}

}  // namespace

std::vector<Tracklet> fit_tracklets(const std::vector<Peak>& peaks,
                                    const TrackingParams& params) {
  std::vector<Tracklet> out;
  if (peaks.empty()) return out;
  for (std::size_t k = 1; k < peaks.size(); ++k) {
    if (peaks[k].frame_index < peaks[k - 1].frame_index) {
      raise(ErrorCode::ConfigInvalid, "peaks must be sorted by frame");
    }
  }

  const int first = peaks.front().frame_index;
  const int last = peaks.back().frame_index;
  const int stride = params.window - 1;  // windows overlap by one frame
  std::mt19937_64 rng(SeedSplitter(params.seed).derive(31));

  int tracklet_id = 0;
  for (int a = first; a <= last; a += stride) {
    const int b = a + params.window - 1;
    // window peak list
    std::vector<int> widx;
    for (std::size_t k = 0; k < peaks.size(); ++k) {
      if (peaks[k].frame_index >= a && peaks[k].frame_index <= b) {
        widx.push_back(static_cast<int>(k));
      }
    }
    if (static_cast<int>(widx.size()) < params.min_inliers) continue;

    // candidate pairs from distinct frames, non-repeating
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t x = 0; x < widx.size(); ++x) {
      for (std::size_t y = x + 1; y < widx.size(); ++y) {
        if (peaks[widx[x]].frame_index != peaks[widx[y]].frame_index) {
          pairs.emplace_back(widx[x], widx[y]);
        }
      }
    }
    if (pairs.empty()) continue;
    if (static_cast<int>(pairs.size()) > params.ransac_iterations) {
      std::shuffle(pairs.begin(), pairs.end(), rng);
      pairs.resize(params.ransac_iterations);
    }

    std::vector<Line> lines;
    for (const auto& [p1, p2] : pairs) {
      const double x1 = peaks[p1].frame_index, y1 = peaks[p1].range_diff;
      const double x2 = peaks[p2].frame_index, y2 = peaks[p2].range_diff;
      Line line;
      line.slope = (y2 - y1) / (x2 - x1);
      line.intercept = y1 - line.slope * x1;
      for (int k : widx) {
        const double d = std::abs(peaks[k].range_diff -
                                  (line.slope * peaks[k].frame_index +
                                   line.intercept));
        if (d <= params.inlier_tol) line.inlier_idx.push_back(k);
      }
      if (static_cast<int>(line.inlier_idx.size()) >= params.min_inliers) {
        lines.push_back(std::move(line));
      }
    }
    std::stable_sort(lines.begin(), lines.end(),
                     [](const Line& l, const Line& r) {
                       return l.inlier_idx.size() > r.inlier_idx.size();
                     });

    // lines sharing more than one inlier: keep the stronger one
    std::vector<Line> accepted;
    for (auto& line : lines) {
      bool clash = false;
      for (const auto& acc : accepted) {
        if (shared_inliers(line.inlier_idx, acc.inlier_idx) > 1) {
          clash = true;
          break;
        }
      }
      if (!clash) accepted.push_back(std::move(line));
    }

    for (auto& line : accepted) {
      refit_line(peaks, line.inlier_idx, &line.slope, &line.intercept);
      Tracklet t;
      t.pair_i1 = peaks[line.inlier_idx.front()].pair_i1;
      t.pair_i2 = peaks[line.inlier_idx.front()].pair_i2;
      t.frame_begin = a;
      t.frame_end = b;
      t.slope = line.slope;
      t.intercept = line.intercept;
      for (int k : line.inlier_idx) t.inliers.push_back(peaks[k]);
      out.push_back(std::move(t));
      ++tracklet_id;
    }
  }
  (void)tracklet_id;
  return out;
}

namespace {

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

bool compatible(const Tracklet& t1, const Tracklet& t2,
                const TrackingParams& params) {
  const Tracklet& early = t1.frame_begin <= t2.frame_begin ? t1 : t2;
  const Tracklet& late = t1.frame_begin <= t2.frame_begin ? t2 : t1;
  const int gap = late.frame_begin - early.frame_end;
  if (gap > params.merge_gap_max) return false;
  // Extrapolate each line onto the other's end frames.
  const double d1 =
      std::abs(early.at(late.frame_begin) - late.at(late.frame_begin));
  const double d2 =
      std::abs(late.at(early.frame_end) - early.at(early.frame_end));
  return std::max(d1, d2) < params.line_tol;
}

}  // namespace

std::vector<Track> merge_tracklets(const std::vector<Tracklet>& tracklets,
                                   const TrackingParams& params) {
  const int n = static_cast<int>(tracklets.size());
  std::vector<Track> out;
  if (n == 0) return out;

  struct Edge {
    int a, b;
    std::size_t weight;
  };
  std::vector<Edge> edges;
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (compatible(tracklets[a], tracklets[b], params)) {
        edges.push_back(
            {a, b, tracklets[a].inliers.size() + tracklets[b].inliers.size()});
      }
    }
  }
  std::stable_sort(edges.begin(), edges.end(),
                   [](const Edge& x, const Edge& y) {
                     return x.weight > y.weight;
                   });
  DisjointSet ds(n);
  for (const auto& e : edges) ds.unite(e.a, e.b);

  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) groups[ds.find(i)].push_back(i);

  for (const auto& [root, members] : groups) {
    // gather samples; one per frame, strongest peak wins
    std::map<int, TrackSample> by_frame;
    Track track;
    track.pair_i1 = tracklets[members.front()].pair_i1;
    track.pair_i2 = tracklets[members.front()].pair_i2;
    for (int t : members) {
      track.tracklet_ids.push_back(t);
      for (const auto& p : tracklets[t].inliers) {
        auto it = by_frame.find(p.frame_index);
        if (it == by_frame.end() || p.score > it->second.score) {
          by_frame[p.frame_index] = {p.frame_index, p.range_diff, p.score};
        }
      }
    }
    // split at gaps beyond the merge threshold to keep tracks contiguous
    Track current = track;
    current.samples.clear();
    int prev_frame = std::numeric_limits<int>::min();
    for (const auto& [frame, sample] : by_frame) {
      if (!current.samples.empty() &&
          frame - prev_frame > params.merge_gap_max) {
        out.push_back(current);
        current.samples.clear();
      }
      current.samples.push_back(sample);
      prev_frame = frame;
    }
    if (!current.samples.empty()) out.push_back(current);
  }
  std::stable_sort(out.begin(), out.end(), [](const Track& a, const Track& b) {
    return a.samples.empty()
               ? false
               : (b.samples.empty() ? true
                                    : a.samples.front().frame <
                                          b.samples.front().frame);
  });
  return out;
}

Track select_direct_path(const std::vector<Track>& tracks) {
  if (tracks.empty()) raise(ErrorCode::NoTracks, "no tracks to select from");
  const Track* best = &tracks.front();
  for (const auto& t : tracks) {
    if (t.size() > best->size() ||
        (t.size() == best->size() && t.mean_score() > best->mean_score())) {
      best = &t;
    }
  }
  return *best;
}

Track smooth_track(const Track& track, int span) {
  if (span < 3 || span % 2 == 0) {
    raise(ErrorCode::ConfigInvalid, "smoothing span must be odd and >= 3");
  }
  Track out = track;
  const int n = static_cast<int>(track.samples.size());
  const int half = span / 2;

  for (int t = 0; t < n; ++t) {
    const int f0 = track.samples[t].frame;
    std::vector<int> idx;
    for (int k = 0; k < n; ++k) {
      if (std::abs(track.samples[k].frame - f0) <= half) idx.push_back(k);
    }
    if (static_cast<int>(idx.size()) < 4) continue;

    auto fit_at = [&](const std::vector<int>& use, double frame) {
      // quadratic LS centered at f0
      Eigen::MatrixXd X(use.size(), 3);
      Eigen::VectorXd y(use.size());
      for (std::size_t r = 0; r < use.size(); ++r) {
        const double x = track.samples[use[r]].frame - f0;
        X(r, 0) = 1.0;
        X(r, 1) = x;
        X(r, 2) = x * x;
        y(r) = track.samples[use[r]].w;
      }
      const Eigen::Vector3d beta =
          (X.transpose() * X + 1e-12 * Eigen::Matrix3d::Identity())
              .ldlt()
              .solve(X.transpose() * y);
      const double x = frame - f0;
      return beta(0) + beta(1) * x + beta(2) * x * x;
    };

    // first pass: residual scale
    std::vector<double> res(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      res[r] = track.samples[idx[r]].w - fit_at(idx, track.samples[idx[r]].frame);
    }
    std::vector<double> absres = res;
    for (auto& v : absres) v = std::abs(v);
    std::nth_element(absres.begin(), absres.begin() + absres.size() / 2,
                     absres.end());
    const double robust_std = 1.4826 * absres[absres.size() / 2];
    const double gate = 3.0 * robust_std + 1e-12;

    double self_res = 0.0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] == t) self_res = std::abs(res[r]);
    }
    if (self_res > gate) {
      // refit without the outliers, replace the sample by the fit value
      std::vector<int> keep;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (std::abs(res[r]) <= gate) keep.push_back(idx[r]);
      }
      if (static_cast<int>(keep.size()) >= 3) {
        out.samples[t].w = fit_at(keep, f0);
      }
    }
  }
  return out;
}

TdoaMatrix assemble_matching_matrix(const std::map<int, Track>& direct_tracks,
                                    int mic_count, const FrameSpec& spec,
                                    const TrackingParams& params) {
  spec.validate();
  // Per-pair piecewise-linear interpolators with bounded gaps.
  auto value_at = [&](const Track& track, int frame, double* w) {
    const auto& s = track.samples;
    auto it = std::lower_bound(
        s.begin(), s.end(), frame,
        [](const TrackSample& a, int f) { return a.frame < f; });
    if (it != s.end() && it->frame == frame) {
      *w = it->w;
      return true;
    }
    if (it == s.begin() || it == s.end()) return false;
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    if (hi.frame - lo.frame > params.interp_gap_max) return false;
    const double f = static_cast<double>(frame - lo.frame) /
                     static_cast<double>(hi.frame - lo.frame);
    *w = (1.0 - f) * lo.w + f * hi.w;
    return true;
  };

  int fmin = std::numeric_limits<int>::max();
  int fmax = std::numeric_limits<int>::min();
  for (const auto& [i, track] : direct_tracks) {
    if (track.samples.empty()) continue;
    fmin = std::min(fmin, track.samples.front().frame);
    fmax = std::max(fmax, track.samples.back().frame);
  }
  if (fmin > fmax) raise(ErrorCode::NoEvents, "no track samples");

  std::vector<int> frames;
  for (int f = fmin; f <= fmax; ++f) {
    int covered = 0;
    double w;
    for (const auto& [i, track] : direct_tracks) {
      if (value_at(track, f, &w)) ++covered;
    }
    if (covered >= params.min_rows) frames.push_back(f);
  }
  if (frames.empty()) {
    raise(ErrorCode::NoEvents, "no frame meets the coverage requirement");
  }
  if (static_cast<int>(frames.size()) > params.n_max) {
    std::vector<int> picked;
    const double step = static_cast<double>(frames.size()) /
                        static_cast<double>(params.n_max);
    for (int k = 0; k < params.n_max; ++k) {
      picked.push_back(frames[static_cast<std::size_t>(k * step)]);
    }
    frames = std::move(picked);
  }

  TdoaMatrix out(mic_count, static_cast<Eigen::Index>(frames.size()));
  out.mask.setConstant(false);
  for (std::size_t c = 0; c < frames.size(); ++c) {
    out.event_times[c] = frame_center_time(frames[c], spec);
    out.U(0, c) = 0.0;
    out.mask(0, c) = true;
    for (const auto& [i, track] : direct_tracks) {
      double w;
      if (value_at(track, frames[c], &w)) {
        out.U(i - 1, c) = w;
        out.mask(i - 1, c) = true;
      }
    }
  }
  return out;
}

TrackingResult run_tracking(
    const std::map<int, std::vector<Peak>>& peaks_per_pair, int mic_count,
    const FrameSpec& spec, const TrackingParams& params) {
  TrackingResult result;
  result.stages.names = {"peaks",  "tracklets", "merged",
                         "direct", "smoothed",  "matrix"};
  result.stages.samples.resize(result.stages.names.size());

  auto record = [&](int stage, int pair_i2, double frame, double w) {
    result.stages.samples[stage].push_back({pair_i2, frame, w});
  };

  for (const auto& [i, peaks] : peaks_per_pair) {
    for (const auto& p : peaks) record(0, i, p.frame_index, p.range_diff);

    TrackingParams per_pair = params;
    per_pair.seed = SeedSplitter(params.seed).derive(100 + i);
    const auto tracklets = fit_tracklets(peaks, per_pair);
    for (const auto& t : tracklets) {
      for (const auto& p : t.inliers) record(1, i, p.frame_index, p.range_diff);
    }

    const auto tracks = merge_tracklets(tracklets, per_pair);
    for (const auto& t : tracks) {
      for (const auto& s : t.samples) record(2, i, s.frame, s.w);
    }
    if (tracks.empty()) continue;

    const Track direct = select_direct_path(tracks);
    for (const auto& s : direct.samples) record(3, i, s.frame, s.w);

    const Track smoothed = smooth_track(direct, params.smooth_span);
    for (const auto& s : smoothed.samples) record(4, i, s.frame, s.w);

    result.direct_tracks[i] = smoothed;
  }

  result.tdoa = assemble_matching_matrix(result.direct_tracks, mic_count,
                                         spec, params);
  for (Eigen::Index j = 0; j < result.tdoa.cols(); ++j) {
    const double frame =
        (result.tdoa.event_times[j] * spec.sample_rate - 0.5 * spec.frame_len) /
        spec.hop;
    for (Eigen::Index i = 1; i < result.tdoa.rows(); ++i) {
      if (result.tdoa.mask(i, j)) {
        record(5, static_cast<int>(i) + 1, frame, result.tdoa.U(i, j));
      }
    }
  }
  return result;
}

}  // namespace miccal
