#include "miccal/mirrors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "miccal/geometry.hpp"
#include "miccal/rng.hpp"

namespace miccal {

std::vector<ConsistentDetection> consistency_correct(
    const std::vector<Peak>& peaks, const Scene& estimated, int target_mic,
    const MirrorParams& params) {
  const int m = static_cast<int>(estimated.mic_count());
  const int quorum = std::max(2, (m - 1) - params.quorum_slack);
  const Vec3 r_target = estimated.mic_position(target_mic);

  // corrected value and reference channel, grouped per frame time
  struct Cand {
    double c;
    int ref;
  };
  std::map<long long, std::pair<double, std::vector<Cand>>> per_time;

  for (const auto& p : peaks) {
    if (p.pair_i2 != target_mic || p.pair_i1 == target_mic) continue;
    const Vec3 s = estimated.source_path.position_at(p.time_s);
    const Vec3 r_ref = estimated.mic_position(p.pair_i1);
    // direct-path prediction for this pair; residual peaks only
    const double w_direct = (s - r_target).norm() - (s - r_ref).norm();
    if (std::abs(p.range_diff - w_direct) < params.direct_gate) continue;
    const double c = p.range_diff + (s - r_ref).norm();
    if (c <= 0.0) continue;
    const long long key = llround(p.time_s * 1e6);
    auto& slot = per_time[key];
    slot.first = p.time_s;
    slot.second.push_back({c, p.pair_i1});
  }

  std::vector<ConsistentDetection> out;
  for (auto& [key, slot] : per_time) {
    auto& cands = slot.second;
    std::sort(cands.begin(), cands.end(),
              [](const Cand& a, const Cand& b) { return a.c < b.c; });
    std::size_t i = 0;
    while (i < cands.size()) {
      // maximal run of values within cluster_tol of the run start
      std::size_t j = i;
      while (j + 1 < cands.size() &&
             cands[j + 1].c - cands[i].c <= params.cluster_tol) {
        ++j;
      }
      std::vector<int> refs;
      double sum = 0.0;
      for (std::size_t k = i; k <= j; ++k) {
        if (std::find(refs.begin(), refs.end(), cands[k].ref) == refs.end()) {
          refs.push_back(cands[k].ref);
        }
        sum += cands[k].c;
      }
      if (static_cast<int>(refs.size()) >= quorum) {
        ConsistentDetection det;
        det.t = slot.first;
        det.corrected_distance = sum / static_cast<double>(j - i + 1);
        det.support = static_cast<int>(refs.size());
        out.push_back(det);
      }
      i = j + 1;
    }
  }
  return out;
}

namespace {

int count_mirror_inliers(const Vec3& r,
                         const std::vector<ConsistentDetection>& candidates,
                         const std::vector<Vec3>& positions, double tol,
                         double* sum_abs) {
  int count = 0;
  double s = 0.0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double res =
        std::abs((positions[k] - r).norm() - candidates[k].corrected_distance);
    if (res <= tol) {
      ++count;
      s += res;
    }
  }
  if (sum_abs) *sum_abs = s;
  return count;
}

Vec3 refine_mirror(Vec3 r, const std::vector<ConsistentDetection>& candidates,
                   const std::vector<Vec3>& positions, double tol) {
  for (int it = 0; it < 30; ++it) {
    Mat3 H = Mat3::Zero();
    Vec3 g = Vec3::Zero();
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      const Vec3 diff = r - positions[k];
      const double d = diff.norm();
      if (d < 1e-12) continue;
      const double res = d - candidates[k].corrected_distance;
      if (std::abs(res) > tol) continue;
      const Vec3 u = diff / d;
      H += u * u.transpose();
      g += u * res;
    }
    const Vec3 step = (H + 1e-12 * Mat3::Identity()).ldlt().solve(-g);
    r += step;
    if (step.norm() < 1e-14) break;
  }
  return r;
}

}  // namespace

MirrorEstimate ransac_mirror(const std::vector<ConsistentDetection>& candidates,
                             const SourcePath& source_path, int target_mic,
                             const MirrorParams& params) {
  if (candidates.size() < 3) {
    raise(ErrorCode::InsufficientCandidates,
          "mirror estimation needs >= 3 consistent detections");
  }
  std::vector<Vec3> positions(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    positions[k] = source_path.position_at(candidates[k].t);
  }

  std::mt19937_64 rng(SeedSplitter(params.seed).derive(41));
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);

  Vec3 best = Vec3::Zero();
  int best_count = -1;
  double best_sum = std::numeric_limits<double>::infinity();
  Vec3 second = Vec3::Zero();
  int second_count = -1;
  double second_sum = std::numeric_limits<double>::infinity();
  bool any = false;

  const std::size_t ncand = candidates.size();
  const std::size_t triple_count = ncand * (ncand - 1) * (ncand - 2) / 6;
  const bool exhaustive =
      triple_count <= static_cast<std::size_t>(params.ransac_iterations);

  auto consider = [&](std::size_t a, std::size_t b, std::size_t c) {
    std::pair<Vec3, Vec3> branch;
    try {
      branch = sphere_intersection(positions[a], positions[b], positions[c],
                                   candidates[a].corrected_distance,
                                   candidates[b].corrected_distance,
                                   candidates[c].corrected_distance);
    } catch (const Error&) {
      return;
    }
    for (const Vec3& cand : {branch.first, branch.second}) {
      double sum = 0.0;
      const int cnt = count_mirror_inliers(cand, candidates, positions,
                                           params.inlier_tol, &sum);
      any = true;
      if (cnt > best_count || (cnt == best_count && sum < best_sum)) {
        second = best;
        second_count = best_count;
        second_sum = best_sum;
        best = cand;
        best_count = cnt;
        best_sum = sum;
      } else if (cnt > second_count ||
                 (cnt == second_count && sum < second_sum)) {
        second = cand;
        second_count = cnt;
        second_sum = sum;
      }
    }
  };

  if (exhaustive) {
    for (std::size_t a = 0; a + 2 < ncand; ++a)
      for (std::size_t b = a + 1; b + 1 < ncand; ++b)
        for (std::size_t c = b + 1; c < ncand; ++c) consider(a, b, c);
  } else {
    for (int it = 0; it < params.ransac_iterations; ++it) {
      const std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
      if (a == b || b == c || a == c) continue;
      consider(a, b, c);
    }
  }

  if (!any) {
    raise(ErrorCode::DegenerateGeometry,
          "no sphere triple intersected (collinear source supports?)");
  }
  // Mirror-branch tie: same consensus, same score, distinct positions.
  if (second_count == best_count &&
      std::abs(second_sum - best_sum) < 1e-12 &&
      (second - best).norm() > 1e-9) {
    raise(ErrorCode::DegenerateGeometry,
          "mirror branches tie; source supports are degenerate");
  }

  MirrorEstimate est;
  est.mic_id = target_mic;
  est.position = refine_mirror(best, candidates, positions, params.inlier_tol);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double res = std::abs((positions[k] - est.position).norm() -
                                candidates[k].corrected_distance);
    if (res <= params.inlier_tol) est.inliers.push_back(candidates[k]);
  }
  return est;
}

std::vector<MirrorEstimate> extract_all_mirrors(
    const std::map<int, std::vector<ConsistentDetection>>& candidates_per_mic,
    const SourcePath& source_path, const MirrorParams& params) {
  std::vector<MirrorEstimate> out;
  for (const auto& [mic, all_candidates] : candidates_per_mic) {
    std::vector<ConsistentDetection> remaining = all_candidates;
    // candidate input order must not matter
    std::stable_sort(remaining.begin(), remaining.end(),
                     [](const ConsistentDetection& a,
                        const ConsistentDetection& b) {
                       if (a.t != b.t) return a.t < b.t;
                       return a.corrected_distance < b.corrected_distance;
                     });
    int k = 2;
    for (int round = 0; round < params.max_mirrors; ++round) {
      if (static_cast<int>(remaining.size()) < params.min_inliers) break;
      MirrorParams p = params;
      p.seed = SeedSplitter(params.seed).derive(500 + 10 * mic + round);
      MirrorEstimate est;
      try {
        est = ransac_mirror(remaining, source_path, mic, p);
      } catch (const Error&) {
        break;
      }
      if (static_cast<int>(est.inliers.size()) < params.min_inliers) break;
      est.path_index = k++;
      // remove the inliers and keep going
      std::vector<ConsistentDetection> next;
      std::size_t used = 0;
      for (const auto& det : remaining) {
        const bool is_inlier =
            used < est.inliers.size() &&
            det.t == est.inliers[used].t &&
            det.corrected_distance == est.inliers[used].corrected_distance;
        if (is_inlier) {
          ++used;
        } else {
          next.push_back(det);
        }
      }
      remaining = std::move(next);
      out.push_back(std::move(est));
    }
  }
  return out;
}

std::vector<Plane> fit_planes(std::vector<MirrorEstimate>& estimates,
                              const Scene& estimated,
                              const MirrorParams& params) {
  struct Member {
    std::size_t index;  // into estimates
    Plane bisector;
  };
  std::vector<Member> members;
  for (std::size_t e = 0; e < estimates.size(); ++e) {
    const Vec3 r_direct = estimated.mic_position(estimates[e].mic_id);
    try {
      members.push_back(
          {e, plane_from_mirror_pair(r_direct, estimates[e].position)});
    } catch (const Error&) {
      // mirrored position coincides with the mic; no plane
    }
  }

  const double cos_gate =
      std::cos(params.plane_normal_tol_deg * std::numbers::pi / 180.0);

  std::vector<std::vector<Member>> clusters;
  for (const auto& mem : members) {
    bool placed = false;
    for (auto& cluster : clusters) {
      const Plane& ref = cluster.front().bisector;
      const double align =
          std::abs(ref.unit_normal.dot(mem.bisector.unit_normal));
      if (align >= cos_gate &&
          std::abs(ref.offset_d - mem.bisector.offset_d) <
              params.plane_offset_tol) {
        cluster.push_back(mem);
        placed = true;
        break;
      }
    }
    if (!placed) clusters.push_back({mem});
  }

  std::vector<Plane> out;
  for (const auto& cluster : clusters) {
    // average in (n, d) with the first member fixing the sign
    const Vec3 ref_n = cluster.front().bisector.unit_normal;
    Vec3 n_sum = Vec3::Zero();
    double d_sum = 0.0;
    for (const auto& mem : cluster) {
      Vec3 n = mem.bisector.unit_normal;
      double d = mem.bisector.offset_d;
      if (n.dot(ref_n) < 0.0) {
        n = -n;
        d = -d;
      }
      n_sum += n;
      d_sum += d;
    }
    if (n_sum.norm() < 1e-12) continue;
    const Plane consensus(n_sum / cluster.size(),
                          d_sum / static_cast<double>(cluster.size()));

    // first-order check: the consensus plane must reproduce each member's
    // mirrored position
    bool all_pass = true;
    for (const auto& mem : cluster) {
      const auto& est = estimates[mem.index];
      const Vec3 r_direct = estimated.mic_position(est.mic_id);
      const double err =
          (mirror_point(r_direct, consensus) - est.position).norm();
      if (err >= params.plane_round_trip_tol) {
        all_pass = false;
        break;
      }
    }
    if (!all_pass) continue;
    for (const auto& mem : cluster) {
      estimates[mem.index].has_plane = true;
      estimates[mem.index].plane = consensus;
    }
    out.push_back(consensus);
  }
  return out;
}

}  // namespace miccal
