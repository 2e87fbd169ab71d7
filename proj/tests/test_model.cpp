#include <doctest.h>

#include <random>

#include "miccal/model.hpp"
#include "miccal/sim.hpp"

using namespace miccal;

namespace {

Plane random_plane(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 n;
  do {
    n = Vec3(gauss(rng), gauss(rng), gauss(rng));
  } while (n.norm() < 1e-3);
  return Plane(n, 3.0 * gauss(rng));
}

Vec3 random_point(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  return Vec3(gauss(rng), gauss(rng), gauss(rng));
}

}  // namespace

TEST_CASE("mirror_point basic reflections") {
  const Plane z0(Vec3(0, 0, 1), 0.0);
  CHECK((mirror_point(Vec3(0, 0, 1), z0) - Vec3(0, 0, -1)).norm() ==
        doctest::Approx(0.0));

  // a point on the plane is fixed
  CHECK((mirror_point(Vec3(2, -1, 0), z0) - Vec3(2, -1, 0)).norm() ==
        doctest::Approx(0.0));

  const Plane x2(Vec3(1, 0, 0), 2.0);
  CHECK((mirror_point(Vec3(1, 2, 3), x2) - Vec3(3, 2, 3)).norm() ==
        doctest::Approx(0.0));
}

TEST_CASE("mirror_point is an involution") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 1000; ++t) {
    const Plane plane = random_plane(rng);
    const Vec3 p = random_point(rng);
    const Vec3 back = mirror_point(mirror_point(p, plane), plane);
    CHECK((back - p).norm() < 1e-12);
  }
}

TEST_CASE("midpoint of a mirror pair lies on the plane") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 200; ++t) {
    const Plane plane = random_plane(rng);
    const Vec3 p = random_point(rng);
    const Vec3 q = mirror_point(p, plane);
    CHECK(std::abs(plane.signed_distance(0.5 * (p + q))) < 1e-12);
  }
}

TEST_CASE("plane_from_mirror_pair simple cases") {
  const Plane a = plane_from_mirror_pair(Vec3(0, 0, 1), Vec3(0, 0, -1));
  CHECK(std::abs(a.unit_normal.z()) == doctest::Approx(1.0));
  CHECK(a.offset_d == doctest::Approx(0.0));

  const Plane b = plane_from_mirror_pair(Vec3(1, 0, 0), Vec3(3, 0, 0));
  CHECK(std::abs(b.unit_normal.x()) == doctest::Approx(1.0));
  CHECK(b.offset_d == doctest::Approx(2.0));
}

TEST_CASE("plane_from_mirror_pair rejects coincident points") {
  CHECK_THROWS_AS(plane_from_mirror_pair(Vec3(1, 2, 3), Vec3(1, 2, 3)),
                  Error);
}

TEST_CASE("plane round trip over random cases") {
  std::mt19937_64 rng(9);
  int skipped = 0;
  for (int t = 0; t < 1000; ++t) {
    const Plane plane = random_plane(rng);
    const Vec3 p = random_point(rng);
    const Vec3 q = mirror_point(p, plane);
    if ((q - p).norm() < 1e-6) {
      ++skipped;  // point essentially on the plane, bisector undefined
      continue;
    }
    const Plane rec = plane_from_mirror_pair(p, q);
    // same plane up to canonical orientation
    CHECK(std::abs(std::abs(rec.unit_normal.dot(plane.unit_normal)) - 1.0) <
          1e-9);
    CHECK((mirror_point(p, rec) - q).norm() < 1e-9);
  }
  CHECK(skipped < 20);
}

namespace {

Scene scene_from_mics(const std::vector<Vec3>& mics) {
  Scene s;
  int id = 1;
  for (const auto& m : mics) s.microphones.push_back({id++, m});
  s.source_path.samples.push_back({0.0, Vec3(0.5, 0.5, 0.5)});
  s.recompute_offsets();
  return s;
}

}  // namespace

TEST_CASE("align_scenes identity") {
  const Scene ref = generate_random_scene(6, 4, 11);
  const Alignment a = align_scenes(ref, ref);
  CHECK(a.rmse < 1e-12);
  CHECK(!a.reflect);
  CHECK((a.rotation - Mat3::Identity()).norm() < 1e-10);
  CHECK(a.translation.norm() < 1e-10);
}

TEST_CASE("align_scenes recovers a known rigid transform") {
  std::mt19937_64 rng(12);
  const Scene ref = generate_random_scene(7, 4, 13);
  const Eigen::AngleAxisd rot(0.83, Vec3(1, 2, -1).normalized());
  const Vec3 t(0.4, -2.0, 1.1);

  Scene moved = ref;
  for (auto& m : moved.microphones) {
    m.position = rot * m.position + t;
  }
  const Alignment a = align_scenes(moved, ref);
  CHECK(a.rmse < 1e-10);
  CHECK(!a.reflect);
  // inverse of the applied transform
  for (const auto& m : moved.microphones) {
    // applying alignment to moved positions returns the reference
    CHECK((a.apply(m.position) -
           ref.microphones[m.id - 1].position).norm() < 1e-9);
  }
}

TEST_CASE("align_scenes detects a reflection") {
  const Scene ref = generate_random_scene(7, 4, 14);
  Scene mirrored = ref;
  for (auto& m : mirrored.microphones) m.position.z() = -m.position.z();
  const Alignment a = align_scenes(mirrored, ref);
  CHECK(a.reflect);
  CHECK(a.rmse < 1e-10);
  CHECK(a.rotation.determinant() == doctest::Approx(-1.0));
}

TEST_CASE("align_scenes rejects collinear microphones") {
  const Scene degenerate = scene_from_mics(
      {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)});
  CHECK_THROWS_AS(align_scenes(degenerate, degenerate), Error);
}

TEST_CASE("alignment rmse invariant under pre-transform") {
  const Scene ref = generate_random_scene(8, 4, 15);
  Scene noisy = ref;
  std::mt19937_64 rng(16);
  std::normal_distribution<double> gauss(0.0, 0.01);
  for (auto& m : noisy.microphones) {
    m.position += Vec3(gauss(rng), gauss(rng), gauss(rng));
  }
  const double rmse0 = align_scenes(noisy, ref).rmse;

  const Eigen::AngleAxisd rot(1.2, Vec3(0.3, -1, 2).normalized());
  const Vec3 t(5, -3, 2);
  Scene moved = noisy;
  for (auto& m : moved.microphones) m.position = rot * m.position + t;
  const double rmse1 = align_scenes(moved, ref).rmse;
  CHECK(std::abs(rmse0 - rmse1) < 1e-9);
}

TEST_CASE("ground truth offsets satisfy o_j = -||s_j - r_1||") {
  const Scene s = generate_random_scene(5, 9, 17);
  for (std::size_t j = 0; j < s.source_path.size(); ++j) {
    const double expected =
        -(s.source_path.samples[j].pos - s.microphones[0].position).norm();
    CHECK(std::abs(s.offsets[j] - expected) < 1e-9);
  }
}

TEST_CASE("plane constructor canonicalizes to d >= 0") {
  const Plane p(Vec3(0, 0, -2), -6.0);
  CHECK(p.offset_d == doctest::Approx(3.0));
  CHECK(p.unit_normal.z() == doctest::Approx(1.0));
  CHECK(std::abs(p.unit_normal.norm() - 1.0) < 1e-12);
}
