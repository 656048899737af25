#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gmotion/kinematics.hpp"

using namespace gmotion;

namespace {

// Independent segment-distance oracle: the inner minimization over the
// second segment is the closed-form point-to-segment distance, the outer
// one-dimensional problem is convex, so ternary search finds the global
// minimum.
double point_segment_dist(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                          const Eigen::Vector3d& b) {
  const Eigen::Vector3d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 < 1e-30) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

double segdist_ref(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1,
                   const Eigen::Vector3d& q0, const Eigen::Vector3d& q1) {
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    const double d1 = point_segment_dist(p0 + m1 * (p1 - p0), q0, q1);
    const double d2 = point_segment_dist(p0 + m2 * (p1 - p0), q0, q1);
    if (d1 < d2)
      hi = m2;
    else
      lo = m1;
  }
  return point_segment_dist(p0 + 0.5 * (lo + hi) * (p1 - p0), q0, q1);
}

double penetration_ref(const PoseVector& a, const PoseVector& b, const Skeleton& s,
                       const CapsuleBody& body) {
  const JointPositions ja = forward_kinematics(a, s);
  const JointPositions jb = forward_kinematics(b, s);
  double total = 0.0;
  for (int i = 1; i < kNumJoints; ++i)
    for (int j = 1; j < kNumJoints; ++j) {
      const double d = segdist_ref(ja[s.parent[i]], ja[i], jb[s.parent[j]], jb[j]);
      total += std::max(0.0, body.radius[i - 1] + body.radius[j - 1] - d);
    }
  return total;
}

PoseVector pose_at(double x, double y, double z) {
  PoseVector p;
  p.trans = Eigen::Vector3d(x, y, z);
  return p;
}

} // namespace

TEST_SUITE("kinematics") {

TEST_CASE("segment_distance agrees with the ternary-search oracle") {
  Rng rng(21);
  for (int i = 0; i < 300; ++i) {
    Eigen::Vector3d p0, p1, q0, q1;
    for (int c = 0; c < 3; ++c) {
      p0[c] = rand_normal(rng);
      p1[c] = rand_normal(rng);
      q0[c] = rand_normal(rng);
      q1[c] = rand_normal(rng);
    }
    const double got = segment_distance(p0, p1, q0, q1);
    const double want = segdist_ref(p0, p1, q0, q1);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("forward kinematics accumulates rest offsets at identity") {
  const Skeleton s = Skeleton::default_human();
  const JointPositions joints = forward_kinematics(PoseVector{}, s);
  // Walk the tree independently.
  std::array<Eigen::Vector3d, kNumJoints> expect;
  expect[0] = Eigen::Vector3d::Zero();
  for (int j = 1; j < kNumJoints; ++j) expect[j] = expect[s.parent[j]] + s.offsets[j];
  for (int j = 0; j < kNumJoints; ++j)
    CHECK((joints[j] - expect[j]).norm() < 1e-12);
}

TEST_CASE("forward kinematics is rigid under translation") {
  const Skeleton s = Skeleton::default_human();
  Rng rng(4);
  PoseVector p;
  for (int j = 0; j < kNumJoints; ++j) {
    Eigen::Vector3d aa(rand_normal(rng), rand_normal(rng), rand_normal(rng));
    p.theta[j] = axis_angle_to_rot6d(0.2 * aa);
  }
  const JointPositions base = forward_kinematics(p, s);
  p.trans = Eigen::Vector3d(1, 2, 3);
  const JointPositions moved = forward_kinematics(p, s);
  for (int j = 0; j < kNumJoints; ++j)
    CHECK((moved[j] - base[j] - Eigen::Vector3d(1, 2, 3)).norm() < 1e-12);
}

TEST_CASE("root rotation by pi about the vertical negates x,z offsets") {
  const Skeleton s = Skeleton::default_human();
  PoseVector p;
  p.theta[0] = axis_angle_to_rot6d(Eigen::Vector3d(0, kPi, 0));
  p.trans = Eigen::Vector3d(0.4, 0.0, -0.8);
  const JointPositions rotated = forward_kinematics(p, s);
  const JointPositions rest = forward_kinematics(PoseVector{}, s);
  for (int j = 0; j < kNumJoints; ++j) {
    const Eigen::Vector3d rel = rest[j]; // rest root is at the origin
    const Eigen::Vector3d got = rotated[j] - p.trans;
    CHECK(got.x() == doctest::Approx(-rel.x()).epsilon(1e-9));
    CHECK(got.y() == doctest::Approx(rel.y()).epsilon(1e-9));
    CHECK(got.z() == doctest::Approx(-rel.z()).epsilon(1e-9));
  }
}

TEST_CASE("beta scales the skeleton globally") {
  const Skeleton s = Skeleton::default_human();
  PoseVector p;
  p.beta[0] = 2.0; // scale 1.1
  const JointPositions scaled = forward_kinematics(p, s);
  const JointPositions rest = forward_kinematics(PoseVector{}, s);
  for (int j = 0; j < kNumJoints; ++j)
    CHECK((scaled[j] - 1.1 * rest[j]).norm() < 1e-9);
}

TEST_CASE("fk equivariance under rotate_group") {
  const Skeleton s = Skeleton::default_human();
  Rng rng(17);
  PoseVector p;
  for (int j = 0; j < kNumJoints; ++j) {
    Eigen::Vector3d aa(rand_normal(rng), rand_normal(rng), rand_normal(rng));
    p.theta[j] = axis_angle_to_rot6d(0.3 * aa);
  }
  p.trans = Eigen::Vector3d(0.7, 0.9, -0.4);
  GroupMotion m = GroupMotion::zeros(1, 1);
  m.set_pose(0, 0, p);

  const double angle = 0.83;
  const GroupMotion rotated = rotate_group(m, angle);
  const JointPositions fk_rotated = forward_kinematics(rotated.pose(0, 0), s);
  const JointPositions fk_base = forward_kinematics(p, s);
  Eigen::Matrix3d ry;
  ry << std::cos(angle), 0, std::sin(angle), 0, 1, 0, -std::sin(angle), 0, std::cos(angle);
  for (int j = 0; j < kNumJoints; ++j)
    CHECK((fk_rotated[j] - ry * fk_base[j]).norm() < 1e-5);
}

TEST_CASE("capsule penetration far field is zero") {
  const Skeleton s = Skeleton::default_human();
  const CapsuleBody body = CapsuleBody::default_body();
  CHECK(capsule_penetration(pose_at(0, 0.9, 0), pose_at(10, 0.9, 0), s, body) == 0.0);
}

TEST_CASE("capsule penetration of coincident poses matches the oracle") {
  const Skeleton s = Skeleton::default_human();
  const CapsuleBody body = CapsuleBody::default_body();
  const PoseVector p = pose_at(0, 0.9, 0);
  const double got = capsule_penetration(p, p, s, body);
  CHECK(got > 0.0);
  CHECK(got == doctest::Approx(penetration_ref(p, p, s, body)).epsilon(1e-7));
}

TEST_CASE("capsule penetration of partial overlap matches the oracle") {
  const Skeleton s = Skeleton::default_human();
  const CapsuleBody body = CapsuleBody::default_body();
  Rng rng(31);
  for (int i = 0; i < 20; ++i) {
    const PoseVector a = pose_at(0.05 * rand_normal(rng), 0.9, 0.05 * rand_normal(rng));
    const PoseVector b = pose_at(0.25 + 0.1 * rand_uniform(rng), 0.9, 0.05 * rand_normal(rng));
    const double got = capsule_penetration(a, b, s, body);
    const double want = penetration_ref(a, b, s, body);
    CHECK(got == doctest::Approx(want).epsilon(1e-7));
  }
}

TEST_CASE("penetration gradient matches central finite differences") {
  const Skeleton s = Skeleton::default_human();
  const CapsuleBody body = CapsuleBody::default_body();
  const PoseVector a = pose_at(0, 0.9, 0);
  PoseVector b = pose_at(0.31, 0.93, 0.17);

  const PenetrationGrad pg = capsule_penetration_grad(a, b, s, body);
  REQUIRE(pg.value > 0.0);
  const double step = 1e-5;
  for (int c = 0; c < 3; ++c) {
    PoseVector hi = b, lo = b;
    hi.trans[c] += step;
    lo.trans[c] -= step;
    const double fd =
        (capsule_penetration(a, hi, s, body) - capsule_penetration(a, lo, s, body)) / (2 * step);
    const double scale = std::max({std::abs(fd), std::abs(pg.grad_b[c]), 1e-8});
    CHECK(std::abs(fd - pg.grad_b[c]) / scale < 1e-4);
  }
}

TEST_CASE("penetration is symmetric") {
  const Skeleton s = Skeleton::default_human();
  const CapsuleBody body = CapsuleBody::default_body();
  const PoseVector a = pose_at(0, 0.9, 0);
  const PoseVector b = pose_at(0.3, 0.95, 0.1);
  CHECK(capsule_penetration(a, b, s, body) ==
        doctest::Approx(capsule_penetration(b, a, s, body)).epsilon(1e-12));
}

TEST_CASE("projected bbox iou basics") {
  const Skeleton s = Skeleton::default_human();
  const CameraModel cam = CameraModel::default_front();
  const PoseVector a = pose_at(0, 0.9, 0);
  CHECK(projected_bbox_iou(a, a, s, cam) == doctest::Approx(1.0));
  CHECK(projected_bbox_iou(a, pose_at(3.5, 0.9, 0), s, cam) == 0.0);
}

TEST_CASE("projected bbox iou matches box arithmetic") {
  const Skeleton s = Skeleton::default_human();
  const CameraModel cam = CameraModel::default_front();
  Rng rng(23);
  for (int i = 0; i < 30; ++i) {
    const PoseVector a = pose_at(0.3 * rand_normal(rng), 0.9, 0.2 * rand_normal(rng));
    const PoseVector b = pose_at(0.3 * rand_normal(rng), 0.9, 0.2 * rand_normal(rng));
    // Independent projection + box arithmetic.
    auto box_of = [&](const PoseVector& p) {
      const JointPositions joints = forward_kinematics(p, s);
      double lo_u = 1e300, lo_v = 1e300, hi_u = -1e300, hi_v = -1e300;
      for (const auto& j : joints) {
        const Eigen::Vector3d xc = cam.rotation * (j - cam.position);
        REQUIRE(xc.z() > 0.0);
        const double u = cam.focal * xc.x() / xc.z() + cam.cx;
        const double v = cam.focal * xc.y() / xc.z() + cam.cy;
        lo_u = std::min(lo_u, u);
        hi_u = std::max(hi_u, u);
        lo_v = std::min(lo_v, v);
        hi_v = std::max(hi_v, v);
      }
      return std::array<double, 4>{lo_u, lo_v, hi_u, hi_v};
    };
    const auto ba = box_of(a), bb = box_of(b);
    const double iw = std::max(0.0, std::min(ba[2], bb[2]) - std::max(ba[0], bb[0]));
    const double ih = std::max(0.0, std::min(ba[3], bb[3]) - std::max(ba[1], bb[1]));
    const double inter = iw * ih;
    const double uni = (ba[2] - ba[0]) * (ba[3] - ba[1]) + (bb[2] - bb[0]) * (bb[3] - bb[1]) - inter;
    const double want = uni > 0 ? inter / uni : 1.0;
    CHECK(projected_bbox_iou(a, b, s, cam) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("projected bbox iou near one third for half x overlap") {
  const Skeleton s = Skeleton::default_human();
  // A distant camera makes the projection near-orthographic, so a world
  // shift of half the box width shifts the box by half its width.
  CameraModel cam = CameraModel::default_front();
  cam.position = Eigen::Vector3d(0, 0.9, 400.0);
  cam.focal = 110000.0;

  const PoseVector a = pose_at(0, 0.9, 0);
  const JointPositions joints = forward_kinematics(a, s);
  double lo = 1e300, hi = -1e300;
  for (const auto& j : joints) {
    lo = std::min(lo, j.x());
    hi = std::max(hi, j.x());
  }
  const PoseVector b = pose_at((hi - lo) / 2.0, 0.9, 0);
  CHECK(projected_bbox_iou(a, b, s, cam) == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
}

TEST_CASE("iou symmetry") {
  const Skeleton s = Skeleton::default_human();
  const CameraModel cam = CameraModel::default_front();
  const PoseVector a = pose_at(0.1, 0.9, 0.0);
  const PoseVector b = pose_at(0.5, 0.95, 0.2);
  CHECK(projected_bbox_iou(a, b, s, cam) == projected_bbox_iou(b, a, s, cam));
}

TEST_CASE("behind camera raises") {
  const Skeleton s = Skeleton::default_human();
  const CameraModel cam = CameraModel::default_front();
  const PoseVector behind = pose_at(0, 0.9, 10.0); // past the camera at z=4
  CHECK_THROWS_AS(projected_bbox_iou(behind, behind, s, cam), BehindCamera);
  CHECK_THROWS_AS(frame_containment_fraction(behind, s, cam), BehindCamera);
}

TEST_CASE("frame containment fraction") {
  const Skeleton s = Skeleton::default_human();
  const CameraModel cam = CameraModel::default_front();
  CHECK(frame_containment_fraction(pose_at(0, 0.9, 0), s, cam) == doctest::Approx(1.0));
  CHECK(frame_containment_fraction(pose_at(-40, 0.9, 0), s, cam) == doctest::Approx(0.0));

  // Slide the subject right until exactly 4 of 24 joints leave the frame.
  bool found = false;
  for (double shift = 0.0; shift < 6.0; shift += 0.002) {
    const PoseVector p = pose_at(shift, 0.9, 0);
    const JointPositions joints = forward_kinematics(p, s);
    int inside = 0;
    for (const auto& j : joints) {
      const Eigen::Vector3d xc = cam.rotation * (j - cam.position);
      const double u = cam.focal * xc.x() / xc.z() + cam.cx;
      const double v = cam.focal * xc.y() / xc.z() + cam.cy;
      if (u >= 0 && u <= cam.width && v >= 0 && v <= cam.height) ++inside;
    }
    if (inside == 20) {
      CHECK(frame_containment_fraction(p, s, cam) == doctest::Approx(20.0 / 24.0).epsilon(1e-12));
      found = true;
      break;
    }
  }
  CHECK(found);
}

TEST_CASE("gaussian smooth leaves constant motion unchanged") {
  GroupMotion m = GroupMotion::zeros(9, 1);
  for (int f = 0; f < 9; ++f) m.set_pose(f, 0, pose_at(0.5, 0.9, -0.2));
  const GroupMotion sm = gaussian_smooth(m, 1.0);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    CHECK(sm.data[i] == doctest::Approx(m.data[i]).epsilon(1e-6));
}

TEST_CASE("gaussian smooth single frame unchanged") {
  GroupMotion m = GroupMotion::zeros(1, 1);
  m.set_pose(0, 0, pose_at(1, 2, 3));
  const GroupMotion sm = gaussian_smooth(m, 1.0);
  for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(sm.data[i] == m.data[i]);
}

TEST_CASE("gaussian smooth impulse equals the kernel") {
  const double sigma = 1.0;
  GroupMotion m = GroupMotion::zeros(21, 1);
  const int channel = 0; // beta[0]
  m.data[10 * kPoseDim + channel] = 1.0;
  const GroupMotion sm = gaussian_smooth(m, sigma);

  // Direct kernel computation.
  const int radius = 4;
  double ksum = 0.0;
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    ksum += kernel[k + radius];
  }
  for (int k = -radius; k <= radius; ++k)
    CHECK(sm.data[(10 + k) * kPoseDim + channel] ==
          doctest::Approx(kernel[k + radius] / ksum).epsilon(1e-12));
}

TEST_CASE("gaussian smooth preserves per-channel means") {
  Rng rng(6);
  GroupMotion m = GroupMotion::zeros(15, 2);
  for (double& v : m.data) v = rand_normal(rng);
  const GroupMotion sm = gaussian_smooth(m, 1.5);
  const int channels = m.N * kPoseDim;
  for (int c = 0; c < channels; ++c) {
    double before = 0.0, after = 0.0;
    for (int f = 0; f < m.F; ++f) {
      before += m.data[f * channels + c];
      after += sm.data[f * channels + c];
    }
    CHECK(after / m.F == doctest::Approx(before / m.F).epsilon(1e-5));
  }
}

TEST_CASE("gaussian smooth keeps masks and padded entries") {
  GroupMotion m = GroupMotion::zeros(8, 2);
  m.subject_mask[1] = 0;
  Rng rng(8);
  for (int f = 0; f < 8; ++f) {
    PoseVector p = pose_at(rand_normal(rng), 0.9, rand_normal(rng));
    m.set_pose(f, 0, p);
  }
  const GroupMotion sm = gaussian_smooth(m, 1.0);
  CHECK(sm.frame_mask == m.frame_mask);
  CHECK(sm.subject_mask == m.subject_mask);
  for (int f = 0; f < 8; ++f)
    for (int c = 0; c < kPoseDim; ++c) CHECK(sm.pose_ptr(f, 1)[c] == 0.0);
}

TEST_CASE("skeleton file roundtrip") {
  const Skeleton s = Skeleton::default_human();
  const CapsuleBody body = CapsuleBody::default_body();
  const std::string path = (std::filesystem::temp_directory_path() / "gmotion_skel_test.txt").string();
  save_skeleton(s, body, path);
  const auto [s2, body2] = load_skeleton(path);
  for (int j = 0; j < kNumJoints; ++j) {
    CHECK(s2.parent[j] == s.parent[j]);
    CHECK((s2.offsets[j] - s.offsets[j]).norm() == 0.0);
    if (j > 0) CHECK(body2.radius[j - 1] == body.radius[j - 1]);
  }
  std::remove(path.c_str());
}

} // TEST_SUITE
