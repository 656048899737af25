#include <doctest.h>

#include <cmath>

#include "gmotion/repr.hpp"

using namespace gmotion;

namespace {

// Independent Rodrigues oracle: R = I + sin(t) K + (1 - cos(t)) K^2.
Eigen::Matrix3d rodrigues_ref(const Eigen::Vector3d& aa) {
  const double angle = aa.norm();
  if (angle < 1e-14) return Eigen::Matrix3d::Identity();
  const Eigen::Vector3d axis = aa / angle;
  Eigen::Matrix3d k;
  k << 0, -axis.z(), axis.y(),
       axis.z(), 0, -axis.x(),
       -axis.y(), axis.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
}

Eigen::Vector3d random_aa(Rng& rng) {
  Eigen::Vector3d v(rand_normal(rng), rand_normal(rng), rand_normal(rng));
  return v * rand_uniform(rng, 0.0, kPi);
}

GroupMotion static_pose_motion(int F, const std::vector<Eigen::Vector3d>& translations) {
  GroupMotion m = GroupMotion::zeros(F, static_cast<int>(translations.size()));
  for (int f = 0; f < F; ++f)
    for (std::size_t n = 0; n < translations.size(); ++n) {
      PoseVector p;
      p.trans = translations[n];
      m.set_pose(f, static_cast<int>(n), p);
    }
  return m;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

} // namespace

TEST_SUITE("repr") {

TEST_CASE("axis_angle_to_rot6d identity") {
  const Rotation6D r = axis_angle_to_rot6d(Eigen::Vector3d::Zero());
  const std::array<double, 6> expect{1, 0, 0, 0, 1, 0};
  for (int i = 0; i < 6; ++i) CHECK(r.r[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("axis_angle_to_rot6d quarter turn about z") {
  const Rotation6D r = axis_angle_to_rot6d(Eigen::Vector3d(0, 0, kPi / 2));
  CHECK(r.r[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.r[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.r[2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.r[3] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r.r[4] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.r[5] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("rot6d roundtrip matches the Rodrigues oracle") {
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d aa = random_aa(rng);
    const Eigen::Matrix3d got = rot6d_to_matrix(axis_angle_to_rot6d(aa));
    const Eigen::Matrix3d want = rodrigues_ref(aa);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("rot6d_to_matrix projects noisy inputs to rotations") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    Rotation6D r;
    for (double& v : r.r) v = rand_normal(rng);
    Eigen::Matrix3d m;
    try {
      m = rot6d_to_matrix(r);
    } catch (const DegenerateRotation&) {
      continue; // astronomically unlikely draw, but allowed
    }
    CHECK((m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(m.determinant() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("rot6d_to_matrix scale invariance") {
  Rotation6D r;
  r.r = {2, 0, 0, 0, 3, 0};
  CHECK((rot6d_to_matrix(r) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rot6d_to_matrix rejects degenerate input") {
  Rotation6D zero_col;
  zero_col.r = {0, 0, 0, 0, 1, 0};
  CHECK_THROWS_AS(rot6d_to_matrix(zero_col), DegenerateRotation);
  Rotation6D parallel;
  parallel.r = {1, 0, 0, 2, 0, 0};
  CHECK_THROWS_AS(rot6d_to_matrix(parallel), DegenerateRotation);
}

TEST_CASE("pack_pose of zero fields") {
  PoseVector p;
  for (auto& t : p.theta) t.r = {0, 0, 0, 0, 0, 0};
  const auto v = pack_pose(p);
  for (double x : v) CHECK(x == 0.0);
}

TEST_CASE("pack/unpack roundtrip is bit exact") {
  Rng rng(3);
  PoseVector p;
  for (int i = 0; i < kBetaDim; ++i) p.beta[i] = rand_normal(rng);
  for (auto& t : p.theta)
    for (double& v : t.r) v = rand_normal(rng);
  p.trans = Eigen::Vector3d(rand_normal(rng), rand_normal(rng), rand_normal(rng));

  const auto v = pack_pose(p);
  const PoseVector q = unpack_pose(v);
  for (int i = 0; i < kBetaDim; ++i) CHECK(q.beta[i] == p.beta[i]);
  for (int j = 0; j < kNumJoints; ++j)
    for (int k = 0; k < kRot6dDim; ++k) CHECK(q.theta[j].r[k] == p.theta[j].r[k]);
  for (int i = 0; i < 3; ++i) CHECK(q.trans[i] == p.trans[i]);
}

TEST_CASE("pack_pose field layout: beta, theta, trans") {
  PoseVector p;
  p.beta[0] = 1.5;
  p.beta[10] = 2.5;
  p.theta[0].r = {10, 11, 12, 13, 14, 15};
  p.theta[23].r = {20, 21, 22, 23, 24, 25};
  p.trans = Eigen::Vector3d(30, 31, 32);
  const auto v = pack_pose(p);
  CHECK(v[0] == 1.5);
  CHECK(v[10] == 2.5);
  CHECK(v[11] == 10);
  CHECK(v[16] == 15);
  CHECK(v[11 + 23 * 6] == 20);
  CHECK(v[154] == 25);
  CHECK(v[155] == 30);
  CHECK(v[156] == 31);
  CHECK(v[157] == 32);
}

TEST_CASE("unpack_pose length mismatch") {
  std::vector<double> bad(157, 0.0);
  CHECK_THROWS_AS(unpack_pose(bad), LengthMismatch);
}

TEST_CASE("canonicalize keeps centered motion unchanged") {
  GroupMotion m = static_pose_motion(3, {Eigen::Vector3d(-1, 0.3, 0), Eigen::Vector3d(1, 0.3, 0)});
  const GroupMotion c = canonicalize_group(m);
  CHECK(max_abs_diff(c.data, m.data) == 0.0);
}

TEST_CASE("canonicalize single static subject") {
  GroupMotion m = static_pose_motion(1, {Eigen::Vector3d(3, 0, 4)});
  const GroupMotion c = canonicalize_group(m);
  const PoseVector p = c.pose(0, 0);
  CHECK(p.trans.x() == doctest::Approx(0.0));
  CHECK(p.trans.y() == doctest::Approx(0.0));
  CHECK(p.trans.z() == doctest::Approx(0.0));
}

TEST_CASE("canonicalize shifts by the center-frame mean") {
  GroupMotion m = static_pose_motion(5, {Eigen::Vector3d(1, 0.7, 1), Eigen::Vector3d(3, 0.2, 3)});
  const GroupMotion c = canonicalize_group(m);
  for (int f = 0; f < 5; ++f) {
    CHECK(c.pose(f, 0).trans.x() == doctest::Approx(-1.0));
    CHECK(c.pose(f, 0).trans.z() == doctest::Approx(-1.0));
    CHECK(c.pose(f, 1).trans.x() == doctest::Approx(1.0));
    CHECK(c.pose(f, 1).trans.z() == doctest::Approx(1.0));
    CHECK(c.pose(f, 0).trans.y() == doctest::Approx(0.7)); // vertical untouched
  }
}

TEST_CASE("canonicalize is idempotent") {
  Rng rng(11);
  GroupMotion m = GroupMotion::zeros(7, 3);
  for (int f = 0; f < 7; ++f)
    for (int n = 0; n < 3; ++n) {
      PoseVector p;
      p.trans = Eigen::Vector3d(rand_normal(rng) * 2, rand_uniform(rng), rand_normal(rng) * 2);
      m.set_pose(f, n, p);
    }
  const GroupMotion once = canonicalize_group(m);
  const GroupMotion twice = canonicalize_group(once);
  CHECK(max_abs_diff(once.data, twice.data) < 1e-12);
}

TEST_CASE("canonicalize requires a valid center subject") {
  GroupMotion m = static_pose_motion(3, {Eigen::Vector3d(1, 0, 1)});
  m.subject_mask[0] = 0;
  CHECK_THROWS_AS(canonicalize_group(m), EmptyCenterFrame);
  GroupMotion m2 = static_pose_motion(3, {Eigen::Vector3d(1, 0, 1)});
  m2.frame_mask[1] = 0; // center frame of F=3
  CHECK_THROWS_AS(canonicalize_group(m2), EmptyCenterFrame);
}

TEST_CASE("rotate_group trivial angles") {
  GroupMotion m = static_pose_motion(2, {Eigen::Vector3d(0.5, 1.0, -0.25)});
  m.set_pose(0, 0, [] {
    PoseVector p;
    p.theta[0] = axis_angle_to_rot6d(Eigen::Vector3d(0.3, 0.2, 0.1));
    p.trans = Eigen::Vector3d(0.5, 1.0, -0.25);
    return p;
  }());
  const GroupMotion zero = rotate_group(m, 0.0);
  CHECK(max_abs_diff(zero.data, m.data) == 0.0);
  const GroupMotion full = rotate_group(m, 2.0 * kPi);
  CHECK(max_abs_diff(full.data, m.data) < 1e-6);
}

TEST_CASE("rotate_group quarter turn, right handed, y up") {
  GroupMotion m = static_pose_motion(1, {Eigen::Vector3d(1, 0, 0)});
  const GroupMotion r = rotate_group(m, kPi / 2);
  const PoseVector p = r.pose(0, 0);
  CHECK(p.trans.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.trans.y() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.trans.z() == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("rotate_group inverse returns the motion") {
  Rng rng(5);
  GroupMotion m = GroupMotion::zeros(4, 2);
  for (int f = 0; f < 4; ++f)
    for (int n = 0; n < 2; ++n) {
      PoseVector p;
      for (int j = 0; j < kNumJoints; ++j) p.theta[j] = axis_angle_to_rot6d(random_aa(rng) * 0.3);
      p.trans = Eigen::Vector3d(rand_normal(rng), rand_uniform(rng), rand_normal(rng));
      m.set_pose(f, n, p);
    }
  const double a = 1.234;
  const GroupMotion back = rotate_group(rotate_group(m, a), -a);
  CHECK(max_abs_diff(back.data, m.data) < 1e-6);
}

TEST_CASE("rotate_group leaves non-root joints unchanged") {
  PoseVector p;
  p.theta[5] = axis_angle_to_rot6d(Eigen::Vector3d(0.4, -0.2, 0.9));
  GroupMotion m = GroupMotion::zeros(1, 1);
  m.set_pose(0, 0, p);
  const GroupMotion r = rotate_group(m, 0.77);
  const PoseVector q = r.pose(0, 0);
  for (int k = 0; k < 6; ++k) CHECK(q.theta[5].r[k] == p.theta[5].r[k]);
}

TEST_CASE("pad_and_mask full-size sample") {
  GroupMotion m = GroupMotion::zeros(61, 10);
  const PaddedBatch b = pad_and_mask({m});
  for (auto v : b.frame_mask) CHECK(v == 1);
  for (auto v : b.subject_mask) CHECK(v == 1);
}

TEST_CASE("pad_and_mask small sample masks") {
  GroupMotion m = GroupMotion::zeros(1, 3);
  const PaddedBatch b = pad_and_mask({m});
  CHECK(b.frame_valid(0, 0));
  for (int f = 1; f < 61; ++f) CHECK(!b.frame_valid(0, f));
  for (int n = 0; n < 3; ++n) CHECK(b.subject_valid(0, n));
  for (int n = 3; n < 10; ++n) CHECK(!b.subject_valid(0, n));
}

TEST_CASE("pad_and_mask mixed batch keeps per-sample masks") {
  const PaddedBatch b = pad_and_mask({GroupMotion::zeros(30, 2), GroupMotion::zeros(61, 5)});
  CHECK(b.valid_frames(0) == 30);
  CHECK(b.valid_subjects(0) == 2);
  CHECK(b.valid_frames(1) == 61);
  CHECK(b.valid_subjects(1) == 5);
}

TEST_CASE("pad_and_mask copies valid entries bit exact and zeros padding") {
  Rng rng(9);
  GroupMotion m = GroupMotion::zeros(5, 2);
  for (double& v : m.data) v = rand_normal(rng);
  const PaddedBatch b = pad_and_mask({m}, 8, 4);
  for (int f = 0; f < 8; ++f)
    for (int n = 0; n < 4; ++n) {
      const double* row = b.pose_ptr(0, f, n);
      if (f < 5 && n < 2) {
        const double* src = m.pose_ptr(f, n);
        for (int c = 0; c < kPoseDim; ++c) CHECK(row[c] == src[c]);
      } else {
        for (int c = 0; c < kPoseDim; ++c) CHECK(row[c] == 0.0);
      }
    }
}

TEST_CASE("pad_and_mask rejects oversize samples") {
  CHECK_THROWS_AS(pad_and_mask({GroupMotion::zeros(62, 2)}), OversizeSample);
  CHECK_THROWS_AS(pad_and_mask({GroupMotion::zeros(5, 5)}, 61, 4), OversizeSample);
}

TEST_CASE("unpad_sample inverts pad_and_mask") {
  Rng rng(13);
  GroupMotion m = GroupMotion::zeros(4, 3);
  for (double& v : m.data) v = rand_normal(rng);
  const PaddedBatch b = pad_and_mask({m}, 10, 5);
  const GroupMotion back = unpad_sample(b, 0, 4, 3, m.fps);
  CHECK(max_abs_diff(back.data, m.data) == 0.0);
}

} // TEST_SUITE
