#include "gmotion/repr.hpp"

#include <algorithm>
#include <cstring>

namespace gmotion {

Rotation6D axis_angle_to_rot6d(const Eigen::Vector3d& aa) {
  const double angle = aa.norm();
  Eigen::Matrix3d m;
  if (angle < 1e-12) {
    m = Eigen::Matrix3d::Identity();
  } else {
    m = Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
  }
  return matrix_to_rot6d(m);
}

Eigen::Matrix3d rot6d_to_matrix(const Rotation6D& r) {
  const Eigen::Vector3d c1(r.r[0], r.r[1], r.r[2]);
  const Eigen::Vector3d c2(r.r[3], r.r[4], r.r[5]);
  const double n1 = c1.norm();
  if (n1 < 1e-8) throw DegenerateRotation("rot6d_to_matrix: first column is near zero");
  const Eigen::Vector3d b1 = c1 / n1;
  const Eigen::Vector3d c2p = c2 - b1.dot(c2) * b1;
  const double n2 = c2p.norm();
  if (n2 < 1e-8) throw DegenerateRotation("rot6d_to_matrix: columns are near parallel");
  const Eigen::Vector3d b2 = c2p / n2;
  Eigen::Matrix3d m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

Rotation6D matrix_to_rot6d(const Eigen::Matrix3d& m) {
  Rotation6D r;
  for (int i = 0; i < 3; ++i) {
    r.r[i] = m(i, 0);
    r.r[3 + i] = m(i, 1);
  }
  return r;
}

Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& m) {
  const Eigen::AngleAxisd aa(m);
  return aa.angle() * aa.axis();
}

std::array<double, kPoseDim> pack_pose(const PoseVector& p) {
  std::array<double, kPoseDim> v{};
  for (int i = 0; i < kBetaDim; ++i) v[i] = p.beta[i];
  for (int j = 0; j < kNumJoints; ++j)
    for (int k = 0; k < kRot6dDim; ++k) v[kBetaDim + j * kRot6dDim + k] = p.theta[j].r[k];
  for (int i = 0; i < 3; ++i) v[kBetaDim + kNumJoints * kRot6dDim + i] = p.trans[i];
  return v;
}

PoseVector unpack_pose(const double* v, std::size_t len) {
  if (len != static_cast<std::size_t>(kPoseDim))
    throw LengthMismatch("unpack_pose: expected " + std::to_string(kPoseDim) +
                         " values, got " + std::to_string(len));
  PoseVector p;
  for (int i = 0; i < kBetaDim; ++i) p.beta[i] = v[i];
  for (int j = 0; j < kNumJoints; ++j)
    for (int k = 0; k < kRot6dDim; ++k) p.theta[j].r[k] = v[kBetaDim + j * kRot6dDim + k];
  for (int i = 0; i < 3; ++i) p.trans[i] = v[kBetaDim + kNumJoints * kRot6dDim + i];
  return p;
}

PoseVector unpack_pose(const std::vector<double>& v) { return unpack_pose(v.data(), v.size()); }
PoseVector unpack_pose(const std::array<double, kPoseDim>& v) { return unpack_pose(v.data(), v.size()); }

GroupMotion GroupMotion::zeros(int F, int N, int fps) {
  // Raw motions may run longer than kMaxFrames before truncation; every
  // model-facing boundary (pad_and_mask, the denoisers) enforces the cap.
  if (F < 1 || N < 1 || N > kMaxSubjects)
    throw OversizeSample("GroupMotion: F must be >= 1, N in [1," +
                         std::to_string(kMaxSubjects) + "]");
  GroupMotion m;
  m.F = F;
  m.N = N;
  m.fps = fps;
  m.data.assign(static_cast<std::size_t>(F) * N * kPoseDim, 0.0);
  m.frame_mask.assign(F, 1);
  m.subject_mask.assign(N, 1);
  return m;
}

void GroupMotion::set_pose(int f, int n, const PoseVector& p) {
  const auto v = pack_pose(p);
  std::memcpy(pose_ptr(f, n), v.data(), sizeof(double) * kPoseDim);
}

int GroupMotion::valid_frames() const {
  return static_cast<int>(std::count(frame_mask.begin(), frame_mask.end(), std::uint8_t{1}));
}

int GroupMotion::valid_subjects() const {
  return static_cast<int>(std::count(subject_mask.begin(), subject_mask.end(), std::uint8_t{1}));
}

const char* source_tag_name(SourceTag t) {
  switch (t) {
    case SourceTag::LP: return "LP";
    case SourceTag::WVM: return "WVM";
    case SourceTag::HML: return "HML";
    case SourceTag::HML_C: return "HML_C";
    case SourceTag::IH: return "IH";
    case SourceTag::SYNTH: return "SYNTH";
  }
  return "SYNTH";
}

SourceTag source_tag_from_name(const std::string& s) {
  if (s == "LP") return SourceTag::LP;
  if (s == "WVM") return SourceTag::WVM;
  if (s == "HML") return SourceTag::HML;
  if (s == "HML_C") return SourceTag::HML_C;
  if (s == "IH") return SourceTag::IH;
  if (s == "SYNTH") return SourceTag::SYNTH;
  throw ParseError("unknown source tag: " + s);
}

GroupMotion canonicalize_group(const GroupMotion& m) {
  const int fc = m.center_frame();
  if (!m.frame_valid(fc)) throw EmptyCenterFrame("canonicalize_group: center frame is masked out");
  double mx = 0.0, mz = 0.0;
  int count = 0;
  for (int n = 0; n < m.N; ++n) {
    if (!m.subject_valid(n)) continue;
    const double* v = m.pose_ptr(fc, n);
    mx += v[kPoseDim - 3];
    mz += v[kPoseDim - 1];
    ++count;
  }
  if (count == 0) throw EmptyCenterFrame("canonicalize_group: no valid subject at center frame");
  mx /= count;
  mz /= count;

  GroupMotion out = m;
  for (int f = 0; f < m.F; ++f) {
    if (!m.frame_valid(f)) continue;
    for (int n = 0; n < m.N; ++n) {
      if (!m.subject_valid(n)) continue;
      double* v = out.pose_ptr(f, n);
      v[kPoseDim - 3] -= mx;
      v[kPoseDim - 1] -= mz;
    }
  }
  return out;
}

GroupMotion rotate_group(const GroupMotion& m, double angle) {
  if (angle == 0.0) return m;
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix3d ry;
  ry << c, 0.0, s,
        0.0, 1.0, 0.0,
        -s, 0.0, c;

  GroupMotion out = m;
  for (int f = 0; f < m.F; ++f) {
    if (!m.frame_valid(f)) continue;
    for (int n = 0; n < m.N; ++n) {
      if (!m.subject_valid(n)) continue;
      PoseVector p = m.pose(f, n);
      p.trans = ry * p.trans;
      p.theta[0] = matrix_to_rot6d(ry * rot6d_to_matrix(p.theta[0]));
      out.set_pose(f, n, p);
    }
  }
  return out;
}

int PaddedBatch::valid_frames(int b) const {
  int c = 0;
  for (int f = 0; f < F; ++f) c += frame_valid(b, f) ? 1 : 0;
  return c;
}

int PaddedBatch::valid_subjects(int b) const {
  int c = 0;
  for (int n = 0; n < N; ++n) c += subject_valid(b, n) ? 1 : 0;
  return c;
}

PaddedBatch pad_and_mask(const std::vector<GroupMotion>& samples, int max_F, int max_N) {
  PaddedBatch batch;
  batch.B = static_cast<int>(samples.size());
  batch.F = max_F;
  batch.N = max_N;
  batch.data.assign(static_cast<std::size_t>(batch.B) * max_F * max_N * kPoseDim, 0.0);
  batch.frame_mask.assign(static_cast<std::size_t>(batch.B) * max_F, 0);
  batch.subject_mask.assign(static_cast<std::size_t>(batch.B) * max_N, 0);

  for (int b = 0; b < batch.B; ++b) {
    const GroupMotion& m = samples[b];
    if (m.F > max_F || m.N > max_N)
      throw OversizeSample("pad_and_mask: sample " + std::to_string(b) + " is " +
                           std::to_string(m.F) + "x" + std::to_string(m.N) +
                           ", maxima are " + std::to_string(max_F) + "x" + std::to_string(max_N));
    for (int f = 0; f < m.F; ++f)
      batch.frame_mask[static_cast<std::size_t>(b) * max_F + f] = m.frame_mask[f];
    for (int n = 0; n < m.N; ++n)
      batch.subject_mask[static_cast<std::size_t>(b) * max_N + n] = m.subject_mask[n];
    for (int f = 0; f < m.F; ++f) {
      if (!m.frame_valid(f)) continue;
      for (int n = 0; n < m.N; ++n) {
        if (!m.subject_valid(n)) continue;
        std::memcpy(batch.pose_ptr(b, f, n), m.pose_ptr(f, n), sizeof(double) * kPoseDim);
      }
    }
  }
  return batch;
}

GroupMotion unpad_sample(const PaddedBatch& batch, int b, int F, int N, int fps) {
  GroupMotion m = GroupMotion::zeros(F, N, fps);
  for (int f = 0; f < F; ++f) m.frame_mask[f] = batch.frame_mask[static_cast<std::size_t>(b) * batch.F + f];
  for (int n = 0; n < N; ++n) m.subject_mask[n] = batch.subject_mask[static_cast<std::size_t>(b) * batch.N + n];
  for (int f = 0; f < F; ++f) {
    if (!m.frame_valid(f)) continue;
    for (int n = 0; n < N; ++n) {
      if (!m.subject_valid(n)) continue;
      std::memcpy(m.pose_ptr(f, n), batch.pose_ptr(b, f, n), sizeof(double) * kPoseDim);
    }
  }
  return m;
}

} // namespace gmotion
