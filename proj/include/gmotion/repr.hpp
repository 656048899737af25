#ifndef GMOTION_REPR_HPP
#define GMOTION_REPR_HPP

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmotion/common.hpp"

namespace gmotion {

constexpr int kBetaDim = 11;
constexpr int kNumJoints = 24;
constexpr int kRot6dDim = 6;
constexpr int kPoseDim = kBetaDim + kNumJoints * kRot6dDim + 3; // 158
constexpr int kMaxFrames = 61;
constexpr int kMaxSubjects = 10;

// First two columns of a rotation matrix, column-major:
// r[0..3) is column 1, r[3..6) is column 2.
struct Rotation6D {
  std::array<double, 6> r{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
};

// One person, one frame. Axes: y is vertical up, x/z span the horizontal
// plane. theta[0] is the pelvis / global orientation.
struct PoseVector {
  Eigen::Matrix<double, kBetaDim, 1> beta = Eigen::Matrix<double, kBetaDim, 1>::Zero();
  std::array<Rotation6D, kNumJoints> theta{};
  Eigen::Vector3d trans = Eigen::Vector3d::Zero();
};

/// Rodrigues rotation of an axis-angle vector, reduced to 6D.
Rotation6D axis_angle_to_rot6d(const Eigen::Vector3d& aa);

/// Gram-Schmidt completion of the 6D representation.
/// Throws DegenerateRotation when the columns cannot span a frame.
Eigen::Matrix3d rot6d_to_matrix(const Rotation6D& r);

/// First two columns of a rotation matrix.
Rotation6D matrix_to_rot6d(const Eigen::Matrix3d& m);

/// Axis-angle vector of a rotation matrix (interchange form for files).
Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& m);

std::array<double, kPoseDim> pack_pose(const PoseVector& p);
PoseVector unpack_pose(const double* v, std::size_t len);
PoseVector unpack_pose(const std::vector<double>& v);
PoseVector unpack_pose(const std::array<double, kPoseDim>& v);

// Padded multi-person motion tensor with validity masks. Data at positions
// where either mask is false is kept all-zero.
struct GroupMotion {
  int F = 0;
  int N = 0;
  int fps = 20;
  std::vector<double> data;            // F*N*kPoseDim, frame-major
  std::vector<std::uint8_t> frame_mask;   // F
  std::vector<std::uint8_t> subject_mask; // N

  static GroupMotion zeros(int F, int N, int fps = 20);

  double* pose_ptr(int f, int n) { return data.data() + (static_cast<std::size_t>(f) * N + n) * kPoseDim; }
  const double* pose_ptr(int f, int n) const { return data.data() + (static_cast<std::size_t>(f) * N + n) * kPoseDim; }

  PoseVector pose(int f, int n) const { return unpack_pose(pose_ptr(f, n), kPoseDim); }
  void set_pose(int f, int n, const PoseVector& p);

  bool frame_valid(int f) const { return frame_mask[f] != 0; }
  bool subject_valid(int n) const { return subject_mask[n] != 0; }
  int valid_frames() const;
  int valid_subjects() const;
  int center_frame() const { return F / 2; }
};

enum class SourceTag { LP, WVM, HML, HML_C, IH, SYNTH };

const char* source_tag_name(SourceTag t);
SourceTag source_tag_from_name(const std::string& s);

struct MotionSample {
  GroupMotion motion;
  std::string text;                 // empty means unconditional
  SourceTag source_tag = SourceTag::SYNTH;
  bool height_adjusted = true;
  // Unknown file-header keys carried through read/write untouched.
  std::map<std::string, std::string> extra_headers;
};

/// Shifts all translations so the horizontal mean over valid subjects at
/// the center frame lands on the origin. Throws EmptyCenterFrame.
GroupMotion canonicalize_group(const GroupMotion& m);

/// Rotates translations and root orientations about the vertical axis
/// through the origin (right-handed, y up).
GroupMotion rotate_group(const GroupMotion& m, double angle);

struct PaddedBatch {
  int B = 0;
  int F = 0;
  int N = 0;
  std::vector<double> data;               // B*F*N*kPoseDim
  std::vector<std::uint8_t> frame_mask;   // B*F
  std::vector<std::uint8_t> subject_mask; // B*N

  double* pose_ptr(int b, int f, int n) {
    return data.data() + ((static_cast<std::size_t>(b) * F + f) * N + n) * kPoseDim;
  }
  const double* pose_ptr(int b, int f, int n) const {
    return data.data() + ((static_cast<std::size_t>(b) * F + f) * N + n) * kPoseDim;
  }
  bool frame_valid(int b, int f) const { return frame_mask[static_cast<std::size_t>(b) * F + f] != 0; }
  bool subject_valid(int b, int n) const { return subject_mask[static_cast<std::size_t>(b) * N + n] != 0; }
  int valid_frames(int b) const;
  int valid_subjects(int b) const;
};

/// Packs motions into one zero-padded tensor. Valid entries copy bit-exact.
/// Throws OversizeSample when a motion exceeds the maxima.
PaddedBatch pad_and_mask(const std::vector<GroupMotion>& samples,
                         int max_F = kMaxFrames, int max_N = kMaxSubjects);

/// Extracts one batch element back into a GroupMotion of the given size.
GroupMotion unpad_sample(const PaddedBatch& batch, int b, int F, int N, int fps = 20);

} // namespace gmotion

#endif
