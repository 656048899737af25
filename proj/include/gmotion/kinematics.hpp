#ifndef GMOTION_KINEMATICS_HPP
#define GMOTION_KINEMATICS_HPP

#include <array>
#include <string>

#include <Eigen/Dense>

#include "gmotion/repr.hpp"

namespace gmotion {

// 24-joint kinematic tree. Joint 0 is the pelvis; offsets are rest-pose
// bone vectors in meters (y up, T pose with arms along +-x). beta enters
// as one global scale factor: scale = 1 + beta_scale . beta.
struct Skeleton {
  std::array<int, kNumJoints> parent{};
  std::array<Eigen::Vector3d, kNumJoints> offsets{};
  Eigen::Matrix<double, kBetaDim, 1> beta_scale = Eigen::Matrix<double, kBetaDim, 1>::Zero();

  static Skeleton default_human();
  double scale_for(const Eigen::Matrix<double, kBetaDim, 1>& beta) const {
    return 1.0 + beta_scale.dot(beta);
  }
};

// One capsule per non-root bone; radius[j-1] belongs to the bone ending at
// joint j.
struct CapsuleBody {
  std::array<double, kNumJoints - 1> radius{};
  static CapsuleBody default_body();
};

/// Skeleton + capsule radii as a plain-text table:
/// "joint parent off_x off_y off_z radius", one line per joint.
void save_skeleton(const Skeleton& s, const CapsuleBody& b, const std::string& path);
std::pair<Skeleton, CapsuleBody> load_skeleton(const std::string& path);

// Pinhole camera. World-to-camera: Xc = R * (Xw - position); the camera
// looks along +z of its own frame.
struct CameraModel {
  double focal = 1000.0;
  double cx = 640.0;
  double cy = 360.0;
  int width = 1280;
  int height = 720;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d position = Eigen::Vector3d::Zero();

  static CameraModel default_front();
  // Returns (u, v, depth). Depth <= 0 means behind the camera.
  Eigen::Vector3d project(const Eigen::Vector3d& world) const;
};

using JointPositions = std::array<Eigen::Vector3d, kNumJoints>;

/// Global joint positions: trans plus scaled rotation-chained offsets.
JointPositions forward_kinematics(const PoseVector& p, const Skeleton& s);

/// Sum over capsule pairs of max(0, r_i + r_j - segment_distance).
double capsule_penetration(const PoseVector& a, const PoseVector& b,
                           const Skeleton& s, const CapsuleBody& body);

// Penetration plus its gradient with respect to the two global
// translations (the only parameters mesh separation optimizes).
struct PenetrationGrad {
  double value = 0.0;
  Eigen::Vector3d grad_a = Eigen::Vector3d::Zero();
  Eigen::Vector3d grad_b = Eigen::Vector3d::Zero();
};
PenetrationGrad capsule_penetration_grad(const PoseVector& a, const PoseVector& b,
                                         const Skeleton& s, const CapsuleBody& body);

/// IoU of the axis-aligned boxes around the projected joint sets.
/// Throws BehindCamera when any joint has non-positive depth.
double projected_bbox_iou(const PoseVector& a, const PoseVector& b,
                          const Skeleton& s, const CameraModel& cam);

/// Fraction of the 24 projected joints inside the image rectangle.
double frame_containment_fraction(const PoseVector& p, const Skeleton& s,
                                  const CameraModel& cam);

/// Per-channel Gaussian smoothing along valid frames, reflect padding,
/// kernel truncated at 4 sigma. scale <= 0 returns the input unchanged.
GroupMotion gaussian_smooth(const GroupMotion& m, double scale);

/// Closest-point distance between segments [p0,p1] and [q0,q1].
/// Witness points come back through *cp and *cq when non-null.
double segment_distance(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1,
                        const Eigen::Vector3d& q0, const Eigen::Vector3d& q1,
                        Eigen::Vector3d* cp = nullptr, Eigen::Vector3d* cq = nullptr);

} // namespace gmotion

#endif
