#include "gmotion/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gmotion {

namespace {

// Rest-pose bone offsets, total height ~1.7 m. Tree matches the usual
// 24-joint body layout: pelvis, legs, spine chain, neck/head, arms.
struct JointSpec {
  int parent;
  double x, y, z;
  double radius; // capsule radius of the bone ending at this joint
};

constexpr JointSpec kDefaultJoints[kNumJoints] = {
    /* 0 pelvis     */ {-1, 0.00, 0.00, 0.00, 0.00},
    /* 1 l_hip      */ {0, 0.09, -0.08, 0.00, 0.06},
    /* 2 r_hip      */ {0, -0.09, -0.08, 0.00, 0.06},
    /* 3 spine1     */ {0, 0.00, 0.11, 0.00, 0.12},
    /* 4 l_knee     */ {1, 0.00, -0.40, 0.00, 0.06},
    /* 5 r_knee     */ {2, 0.00, -0.40, 0.00, 0.06},
    /* 6 spine2     */ {3, 0.00, 0.12, 0.00, 0.12},
    /* 7 l_ankle    */ {4, 0.00, -0.42, 0.00, 0.06},
    /* 8 r_ankle    */ {5, 0.00, -0.42, 0.00, 0.06},
    /* 9 spine3     */ {6, 0.00, 0.12, 0.00, 0.12},
    /* 10 l_foot    */ {7, 0.00, -0.06, 0.13, 0.06},
    /* 11 r_foot    */ {8, 0.00, -0.06, 0.13, 0.06},
    /* 12 neck      */ {9, 0.00, 0.12, 0.00, 0.12},
    /* 13 l_collar  */ {9, 0.07, 0.06, 0.00, 0.06},
    /* 14 r_collar  */ {9, -0.07, 0.06, 0.00, 0.06},
    /* 15 head      */ {12, 0.00, 0.14, 0.00, 0.06},
    /* 16 l_shoulder*/ {13, 0.10, 0.02, 0.00, 0.06},
    /* 17 r_shoulder*/ {14, -0.10, 0.02, 0.00, 0.06},
    /* 18 l_elbow   */ {16, 0.27, 0.00, 0.00, 0.06},
    /* 19 r_elbow   */ {17, -0.27, 0.00, 0.00, 0.06},
    /* 20 l_wrist   */ {18, 0.25, 0.00, 0.00, 0.06},
    /* 21 r_wrist   */ {19, -0.25, 0.00, 0.00, 0.06},
    /* 22 l_hand    */ {20, 0.08, 0.00, 0.00, 0.06},
    /* 23 r_hand    */ {21, -0.08, 0.00, 0.00, 0.06},
};

} // namespace

Skeleton Skeleton::default_human() {
  Skeleton s;
  for (int j = 0; j < kNumJoints; ++j) {
    s.parent[j] = kDefaultJoints[j].parent;
    s.offsets[j] = Eigen::Vector3d(kDefaultJoints[j].x, kDefaultJoints[j].y, kDefaultJoints[j].z);
  }
  s.beta_scale.setZero();
  s.beta_scale[0] = 0.05;
  return s;
}

CapsuleBody CapsuleBody::default_body() {
  CapsuleBody b;
  for (int j = 1; j < kNumJoints; ++j) b.radius[j - 1] = kDefaultJoints[j].radius;
  return b;
}

void save_skeleton(const Skeleton& s, const CapsuleBody& b, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IOError("save_skeleton: cannot open " + path);
  out << "# joint parent off_x off_y off_z radius\n";
  out.precision(17);
  for (int j = 0; j < kNumJoints; ++j) {
    const double r = j == 0 ? 0.0 : b.radius[j - 1];
    out << j << ' ' << s.parent[j] << ' ' << s.offsets[j].x() << ' ' << s.offsets[j].y()
        << ' ' << s.offsets[j].z() << ' ' << r << '\n';
  }
}

std::pair<Skeleton, CapsuleBody> load_skeleton(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("load_skeleton: cannot open " + path);
  Skeleton s = Skeleton::default_human();
  CapsuleBody b = CapsuleBody::default_body();
  std::string line;
  int seen = 0;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int j = -1, parent = 0;
    double x, y, z, r;
    if (!(ls >> j >> parent >> x >> y >> z >> r) || j < 0 || j >= kNumJoints)
      throw ParseError("load_skeleton: bad joint line " + std::to_string(lineno) + " in " + path);
    s.parent[j] = parent;
    s.offsets[j] = Eigen::Vector3d(x, y, z);
    if (j > 0) {
      if (r <= 0.0)
        throw ParseError("load_skeleton: non-positive radius at line " + std::to_string(lineno));
      b.radius[j - 1] = r;
    }
    ++seen;
  }
  if (seen != kNumJoints)
    throw ParseError("load_skeleton: expected " + std::to_string(kNumJoints) + " joints, got " +
                     std::to_string(seen));
  if (s.parent[0] != -1) throw ParseError("load_skeleton: joint 0 must have parent -1");
  for (int j = 1; j < kNumJoints; ++j)
    if (s.parent[j] < 0 || s.parent[j] >= j)
      throw ParseError("load_skeleton: parent of joint " + std::to_string(j) +
                       " must precede it in the table");
  return {s, b};
}

CameraModel CameraModel::default_front() {
  CameraModel cam;
  cam.focal = 1100.0;
  cam.cx = 640.0;
  cam.cy = 360.0;
  cam.width = 1280;
  cam.height = 720;
  // Placed on the +z side looking back at the origin.
  cam.position = Eigen::Vector3d(0.0, 0.9, 4.0);
  cam.rotation << -1.0, 0.0, 0.0,
                   0.0, 1.0, 0.0,
                   0.0, 0.0, -1.0;
  return cam;
}

Eigen::Vector3d CameraModel::project(const Eigen::Vector3d& world) const {
  const Eigen::Vector3d xc = rotation * (world - position);
  const double depth = xc.z();
  if (depth <= 0.0) return Eigen::Vector3d(0.0, 0.0, depth);
  return Eigen::Vector3d(focal * xc.x() / depth + cx, focal * xc.y() / depth + cy, depth);
}

JointPositions forward_kinematics(const PoseVector& p, const Skeleton& s) {
  const double scale = s.scale_for(p.beta);
  JointPositions pos;
  std::array<Eigen::Matrix3d, kNumJoints> rot;
  rot[0] = rot6d_to_matrix(p.theta[0]);
  pos[0] = p.trans;
  for (int j = 1; j < kNumJoints; ++j) {
    const int par = s.parent[j];
    rot[j] = rot[par] * rot6d_to_matrix(p.theta[j]);
    pos[j] = pos[par] + rot[par] * (scale * s.offsets[j]);
  }
  return pos;
}

double segment_distance(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1,
                        const Eigen::Vector3d& q0, const Eigen::Vector3d& q1,
                        Eigen::Vector3d* cp, Eigen::Vector3d* cq) {
  // Eberly's clamped quadratic minimization.
  const Eigen::Vector3d d1 = p1 - p0;
  const Eigen::Vector3d d2 = q1 - q0;
  const Eigen::Vector3d r = p0 - q0;
  const double a = d1.dot(d1);
  const double e = d2.dot(d2);
  const double f = d2.dot(r);
  double s = 0.0, t = 0.0;
  constexpr double kEps = 1e-14;

  if (a <= kEps && e <= kEps) {
    s = t = 0.0;
  } else if (a <= kEps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= kEps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      if (denom > kEps)
        s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
      else
        s = 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  const Eigen::Vector3d w1 = p0 + s * d1;
  const Eigen::Vector3d w2 = q0 + t * d2;
  if (cp) *cp = w1;
  if (cq) *cq = w2;
  return (w1 - w2).norm();
}

double capsule_penetration(const PoseVector& a, const PoseVector& b,
                           const Skeleton& s, const CapsuleBody& body) {
  return capsule_penetration_grad(a, b, s, body).value;
}

PenetrationGrad capsule_penetration_grad(const PoseVector& a, const PoseVector& b,
                                         const Skeleton& s, const CapsuleBody& body) {
  const JointPositions ja = forward_kinematics(a, s);
  const JointPositions jb = forward_kinematics(b, s);
  PenetrationGrad out;
  for (int i = 1; i < kNumJoints; ++i) {
    const Eigen::Vector3d& p0 = ja[s.parent[i]];
    const Eigen::Vector3d& p1 = ja[i];
    for (int j = 1; j < kNumJoints; ++j) {
      const Eigen::Vector3d& q0 = jb[s.parent[j]];
      const Eigen::Vector3d& q1 = jb[j];
      Eigen::Vector3d wp, wq;
      const double d = segment_distance(p0, p1, q0, q1, &wp, &wq);
      const double rsum = body.radius[i - 1] + body.radius[j - 1];
      if (d >= rsum) continue;
      out.value += rsum - d;
      Eigen::Vector3d dir;
      if (d > 1e-9) {
        dir = (wp - wq) / d;
      } else {
        // Coincident witness points: fall back to the line between the
        // translations, then to +x, so fully overlapped bodies still part.
        const Eigen::Vector3d sep = a.trans - b.trans;
        dir = sep.norm() > 1e-9 ? sep.normalized() : Eigen::Vector3d(1.0, 0.0, 0.0);
      }
      // d(max(0, rsum - d))/d(trans): witness points move rigidly with the
      // body translation, so the envelope theorem gives -/+ the unit axis.
      out.grad_a -= dir;
      out.grad_b += dir;
    }
  }
  return out;
}

namespace {

struct Box {
  double lo_u = 0, lo_v = 0, hi_u = 0, hi_v = 0;
};

Box projected_box(const PoseVector& p, const Skeleton& s, const CameraModel& cam) {
  const JointPositions joints = forward_kinematics(p, s);
  Box box;
  bool first = true;
  for (const auto& j : joints) {
    const Eigen::Vector3d uv = cam.project(j);
    if (uv.z() <= 0.0) throw BehindCamera("projected joint has non-positive depth");
    if (first) {
      box = {uv.x(), uv.y(), uv.x(), uv.y()};
      first = false;
    } else {
      box.lo_u = std::min(box.lo_u, uv.x());
      box.lo_v = std::min(box.lo_v, uv.y());
      box.hi_u = std::max(box.hi_u, uv.x());
      box.hi_v = std::max(box.hi_v, uv.y());
    }
  }
  return box;
}

} // namespace

double projected_bbox_iou(const PoseVector& a, const PoseVector& b,
                          const Skeleton& s, const CameraModel& cam) {
  const Box ba = projected_box(a, s, cam);
  const Box bb = projected_box(b, s, cam);
  const double iw = std::max(0.0, std::min(ba.hi_u, bb.hi_u) - std::max(ba.lo_u, bb.lo_u));
  const double ih = std::max(0.0, std::min(ba.hi_v, bb.hi_v) - std::max(ba.lo_v, bb.lo_v));
  const double inter = iw * ih;
  const double area_a = (ba.hi_u - ba.lo_u) * (ba.hi_v - ba.lo_v);
  const double area_b = (bb.hi_u - bb.lo_u) * (bb.hi_v - bb.lo_v);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) {
    // Both boxes degenerate; they either coincide or miss.
    const bool same = ba.lo_u == bb.lo_u && ba.lo_v == bb.lo_v && ba.hi_u == bb.hi_u && ba.hi_v == bb.hi_v;
    return same ? 1.0 : 0.0;
  }
  return inter / uni;
}

double frame_containment_fraction(const PoseVector& p, const Skeleton& s,
                                  const CameraModel& cam) {
  const JointPositions joints = forward_kinematics(p, s);
  int inside = 0;
  for (const auto& j : joints) {
    const Eigen::Vector3d uv = cam.project(j);
    if (uv.z() <= 0.0) throw BehindCamera("projected joint has non-positive depth");
    if (uv.x() >= 0.0 && uv.x() <= cam.width && uv.y() >= 0.0 && uv.y() <= cam.height) ++inside;
  }
  return static_cast<double>(inside) / kNumJoints;
}

GroupMotion gaussian_smooth(const GroupMotion& m, double scale) {
  if (scale <= 0.0) return m;
  std::vector<int> valid;
  valid.reserve(m.F);
  for (int f = 0; f < m.F; ++f)
    if (m.frame_valid(f)) valid.push_back(f);
  const int n = static_cast<int>(valid.size());
  if (n <= 1) return m;

  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * scale)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * (k * k) / (scale * scale));
    ksum += kernel[k + radius];
  }
  for (double& w : kernel) w /= ksum;

  // Half-sample symmetric reflection, repeats the edge sample.
  auto reflect = [n](int i) {
    const int period = 2 * n;
    int r = i % period;
    if (r < 0) r += period;
    return r < n ? r : period - 1 - r;
  };

  GroupMotion out = m;
  const int channels = m.N * kPoseDim;
  std::vector<double> column(n);
  for (int c = 0; c < channels; ++c) {
    const int subject = c / kPoseDim;
    if (!m.subject_valid(subject)) continue;
    for (int i = 0; i < n; ++i)
      column[i] = m.data[static_cast<std::size_t>(valid[i]) * channels + c];
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * column[reflect(i + k)];
      out.data[static_cast<std::size_t>(valid[i]) * channels + c] = acc;
    }
  }
  return out;
}

} // namespace gmotion
