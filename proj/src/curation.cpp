#include "gmotion/curation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gmotion {

std::vector<PoseVector> dedup_group(const std::vector<PoseVector>& poses,
                                    const Skeleton& s, const CameraModel& cam,
                                    const CurationConfig& cfg, CurationReport* report) {
  std::vector<PoseVector> kept;
  kept.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    double worst = 0.0;
    bool duplicate = false;
    for (const PoseVector& k : kept) {
      const double iou = projected_bbox_iou(poses[i], k, s, cam);
      worst = std::max(worst, iou);
      if (iou > cfg.iou_threshold) {
        duplicate = true;
        break;
      }
    }
    if (report) {
      std::ostringstream line;
      line << "op=dedup id=" << i << " action=" << (duplicate ? "discard" : "keep")
           << " iou=" << worst;
      report->emit(line.str());
    }
    if (!duplicate) kept.push_back(poses[i]);
  }
  return kept;
}

std::vector<PoseVector> filter_contained(const std::vector<PoseVector>& poses,
                                         const Skeleton& s, const CameraModel& cam,
                                         const CurationConfig& cfg, CurationReport* report) {
  std::vector<PoseVector> kept;
  kept.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const double frac = frame_containment_fraction(poses[i], s, cam);
    const bool keep = frac >= cfg.containment_threshold;
    if (report) {
      std::ostringstream line;
      line << "op=containment id=" << i << " action=" << (keep ? "keep" : "discard")
           << " fraction=" << frac;
      report->emit(line.str());
    }
    if (keep) kept.push_back(poses[i]);
  }
  return kept;
}

std::vector<PoseVector> height_adjust(const std::vector<PoseVector>& poses,
                                      const Skeleton& s, double ground_y,
                                      CurationReport* report) {
  std::vector<PoseVector> out = poses;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const JointPositions joints = forward_kinematics(out[i], s);
    double min_y = joints[0].y();
    for (const auto& j : joints) min_y = std::min(min_y, j.y());
    const double shift = min_y - ground_y;
    out[i].trans.y() -= shift;
    if (report) {
      std::ostringstream line;
      line << "op=height_adjust id=" << i << " action=shift dy=" << -shift;
      report->emit(line.str());
    }
  }
  return out;
}

namespace {

// One loss+gradient evaluation over all unordered pose pairs.
double total_penetration_grad(const std::vector<PoseVector>& poses,
                              const Skeleton& s, const CapsuleBody& body,
                              std::vector<Eigen::Vector3d>& grads) {
  double total = 0.0;
  for (auto& g : grads) g.setZero();
  for (std::size_t i = 0; i + 1 < poses.size(); ++i) {
    for (std::size_t j = i + 1; j < poses.size(); ++j) {
      const PenetrationGrad pg = capsule_penetration_grad(poses[i], poses[j], s, body);
      total += pg.value;
      grads[i] += pg.grad_a;
      grads[j] += pg.grad_b;
    }
  }
  return total;
}

} // namespace

SeparationResult separate_meshes(const std::vector<PoseVector>& poses,
                                 const Skeleton& s, const CapsuleBody& body,
                                 const CurationConfig& cfg, CurationReport* report) {
  SeparationResult result;
  result.poses = poses;
  std::vector<Eigen::Vector3d> grads(poses.size(), Eigen::Vector3d::Zero());
  for (int step = 0; step < cfg.separation_steps; ++step) {
    const double loss = total_penetration_grad(result.poses, s, body, grads);
    result.loss_history.push_back(loss);
    ++result.loss_evaluations;
    if (loss == 0.0) continue; // zero gradient, nothing to move
    for (std::size_t i = 0; i < result.poses.size(); ++i)
      result.poses[i].trans -= cfg.separation_lr * grads[i];
  }
  if (report) {
    std::ostringstream line;
    line << "op=separate id=all action=optimize steps=" << cfg.separation_steps
         << " initial=" << (result.loss_history.empty() ? 0.0 : result.loss_history.front())
         << " final=" << (result.loss_history.empty() ? 0.0 : result.loss_history.back());
    report->emit(line.str());
  }
  return result;
}

std::optional<GroupMotion> compose_synthetic_group(const std::vector<GroupMotion>& singles,
                                                   int n, Rng& rng,
                                                   const Skeleton& s, const CapsuleBody& body,
                                                   const CurationConfig& cfg,
                                                   CurationReport* report) {
  if (n < 2 || n > 6) throw InvalidN("compose_synthetic_group: n must be in [2,6]");
  if (static_cast<int>(singles.size()) < n)
    throw InvalidN("compose_synthetic_group: need at least n single-person motions");

  // Pick n distinct singles and a common frame count.
  std::vector<int> order(singles.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t j = i + rand_index(rng, order.size() - i);
    std::swap(order[i], order[j]);
  }
  order.resize(n);

  int common_F = kMaxFrames;
  for (int idx : order) common_F = std::min(common_F, singles[idx].valid_frames());
  if (common_F < 1) return std::nullopt;
  const int fps = singles[order[0]].fps;

  for (int attempt = 0; attempt < cfg.compose_retries; ++attempt) {
    GroupMotion group = GroupMotion::zeros(common_F, n, fps);
    for (int k = 0; k < n; ++k) {
      const GroupMotion& src = singles[order[k]];
      // Area-uniform draw inside the disc.
      const double ang = rand_uniform(rng, 0.0, 2.0 * kPi);
      const double rad = cfg.compose_radius * std::sqrt(rand_uniform(rng));
      const double* first = src.pose_ptr(0, 0);
      const double dx = rad * std::cos(ang) - first[kPoseDim - 3];
      const double dz = rad * std::sin(ang) - first[kPoseDim - 1];
      for (int f = 0; f < common_F; ++f) {
        const double* from = src.pose_ptr(f, 0);
        double* to = group.pose_ptr(f, k);
        std::copy(from, from + kPoseDim, to);
        to[kPoseDim - 3] += dx;
        to[kPoseDim - 1] += dz;
      }
    }
    bool collided = false;
    for (int f = 0; f < common_F && !collided; ++f) {
      for (int i = 0; i + 1 < n && !collided; ++i) {
        for (int j = i + 1; j < n && !collided; ++j) {
          if (capsule_penetration(group.pose(f, i), group.pose(f, j), s, body) > 0.0)
            collided = true;
        }
      }
    }
    if (report) {
      std::ostringstream line;
      line << "op=compose id=" << attempt << " action=" << (collided ? "reject" : "accept")
           << " n=" << n << " frames=" << common_F;
      report->emit(line.str());
    }
    if (!collided) return group;
  }
  return std::nullopt;
}

std::vector<GroupClip> group_motion_clips(const std::vector<PresenceIntervals>& tracks,
                                          const CurationConfig& cfg) {
  int horizon = 0;
  for (const auto& track : tracks)
    for (const auto& [start, end] : track) {
      if (start < 0 || end < start)
        throw Error("group_motion_clips: intervals must satisfy 0 <= start <= end");
      horizon = std::max(horizon, end);
    }

  std::vector<GroupClip> clips;
  if (horizon == 0) return clips;

  auto present = [&](int subject, int frame) {
    for (const auto& [start, end] : tracks[subject])
      if (frame >= start && frame < end) return true;
    return false;
  };

  std::vector<int> count(horizon, 0);
  for (std::size_t subj = 0; subj < tracks.size(); ++subj)
    for (int f = 0; f < horizon; ++f)
      if (present(static_cast<int>(subj), f)) ++count[f];

  int run_start = -1;
  for (int f = 0; f <= horizon; ++f) {
    const bool grouped = f < horizon && count[f] >= 2;
    if (grouped && run_start < 0) run_start = f;
    if (!grouped && run_start >= 0) {
      if (f - run_start >= cfg.min_group_frames) {
        GroupClip clip;
        clip.start = run_start;
        clip.end = f;
        for (std::size_t subj = 0; subj < tracks.size(); ++subj) {
          for (int g = run_start; g < f; ++g) {
            if (present(static_cast<int>(subj), g)) {
              clip.subjects.push_back(static_cast<int>(subj));
              break;
            }
          }
        }
        clips.push_back(std::move(clip));
      }
      run_start = -1;
    }
  }
  return clips;
}

} // namespace gmotion
