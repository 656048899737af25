#ifndef GMOTION_CURATION_HPP
#define GMOTION_CURATION_HPP

#include <optional>
#include <ostream>
#include <vector>

#include "gmotion/kinematics.hpp"
#include "gmotion/repr.hpp"

namespace gmotion {

struct CurationConfig {
  double iou_threshold = 0.25;
  double containment_threshold = 0.85;
  int separation_steps = 25;
  double separation_lr = 0.05;
  int min_group_frames = 30;
  // Synthetic composition: starting translations inside a disc, with a
  // bounded number of rejection retries.
  double compose_radius = 3.0;
  int compose_retries = 20;
};

// Line-delimited curation records: "op=<name> id=<i> action=<what> ...".
// A null stream disables reporting.
class CurationReport {
public:
  explicit CurationReport(std::ostream* out = nullptr) : out_(out) {}
  void emit(const std::string& line) {
    if (out_) (*out_) << line << '\n';
  }
private:
  std::ostream* out_;
};

/// Greedy de-duplication in input order: a pose whose projected-box IoU
/// with any kept pose exceeds the threshold is dropped.
std::vector<PoseVector> dedup_group(const std::vector<PoseVector>& poses,
                                    const Skeleton& s, const CameraModel& cam,
                                    const CurationConfig& cfg,
                                    CurationReport* report = nullptr);

/// Keeps poses whose frame containment fraction meets the threshold.
std::vector<PoseVector> filter_contained(const std::vector<PoseVector>& poses,
                                         const Skeleton& s, const CameraModel& cam,
                                         const CurationConfig& cfg,
                                         CurationReport* report = nullptr);

/// Shifts each pose vertically so its lowest joint sits at ground_y.
std::vector<PoseVector> height_adjust(const std::vector<PoseVector>& poses,
                                      const Skeleton& s, double ground_y = 0.0,
                                      CurationReport* report = nullptr);

struct SeparationResult {
  std::vector<PoseVector> poses;
  std::vector<double> loss_history; // one entry per loss evaluation
  int loss_evaluations = 0;
};

/// Fixed-step gradient descent on the summed pairwise capsule penetration,
/// moving translations only. Runs exactly cfg.separation_steps steps.
SeparationResult separate_meshes(const std::vector<PoseVector>& poses,
                                 const Skeleton& s, const CapsuleBody& body,
                                 const CurationConfig& cfg,
                                 CurationReport* report = nullptr);

/// Places n randomly chosen single-person motions in shared space with
/// random starting translations; rejects any placement where two subjects
/// collide at a valid frame. Empty optional means all retries collided.
/// Throws InvalidN outside [2,6].
std::optional<GroupMotion> compose_synthetic_group(const std::vector<GroupMotion>& singles,
                                                   int n, Rng& rng,
                                                   const Skeleton& s, const CapsuleBody& body,
                                                   const CurationConfig& cfg,
                                                   CurationReport* report = nullptr);

// Presence of one subject as half-open frame intervals [start, end).
using PresenceIntervals = std::vector<std::pair<int, int>>;

struct GroupClip {
  int start = 0; // inclusive
  int end = 0;   // exclusive
  std::vector<int> subjects;
};

/// Maximal windows where at least two subjects are simultaneously present
/// for at least cfg.min_group_frames frames. Subjects listed are those
/// present at any frame of the window.
std::vector<GroupClip> group_motion_clips(const std::vector<PresenceIntervals>& tracks,
                                          const CurationConfig& cfg);

} // namespace gmotion

#endif
