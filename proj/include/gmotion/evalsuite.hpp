#ifndef GMOTION_EVALSUITE_HPP
#define GMOTION_EVALSUITE_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gmotion/diffusion.hpp"
#include "gmotion/netcore.hpp"
#include "gmotion/trainer.hpp"

namespace gmotion {

struct EncoderConfig {
  int d_feat = 64;
  int latent = 64;
  int heads = 4;
  int ff_dim = 128;
  int n_layers = 1;
  int d_text = kDefaultTextDim;
  double dropout = 0.0;
  double lr = 1e-3;
  int steps = 600;
  int batch = 32;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static EncoderConfig from_json(const std::string& json);
};

// Text projection head sharing the feature space of a sample encoder.
class TextHead {
public:
  TextHead() = default;
  TextHead(const EncoderConfig& cfg, Rng& rng);
  nn::Tensor forward(const nn::Tensor& texts) const; // (B,d_text) -> unit (B,d_feat)
  std::vector<double> encode(const TextEmbedding& text) const;
  void collect(const std::string& prefix, NamedParams& out) const;
private:
  Mlp mlp_;
  int d_text_ = 0;
};

// Group-frame encoder: tokens are subjects, no positional encoding
// (order-free set), masked mean pooling, unit-norm output.
class PoseEncoder {
public:
  PoseEncoder() = default;
  PoseEncoder(const EncoderConfig& cfg, Rng& rng);
  /// x: (B,S,kPoseDim) with subject mask B*S.
  nn::Tensor forward(const nn::Tensor& x, const std::vector<std::uint8_t>& mask,
                     bool train, Rng& rng) const;
  std::vector<double> encode(const std::vector<double>& pose, const std::vector<std::uint8_t>& mask,
                             int N) const;
  const EncoderConfig& config() const { return cfg_; }
  void collect(const std::string& prefix, NamedParams& out) const;
private:
  EncoderConfig cfg_;
  nn::Tensor w_in_, b_in_, w_feat_, b_feat_;
  std::vector<EncoderLayer> layers_;
  friend nn::Tensor encoder_core(const PoseEncoder&, const nn::Tensor&,
                                 const std::vector<std::uint8_t>&, bool, Rng&);
};

// Single-person track encoder: tokens are frames with temporal positions.
class MotionEncoder {
public:
  MotionEncoder() = default;
  MotionEncoder(const EncoderConfig& cfg, Rng& rng);
  /// x: (B,S,kPoseDim) with frame mask B*S.
  nn::Tensor forward(const nn::Tensor& x, const std::vector<std::uint8_t>& mask,
                     bool train, Rng& rng) const;
  std::vector<double> encode(const std::vector<double>& track, const std::vector<std::uint8_t>& mask,
                             int F) const;
  const EncoderConfig& config() const { return cfg_; }
  void collect(const std::string& prefix, NamedParams& out) const;
private:
  EncoderConfig cfg_;
  nn::Tensor w_in_, b_in_, w_feat_, b_feat_;
  std::vector<EncoderLayer> layers_;
};

/// Symmetric in-batch cross entropy over similarity logits.
nn::Tensor contrastive_loss(const nn::Tensor& sample_feats, const nn::Tensor& text_feats,
                            const nn::Tensor& log_temperature);

struct PoseTextPair {
  std::vector<double> pose; // N * kPoseDim
  std::vector<std::uint8_t> mask;
  int N = 0;
  TextEmbedding text;
};
struct MotionTextPair {
  std::vector<double> track; // F * kPoseDim
  std::vector<std::uint8_t> mask;
  int F = 0;
  TextEmbedding text;
};

struct PoseEncoderBundle {
  PoseEncoder encoder;
  TextHead text_head;
  void save(const std::string& path) const;
  static PoseEncoderBundle load(const std::string& path);
};
struct MotionEncoderBundle {
  MotionEncoder encoder;
  TextHead text_head;
  void save(const std::string& path) const;
  static MotionEncoderBundle load(const std::string& path);
};

PoseEncoderBundle train_pose_encoder(const std::vector<PoseTextPair>& pairs,
                                     const EncoderConfig& cfg,
                                     std::vector<double>* history = nullptr);
MotionEncoderBundle train_motion_encoder(const std::vector<MotionTextPair>& pairs,
                                         const EncoderConfig& cfg,
                                         std::vector<double>* history = nullptr);

using FeatureRows = std::vector<std::vector<double>>;

/// Fraction of rows whose true match ranks in the cosine top-k within a
/// pool of exactly 32. Throws PoolSizeError otherwise.
double r_precision(const FeatureRows& text_feats, const FeatureRows& sample_feats, int k);

/// Gaussian Frechet distance with symmetric-eigendecomposition matrix
/// square root and +1e-6 I covariance shrinkage.
double frechet_distance(const FeatureRows& a, const FeatureRows& b);

/// Mean Euclidean distance over n_pairs disjoint random pairs.
double diversity(const FeatureRows& feats, int n_pairs, Rng& rng);

/// Diversity statistic within each prompt's repeated generations,
/// averaged over prompts (grouped so repeats pair with repeats).
double multimodality(const std::vector<FeatureRows>& per_prompt_feats, Rng& rng);

/// Mean cosine similarity of matched rows.
double similarity(const FeatureRows& text_feats, const FeatureRows& sample_feats);

struct MetricReport {
  std::optional<double> pose_r_top1, pose_r_top2, pose_r_top3;
  double pose_fid = 0.0;
  double pose_similarity = 0.0;
  double pose_diversity = 0.0;
  double pose_multimodality = 0.0;
  double motion_fid = 0.0;
  double motion_diversity = 0.0;
  double motion_multimodality = 0.0;
  std::vector<int> eval_frames;
  int n_prompts = 0;
  int pose_pool_size = 0;
  int motion_pool_size = 0;
  std::uint64_t seed = 0;

  std::string to_text() const;
};

struct EvalConfig {
  int pool_size = 32;
  int diversity_pairs = 300;
  int mm_repeats = 10;
  int frame_spacing = 14;
  std::uint64_t seed = 0;
};

using GeneratorFn = std::function<GroupMotion(const std::string& prompt, Rng& rng)>;

/// Sparse per-frame indices used for pose metrics: center +- k*spacing,
/// five points, clamped and deduplicated.
std::vector<int> sparse_eval_frames(int F, int spacing);

/// Per-subject track canonicalized to its own center-frame horizontal mean.
std::vector<double> subject_track(const GroupMotion& m, int subject);

/// Pose metrics on the sparse frames of each generation, motion metrics
/// on each subject's track; references come from the dataset map (LP for
/// poses, HML for motions).
MetricReport decomposed_evaluate(const GeneratorFn& generator,
                                 const std::vector<std::string>& prompts,
                                 const PoseEncoderBundle& pose_enc,
                                 const MotionEncoder& motion_enc,
                                 const DatasetMap& reference, const EvalConfig& cfg);

/// Stage-1 sample held static over F frames.
GroupMotion baseline_pose_only(const Stage1Model& stage1, const std::string& prompt, int F,
                               const NoiseSchedule& sched, const TwoStageConfig& cfg, Rng& rng);

/// Stage-1 sample fixed as the middle frame; subjects animated
/// independently by the single-person motion model.
GroupMotion baseline_motion_only(const Stage1Model& stage1, const MotionOnlyModel& motion_model,
                                 const std::string& prompt, int F,
                                 const NoiseSchedule& sched, const TwoStageConfig& cfg, Rng& rng);

} // namespace gmotion

#endif
