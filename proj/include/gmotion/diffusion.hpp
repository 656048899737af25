#ifndef GMOTION_DIFFUSION_HPP
#define GMOTION_DIFFUSION_HPP

#include <functional>
#include <optional>
#include <vector>

#include "gmotion/netcore.hpp"
#include "gmotion/repr.hpp"
#include "gmotion/textcond.hpp"

namespace gmotion {

struct NoiseSchedule {
  enum class Kind { linear, cosine };
  int T = 0;
  Kind kind = Kind::cosine;
  std::vector<double> alpha;     // alpha[t-1] for t in [1,T]
  std::vector<double> alpha_bar; // running products of alpha

  static NoiseSchedule make_linear(int T, double beta_start = 1e-4, double beta_end = 0.02);
  static NoiseSchedule make_cosine(int T, double s = 0.008);

  double a(int t) const { return alpha.at(t - 1); }
  double abar(int t) const { return alpha_bar.at(t - 1); }
  double abar_prev(int t) const { return t > 1 ? alpha_bar.at(t - 2) : 1.0; }
  double beta(int t) const { return 1.0 - a(t); }
};

struct GuidanceConfig {
  double cfg_scale = 1.0;    // s
  double pose_scale = 0.0;   // s_p
  double motion_scale = 0.0; // s_m
  void validate() const;     // ScaleViolation if s_p + s_m > 1 or a scale < 0
};

// Shape and validity context for raw-buffer sampling.
struct SampleDims {
  int B = 1, F = 1, N = 1;
  std::vector<std::uint8_t> frame_mask;   // B*F
  std::vector<std::uint8_t> subject_mask; // B*N

  static SampleDims full(int B, int F, int N);
  std::size_t numel() const { return static_cast<std::size_t>(B) * F * N * kPoseDim; }
  bool valid_at(int b, int f, int n) const {
    return frame_mask[static_cast<std::size_t>(b) * F + f] &&
           subject_mask[static_cast<std::size_t>(b) * N + n];
  }
  void zero_padded(std::vector<double>& x) const;
  /// 1.0 at valid scalar positions, 0.0 at padded ones.
  std::vector<double> weights() const;
};

/// Closed-form forward marginal x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) noise,
/// with padded positions re-zeroed.
std::vector<double> q_sample(const std::vector<double>& x0, int t,
                             const std::vector<double>& noise,
                             const NoiseSchedule& sched, const SampleDims& dims);

// A denoiser bound to its conditions: (x_t, t) -> x0 prediction.
using DenoiseFn = std::function<std::vector<double>(const std::vector<double>& x_t, int t)>;

/// Classifier-free guidance: uncond + s * (cond - uncond). s = 1 and
/// s = 0 return the single underlying pass untouched.
std::vector<double> cfg_predict(const DenoiseFn& cond, const DenoiseFn& uncond,
                                const std::vector<double>& x_t, int t, double s);

/// Affine blend (1 - s_p - s_m) G + s_p G_p + s_m G_m. The pose model sees
/// frames folded into the batch, the motion model sees subjects folded
/// into the batch; terms with zero scale are never invoked.
std::vector<double> guided_predict(const DenoiseFn& joint,
                                   const DenoiseFn* pose_model,
                                   const DenoiseFn* motion_model,
                                   const std::vector<double>& x_t, int t,
                                   const SampleDims& dims, const GuidanceConfig& gcfg);

// Folding helpers used by guided_predict (exposed for tests):
// (B,F,N,C) <-> (B*N,F,1,C) flat-buffer transposes.
std::vector<double> fold_subjects_to_batch(const std::vector<double>& x, const SampleDims& dims);
std::vector<double> unfold_subjects_from_batch(const std::vector<double>& x, const SampleDims& dims);

struct SamplerConfig {
  bool posterior_variance = true; // beta-tilde when true, beta_t otherwise
};

/// DDPM loop from pure noise: predict x0, re-noise to x_{t-1}, repeat.
/// The optional hook edits each x0 prediction in place (hard constraints).
std::vector<double> ddpm_sample(const DenoiseFn& predict_x0, const SampleDims& dims,
                                const NoiseSchedule& sched, Rng& rng,
                                const SamplerConfig& scfg = {},
                                const std::function<void(std::vector<double>&)>* x0_hook = nullptr);

// Padded training batch plus per-sample conditions.
struct TrainingBatch {
  PaddedBatch pb;
  std::vector<TextEmbedding> texts;
  std::vector<std::optional<CenterPoseCond>> centers;
  int fps = 20;
};

SampleDims dims_of(const PaddedBatch& pb);

/// x0-prediction MSE over valid positions, with text dropout applied
/// before the forward pass. Returns the graph-connected scalar loss.
nn::Tensor training_loss(const Stage1Model& model, const TrainingBatch& batch,
                         const NoiseSchedule& sched, Rng& rng, double text_dropout_p);
nn::Tensor training_loss(const Stage2Model& model, const TrainingBatch& batch,
                         const NoiseSchedule& sched, Rng& rng, double text_dropout_p);
nn::Tensor training_loss(const MotionOnlyModel& model, const TrainingBatch& batch,
                         const NoiseSchedule& sched, Rng& rng);

// Bound denoisers over the concrete models (classifier-free guidance on
// the text condition; the center-pose condition rides along unchanged).
DenoiseFn make_stage1_denoiser(const Stage1Model& model, const SampleDims& dims,
                               const TextEmbedding& text, double cfg_scale);
DenoiseFn make_stage2_denoiser(const Stage2Model& model, const SampleDims& dims,
                               const TextEmbedding& text,
                               const std::optional<CenterPoseCond>& center, double cfg_scale);
DenoiseFn make_motion_denoiser(const MotionOnlyModel& model, const SampleDims& dims,
                               const std::optional<CenterPoseCond>& center);

struct TwoStageConfig {
  GuidanceConfig guidance;
  SamplerConfig sampler;
  int fps = 20;
  bool fix_center = false; // hard-inpaint the center frame during stage 2
  const SubjectCountClient* llm = nullptr;
};

/// Full pipeline: subject count from the prompt, stage-1 pose frame,
/// stage-2 motion conditioned on it, canonicalized output.
GroupMotion two_stage_sample(const Stage1Model& stage1, const Stage2Model& stage2,
                             const MotionOnlyModel* motion_model,
                             const std::string& prompt, int F,
                             const NoiseSchedule& sched, const TwoStageConfig& cfg, Rng& rng);

/// Stage-1 only: one multi-person pose frame for the prompt.
GroupMotion sample_pose_frame(const Stage1Model& stage1, const std::string& prompt,
                              const NoiseSchedule& sched, const TwoStageConfig& cfg, Rng& rng);

} // namespace gmotion

#endif
