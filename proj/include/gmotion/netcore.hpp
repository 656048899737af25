#ifndef GMOTION_NETCORE_HPP
#define GMOTION_NETCORE_HPP

#include <optional>
#include <string>
#include <vector>

#include "gmotion/nn.hpp"
#include "gmotion/repr.hpp"
#include "gmotion/textcond.hpp"

namespace gmotion {

struct ModelConfig {
  int latent_dim = 64;   // paper-scale 512
  int n_pose_layers = 2; // paper-scale 8
  int heads = 4;
  int ff_dim = 256;
  double dropout = 0.1;
  int max_F = kMaxFrames;
  int max_N = kMaxSubjects;
  int d_text = kDefaultTextDim;
  bool two_stage = false;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& json);
};

// Center-frame pose condition for one sample: N poses plus subject mask.
struct CenterPoseCond {
  std::vector<double> pose;          // N * kPoseDim
  std::vector<std::uint8_t> subject_mask; // N
  int N = 0;
};

// One denoiser invocation. Everything is per-batch-element: timestep,
// text, optional center pose; masks follow the PaddedBatch layout.
struct DenoiseInput {
  const std::vector<double>* x = nullptr; // B*F*N*kPoseDim
  int B = 0, F = 0, N = 0;
  const std::vector<std::uint8_t>* frame_mask = nullptr;   // B*F
  const std::vector<std::uint8_t>* subject_mask = nullptr; // B*N
  std::vector<int> t;                                      // B
  std::vector<TextEmbedding> texts;                        // B (may be empty for uncond models)
  std::vector<std::optional<CenterPoseCond>> centers;      // B or empty
  bool train = false;
};

std::vector<double> sinusoidal_embedding(double pos, int dim);

// Pre-norm transformer encoder layer with the condition token prepended
// before attention and dropped after. Output projections can start at
// zero, which makes the whole layer the identity on its input.
class EncoderLayer {
public:
  EncoderLayer() = default;
  EncoderLayer(int latent, int heads, int ff_dim, Rng& rng, bool zero_init_residual);

  /// h: (B,S,C); cond_tok: (B,C) or null; key_mask: B*S; pe: optional S*C
  /// positional table injected at the attention input only.
  nn::Tensor forward(const nn::Tensor& h, const nn::Tensor* cond_tok,
                     const std::vector<std::uint8_t>& key_mask,
                     const std::vector<double>* pe,
                     double dropout_p, bool train, Rng& rng) const;

  void collect(const std::string& prefix, std::vector<std::pair<std::string, nn::Tensor>>& out) const;
  static int param_tensor_count() { return 12; }

  /// Deep copy with requires_grad cleared on every tensor.
  EncoderLayer frozen_clone() const;

  int heads() const { return heads_; }

private:
  int latent_ = 0, heads_ = 0, ff_ = 0;
  nn::Tensor ln1_g_, ln1_b_, w_qkv_, b_qkv_, w_o_, b_o_;
  nn::Tensor ln2_g_, ln2_b_, w_ff1_, b_ff1_, w_ff2_, b_ff2_;
};

// Two-layer MLP used for the timestep and pose-condition embeddings.
class Mlp {
public:
  Mlp() = default;
  Mlp(int in_dim, int hidden, int out_dim, Rng& rng);
  nn::Tensor forward(const nn::Tensor& x) const;
  void collect(const std::string& prefix, std::vector<std::pair<std::string, nn::Tensor>>& out) const;
  Mlp frozen_clone() const;
private:
  nn::Tensor w1_, b1_, w2_, b2_;
};

using NamedParams = std::vector<std::pair<std::string, nn::Tensor>>;

class Stage1Model;
class Stage2Model;

/// Copies and freezes the stage-1 weights, inserting one zero-initialized
/// motion layer after each pose layer.
Stage2Model insert_motion_layers(const Stage1Model& stage1, Rng& rng);

// Text-to-pose denoiser: pose layers over subjects, no positional
// encoding, one text+timestep condition token per layer.
class Stage1Model {
public:
  Stage1Model() = default;
  Stage1Model(const ModelConfig& cfg, Rng& rng);

  /// x: (B,1,N,158) flattened; returns the x0 prediction, same shape.
  nn::Tensor forward(const DenoiseInput& in, Rng& rng) const;

  const ModelConfig& config() const { return cfg_; }
  NamedParams named_params() const;
  std::vector<nn::Tensor> trainable_params() const;
  void save(const std::string& path) const;
  static Stage1Model load(const std::string& path);

  friend Stage2Model insert_motion_layers(const Stage1Model& stage1, Rng& rng);

private:
  ModelConfig cfg_;
  nn::Tensor w_in_, b_in_, w_out_, b_out_;
  Mlp t_mlp_;
  nn::Tensor w_text_; // bias-free so a null text contributes exactly zero
  std::vector<EncoderLayer> pose_layers_;

  nn::Tensor text_timestep_token(const DenoiseInput& in) const;
  nn::Tensor run_pose_stack(nn::Tensor h, const DenoiseInput& in, Rng& rng) const;
  friend struct ModelAccess;
};

// Joint denoiser: stage-1 pose layers (frozen) interleaved with motion
// layers that start as the identity.
class Stage2Model {
public:
  Stage2Model() = default;

  /// x: (B,F,N,158); text condition feeds pose layers, the center-pose
  /// condition feeds motion layers.
  nn::Tensor forward(const DenoiseInput& in, Rng& rng) const;

  const ModelConfig& config() const { return cfg_; }
  NamedParams named_params() const;
  std::vector<nn::Tensor> trainable_params() const;
  std::vector<std::string> frozen_param_names() const;
  void save(const std::string& path) const;
  static Stage2Model load(const std::string& path);

  friend Stage2Model insert_motion_layers(const Stage1Model& stage1, Rng& rng);
  friend struct ModelAccess;

private:
  ModelConfig cfg_;
  nn::Tensor w_in_, b_in_, w_out_, b_out_; // frozen copies
  Mlp t_mlp_;                              // frozen
  nn::Tensor w_text_;                      // frozen
  std::vector<EncoderLayer> pose_layers_;  // frozen
  std::vector<EncoderLayer> motion_layers_;
  Mlp pc_mlp_;       // concat(flat center pose, center-frame PE) -> latent
  Mlp pc_t_mlp_;     // separate timestep projection for the pose token
  nn::Tensor pc_null_;

  nn::Tensor pose_condition_token(const DenoiseInput& in) const;
};

// Single-person motion denoiser: motion layers only, unconditional on
// text, optional center-pose condition. Serves as the motion guidance
// term and as the animation model of the Motion-Only baseline.
class MotionOnlyModel {
public:
  MotionOnlyModel() = default;
  MotionOnlyModel(const ModelConfig& cfg, Rng& rng);

  /// x: (B,F,1,158).
  nn::Tensor forward(const DenoiseInput& in, Rng& rng) const;

  const ModelConfig& config() const { return cfg_; }
  NamedParams named_params() const;
  std::vector<nn::Tensor> trainable_params() const;
  void save(const std::string& path) const;
  static MotionOnlyModel load(const std::string& path);

private:
  ModelConfig cfg_;
  nn::Tensor w_in_, b_in_, w_out_, b_out_;
  std::vector<EncoderLayer> motion_layers_;
  Mlp pc_mlp_;
  Mlp pc_t_mlp_;
  nn::Tensor pc_null_;
  friend struct ModelAccess;
};

// Versioned binary checkpoint container shared by models and encoders.
struct CheckpointPayload {
  int stage = 0; // 1/2 diffusion stages; other kinds use 0
  std::string kind;
  std::string config_json;
  NamedParams tensors;
};

void save_checkpoint(const std::string& path, const CheckpointPayload& payload);
CheckpointPayload load_checkpoint(const std::string& path);
/// Reads only kind/stage/config (cheap dispatch helper).
CheckpointPayload peek_checkpoint(const std::string& path);

} // namespace gmotion

#endif
