#include "gmotion/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace gmotion {

NoiseSchedule NoiseSchedule::make_linear(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("NoiseSchedule: T must be >= 1");
  NoiseSchedule sched;
  sched.T = T;
  sched.kind = Kind::linear;
  sched.alpha.resize(T);
  sched.alpha_bar.resize(T);
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    sched.alpha[t - 1] = 1.0 - beta;
    prod *= sched.alpha[t - 1];
    sched.alpha_bar[t - 1] = prod;
  }
  return sched;
}

NoiseSchedule NoiseSchedule::make_cosine(int T, double s) {
  if (T < 1) throw ConfigError("NoiseSchedule: T must be >= 1");
  NoiseSchedule sched;
  sched.T = T;
  sched.kind = Kind::cosine;
  sched.alpha.resize(T);
  sched.alpha_bar.resize(T);
  auto f = [&](double t) {
    const double v = std::cos((t / T + s) / (1.0 + s) * kPi / 2.0);
    return v * v;
  };
  const double f0 = f(0.0);
  double prev = 1.0;
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double abar = f(static_cast<double>(t)) / f0;
    double alpha = abar / prev;
    alpha = std::clamp(alpha, 0.001, 0.9999); // clip extreme steps
    prev = abar;
    sched.alpha[t - 1] = alpha;
    prod *= alpha;
    sched.alpha_bar[t - 1] = prod;
  }
  return sched;
}

void GuidanceConfig::validate() const {
  if (cfg_scale < 0.0 || pose_scale < 0.0 || motion_scale < 0.0)
    throw ScaleViolation("guidance scales must be non-negative");
  if (pose_scale + motion_scale > 1.0)
    throw ScaleViolation("pose_scale + motion_scale must be <= 1");
}

SampleDims SampleDims::full(int B, int F, int N) {
  SampleDims d;
  d.B = B;
  d.F = F;
  d.N = N;
  d.frame_mask.assign(static_cast<std::size_t>(B) * F, 1);
  d.subject_mask.assign(static_cast<std::size_t>(B) * N, 1);
  return d;
}

void SampleDims::zero_padded(std::vector<double>& x) const {
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int n = 0; n < N; ++n) {
        if (valid_at(b, f, n)) continue;
        double* p = x.data() + ((static_cast<std::size_t>(b) * F + f) * N + n) * kPoseDim;
        std::fill(p, p + kPoseDim, 0.0);
      }
}

std::vector<double> SampleDims::weights() const {
  std::vector<double> w(numel(), 0.0);
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int n = 0; n < N; ++n) {
        if (!valid_at(b, f, n)) continue;
        double* p = w.data() + ((static_cast<std::size_t>(b) * F + f) * N + n) * kPoseDim;
        std::fill(p, p + kPoseDim, 1.0);
      }
  return w;
}

std::vector<double> q_sample(const std::vector<double>& x0, int t,
                             const std::vector<double>& noise,
                             const NoiseSchedule& sched, const SampleDims& dims) {
  if (t < 1 || t > sched.T) throw Error("q_sample: t out of range");
  if (x0.size() != noise.size() || x0.size() != dims.numel())
    throw ShapeMismatch("q_sample: buffer size mismatch");
  const double sa = std::sqrt(sched.abar(t));
  const double sn = std::sqrt(1.0 - sched.abar(t));
  std::vector<double> xt(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) xt[i] = sa * x0[i] + sn * noise[i];
  dims.zero_padded(xt);
  return xt;
}

std::vector<double> cfg_predict(const DenoiseFn& cond, const DenoiseFn& uncond,
                                const std::vector<double>& x_t, int t, double s) {
  if (s < 0.0) throw ScaleViolation("cfg_predict: s must be >= 0");
  if (s == 1.0) return cond(x_t, t);
  if (s == 0.0) return uncond(x_t, t);
  std::vector<double> u = uncond(x_t, t);
  const std::vector<double> c = cond(x_t, t);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = u[i] + s * (c[i] - u[i]);
  return u;
}

std::vector<double> fold_subjects_to_batch(const std::vector<double>& x, const SampleDims& dims) {
  std::vector<double> out(x.size());
  const int B = dims.B, F = dims.F, N = dims.N;
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int n = 0; n < N; ++n) {
        const double* src = x.data() + ((static_cast<std::size_t>(b) * F + f) * N + n) * kPoseDim;
        double* dst = out.data() + ((static_cast<std::size_t>(b) * N + n) * F + f) * kPoseDim;
        std::copy(src, src + kPoseDim, dst);
      }
  return out;
}

std::vector<double> unfold_subjects_from_batch(const std::vector<double>& x, const SampleDims& dims) {
  std::vector<double> out(x.size());
  const int B = dims.B, F = dims.F, N = dims.N;
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int n = 0; n < N; ++n) {
        const double* src = x.data() + ((static_cast<std::size_t>(b) * N + n) * F + f) * kPoseDim;
        double* dst = out.data() + ((static_cast<std::size_t>(b) * F + f) * N + n) * kPoseDim;
        std::copy(src, src + kPoseDim, dst);
      }
  return out;
}

std::vector<double> guided_predict(const DenoiseFn& joint,
                                   const DenoiseFn* pose_model,
                                   const DenoiseFn* motion_model,
                                   const std::vector<double>& x_t, int t,
                                   const SampleDims& dims, const GuidanceConfig& gcfg) {
  gcfg.validate();
  const double wj = 1.0 - gcfg.pose_scale - gcfg.motion_scale;
  const double wp = gcfg.pose_scale;
  const double wm = gcfg.motion_scale;

  std::vector<double> out(x_t.size(), 0.0);
  bool first = true;
  auto accumulate = [&](const std::vector<double>& term, double w) {
    if (term.size() != out.size()) throw ShapeMismatch("guided_predict: term size mismatch");
    if (first && w == 1.0) {
      out = term; // single-term blends stay bit-identical to the model output
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * term[i];
    }
    first = false;
  };

  if (wj > 0.0) accumulate(joint(x_t, t), wj);
  if (wp > 0.0) {
    if (!pose_model) throw ConfigError("guided_predict: pose_scale > 0 needs a pose model");
    // Frames ride in the batch dimension; the flat layout already matches.
    accumulate((*pose_model)(x_t, t), wp);
  }
  if (wm > 0.0) {
    if (!motion_model) throw ConfigError("guided_predict: motion_scale > 0 needs a motion model");
    const std::vector<double> folded = fold_subjects_to_batch(x_t, dims);
    accumulate(unfold_subjects_from_batch((*motion_model)(folded, t), dims), wm);
  }
  return out;
}

std::vector<double> ddpm_sample(const DenoiseFn& predict_x0, const SampleDims& dims,
                                const NoiseSchedule& sched, Rng& rng,
                                const SamplerConfig& scfg,
                                const std::function<void(std::vector<double>&)>* x0_hook) {
  std::vector<double> x(dims.numel(), 0.0);
  for (int b = 0; b < dims.B; ++b)
    for (int f = 0; f < dims.F; ++f)
      for (int n = 0; n < dims.N; ++n) {
        if (!dims.valid_at(b, f, n)) continue;
        double* p = x.data() + ((static_cast<std::size_t>(b) * dims.F + f) * dims.N + n) * kPoseDim;
        for (int c = 0; c < kPoseDim; ++c) p[c] = rand_normal(rng);
      }

  for (int t = sched.T; t >= 1; --t) {
    std::vector<double> x0 = predict_x0(x, t);
    if (x0_hook) (*x0_hook)(x0);
    dims.zero_padded(x0);
    if (t == 1) return x0;

    const double abar = sched.abar(t);
    const double abar_prev = sched.abar_prev(t);
    const double beta = sched.beta(t);
    const double c0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
    const double ct = std::sqrt(sched.a(t)) * (1.0 - abar_prev) / (1.0 - abar);
    const double var = scfg.posterior_variance ? (1.0 - abar_prev) / (1.0 - abar) * beta : beta;
    const double sigma = std::sqrt(std::max(var, 0.0));

    for (int b = 0; b < dims.B; ++b)
      for (int f = 0; f < dims.F; ++f)
        for (int n = 0; n < dims.N; ++n) {
          if (!dims.valid_at(b, f, n)) continue;
          const std::size_t base = ((static_cast<std::size_t>(b) * dims.F + f) * dims.N + n) * kPoseDim;
          for (int c = 0; c < kPoseDim; ++c) {
            const std::size_t i = base + c;
            x[i] = c0 * x0[i] + ct * x[i] + sigma * rand_normal(rng);
          }
        }
  }
  return x; // unreachable for T >= 1
}

SampleDims dims_of(const PaddedBatch& pb) {
  SampleDims d;
  d.B = pb.B;
  d.F = pb.F;
  d.N = pb.N;
  d.frame_mask = pb.frame_mask;
  d.subject_mask = pb.subject_mask;
  return d;
}

namespace {

struct NoisedBatch {
  std::vector<double> x_t;
  std::vector<int> t;
};

NoisedBatch make_noised(const TrainingBatch& batch, const NoiseSchedule& sched, Rng& rng) {
  const SampleDims dims = dims_of(batch.pb);
  NoisedBatch nb;
  nb.t.resize(batch.pb.B);
  for (int b = 0; b < batch.pb.B; ++b) nb.t[b] = 1 + static_cast<int>(rand_index(rng, sched.T));

  nb.x_t.assign(dims.numel(), 0.0);
  const std::size_t per_sample = static_cast<std::size_t>(batch.pb.F) * batch.pb.N * kPoseDim;
  for (int b = 0; b < batch.pb.B; ++b) {
    const double sa = std::sqrt(sched.abar(nb.t[b]));
    const double sn = std::sqrt(1.0 - sched.abar(nb.t[b]));
    for (int f = 0; f < batch.pb.F; ++f)
      for (int n = 0; n < batch.pb.N; ++n) {
        if (!dims.valid_at(b, f, n)) continue;
        const std::size_t base =
            b * per_sample + (static_cast<std::size_t>(f) * batch.pb.N + n) * kPoseDim;
        for (int c = 0; c < kPoseDim; ++c)
          nb.x_t[base + c] = sa * batch.pb.data[base + c] + sn * rand_normal(rng);
      }
  }
  return nb;
}

std::vector<TextEmbedding> dropped_texts(const TrainingBatch& batch, Rng& rng, double p) {
  std::vector<TextEmbedding> out;
  out.reserve(batch.texts.size());
  for (const TextEmbedding& e : batch.texts) out.push_back(drop_condition(e, p, rng));
  return out;
}

template <typename Model>
nn::Tensor loss_common(const Model& model, const TrainingBatch& batch,
                       const NoiseSchedule& sched, Rng& rng,
                       std::vector<TextEmbedding> texts) {
  const SampleDims dims = dims_of(batch.pb);
  NoisedBatch nb = make_noised(batch, sched, rng);

  DenoiseInput in;
  in.x = &nb.x_t;
  in.B = batch.pb.B;
  in.F = batch.pb.F;
  in.N = batch.pb.N;
  in.frame_mask = &batch.pb.frame_mask;
  in.subject_mask = &batch.pb.subject_mask;
  in.t = nb.t;
  in.texts = std::move(texts);
  in.centers = batch.centers;
  in.train = true;

  nn::Tensor pred = model.forward(in, rng);
  return nn::mse_masked(pred, batch.pb.data, dims.weights());
}

} // namespace

nn::Tensor training_loss(const Stage1Model& model, const TrainingBatch& batch,
                         const NoiseSchedule& sched, Rng& rng, double text_dropout_p) {
  return loss_common(model, batch, sched, rng, dropped_texts(batch, rng, text_dropout_p));
}

nn::Tensor training_loss(const Stage2Model& model, const TrainingBatch& batch,
                         const NoiseSchedule& sched, Rng& rng, double text_dropout_p) {
  return loss_common(model, batch, sched, rng, dropped_texts(batch, rng, text_dropout_p));
}

nn::Tensor training_loss(const MotionOnlyModel& model, const TrainingBatch& batch,
                         const NoiseSchedule& sched, Rng& rng) {
  return loss_common(model, batch, sched, rng, {});
}

namespace {

template <typename Model>
std::vector<double> run_eval_forward(const Model& model, const std::vector<double>& x_t, int t,
                                     const SampleDims& dims,
                                     const std::vector<TextEmbedding>* texts,
                                     const std::vector<std::optional<CenterPoseCond>>* centers) {
  nn::NoGradGuard guard;
  DenoiseInput in;
  in.x = &x_t;
  in.B = dims.B;
  in.F = dims.F;
  in.N = dims.N;
  in.frame_mask = &dims.frame_mask;
  in.subject_mask = &dims.subject_mask;
  in.t.assign(dims.B, t);
  if (texts) in.texts = *texts;
  if (centers) in.centers = *centers;
  in.train = false;
  Rng dummy(0); // dropout is off in eval mode; the rng is never consumed
  return model.forward(in, dummy).data();
}

} // namespace

DenoiseFn make_stage1_denoiser(const Stage1Model& model, const SampleDims& dims,
                               const TextEmbedding& text, double cfg_scale) {
  auto texts_cond = std::make_shared<std::vector<TextEmbedding>>(dims.B, text);
  auto texts_null = std::make_shared<std::vector<TextEmbedding>>(
      dims.B, TextEmbedding::null(model.config().d_text));
  auto dims_copy = std::make_shared<SampleDims>(dims);
  const Stage1Model* m = &model;

  DenoiseFn cond = [m, dims_copy, texts_cond](const std::vector<double>& x, int t) {
    return run_eval_forward(*m, x, t, *dims_copy, texts_cond.get(), nullptr);
  };
  DenoiseFn uncond = [m, dims_copy, texts_null](const std::vector<double>& x, int t) {
    return run_eval_forward(*m, x, t, *dims_copy, texts_null.get(), nullptr);
  };
  return [cond, uncond, cfg_scale](const std::vector<double>& x, int t) {
    return cfg_predict(cond, uncond, x, t, cfg_scale);
  };
}

DenoiseFn make_stage2_denoiser(const Stage2Model& model, const SampleDims& dims,
                               const TextEmbedding& text,
                               const std::optional<CenterPoseCond>& center, double cfg_scale) {
  auto texts_cond = std::make_shared<std::vector<TextEmbedding>>(dims.B, text);
  auto texts_null = std::make_shared<std::vector<TextEmbedding>>(
      dims.B, TextEmbedding::null(model.config().d_text));
  auto centers = std::make_shared<std::vector<std::optional<CenterPoseCond>>>(dims.B, center);
  auto dims_copy = std::make_shared<SampleDims>(dims);
  const Stage2Model* m = &model;

  DenoiseFn cond = [m, dims_copy, texts_cond, centers](const std::vector<double>& x, int t) {
    return run_eval_forward(*m, x, t, *dims_copy, texts_cond.get(), centers.get());
  };
  DenoiseFn uncond = [m, dims_copy, texts_null, centers](const std::vector<double>& x, int t) {
    return run_eval_forward(*m, x, t, *dims_copy, texts_null.get(), centers.get());
  };
  return [cond, uncond, cfg_scale](const std::vector<double>& x, int t) {
    return cfg_predict(cond, uncond, x, t, cfg_scale);
  };
}

DenoiseFn make_motion_denoiser(const MotionOnlyModel& model, const SampleDims& dims,
                               const std::optional<CenterPoseCond>& center) {
  auto centers = std::make_shared<std::vector<std::optional<CenterPoseCond>>>(dims.B, center);
  auto dims_copy = std::make_shared<SampleDims>(dims);
  const MotionOnlyModel* m = &model;
  return [m, dims_copy, centers](const std::vector<double>& x, int t) {
    return run_eval_forward(*m, x, t, *dims_copy, nullptr, centers.get());
  };
}

GroupMotion sample_pose_frame(const Stage1Model& stage1, const std::string& prompt,
                              const NoiseSchedule& sched, const TwoStageConfig& cfg, Rng& rng) {
  cfg.guidance.validate();
  const int N = subject_count(prompt, cfg.llm);
  const TextEmbedding text = embed_text(prompt, stage1.config().d_text);
  const SampleDims dims = SampleDims::full(1, 1, N);
  const DenoiseFn fn = make_stage1_denoiser(stage1, dims, text, cfg.guidance.cfg_scale);
  const std::vector<double> x0 = ddpm_sample(fn, dims, sched, rng, cfg.sampler);

  GroupMotion pose = GroupMotion::zeros(1, N, cfg.fps);
  std::copy(x0.begin(), x0.end(), pose.data.begin());
  return pose;
}

GroupMotion two_stage_sample(const Stage1Model& stage1, const Stage2Model& stage2,
                             const MotionOnlyModel* motion_model,
                             const std::string& prompt, int F,
                             const NoiseSchedule& sched, const TwoStageConfig& cfg, Rng& rng) {
  cfg.guidance.validate();
  if (F < 1 || F > stage2.config().max_F)
    throw ConfigError("two_stage_sample: F out of range");

  const GroupMotion pose_frame = sample_pose_frame(stage1, prompt, sched, cfg, rng);
  const int N = pose_frame.N;
  const TextEmbedding text = embed_text(prompt, stage1.config().d_text);

  CenterPoseCond center;
  center.N = N;
  center.pose = pose_frame.data;
  center.subject_mask.assign(N, 1);

  const SampleDims dims = SampleDims::full(1, F, N);
  const DenoiseFn joint =
      make_stage2_denoiser(stage2, dims, text, center, cfg.guidance.cfg_scale);

  // Pose guidance: the stage-1 model over each frame, frames in the batch.
  DenoiseFn pose_fn;
  if (cfg.guidance.pose_scale > 0.0) {
    const SampleDims pose_dims = SampleDims::full(F, 1, N);
    pose_fn = make_stage1_denoiser(stage1, pose_dims, text, cfg.guidance.cfg_scale);
  }
  // Motion guidance: the unconditional single-person model per subject.
  DenoiseFn motion_fn;
  if (cfg.guidance.motion_scale > 0.0) {
    if (!motion_model)
      throw ConfigError("two_stage_sample: motion_scale > 0 needs a motion model");
    const SampleDims motion_dims = SampleDims::full(N, F, 1);
    motion_fn = make_motion_denoiser(*motion_model, motion_dims, std::nullopt);
  }

  DenoiseFn predict = [&](const std::vector<double>& x, int t) {
    return guided_predict(joint, pose_fn ? &pose_fn : nullptr,
                          motion_fn ? &motion_fn : nullptr, x, t, dims, cfg.guidance);
  };

  std::function<void(std::vector<double>&)> hook;
  if (cfg.fix_center) {
    const int fc = F / 2;
    hook = [&, fc](std::vector<double>& x0) {
      std::copy(center.pose.begin(), center.pose.end(),
                x0.begin() + static_cast<std::size_t>(fc) * N * kPoseDim);
    };
  }

  const std::vector<double> x0 =
      ddpm_sample(predict, dims, sched, rng, cfg.sampler, cfg.fix_center ? &hook : nullptr);

  GroupMotion motion = GroupMotion::zeros(F, N, cfg.fps);
  motion.data = x0;
  return canonicalize_group(motion);
}

} // namespace gmotion
