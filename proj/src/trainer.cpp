#include "gmotion/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace gmotion {

MixSpec MixSpec::default_mix() {
  MixSpec m;
  m.ratios = {{SourceTag::LP, 0.50},
              {SourceTag::WVM, 0.10},
              {SourceTag::HML, 0.15},
              {SourceTag::HML_C, 0.10},
              {SourceTag::IH, 0.15}};
  return m;
}

MixSpec MixSpec::single(SourceTag tag) {
  MixSpec m;
  m.ratios = {{tag, 1.0}};
  return m;
}

void MixSpec::validate() const {
  double sum = 0.0;
  for (const auto& [tag, r] : ratios) {
    if (r < 0.0) throw ConfigError("MixSpec: negative ratio");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("MixSpec: ratios must sum to 1");
}

MixedSampler::MixedSampler(const DatasetMap& data, const MixSpec& mix) {
  mix.validate();
  double cum = 0.0;
  for (const auto& [tag, ratio] : mix.ratios) {
    if (ratio == 0.0) continue;
    const auto it = data.find(tag);
    if (it == data.end() || it->second.empty())
      throw EmptySource(std::string("MixedSampler: no samples for tag ") + source_tag_name(tag));
    cum += ratio;
    sources_.push_back({&it->second, cum});
  }
  if (sources_.empty()) throw EmptySource("MixedSampler: empty mix");
  sources_.back().cumulative = 1.0; // absorb rounding
}

const MotionSample& MixedSampler::next(Rng& rng) const {
  const double u = rand_uniform(rng);
  for (const Source& s : sources_) {
    if (u < s.cumulative) {
      const std::size_t idx = rand_index(rng, s.samples->size());
      return (*s.samples)[idx];
    }
  }
  return sources_.back().samples->back();
}

namespace {

GroupMotion extract_frame(const GroupMotion& m, int frame) {
  GroupMotion out = GroupMotion::zeros(1, m.N, m.fps);
  out.subject_mask = m.subject_mask;
  for (int n = 0; n < m.N; ++n) {
    if (!m.subject_valid(n)) continue;
    std::copy(m.pose_ptr(frame, n), m.pose_ptr(frame, n) + kPoseDim, out.pose_ptr(0, n));
  }
  return out;
}

GroupMotion truncate_frames(const GroupMotion& m, int start, int count) {
  GroupMotion out = GroupMotion::zeros(count, m.N, m.fps);
  out.subject_mask = m.subject_mask;
  for (int f = 0; f < count; ++f) {
    out.frame_mask[f] = m.frame_mask[start + f];
    for (int n = 0; n < m.N; ++n) {
      if (!m.subject_valid(n) || !out.frame_mask[f]) continue;
      std::copy(m.pose_ptr(start + f, n), m.pose_ptr(start + f, n) + kPoseDim, out.pose_ptr(f, n));
    }
  }
  return out;
}

int pick_valid_frame(const GroupMotion& m, Rng& rng) {
  std::vector<int> valid;
  for (int f = 0; f < m.F; ++f)
    if (m.frame_valid(f)) valid.push_back(f);
  if (valid.empty()) throw Error("sample has no valid frames");
  return valid[rand_index(rng, valid.size())];
}

} // namespace

TrainingBatch prepare_stage1_batch(const std::vector<const MotionSample*>& samples,
                                   Rng& rng, const BatchOptions& opts) {
  std::vector<GroupMotion> frames;
  TrainingBatch batch;
  frames.reserve(samples.size());
  int max_n = 1;
  for (const MotionSample* s : samples) {
    GroupMotion g = s->motion.F == 1 ? s->motion : extract_frame(s->motion, pick_valid_frame(s->motion, rng));
    g = canonicalize_group(g);
    if (opts.augment_rotate) g = rotate_group(g, rand_uniform(rng, 0.0, 2.0 * kPi));
    max_n = std::max(max_n, g.N);
    frames.push_back(std::move(g));
    batch.texts.push_back(embed_text(s->text, opts.d_text));
  }
  const int pad_n = opts.pad_to_batch_max ? max_n : opts.max_N;
  batch.pb = pad_and_mask(frames, 1, pad_n);
  batch.centers.assign(samples.size(), std::nullopt);
  return batch;
}

TrainingBatch prepare_stage2_batch(const std::vector<const MotionSample*>& samples,
                                   Rng& rng, const BatchOptions& opts) {
  std::vector<GroupMotion> motions;
  TrainingBatch batch;
  motions.reserve(samples.size());
  int max_n = 1, max_f = 1;
  for (const MotionSample* s : samples) {
    GroupMotion g = s->motion;
    if (g.F > opts.max_F) {
      const int start = static_cast<int>(rand_index(rng, g.F - opts.max_F + 1));
      g = truncate_frames(g, start, opts.max_F);
    }
    g = canonicalize_group(g);
    if (opts.augment_rotate) g = rotate_group(g, rand_uniform(rng, 0.0, 2.0 * kPi));
    max_n = std::max(max_n, g.N);
    max_f = std::max(max_f, g.F);
    batch.texts.push_back(embed_text(s->text, opts.d_text));

    if (g.valid_frames() > 1) {
      CenterPoseCond center;
      center.N = g.N;
      center.subject_mask = g.subject_mask;
      center.pose.resize(static_cast<std::size_t>(g.N) * kPoseDim, 0.0);
      const int fc = g.center_frame();
      for (int n = 0; n < g.N; ++n) {
        if (!g.subject_valid(n)) continue;
        std::copy(g.pose_ptr(fc, n), g.pose_ptr(fc, n) + kPoseDim,
                  center.pose.begin() + static_cast<std::size_t>(n) * kPoseDim);
      }
      batch.centers.push_back(std::move(center));
    } else {
      batch.centers.push_back(std::nullopt); // single-frame: null pose condition
    }
    motions.push_back(std::move(g));
  }
  const int pad_n = opts.pad_to_batch_max ? max_n : opts.max_N;
  const int pad_f = opts.pad_to_batch_max ? max_f : opts.max_F;
  batch.pb = pad_and_mask(motions, pad_f, pad_n);
  return batch;
}

NoiseSchedule TrainConfig::make_schedule() const {
  return schedule_kind == NoiseSchedule::Kind::cosine ? NoiseSchedule::make_cosine(schedule_T)
                                                      : NoiseSchedule::make_linear(schedule_T);
}

namespace {

std::vector<const MotionSample*> draw_batch(const MixedSampler& sampler, int n, Rng& rng) {
  std::vector<const MotionSample*> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(&sampler.next(rng));
  return out;
}

void log_step(std::ostream* log, std::vector<double>* history, int step, double loss, int every) {
  if (history) history->push_back(loss);
  if (log && (step % every == 0)) (*log) << "step=" << step << " loss=" << loss << '\n';
}

} // namespace

Stage1Model train_stage1(const TrainConfig& cfg, const DatasetMap& data, const MixSpec& mix,
                         std::vector<double>* history, std::ostream* log) {
  Rng rng(cfg.seed);
  Stage1Model model(cfg.model, rng);
  const NoiseSchedule sched = cfg.make_schedule();
  MixedSampler sampler(data, mix);
  nn::Adam opt(model.trainable_params(), cfg.lr);
  BatchOptions opts;
  opts.d_text = cfg.model.d_text;
  opts.max_N = cfg.model.max_N;
  opts.augment_rotate = cfg.augment_rotate;

  for (int step = 0; step < cfg.steps; ++step) {
    const TrainingBatch batch = prepare_stage1_batch(draw_batch(sampler, cfg.batch_size, rng), rng, opts);
    nn::Tensor loss = training_loss(model, batch, sched, rng, cfg.text_dropout);
    opt.zero_grad();
    nn::backward(loss);
    opt.step();
    log_step(log, history, step, loss.scalar(), std::max(1, cfg.log_every));
  }
  return model;
}

Stage2Model train_stage2(const TrainConfig& cfg, const Stage1Model& stage1,
                         const DatasetMap& data, const MixSpec& mix,
                         std::vector<double>* history, std::ostream* log) {
  Rng rng(cfg.seed);
  Stage2Model model = insert_motion_layers(stage1, rng);
  const NoiseSchedule sched = cfg.make_schedule();
  MixedSampler sampler(data, mix);
  nn::Adam opt(model.trainable_params(), cfg.lr);
  BatchOptions opts;
  opts.d_text = model.config().d_text;
  opts.max_F = model.config().max_F;
  opts.max_N = model.config().max_N;
  opts.augment_rotate = cfg.augment_rotate;

  for (int step = 0; step < cfg.steps; ++step) {
    const TrainingBatch batch = prepare_stage2_batch(draw_batch(sampler, cfg.batch_size, rng), rng, opts);
    nn::Tensor loss = training_loss(model, batch, sched, rng, cfg.text_dropout);
    opt.zero_grad();
    nn::backward(loss);
    opt.step();
    log_step(log, history, step, loss.scalar(), std::max(1, cfg.log_every));
  }
  return model;
}

MotionOnlyModel train_motion_only(const TrainConfig& cfg, const DatasetMap& data,
                                  const MixSpec& mix,
                                  std::vector<double>* history, std::ostream* log) {
  Rng rng(cfg.seed);
  MotionOnlyModel model(cfg.model, rng);
  const NoiseSchedule sched = cfg.make_schedule();
  MixedSampler sampler(data, mix);
  nn::Adam opt(model.trainable_params(), cfg.lr);
  BatchOptions opts;
  opts.d_text = model.config().d_text;
  opts.max_F = model.config().max_F;
  opts.max_N = 1;
  opts.augment_rotate = cfg.augment_rotate;

  for (int step = 0; step < cfg.steps; ++step) {
    auto samples = draw_batch(sampler, cfg.batch_size, rng);
    for (const MotionSample* s : samples)
      if (s->motion.valid_subjects() != 1)
        throw ConfigError("train_motion_only: needs single-person samples");
    TrainingBatch batch = prepare_stage2_batch(samples, rng, opts);
    batch.texts.clear(); // unconditional on text
    nn::Tensor loss = training_loss(model, batch, sched, rng);
    opt.zero_grad();
    nn::backward(loss);
    opt.step();
    log_step(log, history, step, loss.scalar(), std::max(1, cfg.log_every));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Toy corpora

namespace {

enum class PoseKind { ArmsUp, ArmLeftUp, ArmRightUp, TPose, Crouch, Bow };
enum class MotionKind { WalkForward, WalkCircle, SpinInPlace, WaveHand, StandStill };

constexpr PoseKind kPoseKinds[] = {PoseKind::ArmsUp, PoseKind::ArmLeftUp, PoseKind::ArmRightUp,
                                   PoseKind::TPose, PoseKind::Crouch, PoseKind::Bow};
constexpr MotionKind kMotionKinds[] = {MotionKind::WalkForward, MotionKind::WalkCircle,
                                       MotionKind::SpinInPlace, MotionKind::WaveHand,
                                       MotionKind::StandStill};
constexpr const char* kFacings[] = {"north", "east", "south", "west"};
constexpr const char* kCountWords[] = {"one", "two", "three", "four", "five", "six"};

Eigen::Vector3d aa(double x, double y, double z) { return Eigen::Vector3d(x, y, z); }

PoseVector base_pose(const Skeleton& skel, Rng& rng) {
  PoseVector p;
  for (int i = 0; i < kBetaDim; ++i) p.beta[i] = 0.3 * rand_normal(rng);
  // Ground the rest pose.
  const JointPositions joints = forward_kinematics(p, skel);
  double min_y = joints[0].y();
  for (const auto& j : joints) min_y = std::min(min_y, j.y());
  p.trans.y() = -min_y;
  return p;
}

void apply_pose_kind(PoseVector& p, PoseKind kind, Rng& rng) {
  const double j = 0.05 * rand_normal(rng);
  switch (kind) {
    case PoseKind::ArmsUp:
      p.theta[16] = axis_angle_to_rot6d(aa(0, 0, kPi / 2 + j));
      p.theta[17] = axis_angle_to_rot6d(aa(0, 0, -kPi / 2 + j));
      break;
    case PoseKind::ArmLeftUp:
      p.theta[16] = axis_angle_to_rot6d(aa(0, 0, kPi / 2 + j));
      break;
    case PoseKind::ArmRightUp:
      p.theta[17] = axis_angle_to_rot6d(aa(0, 0, -kPi / 2 + j));
      break;
    case PoseKind::TPose:
      break; // rest pose
    case PoseKind::Crouch:
      p.theta[1] = axis_angle_to_rot6d(aa(-1.0 + j, 0, 0));
      p.theta[2] = axis_angle_to_rot6d(aa(-1.0 + j, 0, 0));
      p.theta[4] = axis_angle_to_rot6d(aa(1.3 + j, 0, 0));
      p.theta[5] = axis_angle_to_rot6d(aa(1.3 + j, 0, 0));
      break;
    case PoseKind::Bow:
      p.theta[3] = axis_angle_to_rot6d(aa(0.9 + j, 0, 0));
      break;
  }
}

const char* pose_phrase(PoseKind kind, bool plural) {
  switch (kind) {
    case PoseKind::ArmsUp: return plural ? "stand with both arms raised" : "stands with both arms raised";
    case PoseKind::ArmLeftUp: return plural ? "stand with the left arm raised" : "stands with the left arm raised";
    case PoseKind::ArmRightUp: return plural ? "stand with the right arm raised" : "stands with the right arm raised";
    case PoseKind::TPose: return plural ? "hold a T pose" : "holds a T pose";
    case PoseKind::Crouch: return plural ? "crouch low" : "crouches low";
    case PoseKind::Bow: return plural ? "bow forward" : "bows forward";
  }
  return "";
}

const char* motion_phrase(MotionKind kind, bool plural) {
  switch (kind) {
    case MotionKind::WalkForward: return plural ? "walk forward" : "walks forward";
    case MotionKind::WalkCircle: return plural ? "walk in a circle" : "walks in a circle";
    case MotionKind::SpinInPlace: return plural ? "spin in place" : "spins in place";
    case MotionKind::WaveHand: return plural ? "wave one hand" : "waves one hand";
    case MotionKind::StandStill: return plural ? "stand still" : "stands still";
  }
  return "";
}

std::string subject_phrase(int count) {
  return count == 1 ? std::string("one person") : std::string(kCountWords[count - 1]) + " people";
}

GroupMotion make_group_pose(PoseKind kind, int count, double facing_yaw,
                            const Skeleton& skel, Rng& rng) {
  GroupMotion g = GroupMotion::zeros(1, count);
  for (int n = 0; n < count; ++n) {
    PoseVector p = base_pose(skel, rng);
    apply_pose_kind(p, kind, rng);
    const Eigen::Matrix3d yaw =
        Eigen::AngleAxisd(facing_yaw, Eigen::Vector3d::UnitY()).toRotationMatrix();
    p.theta[0] = matrix_to_rot6d(yaw * rot6d_to_matrix(p.theta[0]));
    p.trans.x() = (n - (count - 1) * 0.5) * 1.6 + 0.05 * rand_normal(rng);
    p.trans.z() = 0.05 * rand_normal(rng);
    g.set_pose(0, n, p);
  }
  return g;
}

GroupMotion make_single_motion(MotionKind kind, int F, int fps, const Skeleton& skel, Rng& rng) {
  GroupMotion g = GroupMotion::zeros(F, 1, fps);
  PoseVector base = base_pose(skel, rng);
  const double y0 = base.trans.y();
  const double cadence = rand_uniform(rng, 1.3, 1.9);       // steps per second
  const double speed = rand_uniform(rng, 0.8, 1.4);         // m/s
  const double radius = rand_uniform(rng, 0.8, 1.5);        // circle walks
  const double spin_rate = rand_uniform(rng, 1.5, 3.0);     // rad/s
  const double wave_rate = rand_uniform(rng, 3.0, 5.0);     // rad/s
  const double phase = rand_uniform(rng, 0.0, 2.0 * kPi);

  for (int f = 0; f < F; ++f) {
    const double t = static_cast<double>(f) / fps;
    PoseVector p = base;
    const double swing = 0.5 * std::sin(2.0 * kPi * cadence * t + phase);
    auto set_leg_swing = [&] {
      p.theta[1] = axis_angle_to_rot6d(aa(swing, 0, 0));
      p.theta[2] = axis_angle_to_rot6d(aa(-swing, 0, 0));
      p.theta[16] = axis_angle_to_rot6d(aa(-0.4 * swing, 0, 0));
      p.theta[17] = axis_angle_to_rot6d(aa(0.4 * swing, 0, 0));
    };
    switch (kind) {
      case MotionKind::WalkForward: {
        set_leg_swing();
        p.trans = Eigen::Vector3d(0.0, y0, speed * t);
        break;
      }
      case MotionKind::WalkCircle: {
        set_leg_swing();
        const double ang = (speed / radius) * t;
        p.trans = Eigen::Vector3d(radius * std::sin(ang), y0, radius * std::cos(ang));
        const Eigen::Matrix3d yaw =
            Eigen::AngleAxisd(ang + kPi / 2, Eigen::Vector3d::UnitY()).toRotationMatrix();
        p.theta[0] = matrix_to_rot6d(yaw);
        break;
      }
      case MotionKind::SpinInPlace: {
        const Eigen::Matrix3d yaw =
            Eigen::AngleAxisd(spin_rate * t, Eigen::Vector3d::UnitY()).toRotationMatrix();
        p.theta[0] = matrix_to_rot6d(yaw);
        p.trans = Eigen::Vector3d(0.0, y0, 0.0);
        break;
      }
      case MotionKind::WaveHand: {
        p.theta[17] = axis_angle_to_rot6d(aa(0, 0, -kPi / 2));
        p.theta[19] = axis_angle_to_rot6d(aa(0.4 * std::sin(wave_rate * t + phase), 0,
                                             -0.5 + 0.3 * std::sin(wave_rate * t + phase)));
        p.trans = Eigen::Vector3d(0.0, y0, 0.0);
        break;
      }
      case MotionKind::StandStill: {
        p.theta[3] = axis_angle_to_rot6d(aa(0.02 * std::sin(2.0 * t + phase), 0, 0));
        p.trans = Eigen::Vector3d(0.0, y0, 0.0);
        break;
      }
    }
    g.set_pose(f, 0, p);
  }
  return g;
}

MotionSample composed_sample(MotionKind kind, int n, SourceTag tag, const std::string& text,
                             int F, int fps, const Skeleton& skel, const CapsuleBody& body,
                             const CurationConfig& ccfg, Rng& rng) {
  // Retry composition until a collision-free placement comes out; fresh
  // singles every time so the retry budget is not the only escape hatch.
  for (int attempt = 0; attempt < 50; ++attempt) {
    std::vector<GroupMotion> singles;
    for (int i = 0; i < n; ++i) singles.push_back(make_single_motion(kind, F, fps, skel, rng));
    auto group = compose_synthetic_group(singles, n, rng, skel, body, ccfg);
    if (group) {
      MotionSample s;
      s.motion = std::move(*group);
      s.text = text;
      s.source_tag = tag;
      return s;
    }
  }
  throw Error("composed_sample: could not find a collision-free composition");
}

} // namespace

DatasetMap make_toy_corpus(const ToyCorpusSpec& spec, Rng& rng) {
  const Skeleton skel = Skeleton::default_human();
  const CapsuleBody body = CapsuleBody::default_body();
  CurationConfig ccfg;
  DatasetMap data;

  // LP: single-frame group poses, text enumerates kind x count x facing.
  {
    std::vector<MotionSample>& lp = data[SourceTag::LP];
    int i = 0;
    while (static_cast<int>(lp.size()) < spec.n_lp) {
      const PoseKind kind = kPoseKinds[i % 6];
      const int count = 1 + (i / 6) % 3;
      const int facing = (i / 18) % 4;
      ++i;
      MotionSample s;
      s.motion = make_group_pose(kind, count, facing * kPi / 2, skel, rng);
      s.text = subject_phrase(count) + " " + pose_phrase(kind, count > 1) + " facing " + kFacings[facing];
      s.source_tag = SourceTag::LP;
      lp.push_back(std::move(s));
    }
  }

  // HML: single-person motions with text.
  {
    std::vector<MotionSample>& hml = data[SourceTag::HML];
    for (int i = 0; i < spec.n_hml; ++i) {
      const MotionKind kind = kMotionKinds[i % 5];
      MotionSample s;
      s.motion = make_single_motion(kind, spec.frames, spec.fps, skel, rng);
      s.text = std::string("one person ") + motion_phrase(kind, false);
      s.source_tag = SourceTag::HML;
      hml.push_back(std::move(s));
    }
  }

  // WVM: 2-3 subjects, same motion, captioned.
  {
    std::vector<MotionSample>& wvm = data[SourceTag::WVM];
    for (int i = 0; i < spec.n_wvm; ++i) {
      const MotionKind kind = kMotionKinds[i % 5];
      const int n = 2 + i % 2;
      const std::string text = subject_phrase(n) + " " + motion_phrase(kind, true);
      wvm.push_back(composed_sample(kind, n, SourceTag::WVM, text, spec.frames, spec.fps,
                                    skel, body, ccfg, rng));
    }
  }

  // HML-C: compositions paired with empty text.
  {
    std::vector<MotionSample>& hmlc = data[SourceTag::HML_C];
    for (int i = 0; i < spec.n_hmlc; ++i) {
      const MotionKind kind = kMotionKinds[(i * 2 + 1) % 5];
      const int n = 2 + i % 3;
      hmlc.push_back(composed_sample(kind, n, SourceTag::HML_C, "", spec.frames, spec.fps,
                                     skel, body, ccfg, rng));
    }
  }

  // IH: two-person motions with text.
  {
    std::vector<MotionSample>& ih = data[SourceTag::IH];
    for (int i = 0; i < spec.n_ih; ++i) {
      const MotionKind kind = kMotionKinds[i % 5];
      const std::string text = std::string("two people ") + motion_phrase(kind, true);
      ih.push_back(composed_sample(kind, 2, SourceTag::IH, text, spec.frames, spec.fps,
                                   skel, body, ccfg, rng));
    }
  }

  return data;
}

std::vector<std::string> corpus_prompts(const DatasetMap& data) {
  std::vector<std::string> prompts;
  for (const auto& [tag, samples] : data)
    for (const MotionSample& s : samples) {
      if (s.text.empty()) continue;
      if (std::find(prompts.begin(), prompts.end(), s.text) == prompts.end())
        prompts.push_back(s.text);
    }
  return prompts;
}

} // namespace gmotion
