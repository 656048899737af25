#ifndef GMOTION_TRAINER_HPP
#define GMOTION_TRAINER_HPP

#include <map>
#include <ostream>
#include <vector>

#include "gmotion/curation.hpp"
#include "gmotion/diffusion.hpp"
#include "gmotion/netcore.hpp"
#include "gmotion/repr.hpp"

namespace gmotion {

using DatasetMap = std::map<SourceTag, std::vector<MotionSample>>;

struct MixSpec {
  std::map<SourceTag, double> ratios;
  static MixSpec default_mix(); // LP 50, WVM 10, HML 15, HML-C 10, IH 15
  static MixSpec single(SourceTag tag);
  void validate() const; // ratios must sum to 1 within 1e-9
};

// Draws a source by ratio, then a uniform sample from it.
class MixedSampler {
public:
  MixedSampler(const DatasetMap& data, const MixSpec& mix); // throws EmptySource
  const MotionSample& next(Rng& rng) const;

private:
  struct Source {
    const std::vector<MotionSample>* samples;
    double cumulative;
  };
  std::vector<Source> sources_;
};

struct BatchOptions {
  int d_text = kDefaultTextDim;
  int max_F = kMaxFrames;
  int max_N = kMaxSubjects;
  bool augment_rotate = true;
  bool pad_to_batch_max = true; // pad to the batch's own maxima, not 61x10
};

/// One uniformly random valid frame per sample, canonicalized, randomly
/// rotated, padded to a single-frame batch.
TrainingBatch prepare_stage1_batch(const std::vector<const MotionSample*>& samples,
                                   Rng& rng, const BatchOptions& opts);

/// Random truncation to max_F frames, canonicalization and rotation, then
/// padding; multi-frame samples carry their middle frame as the pose
/// condition, single-frame samples get a null condition.
TrainingBatch prepare_stage2_batch(const std::vector<const MotionSample*>& samples,
                                   Rng& rng, const BatchOptions& opts);

struct TrainConfig {
  int stage = 1;
  ModelConfig model;
  int steps = 1000;
  int batch_size = 8;
  double lr = 1e-4;
  double text_dropout = 0.1;
  bool augment_rotate = true;
  int schedule_T = 100;
  NoiseSchedule::Kind schedule_kind = NoiseSchedule::Kind::cosine;
  std::uint64_t seed = 0;
  int log_every = 50;

  NoiseSchedule make_schedule() const;
};

/// Adam over the x0-prediction loss; loss per step lands in *history and
/// line-delimited records in *log when given.
Stage1Model train_stage1(const TrainConfig& cfg, const DatasetMap& data, const MixSpec& mix,
                         std::vector<double>* history = nullptr, std::ostream* log = nullptr);

/// Stage 2 starts from the stage-1 weights via insert_motion_layers; the
/// optimizer only sees the new (trainable) parameters.
Stage2Model train_stage2(const TrainConfig& cfg, const Stage1Model& stage1,
                         const DatasetMap& data, const MixSpec& mix,
                         std::vector<double>* history = nullptr, std::ostream* log = nullptr);

/// Single-person motion model on the single-subject samples of `data`.
MotionOnlyModel train_motion_only(const TrainConfig& cfg, const DatasetMap& data,
                                  const MixSpec& mix,
                                  std::vector<double>* history = nullptr,
                                  std::ostream* log = nullptr);

// Procedural desk-scale corpora with programmatically known texts.
struct ToyCorpusSpec {
  int n_lp = 144;  // group poses, texts enumerate pose/count/facing
  int n_wvm = 24;  // multi-person motions with text
  int n_hml = 40;  // single-person motions with text
  int n_hmlc = 12; // compositions with empty text
  int n_ih = 12;   // two-person motions with text
  int frames = 25;
  int fps = 20;
};

DatasetMap make_toy_corpus(const ToyCorpusSpec& spec, Rng& rng);

/// Distinct prompts present in a dataset map (insertion order, no dups).
std::vector<std::string> corpus_prompts(const DatasetMap& data);

} // namespace gmotion

#endif
