#ifndef GMOTION_IO_HPP
#define GMOTION_IO_HPP

#include <map>
#include <string>
#include <vector>

#include "gmotion/repr.hpp"
#include "gmotion/trainer.hpp"

namespace gmotion {

// Plain-text motion interchange format, versioned header followed by
// per-subject blocks. Rotations travel as axis-angle and become 6D on
// load (writing projects mildly non-orthonormal 6D through Gram-Schmidt).
//
//   gmotion-motion v1
//   fps: 20
//   frames: F
//   subjects: N
//   text: <one line, may be empty>
//   source: LP|WVM|HML|HML_C|IH|SYNTH
//   height_adjusted: 0|1
//   frame_mask: <F digits>
//   subject_mask: <N digits>
//   <unknown keys are preserved on rewrite>
//   subject <n>
//   betas: <11 numbers>
//   frame <f>
//   pose: <72 numbers, 24 joints x axis-angle>
//   trans: <3 numbers>
MotionSample read_motion_file(const std::string& path);
void write_motion_file(const MotionSample& sample, const std::string& path);

/// All *.gmo files under dir, grouped by source tag (sorted file order).
DatasetMap read_corpus_dir(const std::string& dir);
/// Writes one file per sample: <dir>/<tag>_<index>.gmo plus prompts.txt.
void write_corpus_dir(const DatasetMap& data, const std::string& dir);

/// key: value / key=value lines; '#' comments. Later keys win.
std::map<std::string, std::string> read_kv_config(const std::string& path);

struct RenderOptions {
  int width = 640;
  int height = 480;
  double margin = 0.3; // meters around the motion bounds
};

/// Orthographic skeleton drawings (front view, x right / y up), one PPM
/// per valid frame: frame_00000.ppm, ... Returns the frame count.
int render_motion(const MotionSample& sample, const std::string& out_dir,
                  const RenderOptions& opts = {});

} // namespace gmotion

#endif
