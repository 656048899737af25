#include "gmotion/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gmotion/kinematics.hpp"

namespace fs = std::filesystem;

namespace gmotion {

namespace {

constexpr const char* kMagicPrefix = "gmotion-motion v";

const std::vector<std::string>& known_header_keys() {
  static const std::vector<std::string> keys = {
      "fps", "frames", "subjects", "text", "source", "height_adjusted",
      "frame_mask", "subject_mask"};
  return keys;
}

struct LineReader {
  std::istream& in;
  std::string path;
  int lineno = 0;
  std::string line;

  bool next() {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path + ":" + std::to_string(lineno) + ": " + what);
  }
};

std::vector<double> parse_numbers(LineReader& r, const std::string& s, std::size_t expect) {
  std::istringstream ls(s);
  std::vector<double> out;
  double v;
  while (ls >> v) out.push_back(v);
  if (out.size() != expect)
    r.fail("expected " + std::to_string(expect) + " numbers, got " + std::to_string(out.size()));
  return out;
}

std::vector<std::uint8_t> parse_mask(LineReader& r, const std::string& s, std::size_t expect) {
  std::vector<std::uint8_t> out;
  for (char c : s) {
    if (c == ' ' || c == '\t') continue;
    if (c == '0')
      out.push_back(0);
    else if (c == '1')
      out.push_back(1);
    else
      r.fail("mask must contain only 0 and 1");
  }
  if (out.size() != expect)
    r.fail("mask length " + std::to_string(out.size()) + ", expected " + std::to_string(expect));
  return out;
}

} // namespace

MotionSample read_motion_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("read_motion_file: cannot open " + path);
  LineReader r{in, path, 0, {}};

  if (!r.next()) r.fail("empty file");
  if (r.line.rfind(kMagicPrefix, 0) != 0) r.fail("not a gmotion motion file");
  const int version = std::atoi(r.line.c_str() + std::strlen(kMagicPrefix));
  if (version != 1) throw VersionError(path + ": unsupported major version " + std::to_string(version));

  MotionSample sample;
  int F = -1, N = -1, fps = 20;
  std::vector<std::uint8_t> frame_mask, subject_mask;
  bool in_header = true;

  while (in_header) {
    if (!r.next()) r.fail("header ended before any subject block");
    if (r.line.rfind("subject ", 0) == 0) break;
    const auto colon = r.line.find(':');
    if (colon == std::string::npos) r.fail("expected 'key: value' in header");
    const std::string key = r.line.substr(0, colon);
    std::string value = r.line.substr(colon + 1);
    if (!value.empty() && value.front() == ' ') value.erase(0, 1);

    if (key == "fps") fps = std::atoi(value.c_str());
    else if (key == "frames") F = std::atoi(value.c_str());
    else if (key == "subjects") N = std::atoi(value.c_str());
    else if (key == "text") sample.text = value;
    else if (key == "source") sample.source_tag = source_tag_from_name(value);
    else if (key == "height_adjusted") sample.height_adjusted = value != "0";
    else if (key == "frame_mask") {
      if (F < 1) r.fail("frame_mask before frames");
      frame_mask = parse_mask(r, value, F);
    } else if (key == "subject_mask") {
      if (N < 1) r.fail("subject_mask before subjects");
      subject_mask = parse_mask(r, value, N);
    } else {
      sample.extra_headers[key] = value;
    }
  }
  if (F < 1 || N < 1) r.fail("header must set frames and subjects");
  if (fps < 1) r.fail("fps must be positive");

  GroupMotion motion = GroupMotion::zeros(F, N, fps);
  if (!frame_mask.empty()) motion.frame_mask = frame_mask;
  if (!subject_mask.empty()) motion.subject_mask = subject_mask;

  // r.line currently holds "subject 0".
  for (int n = 0; n < N; ++n) {
    if (r.line != "subject " + std::to_string(n)) r.fail("expected 'subject " + std::to_string(n) + "'");
    if (!r.next()) r.fail("missing betas");
    if (r.line.rfind("betas:", 0) != 0) r.fail("expected betas line");
    const auto betas = parse_numbers(r, r.line.substr(6), kBetaDim);

    for (int f = 0; f < F; ++f) {
      if (!r.next() || r.line != "frame " + std::to_string(f)) r.fail("expected 'frame " + std::to_string(f) + "'");
      if (!r.next() || r.line.rfind("pose:", 0) != 0) r.fail("expected pose line");
      const auto pose_aa = parse_numbers(r, r.line.substr(5), kNumJoints * 3);
      if (!r.next() || r.line.rfind("trans:", 0) != 0) r.fail("expected trans line");
      const auto trans = parse_numbers(r, r.line.substr(6), 3);

      PoseVector p;
      for (int i = 0; i < kBetaDim; ++i) p.beta[i] = betas[i];
      for (int j = 0; j < kNumJoints; ++j)
        p.theta[j] = axis_angle_to_rot6d(
            Eigen::Vector3d(pose_aa[3 * j], pose_aa[3 * j + 1], pose_aa[3 * j + 2]));
      p.trans = Eigen::Vector3d(trans[0], trans[1], trans[2]);
      motion.set_pose(f, n, p);
    }
    if (n + 1 < N && !r.next()) r.fail("missing subject block " + std::to_string(n + 1));
  }

  // Padded positions stay zero.
  for (int f = 0; f < F; ++f)
    for (int n = 0; n < N; ++n)
      if (!motion.frame_valid(f) || !motion.subject_valid(n))
        std::fill(motion.pose_ptr(f, n), motion.pose_ptr(f, n) + kPoseDim, 0.0);

  sample.motion = std::move(motion);
  return sample;
}

void write_motion_file(const MotionSample& sample, const std::string& path) {
  const GroupMotion& m = sample.motion;
  std::ofstream out(path);
  if (!out) throw IOError("write_motion_file: cannot open " + path);
  out.precision(17);

  out << kMagicPrefix << 1 << '\n';
  out << "fps: " << m.fps << '\n';
  out << "frames: " << m.F << '\n';
  out << "subjects: " << m.N << '\n';
  out << "text: " << sample.text << '\n';
  out << "source: " << source_tag_name(sample.source_tag) << '\n';
  out << "height_adjusted: " << (sample.height_adjusted ? 1 : 0) << '\n';
  out << "frame_mask: ";
  for (auto b : m.frame_mask) out << (b ? '1' : '0');
  out << '\n';
  out << "subject_mask: ";
  for (auto b : m.subject_mask) out << (b ? '1' : '0');
  out << '\n';
  for (const auto& [key, value] : sample.extra_headers) {
    if (std::find(known_header_keys().begin(), known_header_keys().end(), key) !=
        known_header_keys().end())
      continue;
    out << key << ": " << value << '\n';
  }

  for (int n = 0; n < m.N; ++n) {
    out << "subject " << n << '\n';
    const PoseVector p0 = m.pose(m.frame_valid(0) ? 0 : 0, n);
    out << "betas:";
    for (int i = 0; i < kBetaDim; ++i) out << ' ' << p0.beta[i];
    out << '\n';
    for (int f = 0; f < m.F; ++f) {
      out << "frame " << f << '\n';
      out << "pose:";
      if (m.frame_valid(f) && m.subject_valid(n)) {
        const PoseVector p = m.pose(f, n);
        for (int j = 0; j < kNumJoints; ++j) {
          const Eigen::Vector3d aa = matrix_to_axis_angle(rot6d_to_matrix(p.theta[j]));
          out << ' ' << aa.x() << ' ' << aa.y() << ' ' << aa.z();
        }
        out << '\n';
        out << "trans: " << p.trans.x() << ' ' << p.trans.y() << ' ' << p.trans.z() << '\n';
      } else {
        for (int j = 0; j < kNumJoints * 3; ++j) out << " 0";
        out << '\n';
        out << "trans: 0 0 0\n";
      }
    }
  }
  if (!out) throw IOError("write_motion_file: write failed for " + path);
}

DatasetMap read_corpus_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IOError("read_corpus_dir: not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".gmo")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  DatasetMap data;
  for (const fs::path& f : files) {
    MotionSample s = read_motion_file(f.string());
    data[s.source_tag].push_back(std::move(s));
  }
  return data;
}

void write_corpus_dir(const DatasetMap& data, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream prompts(fs::path(dir) / "prompts.txt");
  for (const auto& [tag, samples] : data) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      std::ostringstream name;
      name << source_tag_name(tag) << '_';
      name.width(4);
      name.fill('0');
      name << i;
      write_motion_file(samples[i], (fs::path(dir) / (name.str() + ".gmo")).string());
      if (!samples[i].text.empty()) prompts << samples[i].text << '\n';
    }
  }
}

std::map<std::string, std::string> read_kv_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("read_kv_config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string trimmed = line;
    trimmed.erase(0, trimmed.find_first_not_of(" \t"));
    if (trimmed.empty() || trimmed[0] == '#') continue;
    auto sep = trimmed.find_first_of(":=");
    if (sep == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected key: value");
    std::string key = trimmed.substr(0, sep);
    std::string value = trimmed.substr(sep + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    value.erase(value.find_last_not_of(" \t") + 1);
    kv[key] = value;
  }
  return kv;
}

namespace {

constexpr unsigned char kPalette[10][3] = {
    {204, 51, 51}, {51, 102, 204}, {51, 153, 51},  {204, 153, 51}, {153, 51, 204},
    {51, 204, 204}, {204, 51, 153}, {102, 102, 102}, {153, 102, 51}, {0, 102, 102}};

struct Canvas {
  int w, h;
  std::vector<unsigned char> rgb;
  Canvas(int w_, int h_) : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3, 255) {}
  void set(int x, int y, const unsigned char* c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
  }
  void line(int x0, int y0, int x1, int y1, const unsigned char* c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      set(x0 + 1, y0, c); // 2 px strokes
      set(x0, y0 + 1, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) { err += dy; x0 += sx; }
      if (e2 <= dx) { err += dx; y0 += sy; }
    }
  }
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOError("render: cannot open " + path);
    out << "P6\n" << w << ' ' << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw IOError("render: write failed for " + path);
  }
};

} // namespace

int render_motion(const MotionSample& sample, const std::string& out_dir,
                  const RenderOptions& opts) {
  const GroupMotion& m = sample.motion;
  const Skeleton skel = Skeleton::default_human();
  fs::create_directories(out_dir);

  // Joint positions for every valid pose; shared bounds keep the camera
  // still across frames.
  std::vector<std::vector<JointPositions>> joints(m.F, std::vector<JointPositions>(m.N));
  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (int f = 0; f < m.F; ++f) {
    if (!m.frame_valid(f)) continue;
    for (int n = 0; n < m.N; ++n) {
      if (!m.subject_valid(n)) continue;
      joints[f][n] = forward_kinematics(m.pose(f, n), skel);
      for (const auto& j : joints[f][n]) {
        min_x = std::min(min_x, j.x());
        max_x = std::max(max_x, j.x());
        min_y = std::min(min_y, j.y());
        max_y = std::max(max_y, j.y());
      }
    }
  }
  if (min_x > max_x) throw IOError("render_motion: no valid poses to draw");
  min_x -= opts.margin;
  max_x += opts.margin;
  min_y -= opts.margin;
  max_y += opts.margin;
  const double scale = std::min(opts.width / (max_x - min_x), opts.height / (max_y - min_y));

  auto to_px = [&](const Eigen::Vector3d& p) {
    const int u = static_cast<int>(std::lround((p.x() - min_x) * scale));
    const int v = static_cast<int>(std::lround(opts.height - 1 - (p.y() - min_y) * scale));
    return std::make_pair(u, v);
  };

  int written = 0;
  for (int f = 0; f < m.F; ++f) {
    if (!m.frame_valid(f)) continue;
    Canvas canvas(opts.width, opts.height);
    for (int n = 0; n < m.N; ++n) {
      if (!m.subject_valid(n)) continue;
      const unsigned char* color = kPalette[n % 10];
      for (int j = 1; j < kNumJoints; ++j) {
        const auto [x0, y0] = to_px(joints[f][n][skel.parent[j]]);
        const auto [x1, y1] = to_px(joints[f][n][j]);
        canvas.line(x0, y0, x1, y1, color);
      }
    }
    std::ostringstream name;
    name << "frame_";
    name.width(5);
    name.fill('0');
    name << f << ".ppm";
    canvas.save((fs::path(out_dir) / name.str()).string());
    ++written;
  }
  return written;
}

} // namespace gmotion
