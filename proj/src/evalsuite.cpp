#include "gmotion/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace gmotion {

std::string EncoderConfig::to_json() const {
  nlohmann::json j;
  j["d_feat"] = d_feat;
  j["latent"] = latent;
  j["heads"] = heads;
  j["ff_dim"] = ff_dim;
  j["n_layers"] = n_layers;
  j["d_text"] = d_text;
  j["dropout"] = dropout;
  j["lr"] = lr;
  j["steps"] = steps;
  j["batch"] = batch;
  j["seed"] = seed;
  return j.dump();
}

EncoderConfig EncoderConfig::from_json(const std::string& json) {
  const auto j = nlohmann::json::parse(json, nullptr, false);
  if (j.is_discarded()) throw ParseError("EncoderConfig: bad json");
  EncoderConfig cfg;
  cfg.d_feat = j.value("d_feat", cfg.d_feat);
  cfg.latent = j.value("latent", cfg.latent);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.ff_dim = j.value("ff_dim", cfg.ff_dim);
  cfg.n_layers = j.value("n_layers", cfg.n_layers);
  cfg.d_text = j.value("d_text", cfg.d_text);
  cfg.dropout = j.value("dropout", cfg.dropout);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

TextHead::TextHead(const EncoderConfig& cfg, Rng& rng)
    : mlp_(cfg.d_text, cfg.latent, cfg.d_feat, rng), d_text_(cfg.d_text) {}

nn::Tensor TextHead::forward(const nn::Tensor& texts) const {
  return nn::l2_normalize_rows(mlp_.forward(texts));
}

std::vector<double> TextHead::encode(const TextEmbedding& text) const {
  nn::NoGradGuard guard;
  if (text.dim() != d_text_) throw ShapeMismatch("TextHead: embedding dim mismatch");
  nn::Tensor x = nn::Tensor::from_data({1, d_text_}, text.vec, false);
  return forward(x).data();
}

void TextHead::collect(const std::string& prefix, NamedParams& out) const {
  mlp_.collect(prefix + ".mlp", out);
}

namespace {

// Masked mean pooling via a constant (B,1,S) weight row per sample.
nn::Tensor masked_mean_pool(const nn::Tensor& h, const std::vector<std::uint8_t>& mask) {
  const int B = h.dim(0), S = h.dim(1), C = h.dim(2);
  std::vector<double> w(static_cast<std::size_t>(B) * S, 0.0);
  for (int b = 0; b < B; ++b) {
    int count = 0;
    for (int s = 0; s < S; ++s) count += mask[static_cast<std::size_t>(b) * S + s] ? 1 : 0;
    if (count == 0) throw ShapeMismatch("masked_mean_pool: sample with no valid tokens");
    for (int s = 0; s < S; ++s)
      if (mask[static_cast<std::size_t>(b) * S + s])
        w[static_cast<std::size_t>(b) * S + s] = 1.0 / count;
  }
  nn::Tensor weights = nn::Tensor::from_data({B, 1, S}, std::move(w), false);
  return nn::reshape(nn::bmm(weights, h), {B, C});
}

std::vector<double> temporal_table(int S, int C) {
  std::vector<double> table(static_cast<std::size_t>(S) * C);
  for (int s = 0; s < S; ++s) {
    const auto e = sinusoidal_embedding(static_cast<double>(s), C);
    std::copy(e.begin(), e.end(), table.begin() + static_cast<std::int64_t>(s) * C);
  }
  return table;
}

} // namespace

PoseEncoder::PoseEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  w_in_ = nn::Tensor::xavier(kPoseDim, cfg.latent, rng);
  b_in_ = nn::Tensor::zeros({cfg.latent}, true);
  for (int i = 0; i < cfg.n_layers; ++i)
    layers_.emplace_back(cfg.latent, cfg.heads, cfg.ff_dim, rng, false);
  w_feat_ = nn::Tensor::xavier(cfg.latent, cfg.d_feat, rng);
  b_feat_ = nn::Tensor::zeros({cfg.d_feat}, true);
}

nn::Tensor PoseEncoder::forward(const nn::Tensor& x, const std::vector<std::uint8_t>& mask,
                                bool train, Rng& rng) const {
  const int B = x.dim(0), S = x.dim(1);
  nn::Tensor h = nn::linear(x, w_in_, &b_in_);
  for (const EncoderLayer& layer : layers_)
    h = layer.forward(h, nullptr, mask, nullptr, cfg_.dropout, train, rng);
  nn::Tensor pooled = masked_mean_pool(h, mask);
  (void)B; (void)S;
  return nn::l2_normalize_rows(nn::linear(pooled, w_feat_, &b_feat_));
}

std::vector<double> PoseEncoder::encode(const std::vector<double>& pose,
                                        const std::vector<std::uint8_t>& mask, int N) const {
  nn::NoGradGuard guard;
  Rng dummy(0);
  nn::Tensor x = nn::Tensor::from_data({1, N, kPoseDim}, pose, false);
  return forward(x, mask, false, dummy).data();
}

void PoseEncoder::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".in.w", w_in_);
  out.emplace_back(prefix + ".in.b", b_in_);
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i].collect(prefix + ".layers." + std::to_string(i), out);
  out.emplace_back(prefix + ".feat.w", w_feat_);
  out.emplace_back(prefix + ".feat.b", b_feat_);
}

MotionEncoder::MotionEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  w_in_ = nn::Tensor::xavier(kPoseDim, cfg.latent, rng);
  b_in_ = nn::Tensor::zeros({cfg.latent}, true);
  for (int i = 0; i < cfg.n_layers; ++i)
    layers_.emplace_back(cfg.latent, cfg.heads, cfg.ff_dim, rng, false);
  w_feat_ = nn::Tensor::xavier(cfg.latent, cfg.d_feat, rng);
  b_feat_ = nn::Tensor::zeros({cfg.d_feat}, true);
}

nn::Tensor MotionEncoder::forward(const nn::Tensor& x, const std::vector<std::uint8_t>& mask,
                                  bool train, Rng& rng) const {
  const int S = x.dim(1);
  const auto pe = temporal_table(S, cfg_.latent);
  nn::Tensor h = nn::linear(x, w_in_, &b_in_);
  for (const EncoderLayer& layer : layers_)
    h = layer.forward(h, nullptr, mask, &pe, cfg_.dropout, train, rng);
  nn::Tensor pooled = masked_mean_pool(h, mask);
  return nn::l2_normalize_rows(nn::linear(pooled, w_feat_, &b_feat_));
}

std::vector<double> MotionEncoder::encode(const std::vector<double>& track,
                                          const std::vector<std::uint8_t>& mask, int F) const {
  nn::NoGradGuard guard;
  Rng dummy(0);
  nn::Tensor x = nn::Tensor::from_data({1, F, kPoseDim}, track, false);
  return forward(x, mask, false, dummy).data();
}

void MotionEncoder::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".in.w", w_in_);
  out.emplace_back(prefix + ".in.b", b_in_);
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i].collect(prefix + ".layers." + std::to_string(i), out);
  out.emplace_back(prefix + ".feat.w", w_feat_);
  out.emplace_back(prefix + ".feat.b", b_feat_);
}

nn::Tensor contrastive_loss(const nn::Tensor& sample_feats, const nn::Tensor& text_feats,
                            const nn::Tensor& log_temperature) {
  nn::Tensor logits = nn::exp_scale(nn::matmul2d(sample_feats, text_feats, true), log_temperature);
  nn::Tensor rows = nn::ce_diagonal(logits);
  nn::Tensor cols = nn::ce_diagonal(nn::permute(logits, {1, 0}));
  return nn::scale(nn::add(rows, cols), 0.5);
}

namespace {

// Pack variable-size token sets into one zero-padded (B,S,kPoseDim) batch.
struct TokenBatch {
  nn::Tensor x;
  std::vector<std::uint8_t> mask;
  int S = 0;
};

TokenBatch pack_tokens(const std::vector<const std::vector<double>*>& data,
                       const std::vector<const std::vector<std::uint8_t>*>& masks,
                       const std::vector<int>& sizes) {
  const int B = static_cast<int>(data.size());
  int S = 1;
  for (int s : sizes) S = std::max(S, s);
  std::vector<double> flat(static_cast<std::size_t>(B) * S * kPoseDim, 0.0);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(B) * S, 0);
  for (int b = 0; b < B; ++b) {
    std::copy(data[b]->begin(), data[b]->end(),
              flat.begin() + static_cast<std::int64_t>(b) * S * kPoseDim);
    for (int s = 0; s < sizes[b]; ++s)
      mask[static_cast<std::size_t>(b) * S + s] = (*masks[b])[s];
  }
  TokenBatch tb;
  tb.x = nn::Tensor::from_data({B, S, kPoseDim}, std::move(flat), false);
  tb.mask = std::move(mask);
  tb.S = S;
  return tb;
}

nn::Tensor texts_tensor(const std::vector<const TextEmbedding*>& texts, int d_text) {
  const int B = static_cast<int>(texts.size());
  std::vector<double> flat(static_cast<std::size_t>(B) * d_text);
  for (int b = 0; b < B; ++b) {
    if (texts[b]->dim() != d_text) throw ShapeMismatch("text embedding dim mismatch");
    std::copy(texts[b]->vec.begin(), texts[b]->vec.end(),
              flat.begin() + static_cast<std::int64_t>(b) * d_text);
  }
  return nn::Tensor::from_data({B, d_text}, std::move(flat), false);
}

} // namespace

PoseEncoderBundle train_pose_encoder(const std::vector<PoseTextPair>& pairs,
                                     const EncoderConfig& cfg, std::vector<double>* history) {
  if (pairs.size() < 2) throw InsufficientSamples("train_pose_encoder: need at least 2 pairs");
  Rng rng(cfg.seed);
  PoseEncoderBundle bundle;
  bundle.encoder = PoseEncoder(cfg, rng);
  bundle.text_head = TextHead(cfg, rng);
  nn::Tensor log_temp = nn::Tensor::full({1}, std::log(1.0 / 0.07), true);

  NamedParams named;
  bundle.encoder.collect("enc", named);
  bundle.text_head.collect("text", named);
  std::vector<nn::Tensor> params;
  for (auto& [name, t] : named) params.push_back(t);
  params.push_back(log_temp);
  nn::Adam opt(params, cfg.lr);

  const int B = std::min<int>(cfg.batch, static_cast<int>(pairs.size()));
  std::vector<int> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t j = i + rand_index(rng, order.size() - i);
      std::swap(order[i], order[j]);
    }
    std::vector<const std::vector<double>*> data;
    std::vector<const std::vector<std::uint8_t>*> masks;
    std::vector<int> sizes;
    std::vector<const TextEmbedding*> texts;
    for (int b = 0; b < B; ++b) {
      const PoseTextPair& p = pairs[order[b]];
      data.push_back(&p.pose);
      masks.push_back(&p.mask);
      sizes.push_back(p.N);
      texts.push_back(&p.text);
    }
    const TokenBatch tb = pack_tokens(data, masks, sizes);
    nn::Tensor sample_feats = bundle.encoder.forward(tb.x, tb.mask, true, rng);
    nn::Tensor text_feats = bundle.text_head.forward(texts_tensor(texts, cfg.d_text));
    nn::Tensor loss = contrastive_loss(sample_feats, text_feats, log_temp);
    opt.zero_grad();
    nn::backward(loss);
    opt.step();
    if (history) history->push_back(loss.scalar());
  }
  return bundle;
}

MotionEncoderBundle train_motion_encoder(const std::vector<MotionTextPair>& pairs,
                                         const EncoderConfig& cfg, std::vector<double>* history) {
  if (pairs.size() < 2) throw InsufficientSamples("train_motion_encoder: need at least 2 pairs");
  Rng rng(cfg.seed);
  MotionEncoderBundle bundle;
  bundle.encoder = MotionEncoder(cfg, rng);
  bundle.text_head = TextHead(cfg, rng);
  nn::Tensor log_temp = nn::Tensor::full({1}, std::log(1.0 / 0.07), true);

  NamedParams named;
  bundle.encoder.collect("enc", named);
  bundle.text_head.collect("text", named);
  std::vector<nn::Tensor> params;
  for (auto& [name, t] : named) params.push_back(t);
  params.push_back(log_temp);
  nn::Adam opt(params, cfg.lr);

  const int B = std::min<int>(cfg.batch, static_cast<int>(pairs.size()));
  std::vector<int> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t j = i + rand_index(rng, order.size() - i);
      std::swap(order[i], order[j]);
    }
    std::vector<const std::vector<double>*> data;
    std::vector<const std::vector<std::uint8_t>*> masks;
    std::vector<int> sizes;
    std::vector<const TextEmbedding*> texts;
    for (int b = 0; b < B; ++b) {
      const MotionTextPair& p = pairs[order[b]];
      data.push_back(&p.track);
      masks.push_back(&p.mask);
      sizes.push_back(p.F);
      texts.push_back(&p.text);
    }
    const TokenBatch tb = pack_tokens(data, masks, sizes);
    nn::Tensor sample_feats = bundle.encoder.forward(tb.x, tb.mask, true, rng);
    nn::Tensor text_feats = bundle.text_head.forward(texts_tensor(texts, cfg.d_text));
    nn::Tensor loss = contrastive_loss(sample_feats, text_feats, log_temp);
    opt.zero_grad();
    nn::backward(loss);
    opt.step();
    if (history) history->push_back(loss.scalar());
  }
  return bundle;
}

void PoseEncoderBundle::save(const std::string& path) const {
  NamedParams named;
  encoder.collect("enc", named);
  text_head.collect("text", named);
  save_checkpoint(path, {0, "pose_encoder", encoder.config().to_json(), named});
}

PoseEncoderBundle PoseEncoderBundle::load(const std::string& path) {
  const CheckpointPayload payload = load_checkpoint(path);
  if (payload.kind != "pose_encoder") throw ParseError("not a pose encoder checkpoint");
  const EncoderConfig cfg = EncoderConfig::from_json(payload.config_json);
  Rng rng(0);
  PoseEncoderBundle bundle;
  bundle.encoder = PoseEncoder(cfg, rng);
  bundle.text_head = TextHead(cfg, rng);
  NamedParams named;
  bundle.encoder.collect("enc", named);
  bundle.text_head.collect("text", named);
  std::map<std::string, nn::Tensor> by_name;
  for (const auto& [name, t] : payload.tensors) by_name.emplace(name, t);
  for (auto [name, t] : named) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint is missing tensor " + name);
    t.data() = it->second.data();
  }
  return bundle;
}

void MotionEncoderBundle::save(const std::string& path) const {
  NamedParams named;
  encoder.collect("enc", named);
  text_head.collect("text", named);
  save_checkpoint(path, {0, "motion_encoder", encoder.config().to_json(), named});
}

MotionEncoderBundle MotionEncoderBundle::load(const std::string& path) {
  const CheckpointPayload payload = load_checkpoint(path);
  if (payload.kind != "motion_encoder") throw ParseError("not a motion encoder checkpoint");
  const EncoderConfig cfg = EncoderConfig::from_json(payload.config_json);
  Rng rng(0);
  MotionEncoderBundle bundle;
  bundle.encoder = MotionEncoder(cfg, rng);
  bundle.text_head = TextHead(cfg, rng);
  NamedParams named;
  bundle.encoder.collect("enc", named);
  bundle.text_head.collect("text", named);
  std::map<std::string, nn::Tensor> by_name;
  for (const auto& [name, t] : payload.tensors) by_name.emplace(name, t);
  for (auto [name, t] : named) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint is missing tensor " + name);
    t.data() = it->second.data();
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Metric kernels

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Eigen::MatrixXd to_matrix(const FeatureRows& rows) {
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows.at(0).size());
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rows[i][j];
  return m;
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

double r_precision(const FeatureRows& text_feats, const FeatureRows& sample_feats, int k) {
  if (text_feats.size() != 32 || sample_feats.size() != 32)
    throw PoolSizeError("r_precision: pools must hold exactly 32 pairs");
  int hits = 0;
  for (int i = 0; i < 32; ++i) {
    const double self_sim = cosine(text_feats[i], sample_feats[i]);
    int rank = 0;
    for (int j = 0; j < 32; ++j) {
      if (j == i) continue;
      if (cosine(text_feats[i], sample_feats[j]) > self_sim) ++rank;
    }
    if (rank < k) ++hits;
  }
  return hits / 32.0;
}

double frechet_distance(const FeatureRows& a, const FeatureRows& b) {
  if (a.empty() || b.empty()) throw InsufficientSamples("frechet_distance: empty feature set");
  const Eigen::MatrixXd ma = to_matrix(a);
  const Eigen::MatrixXd mb = to_matrix(b);
  if (ma.cols() != mb.cols()) throw ShapeMismatch("frechet_distance: dim mismatch");
  const int d = static_cast<int>(ma.cols());

  auto moments = [d](const Eigen::MatrixXd& m) {
    const Eigen::VectorXd mu = m.colwise().mean();
    Eigen::MatrixXd centered = m.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = m.rows() > 1
        ? Eigen::MatrixXd((centered.transpose() * centered) / (m.rows() - 1.0))
        : Eigen::MatrixXd::Zero(d, d);
    cov += 1e-6 * Eigen::MatrixXd::Identity(d, d); // shrinkage for small pools
    return std::make_pair(mu, cov);
  };
  const auto [mu1, cov1] = moments(ma);
  const auto [mu2, cov2] = moments(mb);

  const Eigen::MatrixXd s1 = sqrtm_psd(cov1);
  const Eigen::MatrixXd cross = sqrtm_psd(s1 * cov2 * s1);
  const double mean_term = (mu1 - mu2).squaredNorm();
  const double trace_term = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
  return std::max(mean_term + trace_term, 0.0); // clamp numeric dust on identical sets
}

double diversity(const FeatureRows& feats, int n_pairs, Rng& rng) {
  if (static_cast<int>(feats.size()) < 2 * n_pairs)
    throw InsufficientSamples("diversity: need at least 2*n_pairs features");
  std::vector<int> order(feats.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t j = i + rand_index(rng, order.size() - i);
    std::swap(order[i], order[j]);
  }
  double sum = 0.0;
  for (int p = 0; p < n_pairs; ++p) sum += euclidean(feats[order[2 * p]], feats[order[2 * p + 1]]);
  return sum / n_pairs;
}

double multimodality(const std::vector<FeatureRows>& per_prompt_feats, Rng& rng) {
  double sum = 0.0;
  int groups = 0;
  for (const FeatureRows& feats : per_prompt_feats) {
    if (feats.size() < 2) continue;
    std::vector<int> order(feats.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t j = i + rand_index(rng, order.size() - i);
      std::swap(order[i], order[j]);
    }
    const int pairs = static_cast<int>(feats.size()) / 2;
    double acc = 0.0;
    for (int p = 0; p < pairs; ++p) acc += euclidean(feats[order[2 * p]], feats[order[2 * p + 1]]);
    sum += acc / pairs;
    ++groups;
  }
  if (groups == 0) throw InsufficientSamples("multimodality: no prompt has 2+ generations");
  return sum / groups;
}

double similarity(const FeatureRows& text_feats, const FeatureRows& sample_feats) {
  if (text_feats.size() != sample_feats.size() || text_feats.empty())
    throw ShapeMismatch("similarity: matched rows required");
  double sum = 0.0;
  for (std::size_t i = 0; i < text_feats.size(); ++i) sum += cosine(text_feats[i], sample_feats[i]);
  return sum / static_cast<double>(text_feats.size());
}

// ---------------------------------------------------------------------------
// Decomposed evaluation

std::vector<int> sparse_eval_frames(int F, int spacing) {
  const int center = F / 2;
  std::set<int> unique;
  for (int k = -2; k <= 2; ++k)
    unique.insert(std::clamp(center + k * spacing, 0, F - 1));
  return {unique.begin(), unique.end()};
}

std::vector<double> subject_track(const GroupMotion& m, int subject) {
  std::vector<double> track(static_cast<std::size_t>(m.F) * kPoseDim, 0.0);
  const int fc = m.center_frame();
  const double* cp = m.pose_ptr(fc, subject);
  const double cx = cp[kPoseDim - 3];
  const double cz = cp[kPoseDim - 1];
  for (int f = 0; f < m.F; ++f) {
    if (!m.frame_valid(f)) continue;
    const double* src = m.pose_ptr(f, subject);
    double* dst = track.data() + static_cast<std::size_t>(f) * kPoseDim;
    std::copy(src, src + kPoseDim, dst);
    dst[kPoseDim - 3] -= cx;
    dst[kPoseDim - 1] -= cz;
  }
  return track;
}

namespace {

std::vector<double> group_frame_of(const GroupMotion& m, int frame) {
  std::vector<double> out(static_cast<std::size_t>(m.N) * kPoseDim, 0.0);
  for (int n = 0; n < m.N; ++n) {
    if (!m.subject_valid(n)) continue;
    std::copy(m.pose_ptr(frame, n), m.pose_ptr(frame, n) + kPoseDim,
              out.begin() + static_cast<std::size_t>(n) * kPoseDim);
  }
  return out;
}

} // namespace

MetricReport decomposed_evaluate(const GeneratorFn& generator,
                                 const std::vector<std::string>& prompts,
                                 const PoseEncoderBundle& pose_enc,
                                 const MotionEncoder& motion_enc,
                                 const DatasetMap& reference, const EvalConfig& cfg) {
  MetricReport report;
  report.seed = cfg.seed;
  report.n_prompts = static_cast<int>(prompts.size());
  Rng rng(cfg.seed);

  const int P = static_cast<int>(prompts.size());
  const int R = std::max(1, cfg.mm_repeats);

  // Per prompt: repeat 0 feeds the main pools, all repeats feed
  // diversity and multimodality.
  std::vector<FeatureRows> pose_feats_main(P);       // per prompt: one per sparse frame
  FeatureRows pose_feats_all;                        // every repeat, every sparse frame
  std::vector<FeatureRows> pose_feats_center(P);     // per prompt: center frame per repeat
  FeatureRows text_feats(P);
  FeatureRows motion_feats_main;
  FeatureRows motion_feats_all;
  std::vector<std::vector<FeatureRows>> motion_by_subject(P); // [prompt][subject][repeat]

  for (int i = 0; i < P; ++i) {
    text_feats[i] = pose_enc.text_head.encode(embed_text(prompts[i], pose_enc.encoder.config().d_text));
    for (int r = 0; r < R; ++r) {
      Rng gen_rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(i) * 131ULL + r);
      const GroupMotion m = generator(prompts[i], gen_rng);
      const std::vector<int> frames = sparse_eval_frames(m.F, cfg.frame_spacing);
      if (r == 0) report.eval_frames = frames;

      for (std::size_t fi = 0; fi < frames.size(); ++fi) {
        const auto feat = pose_enc.encoder.encode(group_frame_of(m, frames[fi]), m.subject_mask, m.N);
        if (r == 0) pose_feats_main[i].push_back(feat);
        pose_feats_all.push_back(feat);
        if (frames[fi] == m.center_frame()) pose_feats_center[i].push_back(feat);
      }

      if (motion_by_subject[i].empty()) motion_by_subject[i].resize(m.N);
      for (int n = 0; n < m.N; ++n) {
        if (!m.subject_valid(n)) continue;
        const auto feat = motion_enc.encode(subject_track(m, n), m.frame_mask, m.F);
        if (r == 0) motion_feats_main.push_back(feat);
        motion_feats_all.push_back(feat);
        if (static_cast<int>(motion_by_subject[i].size()) <= n) motion_by_subject[i].resize(n + 1);
        motion_by_subject[i][n].push_back(feat);
      }
    }
  }

  report.pose_pool_size = 0;
  for (const auto& rows : pose_feats_main) report.pose_pool_size += static_cast<int>(rows.size());
  report.motion_pool_size = static_cast<int>(motion_feats_main.size());

  // R-precision over pools of 32 distinct prompts, one frame slot per pool
  // round so a pool never holds two frames of the same generation.
  if (P >= cfg.pool_size) {
    std::size_t max_slots = 0;
    for (const auto& rows : pose_feats_main) max_slots = std::max(max_slots, rows.size());
    double top1 = 0.0, top2 = 0.0, top3 = 0.0;
    int pools = 0;
    for (std::size_t slot = 0; slot < max_slots; ++slot) {
      std::vector<int> order;
      for (int i = 0; i < P; ++i)
        if (slot < pose_feats_main[i].size()) order.push_back(i);
      for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t j = i + rand_index(rng, order.size() - i);
        std::swap(order[i], order[j]);
      }
      for (std::size_t start = 0; start + cfg.pool_size <= order.size(); start += cfg.pool_size) {
        FeatureRows pool_text, pool_sample;
        for (int k = 0; k < cfg.pool_size; ++k) {
          const int idx = order[start + k];
          pool_text.push_back(text_feats[idx]);
          pool_sample.push_back(pose_feats_main[idx][slot]);
        }
        top1 += r_precision(pool_text, pool_sample, 1);
        top2 += r_precision(pool_text, pool_sample, 2);
        top3 += r_precision(pool_text, pool_sample, 3);
        ++pools;
      }
    }
    if (pools > 0) {
      report.pose_r_top1 = top1 / pools;
      report.pose_r_top2 = top2 / pools;
      report.pose_r_top3 = top3 / pools;
    }
  }

  // Similarity over matched (text, frame) pairs.
  {
    FeatureRows t, s;
    for (int i = 0; i < P; ++i)
      for (const auto& feat : pose_feats_main[i]) {
        t.push_back(text_feats[i]);
        s.push_back(feat);
      }
    report.pose_similarity = similarity(t, s);
  }

  // References: LP group frames for poses, HML subject tracks for motions.
  {
    FeatureRows ref_pose;
    if (const auto it = reference.find(SourceTag::LP); it != reference.end()) {
      for (const MotionSample& s : it->second) {
        const GroupMotion& m = s.motion;
        for (int frame : sparse_eval_frames(m.F, cfg.frame_spacing))
          ref_pose.push_back(pose_enc.encoder.encode(group_frame_of(m, frame), m.subject_mask, m.N));
      }
    }
    report.pose_fid = ref_pose.empty() ? 0.0 : frechet_distance(ref_pose, pose_feats_all);

    FeatureRows ref_motion;
    if (const auto it = reference.find(SourceTag::HML); it != reference.end()) {
      for (const MotionSample& s : it->second) {
        const GroupMotion& m = s.motion;
        for (int n = 0; n < m.N; ++n)
          if (m.subject_valid(n))
            ref_motion.push_back(motion_enc.encode(subject_track(m, n), m.frame_mask, m.F));
      }
    }
    report.motion_fid = ref_motion.empty() ? 0.0 : frechet_distance(ref_motion, motion_feats_all);
  }

  // Diversity over the full generated pools (clamped pair counts so small
  // runs stay runnable).
  {
    const int pose_pairs = std::min<int>(cfg.diversity_pairs, static_cast<int>(pose_feats_all.size()) / 2);
    const int motion_pairs = std::min<int>(cfg.diversity_pairs, static_cast<int>(motion_feats_all.size()) / 2);
    report.pose_diversity = pose_pairs > 0 ? diversity(pose_feats_all, pose_pairs, rng) : 0.0;
    report.motion_diversity = motion_pairs > 0 ? diversity(motion_feats_all, motion_pairs, rng) : 0.0;
  }

  // Multimodality: repeats of the same prompt (and same subject for
  // motions) compared against each other.
  report.pose_multimodality = multimodality(pose_feats_center, rng);
  {
    std::vector<FeatureRows> groups;
    for (const auto& per_prompt : motion_by_subject)
      for (const FeatureRows& per_subject : per_prompt)
        if (!per_subject.empty()) groups.push_back(per_subject);
    report.motion_multimodality = multimodality(groups, rng);
  }

  return report;
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out.precision(6);
  out << "metric-report v1\n";
  out << "[pose]\n";
  if (pose_r_top1) out << "r_precision_top1: " << *pose_r_top1 << '\n';
  if (pose_r_top2) out << "r_precision_top2: " << *pose_r_top2 << '\n';
  if (pose_r_top3) out << "r_precision_top3: " << *pose_r_top3 << '\n';
  out << "fid: " << pose_fid << '\n';
  out << "similarity: " << pose_similarity << '\n';
  out << "diversity: " << pose_diversity << '\n';
  out << "multimodality: " << pose_multimodality << '\n';
  out << "[motion]\n";
  out << "fid: " << motion_fid << '\n';
  out << "diversity: " << motion_diversity << '\n';
  out << "multimodality: " << motion_multimodality << '\n';
  out << "[meta]\n";
  out << "eval_frames: ";
  for (std::size_t i = 0; i < eval_frames.size(); ++i)
    out << (i ? "," : "") << eval_frames[i];
  out << '\n';
  out << "prompts: " << n_prompts << '\n';
  out << "pose_pool: " << pose_pool_size << '\n';
  out << "motion_pool: " << motion_pool_size << '\n';
  out << "seed: " << seed << '\n';
  return out.str();
}

GroupMotion baseline_pose_only(const Stage1Model& stage1, const std::string& prompt, int F,
                               const NoiseSchedule& sched, const TwoStageConfig& cfg, Rng& rng) {
  const GroupMotion pose = sample_pose_frame(stage1, prompt, sched, cfg, rng);
  GroupMotion out = GroupMotion::zeros(F, pose.N, cfg.fps);
  for (int f = 0; f < F; ++f)
    std::copy(pose.data.begin(), pose.data.end(),
              out.data.begin() + static_cast<std::size_t>(f) * pose.N * kPoseDim);
  return out;
}

GroupMotion baseline_motion_only(const Stage1Model& stage1, const MotionOnlyModel& motion_model,
                                 const std::string& prompt, int F,
                                 const NoiseSchedule& sched, const TwoStageConfig& cfg, Rng& rng) {
  const GroupMotion pose = sample_pose_frame(stage1, prompt, sched, cfg, rng);
  GroupMotion out = GroupMotion::zeros(F, pose.N, cfg.fps);
  const int fc = F / 2;
  for (int n = 0; n < pose.N; ++n) {
    CenterPoseCond center;
    center.N = 1;
    center.subject_mask = {1};
    center.pose.assign(pose.pose_ptr(0, n), pose.pose_ptr(0, n) + kPoseDim);

    const SampleDims dims = SampleDims::full(1, F, 1);
    const DenoiseFn fn = make_motion_denoiser(motion_model, dims, center);
    // The middle frame is pinned to the stage-1 pose at every step.
    std::function<void(std::vector<double>&)> hook = [&](std::vector<double>& x0) {
      std::copy(center.pose.begin(), center.pose.end(),
                x0.begin() + static_cast<std::size_t>(fc) * kPoseDim);
    };
    const std::vector<double> x0 = ddpm_sample(fn, dims, sched, rng, cfg.sampler, &hook);
    for (int f = 0; f < F; ++f)
      std::copy(x0.begin() + static_cast<std::size_t>(f) * kPoseDim,
                x0.begin() + static_cast<std::size_t>(f + 1) * kPoseDim, out.pose_ptr(f, n));
  }
  return out;
}

} // namespace gmotion
