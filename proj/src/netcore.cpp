#include "gmotion/netcore.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace gmotion {

void ModelConfig::validate() const {
  if (latent_dim <= 0 || heads <= 0 || ff_dim <= 0 || n_pose_layers <= 0)
    throw ConfigError("ModelConfig: dimensions must be positive");
  if (latent_dim % heads != 0)
    throw ConfigError("ModelConfig: latent_dim must be divisible by heads");
  if (max_F < 1 || max_F > kMaxFrames || max_N < 1 || max_N > kMaxSubjects)
    throw ConfigError("ModelConfig: maxima out of range");
  if (d_text <= 0) throw ConfigError("ModelConfig: d_text must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("ModelConfig: dropout out of range");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["latent_dim"] = latent_dim;
  j["n_pose_layers"] = n_pose_layers;
  j["heads"] = heads;
  j["ff_dim"] = ff_dim;
  j["dropout"] = dropout;
  j["max_F"] = max_F;
  j["max_N"] = max_N;
  j["d_text"] = d_text;
  j["two_stage"] = two_stage;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json) {
  const auto j = nlohmann::json::parse(json, nullptr, false);
  if (j.is_discarded()) throw ParseError("ModelConfig: bad json");
  ModelConfig cfg;
  cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
  cfg.n_pose_layers = j.value("n_pose_layers", cfg.n_pose_layers);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.ff_dim = j.value("ff_dim", cfg.ff_dim);
  cfg.dropout = j.value("dropout", cfg.dropout);
  cfg.max_F = j.value("max_F", cfg.max_F);
  cfg.max_N = j.value("max_N", cfg.max_N);
  cfg.d_text = j.value("d_text", cfg.d_text);
  cfg.two_stage = j.value("two_stage", cfg.two_stage);
  cfg.validate();
  return cfg;
}

std::vector<double> sinusoidal_embedding(double pos, int dim) {
  std::vector<double> e(dim, 0.0);
  const double log_base = std::log(10000.0);
  for (int i = 0; 2 * i < dim; ++i) {
    const double freq = std::exp(-log_base * (2.0 * i) / dim);
    e[2 * i] = std::sin(pos * freq);
    if (2 * i + 1 < dim) e[2 * i + 1] = std::cos(pos * freq);
  }
  return e;
}

namespace {

nn::Tensor clone_frozen(const nn::Tensor& t) {
  return nn::Tensor::from_data(t.shape(), t.data(), false);
}

nn::Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  const int B = static_cast<int>(rows.size());
  const int C = static_cast<int>(rows.at(0).size());
  std::vector<double> flat(static_cast<std::size_t>(B) * C);
  for (int b = 0; b < B; ++b)
    std::copy(rows[b].begin(), rows[b].end(), flat.begin() + static_cast<std::int64_t>(b) * C);
  return nn::Tensor::from_data({B, C}, std::move(flat), false);
}

nn::Tensor timestep_matrix(const std::vector<int>& t, int dim) {
  std::vector<std::vector<double>> rows;
  rows.reserve(t.size());
  for (int ti : t) rows.push_back(sinusoidal_embedding(static_cast<double>(ti), dim));
  return rows_tensor(rows);
}

} // namespace

EncoderLayer::EncoderLayer(int latent, int heads, int ff_dim, Rng& rng, bool zero_init_residual)
    : latent_(latent), heads_(heads), ff_(ff_dim) {
  ln1_g_ = nn::Tensor::full({latent}, 1.0, true);
  ln1_b_ = nn::Tensor::zeros({latent}, true);
  w_qkv_ = nn::Tensor::xavier(latent, 3 * latent, rng);
  b_qkv_ = nn::Tensor::zeros({3 * latent}, true);
  w_o_ = zero_init_residual ? nn::Tensor::zeros({latent, latent}, true)
                            : nn::Tensor::xavier(latent, latent, rng);
  b_o_ = nn::Tensor::zeros({latent}, true);
  ln2_g_ = nn::Tensor::full({latent}, 1.0, true);
  ln2_b_ = nn::Tensor::zeros({latent}, true);
  w_ff1_ = nn::Tensor::xavier(latent, ff_dim, rng);
  b_ff1_ = nn::Tensor::zeros({ff_dim}, true);
  w_ff2_ = zero_init_residual ? nn::Tensor::zeros({ff_dim, latent}, true)
                              : nn::Tensor::xavier(ff_dim, latent, rng);
  b_ff2_ = nn::Tensor::zeros({latent}, true);
}

nn::Tensor EncoderLayer::forward(const nn::Tensor& h, const nn::Tensor* cond_tok,
                                 const std::vector<std::uint8_t>& key_mask,
                                 const std::vector<double>* pe,
                                 double dropout_p, bool train, Rng& rng) const {
  const int B = h.dim(0), S = h.dim(1), C = h.dim(2);
  if (C != latent_) throw ShapeMismatch("EncoderLayer: channel mismatch");
  if (static_cast<int>(key_mask.size()) != B * S)
    throw ShapeMismatch("EncoderLayer: key mask size mismatch");

  nn::Tensor u = cond_tok ? nn::prepend_token(h, *cond_tok) : h;
  const int Se = u.dim(1);

  std::vector<std::uint8_t> kmask;
  if (cond_tok) {
    kmask.assign(static_cast<std::size_t>(B) * Se, 0);
    for (int b = 0; b < B; ++b) {
      kmask[static_cast<std::size_t>(b) * Se] = 1; // condition token is never masked
      for (int s = 0; s < S; ++s)
        kmask[static_cast<std::size_t>(b) * Se + 1 + s] = key_mask[static_cast<std::size_t>(b) * S + s];
    }
  } else {
    kmask = key_mask;
  }

  nn::Tensor attn_in = nn::layer_norm(u, ln1_g_, ln1_b_);
  if (pe) {
    // Positions enter through the attention input only; the residual
    // stream stays positional-encoding free so zero-initialized output
    // projections leave the layer an exact identity.
    std::vector<double> table(static_cast<std::size_t>(Se) * C, 0.0);
    const std::size_t offset = cond_tok ? static_cast<std::size_t>(C) : 0;
    std::copy(pe->begin(), pe->begin() + static_cast<std::int64_t>(S) * C, table.begin() + offset);
    attn_in = nn::add_const_rows(attn_in, table);
  }

  nn::Tensor qkv = nn::linear(attn_in, w_qkv_, &b_qkv_);
  nn::Tensor q = nn::slice_last_dim(qkv, 0, C);
  nn::Tensor k = nn::slice_last_dim(qkv, C, C);
  nn::Tensor v = nn::slice_last_dim(qkv, 2 * C, C);

  const int H = heads_, Dh = C / H;
  auto to_heads = [&](const nn::Tensor& t) {
    return nn::reshape(nn::permute(nn::reshape(t, {B, Se, H, Dh}), {0, 2, 1, 3}), {B * H, Se, Dh});
  };
  q = to_heads(q);
  k = to_heads(k);
  v = to_heads(v);

  nn::Tensor scores = nn::scale(nn::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(Dh)));
  scores = nn::mask_keys(scores, kmask, B, H);
  nn::Tensor attn = nn::softmax_last_dim(scores);
  attn = nn::dropout(attn, dropout_p, rng, train);
  nn::Tensor av = nn::bmm(attn, v);
  av = nn::reshape(nn::permute(nn::reshape(av, {B, H, Se, Dh}), {0, 2, 1, 3}), {B, Se, C});
  nn::Tensor proj = nn::linear(av, w_o_, &b_o_);
  proj = nn::dropout(proj, dropout_p, rng, train);
  nn::Tensor u2 = nn::add(u, proj);

  nn::Tensor ff_in = nn::layer_norm(u2, ln2_g_, ln2_b_);
  nn::Tensor ff = nn::linear(nn::gelu(nn::linear(ff_in, w_ff1_, &b_ff1_)), w_ff2_, &b_ff2_);
  ff = nn::dropout(ff, dropout_p, rng, train);
  nn::Tensor out = nn::add(u2, ff);

  return cond_tok ? nn::drop_first_token(out) : out;
}

EncoderLayer EncoderLayer::frozen_clone() const {
  EncoderLayer c = *this;
  c.ln1_g_ = clone_frozen(ln1_g_);
  c.ln1_b_ = clone_frozen(ln1_b_);
  c.w_qkv_ = clone_frozen(w_qkv_);
  c.b_qkv_ = clone_frozen(b_qkv_);
  c.w_o_ = clone_frozen(w_o_);
  c.b_o_ = clone_frozen(b_o_);
  c.ln2_g_ = clone_frozen(ln2_g_);
  c.ln2_b_ = clone_frozen(ln2_b_);
  c.w_ff1_ = clone_frozen(w_ff1_);
  c.b_ff1_ = clone_frozen(b_ff1_);
  c.w_ff2_ = clone_frozen(w_ff2_);
  c.b_ff2_ = clone_frozen(b_ff2_);
  return c;
}

void EncoderLayer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".ln1.g", ln1_g_);
  out.emplace_back(prefix + ".ln1.b", ln1_b_);
  out.emplace_back(prefix + ".qkv.w", w_qkv_);
  out.emplace_back(prefix + ".qkv.b", b_qkv_);
  out.emplace_back(prefix + ".o.w", w_o_);
  out.emplace_back(prefix + ".o.b", b_o_);
  out.emplace_back(prefix + ".ln2.g", ln2_g_);
  out.emplace_back(prefix + ".ln2.b", ln2_b_);
  out.emplace_back(prefix + ".ff1.w", w_ff1_);
  out.emplace_back(prefix + ".ff1.b", b_ff1_);
  out.emplace_back(prefix + ".ff2.w", w_ff2_);
  out.emplace_back(prefix + ".ff2.b", b_ff2_);
}

Mlp::Mlp(int in_dim, int hidden, int out_dim, Rng& rng) {
  w1_ = nn::Tensor::xavier(in_dim, hidden, rng);
  b1_ = nn::Tensor::zeros({hidden}, true);
  w2_ = nn::Tensor::xavier(hidden, out_dim, rng);
  b2_ = nn::Tensor::zeros({out_dim}, true);
}

nn::Tensor Mlp::forward(const nn::Tensor& x) const {
  return nn::linear(nn::gelu(nn::linear(x, w1_, &b1_)), w2_, &b2_);
}

void Mlp::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".w1", w1_);
  out.emplace_back(prefix + ".b1", b1_);
  out.emplace_back(prefix + ".w2", w2_);
  out.emplace_back(prefix + ".b2", b2_);
}

Mlp Mlp::frozen_clone() const {
  Mlp c = *this;
  c.w1_ = clone_frozen(w1_);
  c.b1_ = clone_frozen(b1_);
  c.w2_ = clone_frozen(w2_);
  c.b2_ = clone_frozen(b2_);
  return c;
}

namespace {

void check_input(const DenoiseInput& in, bool needs_text) {
  if (!in.x || !in.frame_mask || !in.subject_mask)
    throw ShapeMismatch("DenoiseInput: missing buffers");
  const std::size_t expect = static_cast<std::size_t>(in.B) * in.F * in.N * kPoseDim;
  if (in.x->size() != expect) throw ShapeMismatch("DenoiseInput: x size mismatch");
  if (in.frame_mask->size() != static_cast<std::size_t>(in.B) * in.F)
    throw ShapeMismatch("DenoiseInput: frame mask size mismatch");
  if (in.subject_mask->size() != static_cast<std::size_t>(in.B) * in.N)
    throw ShapeMismatch("DenoiseInput: subject mask size mismatch");
  if (static_cast<int>(in.t.size()) != in.B) throw ShapeMismatch("DenoiseInput: t size mismatch");
  if (needs_text && static_cast<int>(in.texts.size()) != in.B)
    throw ShapeMismatch("DenoiseInput: texts size mismatch");
}

std::vector<std::uint8_t> repeat_mask(const std::vector<std::uint8_t>& mask, int B, int len, int times) {
  // (B, len) -> (B*times, len), each sample's row repeated consecutively.
  std::vector<std::uint8_t> out(static_cast<std::size_t>(B) * times * len);
  for (int b = 0; b < B; ++b)
    for (int r = 0; r < times; ++r)
      std::copy(mask.begin() + static_cast<std::int64_t>(b) * len,
                mask.begin() + static_cast<std::int64_t>(b + 1) * len,
                out.begin() + (static_cast<std::int64_t>(b) * times + r) * len);
  return out;
}

std::vector<double> temporal_pe_table(int F, int C) {
  std::vector<double> table(static_cast<std::size_t>(F) * C);
  for (int f = 0; f < F; ++f) {
    const auto e = sinusoidal_embedding(static_cast<double>(f), C);
    std::copy(e.begin(), e.end(), table.begin() + static_cast<std::int64_t>(f) * C);
  }
  return table;
}

} // namespace

Stage1Model::Stage1Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  cfg_.two_stage = false;
  const int C = cfg_.latent_dim;
  w_in_ = nn::Tensor::xavier(kPoseDim, C, rng);
  b_in_ = nn::Tensor::zeros({C}, true);
  w_out_ = nn::Tensor::xavier(C, kPoseDim, rng);
  b_out_ = nn::Tensor::zeros({kPoseDim}, true);
  t_mlp_ = Mlp(C, C, C, rng);
  w_text_ = nn::Tensor::xavier(cfg_.d_text, C, rng);
  for (int i = 0; i < cfg_.n_pose_layers; ++i)
    pose_layers_.emplace_back(C, cfg_.heads, cfg_.ff_dim, rng, false);
}

nn::Tensor Stage1Model::text_timestep_token(const DenoiseInput& in) const {
  const int C = cfg_.latent_dim;
  nn::Tensor tok = t_mlp_.forward(timestep_matrix(in.t, C));
  std::vector<std::vector<double>> text_rows;
  text_rows.reserve(in.B);
  for (const TextEmbedding& e : in.texts) {
    if (e.dim() != cfg_.d_text) throw ShapeMismatch("text embedding dim mismatch");
    text_rows.push_back(e.vec);
  }
  // Bias-free projection: the null (all-zero) text contributes exactly
  // nothing, leaving the timestep term alone.
  nn::Tensor text_tok = nn::linear(rows_tensor(text_rows), w_text_, nullptr);
  return nn::add(tok, text_tok);
}

nn::Tensor Stage1Model::run_pose_stack(nn::Tensor h, const DenoiseInput& in, Rng& rng) const {
  nn::Tensor tok = text_timestep_token(in);
  nn::Tensor tok_bf = in.F > 1 ? nn::repeat_interleave_dim0(tok, in.F) : tok;
  const auto kmask = repeat_mask(*in.subject_mask, in.B, in.N, in.F);
  for (const EncoderLayer& layer : pose_layers_)
    h = layer.forward(h, &tok_bf, kmask, nullptr, cfg_.dropout, in.train, rng);
  return h;
}

nn::Tensor Stage1Model::forward(const DenoiseInput& in, Rng& rng) const {
  check_input(in, true);
  if (in.F != 1) throw ShapeMismatch("Stage1Model: expects single-frame input (F=1)");
  const int C = cfg_.latent_dim;
  nn::Tensor x = nn::Tensor::from_data({in.B * in.F * in.N, kPoseDim}, *in.x, false);
  nn::Tensor h = nn::reshape(nn::linear(x, w_in_, &b_in_), {in.B * in.F, in.N, C});
  h = run_pose_stack(h, in, rng);
  nn::Tensor out = nn::linear(nn::reshape(h, {in.B * in.F * in.N, C}), w_out_, &b_out_);
  return nn::reshape(out, {in.B, in.F, in.N, kPoseDim});
}

NamedParams Stage1Model::named_params() const {
  NamedParams out;
  out.emplace_back("in_proj.w", w_in_);
  out.emplace_back("in_proj.b", b_in_);
  out.emplace_back("out_proj.w", w_out_);
  out.emplace_back("out_proj.b", b_out_);
  t_mlp_.collect("t_mlp", out);
  out.emplace_back("text_proj.w", w_text_);
  for (std::size_t i = 0; i < pose_layers_.size(); ++i)
    pose_layers_[i].collect("pose_layers." + std::to_string(i), out);
  return out;
}

std::vector<nn::Tensor> Stage1Model::trainable_params() const {
  std::vector<nn::Tensor> out;
  for (auto& [name, t] : named_params())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

Stage2Model insert_motion_layers(const Stage1Model& stage1, Rng& rng) {
  Stage2Model m;
  m.cfg_ = stage1.cfg_;
  m.cfg_.two_stage = true;
  const int C = m.cfg_.latent_dim;

  m.w_in_ = clone_frozen(stage1.w_in_);
  m.b_in_ = clone_frozen(stage1.b_in_);
  m.w_out_ = clone_frozen(stage1.w_out_);
  m.b_out_ = clone_frozen(stage1.b_out_);
  m.w_text_ = clone_frozen(stage1.w_text_);
  m.t_mlp_ = stage1.t_mlp_.frozen_clone();
  for (const EncoderLayer& layer : stage1.pose_layers_)
    m.pose_layers_.push_back(layer.frozen_clone());

  for (int i = 0; i < m.cfg_.n_pose_layers; ++i)
    m.motion_layers_.emplace_back(C, m.cfg_.heads, m.cfg_.ff_dim, rng, true);
  m.pc_mlp_ = Mlp(m.cfg_.max_N * kPoseDim + C, C, C, rng);
  m.pc_t_mlp_ = Mlp(C, C, C, rng);
  m.pc_null_ = nn::Tensor::randn({C}, rng, 0.02, true);
  return m;
}

nn::Tensor Stage2Model::pose_condition_token(const DenoiseInput& in) const {
  const int C = cfg_.latent_dim;
  const int flat_dim = cfg_.max_N * kPoseDim + C;
  std::vector<std::vector<double>> rows(in.B, std::vector<double>(flat_dim, 0.0));
  std::vector<double> present(static_cast<std::size_t>(in.B) * C, 0.0);
  std::vector<double> absent(static_cast<std::size_t>(in.B) * C, 1.0);

  for (int b = 0; b < in.B; ++b) {
    if (static_cast<std::size_t>(in.centers.size()) <= static_cast<std::size_t>(b) || !in.centers[b])
      continue;
    const CenterPoseCond& c = *in.centers[b];
    if (c.N > cfg_.max_N) throw ShapeMismatch("center pose has more subjects than max_N");
    if (c.pose.size() != static_cast<std::size_t>(c.N) * kPoseDim ||
        c.subject_mask.size() != static_cast<std::size_t>(c.N))
      throw ShapeMismatch("center pose buffer size mismatch");
    for (int n = 0; n < c.N; ++n) {
      if (!c.subject_mask[n]) continue;
      std::copy(c.pose.begin() + static_cast<std::int64_t>(n) * kPoseDim,
                c.pose.begin() + static_cast<std::int64_t>(n + 1) * kPoseDim,
                rows[b].begin() + static_cast<std::int64_t>(n) * kPoseDim);
    }
    // Positional embedding of the sample's own middle frame.
    int valid_F = 0;
    for (int f = 0; f < in.F; ++f)
      if ((*in.frame_mask)[static_cast<std::size_t>(b) * in.F + f]) ++valid_F;
    const auto pe = sinusoidal_embedding(static_cast<double>(valid_F / 2), C);
    std::copy(pe.begin(), pe.end(), rows[b].begin() + static_cast<std::int64_t>(cfg_.max_N) * kPoseDim);
    std::fill(present.begin() + static_cast<std::int64_t>(b) * C,
              present.begin() + static_cast<std::int64_t>(b + 1) * C, 1.0);
    std::fill(absent.begin() + static_cast<std::int64_t>(b) * C,
              absent.begin() + static_cast<std::int64_t>(b + 1) * C, 0.0);
  }

  nn::Tensor mlp_out = pc_mlp_.forward(rows_tensor(rows));
  nn::Tensor null_rows = nn::repeat_interleave_dim0(nn::reshape(pc_null_, {1, C}), in.B);
  nn::Tensor sel = nn::Tensor::from_data({in.B, C}, std::move(present), false);
  nn::Tensor inv = nn::Tensor::from_data({in.B, C}, std::move(absent), false);
  nn::Tensor core = nn::add(nn::mul(mlp_out, sel), nn::mul(null_rows, inv));
  nn::Tensor t_term = pc_t_mlp_.forward(timestep_matrix(in.t, C));
  return nn::add(core, t_term);
}

nn::Tensor Stage2Model::forward(const DenoiseInput& in, Rng& rng) const {
  check_input(in, true);
  const int C = cfg_.latent_dim;
  const int B = in.B, F = in.F, N = in.N;

  nn::Tensor text_tok = [&] {
    // Same construction as stage 1, through the frozen copies.
    nn::Tensor tok = t_mlp_.forward(timestep_matrix(in.t, C));
    std::vector<std::vector<double>> text_rows;
    text_rows.reserve(B);
    for (const TextEmbedding& e : in.texts) {
      if (e.dim() != cfg_.d_text) throw ShapeMismatch("text embedding dim mismatch");
      text_rows.push_back(e.vec);
    }
    return nn::add(tok, nn::linear(rows_tensor(text_rows), w_text_, nullptr));
  }();
  nn::Tensor pose_tok = pose_condition_token(in);

  nn::Tensor text_tok_bf = F > 1 ? nn::repeat_interleave_dim0(text_tok, F) : text_tok;
  nn::Tensor pose_tok_bn = N > 1 ? nn::repeat_interleave_dim0(pose_tok, N) : pose_tok;
  const auto pose_kmask = repeat_mask(*in.subject_mask, B, N, F);
  const auto motion_kmask = repeat_mask(*in.frame_mask, B, F, N);
  const auto pe = temporal_pe_table(F, C);

  nn::Tensor x = nn::Tensor::from_data({B * F * N, kPoseDim}, *in.x, false);
  nn::Tensor h = nn::reshape(nn::linear(x, w_in_, &b_in_), {B, F, N, C});

  for (std::size_t i = 0; i < pose_layers_.size(); ++i) {
    nn::Tensor hp = nn::reshape(h, {B * F, N, C});
    hp = pose_layers_[i].forward(hp, &text_tok_bf, pose_kmask, nullptr, cfg_.dropout, in.train, rng);
    h = nn::reshape(hp, {B, F, N, C});

    nn::Tensor hm = nn::reshape(nn::permute(h, {0, 2, 1, 3}), {B * N, F, C});
    hm = motion_layers_[i].forward(hm, &pose_tok_bn, motion_kmask, &pe, cfg_.dropout, in.train, rng);
    h = nn::permute(nn::reshape(hm, {B, N, F, C}), {0, 2, 1, 3});
  }

  nn::Tensor out = nn::linear(nn::reshape(h, {B * F * N, C}), w_out_, &b_out_);
  return nn::reshape(out, {B, F, N, kPoseDim});
}

NamedParams Stage2Model::named_params() const {
  NamedParams out;
  out.emplace_back("in_proj.w", w_in_);
  out.emplace_back("in_proj.b", b_in_);
  out.emplace_back("out_proj.w", w_out_);
  out.emplace_back("out_proj.b", b_out_);
  t_mlp_.collect("t_mlp", out);
  out.emplace_back("text_proj.w", w_text_);
  for (std::size_t i = 0; i < pose_layers_.size(); ++i)
    pose_layers_[i].collect("pose_layers." + std::to_string(i), out);
  for (std::size_t i = 0; i < motion_layers_.size(); ++i)
    motion_layers_[i].collect("motion_layers." + std::to_string(i), out);
  pc_mlp_.collect("pc_mlp", out);
  pc_t_mlp_.collect("pc_t_mlp", out);
  out.emplace_back("pc_null", pc_null_);
  return out;
}

std::vector<nn::Tensor> Stage2Model::trainable_params() const {
  std::vector<nn::Tensor> out;
  for (auto& [name, t] : named_params())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

std::vector<std::string> Stage2Model::frozen_param_names() const {
  std::vector<std::string> out;
  for (auto& [name, t] : named_params())
    if (!t.requires_grad()) out.push_back(name);
  return out;
}

MotionOnlyModel::MotionOnlyModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  cfg_.max_N = 1; // single-person by construction
  const int C = cfg_.latent_dim;
  w_in_ = nn::Tensor::xavier(kPoseDim, C, rng);
  b_in_ = nn::Tensor::zeros({C}, true);
  w_out_ = nn::Tensor::xavier(C, kPoseDim, rng);
  b_out_ = nn::Tensor::zeros({kPoseDim}, true);
  for (int i = 0; i < cfg_.n_pose_layers; ++i)
    motion_layers_.emplace_back(C, cfg_.heads, cfg_.ff_dim, rng, false);
  pc_mlp_ = Mlp(kPoseDim + C, C, C, rng);
  pc_t_mlp_ = Mlp(C, C, C, rng);
  pc_null_ = nn::Tensor::randn({C}, rng, 0.02, true);
}

nn::Tensor MotionOnlyModel::forward(const DenoiseInput& in, Rng& rng) const {
  check_input(in, false);
  if (in.N != 1) throw ShapeMismatch("MotionOnlyModel: expects single-subject input (N=1)");
  const int C = cfg_.latent_dim;
  const int B = in.B, F = in.F;

  // Same pose-condition construction as stage 2 with max_N = 1.
  const int flat_dim = kPoseDim + C;
  std::vector<std::vector<double>> rows(B, std::vector<double>(flat_dim, 0.0));
  std::vector<double> present(static_cast<std::size_t>(B) * C, 0.0);
  std::vector<double> absent(static_cast<std::size_t>(B) * C, 1.0);
  for (int b = 0; b < B; ++b) {
    if (static_cast<std::size_t>(in.centers.size()) <= static_cast<std::size_t>(b) || !in.centers[b])
      continue;
    const CenterPoseCond& c = *in.centers[b];
    if (c.N != 1 || c.pose.size() != static_cast<std::size_t>(kPoseDim))
      throw ShapeMismatch("MotionOnlyModel: center pose must hold one subject");
    if (c.subject_mask.empty() || !c.subject_mask[0]) continue;
    std::copy(c.pose.begin(), c.pose.end(), rows[b].begin());
    int valid_F = 0;
    for (int f = 0; f < F; ++f)
      if ((*in.frame_mask)[static_cast<std::size_t>(b) * F + f]) ++valid_F;
    const auto pe = sinusoidal_embedding(static_cast<double>(valid_F / 2), C);
    std::copy(pe.begin(), pe.end(), rows[b].begin() + kPoseDim);
    std::fill(present.begin() + static_cast<std::int64_t>(b) * C,
              present.begin() + static_cast<std::int64_t>(b + 1) * C, 1.0);
    std::fill(absent.begin() + static_cast<std::int64_t>(b) * C,
              absent.begin() + static_cast<std::int64_t>(b + 1) * C, 0.0);
  }
  nn::Tensor mlp_out = pc_mlp_.forward(rows_tensor(rows));
  nn::Tensor null_rows = nn::repeat_interleave_dim0(nn::reshape(pc_null_, {1, C}), B);
  nn::Tensor sel = nn::Tensor::from_data({B, C}, std::move(present), false);
  nn::Tensor inv = nn::Tensor::from_data({B, C}, std::move(absent), false);
  nn::Tensor pose_tok = nn::add(nn::add(nn::mul(mlp_out, sel), nn::mul(null_rows, inv)),
                                pc_t_mlp_.forward(timestep_matrix(in.t, C)));

  const auto motion_kmask = repeat_mask(*in.frame_mask, B, F, 1);
  const auto pe = temporal_pe_table(F, C);

  nn::Tensor x = nn::Tensor::from_data({B * F, kPoseDim}, *in.x, false);
  nn::Tensor h = nn::reshape(nn::linear(x, w_in_, &b_in_), {B, F, C});
  for (const EncoderLayer& layer : motion_layers_)
    h = layer.forward(h, &pose_tok, motion_kmask, &pe, cfg_.dropout, in.train, rng);
  nn::Tensor out = nn::linear(nn::reshape(h, {B * F, C}), w_out_, &b_out_);
  return nn::reshape(out, {B, F, 1, kPoseDim});
}

NamedParams MotionOnlyModel::named_params() const {
  NamedParams out;
  out.emplace_back("in_proj.w", w_in_);
  out.emplace_back("in_proj.b", b_in_);
  out.emplace_back("out_proj.w", w_out_);
  out.emplace_back("out_proj.b", b_out_);
  for (std::size_t i = 0; i < motion_layers_.size(); ++i)
    motion_layers_[i].collect("motion_layers." + std::to_string(i), out);
  pc_mlp_.collect("pc_mlp", out);
  pc_t_mlp_.collect("pc_t_mlp", out);
  out.emplace_back("pc_null", pc_null_);
  return out;
}

std::vector<nn::Tensor> MotionOnlyModel::trainable_params() const {
  std::vector<nn::Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr char kMagic[4] = {'G', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("checkpoint: truncated file");
  return v;
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw ParseError("checkpoint: truncated string");
  return s;
}

} // namespace

void save_checkpoint(const std::string& path, const CheckpointPayload& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("save_checkpoint: cannot open " + path);
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(payload.stage));
  write_string(out, payload.kind);
  write_string(out, payload.config_json);
  write_pod<std::uint64_t>(out, payload.tensors.size());
  for (const auto& [name, t] : payload.tensors) {
    write_string(out, name);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    write_pod<std::uint64_t>(out, t.data().size());
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.data().size() * sizeof(double)));
  }
  if (!out) throw IOError("save_checkpoint: write failed for " + path);
}

namespace {

CheckpointPayload load_checkpoint_impl(const std::string& path, bool with_tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("load_checkpoint: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion)
    throw VersionError("load_checkpoint: unsupported version " + std::to_string(version));
  CheckpointPayload payload;
  payload.stage = static_cast<int>(read_pod<std::uint32_t>(in));
  payload.kind = read_string(in);
  payload.config_json = read_string(in);
  const auto n = read_pod<std::uint64_t>(in);
  if (!with_tensors) return payload;
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = read_string(in);
    const auto rank = read_pod<std::uint32_t>(in);
    nn::Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_pod<std::uint32_t>(in));
    const auto count = read_pod<std::uint64_t>(in);
    if (static_cast<std::int64_t>(count) != nn::numel(shape))
      throw ParseError("load_checkpoint: tensor size mismatch for " + name);
    std::vector<double> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw ParseError("load_checkpoint: truncated tensor " + name);
    payload.tensors.emplace_back(name, nn::Tensor::from_data(shape, std::move(data)));
  }
  return payload;
}

void restore_params(const NamedParams& model_params, const CheckpointPayload& payload,
                    const std::string& expected_kind) {
  if (payload.kind != expected_kind)
    throw ParseError("checkpoint kind is '" + payload.kind + "', expected '" + expected_kind + "'");
  std::map<std::string, nn::Tensor> by_name;
  for (const auto& [name, t] : payload.tensors) by_name.emplace(name, t);
  for (auto [name, t] : model_params) { // handles share storage with the model
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint is missing tensor " + name);
    if (it->second.shape() != t.shape())
      throw ParseError("checkpoint tensor shape mismatch for " + name);
    t.data() = it->second.data();
  }
}

} // namespace

CheckpointPayload load_checkpoint(const std::string& path) {
  return load_checkpoint_impl(path, true);
}

CheckpointPayload peek_checkpoint(const std::string& path) {
  return load_checkpoint_impl(path, false);
}

void Stage1Model::save(const std::string& path) const {
  save_checkpoint(path, {1, "stage1", cfg_.to_json(), named_params()});
}

Stage1Model Stage1Model::load(const std::string& path) {
  const CheckpointPayload payload = load_checkpoint(path);
  const ModelConfig cfg = ModelConfig::from_json(payload.config_json);
  Rng rng(0);
  Stage1Model m(cfg, rng);
  restore_params(m.named_params(), payload, "stage1");
  return m;
}

void Stage2Model::save(const std::string& path) const {
  save_checkpoint(path, {2, "stage2", cfg_.to_json(), named_params()});
}

Stage2Model Stage2Model::load(const std::string& path) {
  const CheckpointPayload payload = load_checkpoint(path);
  ModelConfig cfg = ModelConfig::from_json(payload.config_json);
  cfg.two_stage = false;
  Rng rng(0);
  Stage1Model base(cfg, rng);
  Stage2Model m = insert_motion_layers(base, rng);
  restore_params(m.named_params(), payload, "stage2");
  return m;
}

void MotionOnlyModel::save(const std::string& path) const {
  save_checkpoint(path, {0, "motion_only", cfg_.to_json(), named_params()});
}

MotionOnlyModel MotionOnlyModel::load(const std::string& path) {
  const CheckpointPayload payload = load_checkpoint(path);
  const ModelConfig cfg = ModelConfig::from_json(payload.config_json);
  Rng rng(0);
  MotionOnlyModel m(cfg, rng);
  restore_params(m.named_params(), payload, "motion_only");
  return m;
}

} // namespace gmotion
