#ifndef GMOTION_NN_HPP
#define GMOTION_NN_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gmotion/common.hpp"

namespace gmotion::nn {

// Small reverse-mode tape over flat double buffers. Built for the model
// sizes this project trains on a CPU: single-threaded, deterministic,
// double precision so finite-difference checks are meaningful.

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad; // allocated on demand
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backfn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
  /// Xavier-uniform linear weight of shape (fan_in, fan_out).
  static Tensor xavier(int fan_in, int fan_out, Rng& rng, bool requires_grad = true);

  bool valid() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }
  int dim(int i) const { return impl_->shape[i]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad() { impl_->ensure_grad(); return impl_->grad; }
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  double scalar() const { return impl_->data.at(0); }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
  std::shared_ptr<TensorImpl> impl_;
};

// Disables tape recording in scope (sampling, evaluation).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
private:
  bool prev_;
};

bool grad_enabled();

/// Reverse pass from a scalar loss; accumulates into .grad of leaves.
void backward(const Tensor& loss);

// Elementwise and shape ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor gelu(const Tensor& a);
/// y = x * exp(log_s[0]) with gradient into both (learned temperature).
Tensor exp_scale(const Tensor& x, const Tensor& log_s);
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor slice_last_dim(const Tensor& a, int start, int len);
/// Rows of `a` (R0,...) each repeated `times` consecutive times along dim 0.
Tensor repeat_interleave_dim0(const Tensor& a, int times);

// Linear algebra.
/// x: (..., K) times W: (K, N) plus optional bias (N).
Tensor linear(const Tensor& x, const Tensor& W, const Tensor* bias = nullptr);
/// Batched matmul: a (B,M,K) x b (B,K,N), or b (B,N,K) when trans_b.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);
Tensor matmul2d(const Tensor& a, const Tensor& b, bool trans_b = false);

// Normalization and attention pieces.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor softmax_last_dim(const Tensor& x);
/// Adds -1e30 to scores at masked key positions. scores: (B*H, Sq, Sk),
/// key_mask: B*Sk bytes (1 = attend).
Tensor mask_keys(const Tensor& scores, const std::vector<std::uint8_t>& key_mask, int B, int heads);
/// Adds a constant (S*C) row table to every batch element of (B,S,C).
Tensor add_const_rows(const Tensor& x, const std::vector<double>& rows);
/// Prepends tok (B,C) as row 0 of each sequence in h (B,S,C).
Tensor prepend_token(const Tensor& h, const Tensor& tok);
Tensor drop_first_token(const Tensor& h);
Tensor dropout(const Tensor& x, double p, Rng& rng, bool train);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

// Losses and reductions.
Tensor mean_all(const Tensor& x);
/// Weighted MSE: sum(w*(pred-target)^2) / sum(w); w and target constant.
Tensor mse_masked(const Tensor& pred, const std::vector<double>& target,
                  const std::vector<double>& weights);
/// Mean cross-entropy of softmaxed rows against the diagonal: logits (B,B).
Tensor ce_diagonal(const Tensor& logits);

struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(std::vector<Tensor> params, double lr = 1e-4);
  void zero_grad();
  void step();

  std::vector<Tensor> params;
private:
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

} // namespace gmotion::nn

#endif
