#include "gmotion/nn.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <Eigen/Dense>

namespace gmotion::nn {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

thread_local bool g_no_grad = false;

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

// Result node wiring: requires_grad propagates from parents unless the
// tape is disabled, in which case no edges are recorded at all.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents,
                   std::function<void(TensorImpl&)> backfn) {
  auto impl = make_impl(std::move(shape), std::move(data));
  if (!g_no_grad) {
    bool needs = false;
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      impl->requires_grad = true;
      impl->backfn = std::move(backfn);
      for (const Tensor& p : parents) impl->parents.push_back(p.impl());
    }
  }
  return Tensor(impl);
}

void check(bool cond, const char* msg) {
  if (!cond) throw ShapeMismatch(msg);
}

} // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = make_impl(shape, std::vector<double>(numel(shape), 0.0));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = make_impl(shape, std::vector<double>(numel(shape), value));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (static_cast<std::int64_t>(data.size()) != numel(shape))
    throw ShapeMismatch("Tensor::from_data: size mismatch");
  auto impl = make_impl(std::move(shape), std::move(data));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> data(numel(shape));
  for (double& v : data) v = stddev * rand_normal(rng);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::xavier(int fan_in, int fan_out, Rng& rng, bool requires_grad) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> data(static_cast<std::size_t>(fan_in) * fan_out);
  for (double& v : data) v = rand_uniform(rng, -bound, bound);
  return from_data({fan_in, fan_out}, std::move(data), requires_grad);
}

NoGradGuard::NoGradGuard() : prev_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = prev_; }
bool grad_enabled() { return !g_no_grad; }

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeMismatch("backward: loss must be scalar");
  if (!loss.requires_grad()) return;

  // Iterative post-order over the graph; reverse order is a topo order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* parent = node->parents[next].get();
      ++next;
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backfn) node->backfn(*node);
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "add: shape mismatch");
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  auto ai = a.impl(); auto bi = b.impl();
  return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
  auto ai = a.impl(); auto bi = b.impl();
  return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  auto ai = a.impl(); auto bi = b.impl();
  return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] += self.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= c;
  auto ai = a.impl();
  return make_result(a.shape(), std::move(out), {a}, [ai, c](TensorImpl& self) {
    ai->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += c * self.grad[i];
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  auto ai = a.impl();
  return make_result(a.shape(), std::move(out), {a}, [ai](TensorImpl& self) {
    ai->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = ai->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      ai->grad[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor exp_scale(const Tensor& x, const Tensor& log_s) {
  check(log_s.size() == 1, "exp_scale: log_s must be scalar");
  const double e = std::exp(log_s.data()[0]);
  std::vector<double> out(x.data());
  for (double& v : out) v *= e;
  auto xi = x.impl(); auto si = log_s.impl();
  return make_result(x.shape(), std::move(out), {x, log_s}, [xi, si, e](TensorImpl& self) {
    if (xi->requires_grad) {
      xi->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) xi->grad[i] += self.grad[i] * e;
    }
    if (si->requires_grad) {
      si->ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * self.data[i];
      si->grad[0] += acc;
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check(numel(shape) == a.size(), "reshape: element count mismatch");
  std::vector<double> out(a.data());
  auto ai = a.impl();
  return make_result(std::move(shape), std::move(out), {a}, [ai](TensorImpl& self) {
    ai->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
  });
}

namespace {

std::vector<std::int64_t> row_major_strides(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

// out[idx] = in[perm applied to idx]; returns mapping out_index -> in_index.
std::vector<std::int64_t> permute_map(const Shape& in_shape, const std::vector<int>& perm) {
  const int rank = static_cast<int>(in_shape.size());
  Shape out_shape(rank);
  for (int i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
  const auto in_strides = row_major_strides(in_shape);
  const std::int64_t total = numel(in_shape);
  std::vector<std::int64_t> map(total);
  std::vector<int> idx(rank, 0);
  for (std::int64_t o = 0; o < total; ++o) {
    std::int64_t src = 0;
    for (int i = 0; i < rank; ++i) src += static_cast<std::int64_t>(idx[i]) * in_strides[perm[i]];
    map[o] = src;
    for (int i = rank - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

} // namespace

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  check(static_cast<int>(perm.size()) == a.rank(), "permute: rank mismatch");
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.shape()[perm[i]];
  auto map = std::make_shared<std::vector<std::int64_t>>(permute_map(a.shape(), perm));
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = a.data()[(*map)[o]];
  auto ai = a.impl();
  return make_result(std::move(out_shape), std::move(out), {a}, [ai, map](TensorImpl& self) {
    ai->ensure_grad();
    for (std::size_t o = 0; o < self.grad.size(); ++o) ai->grad[(*map)[o]] += self.grad[o];
  });
}

Tensor slice_last_dim(const Tensor& a, int start, int len) {
  const int last = a.shape().back();
  check(start >= 0 && len > 0 && start + len <= last, "slice_last_dim: out of range");
  Shape out_shape = a.shape();
  out_shape.back() = len;
  const std::int64_t rows = a.size() / last;
  std::vector<double> out(rows * len);
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy(a.data().begin() + r * last + start, a.data().begin() + r * last + start + len,
              out.begin() + r * len);
  auto ai = a.impl();
  return make_result(std::move(out_shape), std::move(out), {a},
                     [ai, start, len, last, rows](TensorImpl& self) {
                       ai->ensure_grad();
                       for (std::int64_t r = 0; r < rows; ++r)
                         for (int c = 0; c < len; ++c)
                           ai->grad[r * last + start + c] += self.grad[r * len + c];
                     });
}

Tensor repeat_interleave_dim0(const Tensor& a, int times) {
  check(times >= 1, "repeat_interleave_dim0: times must be >= 1");
  Shape out_shape = a.shape();
  out_shape[0] *= times;
  const std::int64_t row = a.size() / a.dim(0);
  const int rows_in = a.dim(0);
  std::vector<double> out(static_cast<std::size_t>(a.size()) * times);
  for (int r = 0; r < rows_in; ++r)
    for (int t = 0; t < times; ++t)
      std::copy(a.data().begin() + r * row, a.data().begin() + (r + 1) * row,
                out.begin() + (static_cast<std::int64_t>(r) * times + t) * row);
  auto ai = a.impl();
  return make_result(std::move(out_shape), std::move(out), {a},
                     [ai, times, row, rows_in](TensorImpl& self) {
                       ai->ensure_grad();
                       for (int r = 0; r < rows_in; ++r)
                         for (int t = 0; t < times; ++t) {
                           const std::int64_t base = (static_cast<std::int64_t>(r) * times + t) * row;
                           for (std::int64_t c = 0; c < row; ++c)
                             ai->grad[r * row + c] += self.grad[base + c];
                         }
                     });
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor* bias) {
  const int K = x.shape().back();
  check(W.rank() == 2 && W.dim(0) == K, "linear: weight shape mismatch");
  const int N = W.dim(1);
  const std::int64_t M = x.size() / K;
  check(!bias || (bias->rank() == 1 && bias->dim(0) == N), "linear: bias shape mismatch");

  std::vector<double> out(M * N);
  {
    ConstMatMap xm(x.data().data(), M, K);
    ConstMatMap wm(W.data().data(), K, N);
    MatMap om(out.data(), M, N);
    om.noalias() = xm * wm;
    if (bias) {
      ConstMatMap bm(bias->data().data(), 1, N);
      om.rowwise() += bm.row(0);
    }
  }
  Shape out_shape = x.shape();
  out_shape.back() = N;

  std::vector<Tensor> parents{x, W};
  if (bias) parents.push_back(*bias);
  auto xi = x.impl(); auto wi = W.impl();
  auto bi = bias ? bias->impl() : nullptr;
  return make_result(std::move(out_shape), std::move(out), std::move(parents),
                     [xi, wi, bi, M, K, N](TensorImpl& self) {
                       ConstMatMap gy(self.grad.data(), M, N);
                       if (xi->requires_grad) {
                         xi->ensure_grad();
                         MatMap gx(xi->grad.data(), M, K);
                         ConstMatMap wm(wi->data.data(), K, N);
                         gx.noalias() += gy * wm.transpose();
                       }
                       if (wi->requires_grad) {
                         wi->ensure_grad();
                         MatMap gw(wi->grad.data(), K, N);
                         ConstMatMap xm(xi->data.data(), M, K);
                         gw.noalias() += xm.transpose() * gy;
                       }
                       if (bi && bi->requires_grad) {
                         bi->ensure_grad();
                         MatMap gb(bi->grad.data(), 1, N);
                         gb.row(0) += gy.colwise().sum();
                       }
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
  check(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0), "bmm: expects (B,M,K)x(B,*,*)");
  const int B = a.dim(0), M = a.dim(1), K = a.dim(2);
  const int N = trans_b ? b.dim(1) : b.dim(2);
  check(trans_b ? b.dim(2) == K : b.dim(1) == K, "bmm: inner dimension mismatch");

  std::vector<double> out(static_cast<std::size_t>(B) * M * N);
  for (int i = 0; i < B; ++i) {
    ConstMatMap am(a.data().data() + static_cast<std::int64_t>(i) * M * K, M, K);
    MatMap om(out.data() + static_cast<std::int64_t>(i) * M * N, M, N);
    if (trans_b) {
      ConstMatMap bm(b.data().data() + static_cast<std::int64_t>(i) * N * K, N, K);
      om.noalias() = am * bm.transpose();
    } else {
      ConstMatMap bm(b.data().data() + static_cast<std::int64_t>(i) * K * N, K, N);
      om.noalias() = am * bm;
    }
  }
  auto ai = a.impl(); auto bi = b.impl();
  return make_result({B, M, N}, std::move(out), {a, b},
                     [ai, bi, B, M, K, N, trans_b](TensorImpl& self) {
                       for (int i = 0; i < B; ++i) {
                         ConstMatMap gy(self.grad.data() + static_cast<std::int64_t>(i) * M * N, M, N);
                         if (ai->requires_grad) {
                           ai->ensure_grad();
                           MatMap ga(ai->grad.data() + static_cast<std::int64_t>(i) * M * K, M, K);
                           if (trans_b) {
                             ConstMatMap bm(bi->data.data() + static_cast<std::int64_t>(i) * N * K, N, K);
                             ga.noalias() += gy * bm;
                           } else {
                             ConstMatMap bm(bi->data.data() + static_cast<std::int64_t>(i) * K * N, K, N);
                             ga.noalias() += gy * bm.transpose();
                           }
                         }
                         if (bi->requires_grad) {
                           bi->ensure_grad();
                           ConstMatMap am(ai->data.data() + static_cast<std::int64_t>(i) * M * K, M, K);
                           if (trans_b) {
                             MatMap gb(bi->grad.data() + static_cast<std::int64_t>(i) * N * K, N, K);
                             gb.noalias() += gy.transpose() * am;
                           } else {
                             MatMap gb(bi->grad.data() + static_cast<std::int64_t>(i) * K * N, K, N);
                             gb.noalias() += am.transpose() * gy;
                           }
                         }
                       }
                     });
}

Tensor matmul2d(const Tensor& a, const Tensor& b, bool trans_b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul2d: expects rank-2 tensors");
  Tensor a3 = reshape(a, {1, a.dim(0), a.dim(1)});
  Tensor b3 = reshape(b, {1, b.dim(0), b.dim(1)});
  Tensor c3 = bmm(a3, b3, trans_b);
  return reshape(c3, {c3.dim(1), c3.dim(2)});
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int C = x.shape().back();
  check(gain.size() == C && bias.size() == C, "layer_norm: gain/bias size mismatch");
  const std::int64_t rows = x.size() / C;

  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_sigma = std::make_shared<std::vector<double>>(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * C;
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += xr[c];
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= C;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[r] = inv;
    for (int c = 0; c < C; ++c) {
      const double xh = (xr[c] - mean) * inv;
      (*xhat)[r * C + c] = xh;
      out[r * C + c] = gain.data()[c] * xh + bias.data()[c];
    }
  }
  auto xi = x.impl(); auto gi = gain.impl(); auto bi = bias.impl();
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [xi, gi, bi, xhat, inv_sigma, rows, C](TensorImpl& self) {
                       for (std::int64_t r = 0; r < rows; ++r) {
                         const double* gy = self.grad.data() + r * C;
                         const double* xh = xhat->data() + r * C;
                         if (gi->requires_grad) {
                           gi->ensure_grad();
                           for (int c = 0; c < C; ++c) gi->grad[c] += gy[c] * xh[c];
                         }
                         if (bi->requires_grad) {
                           bi->ensure_grad();
                           for (int c = 0; c < C; ++c) bi->grad[c] += gy[c];
                         }
                         if (xi->requires_grad) {
                           xi->ensure_grad();
                           double mean_g = 0.0, mean_gx = 0.0;
                           for (int c = 0; c < C; ++c) {
                             const double gh = gy[c] * gi->data[c];
                             mean_g += gh;
                             mean_gx += gh * xh[c];
                           }
                           mean_g /= C;
                           mean_gx /= C;
                           const double inv = (*inv_sigma)[r];
                           for (int c = 0; c < C; ++c) {
                             const double gh = gy[c] * gi->data[c];
                             xi->grad[r * C + c] += inv * (gh - mean_g - xh[c] * mean_gx);
                           }
                         }
                       }
                     });
}

Tensor softmax_last_dim(const Tensor& x) {
  const int C = x.shape().back();
  const std::int64_t rows = x.size() / C;
  std::vector<double> out(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * C;
    double mx = xr[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      out[r * C + c] = std::exp(xr[c] - mx);
      sum += out[r * C + c];
    }
    for (int c = 0; c < C; ++c) out[r * C + c] /= sum;
  }
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [xi, rows, C](TensorImpl& self) {
    xi->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * C;
      const double* gy = self.grad.data() + r * C;
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += gy[c] * y[c];
      for (int c = 0; c < C; ++c) xi->grad[r * C + c] += (gy[c] - dot) * y[c];
    }
  });
}

Tensor mask_keys(const Tensor& scores, const std::vector<std::uint8_t>& key_mask, int B, int heads) {
  check(scores.rank() == 3 && scores.dim(0) == B * heads, "mask_keys: scores must be (B*H,Sq,Sk)");
  const int Sq = scores.dim(1);
  const int Sk = scores.dim(2);
  check(static_cast<int>(key_mask.size()) == B * Sk, "mask_keys: key mask size mismatch");

  std::vector<double> out(scores.data());
  for (int bh = 0; bh < B * heads; ++bh) {
    const int b = bh / heads;
    for (int k = 0; k < Sk; ++k) {
      if (key_mask[static_cast<std::size_t>(b) * Sk + k]) continue;
      for (int q = 0; q < Sq; ++q)
        out[(static_cast<std::int64_t>(bh) * Sq + q) * Sk + k] = -1e30;
    }
  }
  auto si = scores.impl();
  return make_result(scores.shape(), std::move(out), {scores}, [si](TensorImpl& self) {
    si->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) si->grad[i] += self.grad[i];
  });
}

Tensor add_const_rows(const Tensor& x, const std::vector<double>& rows) {
  check(x.rank() == 3, "add_const_rows: expects (B,S,C)");
  const std::int64_t per_batch = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  check(static_cast<std::int64_t>(rows.size()) == per_batch, "add_const_rows: table size mismatch");
  std::vector<double> out(x.data());
  for (int b = 0; b < x.dim(0); ++b)
    for (std::int64_t i = 0; i < per_batch; ++i) out[b * per_batch + i] += rows[i];
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [xi](TensorImpl& self) {
    xi->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xi->grad[i] += self.grad[i];
  });
}

Tensor prepend_token(const Tensor& h, const Tensor& tok) {
  check(h.rank() == 3 && tok.rank() == 2, "prepend_token: expects h (B,S,C), tok (B,C)");
  const int B = h.dim(0), S = h.dim(1), C = h.dim(2);
  check(tok.dim(0) == B && tok.dim(1) == C, "prepend_token: token shape mismatch");
  std::vector<double> out(static_cast<std::size_t>(B) * (S + 1) * C);
  for (int b = 0; b < B; ++b) {
    std::copy(tok.data().begin() + static_cast<std::int64_t>(b) * C,
              tok.data().begin() + static_cast<std::int64_t>(b + 1) * C,
              out.begin() + static_cast<std::int64_t>(b) * (S + 1) * C);
    std::copy(h.data().begin() + static_cast<std::int64_t>(b) * S * C,
              h.data().begin() + static_cast<std::int64_t>(b + 1) * S * C,
              out.begin() + static_cast<std::int64_t>(b) * (S + 1) * C + C);
  }
  auto hi = h.impl(); auto ti = tok.impl();
  return make_result({B, S + 1, C}, std::move(out), {h, tok}, [hi, ti, B, S, C](TensorImpl& self) {
    for (int b = 0; b < B; ++b) {
      const double* g = self.grad.data() + static_cast<std::int64_t>(b) * (S + 1) * C;
      if (ti->requires_grad) {
        ti->ensure_grad();
        for (int c = 0; c < C; ++c) ti->grad[static_cast<std::int64_t>(b) * C + c] += g[c];
      }
      if (hi->requires_grad) {
        hi->ensure_grad();
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(S) * C; ++i)
          hi->grad[static_cast<std::int64_t>(b) * S * C + i] += g[C + i];
      }
    }
  });
}

Tensor drop_first_token(const Tensor& h) {
  check(h.rank() == 3 && h.dim(1) >= 2, "drop_first_token: expects (B,S>=2,C)");
  const int B = h.dim(0), S = h.dim(1), C = h.dim(2);
  std::vector<double> out(static_cast<std::size_t>(B) * (S - 1) * C);
  for (int b = 0; b < B; ++b)
    std::copy(h.data().begin() + (static_cast<std::int64_t>(b) * S + 1) * C,
              h.data().begin() + static_cast<std::int64_t>(b + 1) * S * C,
              out.begin() + static_cast<std::int64_t>(b) * (S - 1) * C);
  auto hi = h.impl();
  return make_result({B, S - 1, C}, std::move(out), {h}, [hi, B, S, C](TensorImpl& self) {
    hi->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(S - 1) * C; ++i)
        hi->grad[(static_cast<std::int64_t>(b) * S + 1) * C + i] +=
            self.grad[static_cast<std::int64_t>(b) * (S - 1) * C + i];
  });
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool train) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw Error("dropout: p must be < 1");
  const double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rand_bernoulli(rng, p) ? 0.0 : 1.0 / keep;
    out[i] = x.data()[i] * (*mask)[i];
  }
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [xi, mask](TensorImpl& self) {
    xi->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xi->grad[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  check(x.rank() == 2, "l2_normalize_rows: expects (B,C)");
  const int B = x.dim(0), C = x.dim(1);
  std::vector<double> out(x.size());
  auto norms = std::make_shared<std::vector<double>>(B);
  for (int b = 0; b < B; ++b) {
    const double* xr = x.data().data() + static_cast<std::int64_t>(b) * C;
    double n = 0.0;
    for (int c = 0; c < C; ++c) n += xr[c] * xr[c];
    n = std::max(std::sqrt(n), eps);
    (*norms)[b] = n;
    for (int c = 0; c < C; ++c) out[static_cast<std::int64_t>(b) * C + c] = xr[c] / n;
  }
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [xi, norms, B, C](TensorImpl& self) {
    xi->ensure_grad();
    for (int b = 0; b < B; ++b) {
      const double* y = self.data.data() + static_cast<std::int64_t>(b) * C;
      const double* gy = self.grad.data() + static_cast<std::int64_t>(b) * C;
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += gy[c] * y[c];
      const double inv = 1.0 / (*norms)[b];
      for (int c = 0; c < C; ++c)
        xi->grad[static_cast<std::int64_t>(b) * C + c] += (gy[c] - dot * y[c]) * inv;
    }
  });
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  double sum = 0.0;
  for (double v : x.data()) sum += v;
  auto xi = x.impl();
  return make_result({1}, {sum * inv}, {x}, [xi, inv](TensorImpl& self) {
    xi->ensure_grad();
    for (double& g : xi->grad) g += self.grad[0] * inv;
  });
}

Tensor mse_masked(const Tensor& pred, const std::vector<double>& target,
                  const std::vector<double>& weights) {
  check(pred.data().size() == target.size() && target.size() == weights.size(),
        "mse_masked: size mismatch");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (wsum <= 0.0) throw Error("mse_masked: no valid positions");
  double loss = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = pred.data()[i] - target[i];
    loss += weights[i] * d * d;
  }
  loss /= wsum;
  auto pi = pred.impl();
  auto tgt = std::make_shared<std::vector<double>>(target);
  auto w = std::make_shared<std::vector<double>>(weights);
  return make_result({1}, {loss}, {pred}, [pi, tgt, w, wsum](TensorImpl& self) {
    pi->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < tgt->size(); ++i)
      pi->grad[i] += g * 2.0 * (*w)[i] * (pi->data[i] - (*tgt)[i]) / wsum;
  });
}

Tensor ce_diagonal(const Tensor& logits) {
  check(logits.rank() == 2 && logits.dim(0) == logits.dim(1), "ce_diagonal: expects square (B,B)");
  const int B = logits.dim(0);
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double loss = 0.0;
  for (int r = 0; r < B; ++r) {
    const double* xr = logits.data().data() + static_cast<std::int64_t>(r) * B;
    double mx = xr[0];
    for (int c = 1; c < B; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (int c = 0; c < B; ++c) {
      (*probs)[static_cast<std::int64_t>(r) * B + c] = std::exp(xr[c] - mx);
      sum += (*probs)[static_cast<std::int64_t>(r) * B + c];
    }
    for (int c = 0; c < B; ++c) (*probs)[static_cast<std::int64_t>(r) * B + c] /= sum;
    loss -= std::log(std::max((*probs)[static_cast<std::int64_t>(r) * B + r], 1e-300));
  }
  loss /= B;
  auto li = logits.impl();
  return make_result({1}, {loss}, {logits}, [li, probs, B](TensorImpl& self) {
    li->ensure_grad();
    const double g = self.grad[0] / B;
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < B; ++c) {
        const double p = (*probs)[static_cast<std::int64_t>(r) * B + c];
        li->grad[static_cast<std::int64_t>(r) * B + c] += g * (p - (r == c ? 1.0 : 0.0));
      }
  });
}

Adam::Adam(std::vector<Tensor> params_in, double lr_in) : lr(lr_in), params(std::move(params_in)) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(params[i].data().size(), 0.0);
    v_[i].assign(params[i].data().size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params) {
    p.impl()->ensure_grad();
    std::fill(p.impl()->grad.begin(), p.impl()->grad.end(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, t_);
  const double bc2 = 1.0 - std::pow(beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto impl = params[i].impl();
    impl->ensure_grad();
    for (std::size_t j = 0; j < impl->data.size(); ++j) {
      const double g = impl->grad[j];
      m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * g;
      v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      impl->data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

} // namespace gmotion::nn
