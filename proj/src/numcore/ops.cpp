#include "meaformer/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "gemm.hpp"

namespace meaformer::nc {

using detail::gemm;

void LayerConfig::validate() const {
  if (kernel_number < 1 || kernel_size < 1 || stride < 1 || padding < 0)
    throw ContractError("invalid layer config: kn=" + std::to_string(kernel_number) +
                        " ks=" + std::to_string(kernel_size) + " st=" + std::to_string(stride) +
                        " pad=" + std::to_string(padding));
}

namespace {

// Row scratch with fixed 64-byte alignment. Eigen peels unaligned heads
// through the scalar exp, so working in place would make results depend on
// the buffer address.
template <typename T>
struct RowScratch {
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;
  using Map = Eigen::Map<Array, Eigen::Aligned64>;
  std::vector<T, Eigen::aligned_allocator<T>> a, b;
  explicit RowScratch(int64_t n) : a(static_cast<size_t>(n)), b(static_cast<size_t>(n)) {}
};

// Softmax of scale * row in place (scale > 0).
template <typename T>
void softmax_row(T* data, int64_t n, T scale, RowScratch<T>& tmp) {
  std::copy_n(data, n, tmp.a.data());
  typename RowScratch<T>::Map row(tmp.a.data(), n);
  const T mx = row.maxCoeff() * scale;
  row = (row * scale - mx).exp();
  row *= T(1) / row.sum();
  std::copy_n(tmp.a.data(), n, data);
}

// g <- scale * y * (g - <g, y>), the softmax backward on one row.
template <typename T>
void softmax_row_backward(T* g, const T* y, int64_t n, T scale, RowScratch<T>& tmp) {
  std::copy_n(g, n, tmp.a.data());
  std::copy_n(y, n, tmp.b.data());
  typename RowScratch<T>::Map gr(tmp.a.data(), n), yr(tmp.b.data(), n);
  const T dot = (gr * yr).sum();
  gr = scale * yr * (gr - dot);
  std::copy_n(tmp.a.data(), n, g);
}

// Bernoulli keep flags from a splitmix64 stream seeded by one Rng draw;
// each 64-bit word yields four 16-bit uniforms, so p is resolved to 2^-16.
inline void dropout_keep_flags(uint64_t seed, double p, uint8_t* out, size_t n) {
  const uint64_t threshold = static_cast<uint64_t>(std::llround(p * 65536.0));
  uint64_t state = seed;
  for (size_t i = 0; i < n; i += 4) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    for (size_t j = 0; j < 4 && i + j < n; ++j) out[i + j] = ((z >> (16 * j)) & 0xFFFF) >= threshold;
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
}

template <typename T>
void require_rank(const Tensor<T>& x, int rank, const char* op) {
  if (x.rank() != rank)
    throw ContractError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_string(x.shape()));
}

// Unary elementwise op with derivative expressed through input and output.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.data().size());
  std::transform(x.data().begin(), x.data().end(), out.begin(), fwd);
  return make_result<T>(x.shape(), std::move(out), {x}, [deriv](Node<T>& self) {
    T* gx = self.parent_grad(0);
    if (!gx) return;
    const auto& in = self.parents[0]->value;
    for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * deriv(in[i], self.value[i]);
  });
}

// Copies an [C,H,W] image into a [C*ks*ks, Ho*Wo] column matrix.
template <typename T>
void im2col(const T* img, int64_t c, int64_t h, int64_t w, int ks, int st, int pad, int64_t ho,
            int64_t wo, T* cols) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < ks; ++ki)
      for (int kj = 0; kj < ks; ++kj) {
        T* row = cols + ((ch * ks + ki) * ks + kj) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * st - pad + ki;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = img + (ch * h + iy) * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * st - pad + kj;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

// Adjoint of im2col: accumulates columns back into an [C,H,W] image.
template <typename T>
void col2im(const T* cols, int64_t c, int64_t h, int64_t w, int ks, int st, int pad, int64_t ho,
            int64_t wo, T* img) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < ks; ++ki)
      for (int kj = 0; kj < ks; ++kj) {
        const T* row = cols + ((ch * ks + ki) * ks + kj) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * st - pad + ki;
          if (iy < 0 || iy >= h) continue;
          T* dst = img + (ch * h + iy) * w;
          const T* src = row + oy * wo;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * st - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (size_t p = 0; p < 2; ++p)
      if (T* g = self.parent_grad(p))
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (T* g = self.parent_grad(0))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (T* g = self.parent_grad(1))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* g = self.parent_grad(0))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (T* g = self.parent_grad(1))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(a, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  return unary(a, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin()))
    throw ContractError("add_broadcast: " + shape_string(ys) + " does not broadcast to " +
                        shape_string(xs));
  const size_t inner = y.data().size();
  std::vector<T> out(x.data().begin(), x.data().end());
  const auto yd = y.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += yd[i % inner];
  return make_result<T>(xs, std::move(out), {x, y}, [inner](Node<T>& self) {
    if (T* g = self.parent_grad(0))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (T* g = self.parent_grad(1))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const auto xv = x.data();
  auto mask = std::make_shared<std::vector<uint8_t>>(xv.size());
  BranchTrace* trace = branch_trace();
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) {
    const bool on = trace ? trace->branch(xv[i] > T(0)) != 0 : xv[i] > T(0);
    (*mask)[i] = on;
    out[i] = on ? xv[i] : T(0);
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [mask](Node<T>& self) {
    if (T* g = self.parent_grad(0))
      for (size_t i = 0; i < mask->size(); ++i)
        if ((*mask)[i]) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T out) { return out * (T(1) - out); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_result<T>(Shape{}, {total}, {x}, [](Node<T>& self) {
    if (T* g = self.parent_grad(0)) {
      const size_t n = self.parents[0]->value.size();
      for (size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size()) throw ContractError("weighted_sum: size mismatch");
  T total = T(0);
  for (size_t i = 0; i < terms.size(); ++i) total += weights[i] * terms[i].item();
  return make_result<T>(Shape{}, {total}, terms, [weights](Node<T>& self) {
    for (size_t i = 0; i < weights.size(); ++i)
      if (T* g = self.parent_grad(i)) g[0] += weights[i] * self.grad[0];
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ContractError("matmul: inner dimension mismatch");
  std::vector<T> out(static_cast<size_t>(m * n));
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, n, k](Node<T>& self) {
    const T* av = self.parents[0]->value.data();
    const T* bv = self.parents[1]->value.data();
    if (T* ga = self.parent_grad(0)) gemm(false, true, m, k, n, self.grad.data(), bv, ga, true);
    if (T* gb = self.parent_grad(1)) gemm(true, false, k, n, m, av, self.grad.data(), gb, true);
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const int64_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  const int64_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k)
    throw ContractError("bmm: incompatible shapes " + shape_string(a.shape()) + " x " +
                        shape_string(b.shape()));
  std::vector<T> out(static_cast<size_t>(batch * m * n));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  for (int64_t i = 0; i < batch; ++i)
    gemm(false, transpose_b, m, n, k, av + i * m * k, bv + i * k * n, out.data() + i * m * n, false);
  return make_result<T>({batch, m, n}, std::move(out), {a, b},
                        [batch, m, n, k, transpose_b](Node<T>& self) {
                          const T* av = self.parents[0]->value.data();
                          const T* bv = self.parents[1]->value.data();
                          const T* g = self.grad.data();
                          T* ga = self.parent_grad(0);
                          T* gb = self.parent_grad(1);
                          for (int64_t i = 0; i < batch; ++i) {
                            const T* gi = g + i * m * n;
                            if (ga) gemm(false, !transpose_b, m, k, n, gi, bv + i * k * n, ga + i * m * k, true);
                            if (gb) {
                              if (transpose_b)
                                gemm(true, false, n, k, m, gi, av + i * m * k, gb + i * k * n, true);
                              else
                                gemm(true, false, k, n, m, av + i * m * k, gi, gb + i * k * n, true);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(weight, 2, "linear");
  const int64_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in_f)
    throw ContractError("linear: input " + shape_string(x.shape()) + " vs weight " +
                        shape_string(weight.shape()));
  if (bias.numel() != out_f) throw ContractError("linear: bias size mismatch");
  const int64_t rows = x.numel() / in_f;
  std::vector<T> out(static_cast<size_t>(rows * out_f));
  gemm(false, true, rows, out_f, in_f, x.data().data(), weight.data().data(), out.data(), false);
  const auto bd = bias.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < out_f; ++j) out[static_cast<size_t>(r * out_f + j)] += bd[j];
  Shape shape = x.shape();
  shape.back() = out_f;
  return make_result<T>(std::move(shape), std::move(out), {x, weight, bias},
                        [rows, in_f, out_f](Node<T>& self) {
                          const T* g = self.grad.data();
                          if (T* gx = self.parent_grad(0))
                            gemm(false, false, rows, in_f, out_f, g, self.parents[1]->value.data(), gx, true);
                          if (T* gw = self.parent_grad(1))
                            gemm(true, false, out_f, in_f, rows, g, self.parents[0]->value.data(), gw, true);
                          if (T* gb = self.parent_grad(2))
                            for (int64_t r = 0; r < rows; ++r)
                              for (int64_t j = 0; j < out_f; ++j) gb[j] += g[r * out_f + j];
                        });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const int64_t d = x.dim(-1);
  const int64_t rows = x.numel() / std::max<int64_t>(d, 1);
  std::vector<T> out(x.data().begin(), x.data().end());
  RowScratch<T> tmp(d);
  for (int64_t r = 0; r < rows; ++r) softmax_row(out.data() + r * d, d, T(1), tmp);
  return make_result<T>(x.shape(), std::move(out), {x}, [rows, d](Node<T>& self) {
    T* gx = self.parent_grad(0);
    if (!gx) return;
    std::vector<T> g(static_cast<size_t>(d));
    RowScratch<T> tmp(d);
    for (int64_t r = 0; r < rows; ++r) {
      std::copy_n(self.grad.data() + r * d, d, g.data());
      softmax_row_backward(g.data(), self.value.data() + r * d, d, T(1), tmp);
      for (int64_t j = 0; j < d; ++j) gx[r * d + j] += g[size_t(j)];
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const int64_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) throw ContractError("layer_norm: affine size mismatch");
  const int64_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<T>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  std::vector<T> out(x.data().size());
  const T* xv = x.data().data();
  const T* gv = gamma.data().data();
  const T* bv = beta.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    T mu = T(0);
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      (*xhat)[static_cast<size_t>(r * d + j)] = h;
      out[static_cast<size_t>(r * d + j)] = gv[j] * h + bv[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [rows, d, xhat, inv_std](Node<T>& self) {
                          const T* g = self.grad.data();
                          const T* gam = self.parents[1]->value.data();
                          T* gx = self.parent_grad(0);
                          T* gg = self.parent_grad(1);
                          T* gb = self.parent_grad(2);
                          for (int64_t r = 0; r < rows; ++r) {
                            const T* h = xhat->data() + r * d;
                            const T* gr = g + r * d;
                            if (gg || gb)
                              for (int64_t j = 0; j < d; ++j) {
                                if (gg) gg[j] += gr[j] * h[j];
                                if (gb) gb[j] += gr[j];
                              }
                            if (!gx) continue;
                            T sum_dh = T(0), sum_dh_h = T(0);
                            for (int64_t j = 0; j < d; ++j) {
                              const T dh = gr[j] * gam[j];
                              sum_dh += dh;
                              sum_dh_h += dh * h[j];
                            }
                            const T is = (*inv_std)[static_cast<size_t>(r)];
                            const T inv_d = T(1) / static_cast<T>(d);
                            for (int64_t j = 0; j < d; ++j) {
                              const T dh = gr[j] * gam[j];
                              gx[r * d + j] += is * (dh - inv_d * sum_dh - h[j] * inv_d * sum_dh_h);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng* rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout probability must be < 1");
  if (!rng) throw ContractError("dropout in training mode needs an Rng");
  auto mask = std::make_shared<std::vector<T>>(x.data().size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> out(x.data().size());
  const auto xd = x.data();
  std::vector<uint8_t> keep(out.size());
  dropout_keep_flags(rng->next_u64(), p, keep.data(), keep.size());
  for (size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep[i] ? keep_scale : T(0);
    out[i] = xd[i] * (*mask)[i];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [mask](Node<T>& self) {
    if (T* gx = self.parent_grad(0))
      for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * (*mask)[i];
  });
}

template <typename T>
AttentionOutput<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale,
                                        double dropout_p, Rng* rng, bool training) {
  require_rank(q, 3, "attention");
  require_rank(k, 3, "attention");
  require_rank(v, 3, "attention");
  const int64_t b = q.dim(0), lq = q.dim(1), d = q.dim(2), lk = k.dim(1), dv = v.dim(2);
  if (k.dim(0) != b || v.dim(0) != b || k.dim(2) != d || v.dim(1) != lk)
    throw ContractError("attention: incompatible q/k/v shapes");
  const bool drop = training && dropout_p > 0.0;
  if (drop && dropout_p >= 1.0) throw ContractError("dropout probability must be < 1");
  if (drop && !rng) throw ContractError("dropout in training mode needs an Rng");

  std::vector<T> probs(static_cast<size_t>(b * lq * lk));
  const T* qv = q.data().data();
  const T* kv = k.data().data();
  const T* vv = v.data().data();
  for (int64_t i = 0; i < b; ++i)
    gemm(false, true, lq, lk, d, qv + i * lq * d, kv + i * lk * d, probs.data() + i * lq * lk, false);
  RowScratch<T> tmp(lk);
  for (int64_t r = 0; r < b * lq; ++r) softmax_row(probs.data() + r * lk, lk, scale, tmp);

  auto mask = std::make_shared<std::vector<uint8_t>>();
  const T keep_scale = drop ? static_cast<T>(1.0 / (1.0 - dropout_p)) : T(1);
  std::vector<T> out(static_cast<size_t>(b * lq * dv));
  std::vector<T> dropped;
  if (drop) {
    mask->resize(probs.size());
    dropout_keep_flags(rng->next_u64(), dropout_p, mask->data(), mask->size());
    dropped.resize(static_cast<size_t>(lq * lk));
  }
  for (int64_t i = 0; i < b; ++i) {
    const T* p = probs.data() + i * lq * lk;
    if (drop) {
      const uint8_t* m = mask->data() + i * lq * lk;
      for (int64_t j = 0; j < lq * lk; ++j) dropped[size_t(j)] = p[j] * (T(m[j]) * keep_scale);
      p = dropped.data();
    }
    gemm(false, false, lq, dv, lk, p, vv + i * lk * dv, out.data() + i * lq * dv, false);
  }

  Tensor<T> weights(Shape{b, lq, lk}, std::move(probs));
  Tensor<T> output = make_result<T>(
      {b, lq, dv}, std::move(out), {q, k, v}, [weights, mask, keep_scale, scale, b, lq, lk, d, dv](Node<T>& self) {
        const T* qv = self.parents[0]->value.data();
        const T* kv = self.parents[1]->value.data();
        const T* vv = self.parents[2]->value.data();
        T* gq = self.parent_grad(0);
        T* gk = self.parent_grad(1);
        T* gv = self.parent_grad(2);
        const bool drop = !mask->empty();
        std::vector<T> pd(static_cast<size_t>(lq * lk)), dp(static_cast<size_t>(lq * lk));
        RowScratch<T> tmp(lk);
        for (int64_t i = 0; i < b; ++i) {
          const T* p = weights.data().data() + i * lq * lk;
          const uint8_t* m = drop ? mask->data() + i * lq * lk : nullptr;
          const T* g = self.grad.data() + i * lq * dv;
          if (drop)
            for (int64_t j = 0; j < lq * lk; ++j) pd[size_t(j)] = p[j] * (T(m[j]) * keep_scale);
          else
            std::copy_n(p, lq * lk, pd.data());
          if (gv) gemm(true, false, lk, dv, lq, pd.data(), g, gv + i * lk * dv, true);
          if (!gq && !gk) continue;
          gemm(false, true, lq, lk, dv, g, vv + i * lk * dv, dp.data(), false);
          for (int64_t r = 0; r < lq; ++r) {
            T* dr = dp.data() + r * lk;
            const T* pr = p + r * lk;
            if (drop)
              for (int64_t j = 0; j < lk; ++j) dr[j] *= T(m[r * lk + j]) * keep_scale;
            softmax_row_backward(dr, pr, lk, scale, tmp);
          }
          if (gq) gemm(false, false, lq, d, lk, dp.data(), kv + i * lk * d, gq + i * lq * d, true);
          if (gk) gemm(true, false, lk, d, lq, dp.data(), qv + i * lq * d, gk + i * lk * d, true);
        }
      });
  return {output, weights};
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (nc::numel(shape) != x.numel())
    throw ContractError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    if (T* gx = self.parent_grad(0))
      for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw ContractError("permute: rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) throw ContractError("permute: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  const Shape& in_shape = x.shape();
  Shape out_shape(static_cast<size_t>(r));
  std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  std::vector<int64_t> src_stride(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  // gather[i] = flat source index of output element i
  auto gather = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(x.numel()));
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  for (int64_t flat = 0; flat < x.numel(); ++flat) {
    int64_t src = 0;
    for (int i = 0; i < r; ++i) src += idx[i] * src_stride[i];
    (*gather)[static_cast<size_t>(flat)] = src;
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[static_cast<size_t>((*gather)[i])];
  return make_result<T>(std::move(out_shape), std::move(out), {x}, [gather](Node<T>& self) {
    if (T* gx = self.parent_grad(0))
      for (size_t i = 0; i < self.grad.size(); ++i) gx[(*gather)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int64_t begin, int64_t end) {
  require_rank(x, 4, "slice_channels");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (begin < 0 || end > c || begin >= end) throw ContractError("slice_channels: bad range");
  const int64_t cs = end - begin;
  std::vector<T> out(static_cast<size_t>(n * cs * hw));
  const T* xv = x.data().data();
  for (int64_t i = 0; i < n; ++i)
    std::copy(xv + (i * c + begin) * hw, xv + (i * c + end) * hw, out.data() + i * cs * hw);
  return make_result<T>({n, cs, x.dim(2), x.dim(3)}, std::move(out), {x},
                        [n, c, cs, hw, begin](Node<T>& self) {
                          T* gx = self.parent_grad(0);
                          if (!gx) return;
                          for (int64_t i = 0; i < n; ++i)
                            for (int64_t j = 0; j < cs * hw; ++j)
                              gx[(i * c + begin) * hw + j] += self.grad[static_cast<size_t>(i * cs * hw + j)];
                        });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const LayerConfig& cfg) {
  cfg.validate();
  require_rank(x, 4, "conv2d");
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ks = cfg.kernel_size, st = cfg.stride, pad = cfg.padding;
  const int64_t co = cfg.kernel_number;
  if (weight.shape() != Shape{co, ci, ks, ks})
    throw ContractError("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                        shape_string(x.shape()));
  if (bias.numel() != co) throw ContractError("conv2d: bias size mismatch");
  const int64_t ho = (h + 2 * pad - ks) / st + 1;
  const int64_t wo = (w + 2 * pad - ks) / st + 1;
  if (ho < 1 || wo < 1) throw ContractError("conv2d: input smaller than kernel");
  const int64_t kk = ci * ks * ks, ohw = ho * wo;

  auto cols = std::make_shared<std::vector<T>>(static_cast<size_t>(n * kk * ohw));
  std::vector<T> out(static_cast<size_t>(n * co * ohw));
  const T* xv = x.data().data();
  const T* wv = weight.data().data();
  const T* bv = bias.data().data();
  for (int64_t i = 0; i < n; ++i) {
    T* ci_cols = cols->data() + i * kk * ohw;
    im2col(xv + i * ci * h * w, ci, h, w, ks, st, pad, ho, wo, ci_cols);
    T* o = out.data() + i * co * ohw;
    gemm(false, false, co, ohw, kk, wv, ci_cols, o, false);
    for (int64_t c = 0; c < co; ++c)
      for (int64_t j = 0; j < ohw; ++j) o[c * ohw + j] += bv[c];
  }
  return make_result<T>({n, co, ho, wo}, std::move(out), {x, weight, bias},
                        [=](Node<T>& self) {
                          const T* g = self.grad.data();
                          T* gx = self.parent_grad(0);
                          T* gw = self.parent_grad(1);
                          T* gb = self.parent_grad(2);
                          const T* wv = self.parents[1]->value.data();
                          std::vector<T> dcols(gx ? static_cast<size_t>(kk * ohw) : 0);
                          for (int64_t i = 0; i < n; ++i) {
                            const T* gi = g + i * co * ohw;
                            const T* c_i = cols->data() + i * kk * ohw;
                            if (gw) gemm(false, true, co, kk, ohw, gi, c_i, gw, true);
                            if (gb)
                              for (int64_t c = 0; c < co; ++c)
                                for (int64_t j = 0; j < ohw; ++j) gb[c] += gi[c * ohw + j];
                            if (gx) {
                              gemm(true, false, kk, ohw, co, wv, gi, dcols.data(), false);
                              col2im(dcols.data(), ci, h, w, ks, st, pad, ho, wo, gx + i * ci * h * w);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                   const LayerConfig& cfg) {
  cfg.validate();
  require_rank(x, 4, "deconv2d");
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ks = cfg.kernel_size, st = cfg.stride, pad = cfg.padding;
  const int64_t co = cfg.kernel_number;
  if (weight.shape() != Shape{ci, co, ks, ks})
    throw ContractError("deconv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                        shape_string(x.shape()));
  if (bias.numel() != co) throw ContractError("deconv2d: bias size mismatch");
  const int64_t ho = (h - 1) * st - 2 * pad + ks;
  const int64_t wo = (w - 1) * st - 2 * pad + ks;
  if (ho < 1 || wo < 1) throw ContractError("deconv2d: empty output");
  const int64_t kk = co * ks * ks, hw = h * w, ohw = ho * wo;

  std::vector<T> out(static_cast<size_t>(n * co * ohw), T(0));
  std::vector<T> cols(static_cast<size_t>(kk * hw));
  const T* xv = x.data().data();
  const T* wv = weight.data().data();
  const T* bv = bias.data().data();
  for (int64_t i = 0; i < n; ++i) {
    gemm(true, false, kk, hw, ci, wv, xv + i * ci * hw, cols.data(), false);
    T* o = out.data() + i * co * ohw;
    col2im(cols.data(), co, ho, wo, ks, st, pad, h, w, o);
    for (int64_t c = 0; c < co; ++c)
      for (int64_t j = 0; j < ohw; ++j) o[c * ohw + j] += bv[c];
  }
  return make_result<T>({n, co, ho, wo}, std::move(out), {x, weight, bias},
                        [=](Node<T>& self) {
                          const T* g = self.grad.data();
                          T* gx = self.parent_grad(0);
                          T* gw = self.parent_grad(1);
                          T* gb = self.parent_grad(2);
                          const T* xv = self.parents[0]->value.data();
                          const T* wv = self.parents[1]->value.data();
                          std::vector<T> gcols(static_cast<size_t>(kk * hw));
                          for (int64_t i = 0; i < n; ++i) {
                            const T* gi = g + i * co * ohw;
                            if (gb)
                              for (int64_t c = 0; c < co; ++c)
                                for (int64_t j = 0; j < ohw; ++j) gb[c] += gi[c * ohw + j];
                            if (!gx && !gw) continue;
                            im2col(gi, co, ho, wo, ks, st, pad, h, w, gcols.data());
                            if (gx) gemm(false, false, ci, hw, kk, wv, gcols.data(), gx + i * ci * hw, true);
                            if (gw) gemm(false, true, ci, kk, hw, xv + i * ci * hw, gcols.data(), gw, true);
                          }
                        });
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       const Tensor<T>& running_mean, const Tensor<T>& running_var, bool training,
                       T momentum, T eps) {
  require_rank(x, 4, "batch_norm2d");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c || running_var.numel() != c)
    throw ContractError("batch_norm2d: parameter size mismatch");
  const int64_t count = n * hw;
  auto xhat = std::make_shared<std::vector<T>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
  std::vector<T> out(x.data().size());
  const T* xv = x.data().data();
  const T* gv = gamma.data().data();
  const T* bv = beta.data().data();
  auto rm = running_mean.data();
  auto rv = running_var.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (training) {
      T s = T(0);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < hw; ++j) s += xv[(i * c + ch) * hw + j];
      mu = s / static_cast<T>(count);
      T ss = T(0);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < hw; ++j) {
          const T d = xv[(i * c + ch) * hw + j] - mu;
          ss += d * d;
        }
      var = ss / static_cast<T>(count);
      const T unbiased = count > 1 ? ss / static_cast<T>(count - 1) : var;
      rm[ch] = (T(1) - momentum) * rm[ch] + momentum * mu;
      rv[ch] = (T(1) - momentum) * rv[ch] + momentum * unbiased;
    } else {
      mu = rm[ch];
      var = rv[ch];
    }
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[ch] = is;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < hw; ++j) {
        const size_t k = static_cast<size_t>((i * c + ch) * hw + j);
        const T hval = (xv[k] - mu) * is;
        (*xhat)[k] = hval;
        out[k] = gv[ch] * hval + bv[ch];
      }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [=](Node<T>& self) {
                          const T* g = self.grad.data();
                          const T* gam = self.parents[1]->value.data();
                          T* gx = self.parent_grad(0);
                          T* gg = self.parent_grad(1);
                          T* gb = self.parent_grad(2);
                          for (int64_t ch = 0; ch < c; ++ch) {
                            T sum_g = T(0), sum_gh = T(0);
                            for (int64_t i = 0; i < n; ++i)
                              for (int64_t j = 0; j < hw; ++j) {
                                const size_t k = static_cast<size_t>((i * c + ch) * hw + j);
                                sum_g += g[k];
                                sum_gh += g[k] * (*xhat)[k];
                              }
                            if (gg) gg[ch] += sum_gh;
                            if (gb) gb[ch] += sum_g;
                            if (!gx) continue;
                            const T is = (*inv_std)[ch];
                            const T inv_m = T(1) / static_cast<T>(count);
                            for (int64_t i = 0; i < n; ++i)
                              for (int64_t j = 0; j < hw; ++j) {
                                const size_t k = static_cast<size_t>((i * c + ch) * hw + j);
                                if (training)
                                  gx[k] += gam[ch] * is *
                                           (g[k] - inv_m * sum_g - (*xhat)[k] * inv_m * sum_gh);
                                else
                                  gx[k] += gam[ch] * is * g[k];
                              }
                          }
                        });
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  require_rank(x, 4, "upsample_bilinear");
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h < 1 || out_w < 1) throw ContractError("upsample_bilinear: empty output");
  struct Tap {
    int64_t i0, i1;
    T frac;
  };
  auto taps = [](int64_t in, int64_t out) {
    std::vector<Tap> t(static_cast<size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      src = std::max(src, 0.0);
      const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(src), in - 1);
      const int64_t i1 = std::min<int64_t>(i0 + 1, in - 1);
      t[static_cast<size_t>(o)] = {i0, i1, static_cast<T>(src - static_cast<double>(i0))};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(w, out_w));
  std::vector<T> out(static_cast<size_t>(nc * out_h * out_w));
  const T* xv = x.data().data();
  for (int64_t p = 0; p < nc; ++p)
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = (*ty)[oy];
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = (*tx)[ox];
        const T* plane = xv + p * h * w;
        out[static_cast<size_t>((p * out_h + oy) * out_w + ox)] =
            (T(1) - a.frac) * ((T(1) - b.frac) * plane[a.i0 * w + b.i0] + b.frac * plane[a.i0 * w + b.i1]) +
            a.frac * ((T(1) - b.frac) * plane[a.i1 * w + b.i0] + b.frac * plane[a.i1 * w + b.i1]);
      }
    }
  Shape shape{x.dim(0), x.dim(1), out_h, out_w};
  return make_result<T>(std::move(shape), std::move(out), {x}, [=](Node<T>& self) {
    T* gx = self.parent_grad(0);
    if (!gx) return;
    for (int64_t p = 0; p < nc; ++p)
      for (int64_t oy = 0; oy < out_h; ++oy) {
        const Tap& a = (*ty)[oy];
        for (int64_t ox = 0; ox < out_w; ++ox) {
          const Tap& b = (*tx)[ox];
          const T g = self.grad[static_cast<size_t>((p * out_h + oy) * out_w + ox)];
          T* plane = gx + p * h * w;
          plane[a.i0 * w + b.i0] += g * (T(1) - a.frac) * (T(1) - b.frac);
          plane[a.i0 * w + b.i1] += g * (T(1) - a.frac) * b.frac;
          plane[a.i1 * w + b.i0] += g * a.frac * (T(1) - b.frac);
          plane[a.i1 * w + b.i1] += g * a.frac * b.frac;
        }
      }
  });
}

#define MEAFORMER_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> add_broadcast(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> weighted_sum(const std::vector<Tensor<T>>&, const std::vector<T>&);          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng*, bool);                               \
  template AttentionOutput<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T, double, \
                                                   Rng*, bool);                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                          \
  template Tensor<T> slice_channels(const Tensor<T>&, int64_t, int64_t);                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const LayerConfig&); \
  template Tensor<T> deconv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const LayerConfig&); \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                  const Tensor<T>&, const Tensor<T>&, bool, T, T);                \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, int64_t, int64_t);

MEAFORMER_INSTANTIATE_OPS(float)
MEAFORMER_INSTANTIATE_OPS(double)

}  // namespace meaformer::nc
