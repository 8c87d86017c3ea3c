#include "sdmim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace sdmim {
namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_vector_of(const Tensor<T>& v, std::size_t n, const char* op, const char* what) {
  if (v.ndim() != 1 || v.dim(0) != n) {
    throw ShapeError(std::string(op) + ": " + what + " must have shape [" + std::to_string(n) +
                     "], got " + shape_str(v.shape()));
  }
}

template <typename T>
std::vector<T> transpose(std::span<const T> m, std::size_t rows, std::size_t cols) {
  std::vector<T> t(m.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = m[r * cols + c];
  return t;
}

// Elementwise map with a pointwise derivative evaluated from (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, const char* op, F f, D df) {
  std::vector<T> out(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  Tensor<T> xin = x;
  return Tensor<T>::from_op(x.shape(), std::move(out), op, {x},
                            [xin, df](std::span<const T> y, std::span<const T> g) mutable {
                              if (!xin.requires_grad()) return;
                              auto gx = xin.mutable_grad();
                              auto xs = xin.data();
                              for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * df(xs[i], y[i]);
                            });
}

}  // namespace

template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kColBlock = 256;
  constexpr std::size_t kRowBlock = 4;
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t j1 = std::min(n, j0 + kColBlock);
    std::size_t i = 0;
    // Four output rows share each streamed row of B.
    for (; i + kRowBlock <= m; i += kRowBlock) {
      T* c0 = c + (i + 0) * n;
      T* c1 = c + (i + 1) * n;
      T* c2 = c + (i + 2) * n;
      T* c3 = c + (i + 3) * n;
      const T* a0 = a + (i + 0) * k;
      const T* a1 = a + (i + 1) * k;
      const T* a2 = a + (i + 2) * k;
      const T* a3 = a + (i + 3) * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n;
        const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
        for (std::size_t j = j0; j < j1; ++j) {
          const T bj = brow[j];
          c0[j] += v0 * bj;
          c1[j] += v1 * bj;
          c2[j] += v2 * bj;
          c3[j] += v3 * bj;
        }
      }
    }
    for (; i < m; ++i) {
      T* crow = c + i * n;
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n;
        const T v = arow[p];
        for (std::size_t j = j0; j < j1; ++j) crow[j] += v * brow[j];
      }
    }
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  gemm_accumulate(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor<T> ain = a, bin = b;
  return Tensor<T>::from_op({m, n}, std::move(out), "matmul", {a, b},
                            [ain, bin, m, k, n](std::span<const T>, std::span<const T> g) mutable {
                              if (ain.requires_grad()) {
                                auto bt = transpose<T>(bin.data(), k, n);
                                gemm_accumulate(g.data(), bt.data(), ain.mutable_grad().data(), m, n, k);
                              }
                              if (bin.requires_grad()) {
                                auto at = transpose<T>(ain.data(), m, k);
                                gemm_accumulate(at.data(), g.data(), bin.mutable_grad().data(), k, m, n);
                              }
                            });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor<T> ain = a, bin = b;
  return Tensor<T>::from_op(a.shape(), std::move(out), "add", {a, b},
                            [ain, bin](std::span<const T>, std::span<const T> g) mutable {
                              for (Tensor<T>* t : {&ain, &bin}) {
                                if (!t->requires_grad()) continue;
                                auto gt = t->mutable_grad();
                                for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
                              }
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor<T> ain = a, bin = b;
  return Tensor<T>::from_op(a.shape(), std::move(out), "sub", {a, b},
                            [ain, bin](std::span<const T>, std::span<const T> g) mutable {
                              if (ain.requires_grad()) {
                                auto ga = ain.mutable_grad();
                                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                              }
                              if (bin.requires_grad()) {
                                auto gb = bin.mutable_grad();
                                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                              }
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor<T> ain = a, bin = b;
  return Tensor<T>::from_op(a.shape(), std::move(out), "mul", {a, b},
                            [ain, bin](std::span<const T>, std::span<const T> g) mutable {
                              if (ain.requires_grad()) {
                                auto ga = ain.mutable_grad();
                                auto bv = bin.data();
                                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
                              }
                              if (bin.requires_grad()) {
                                auto gb = bin.mutable_grad();
                                auto av = ain.data();
                                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  Tensor<T> ain = a;
  return Tensor<T>::from_op(a.shape(), std::move(out), "scale", {a},
                            [ain, factor](std::span<const T>, std::span<const T> g) mutable {
                              auto ga = ain.mutable_grad();
                              for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
                            });
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_matrix(x, "add_row_bias");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  require_vector_of(bias, cols, "add_row_bias", "bias");
  std::vector<T> out(x.data().begin(), x.data().end());
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  Tensor<T> xin = x, bin = bias;
  return Tensor<T>::from_op(x.shape(), std::move(out), "add_row_bias", {x, bias},
                            [xin, bin, rows, cols](std::span<const T>, std::span<const T> g) mutable {
                              if (xin.requires_grad()) {
                                auto gx = xin.mutable_grad();
                                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                              }
                              if (bin.requires_grad()) {
                                auto gb = bin.mutable_grad();
                                for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                              }
                            });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  return unary(
      x, "gelu",
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(c * (v + a * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      });
}

template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, T floor) {
  return unary(
      x, "log_clamped", [floor](T v) { return std::log(std::max(v, floor)); },
      [floor](T v, T) { return v > floor ? T(1) / v : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> xin = x;
  return Tensor<T>::from_op({}, {acc}, "sum", {x},
                            [xin](std::span<const T>, std::span<const T> g) mutable {
                              auto gx = xin.mutable_grad();
                              for (auto& v : gx) v += g[0];
                            });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.size());
  Tensor<T> xin = x;
  return Tensor<T>::from_op({}, {acc * inv}, "mean", {x},
                            [xin, inv](std::span<const T>, std::span<const T> g) mutable {
                              auto gx = xin.mutable_grad();
                              for (auto& v : gx) v += g[0] * inv;
                            });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t cols = x.cols();
  const std::size_t rows = x.size() / cols;
  std::vector<T> out(x.size());
  auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xs.data() + r * cols;
    T* yr = out.data() + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T total = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      total += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= total;
  }
  Tensor<T> xin = x;
  return Tensor<T>::from_op(x.shape(), std::move(out), "softmax", {x},
                            [xin, rows, cols](std::span<const T> y, std::span<const T> g) mutable {
                              auto gx = xin.mutable_grad();
                              for (std::size_t r = 0; r < rows; ++r) {
                                const std::size_t o = r * cols;
                                T dot = T(0);
                                for (std::size_t c = 0; c < cols; ++c) dot += g[o + c] * y[o + c];
                                for (std::size_t c = 0; c < cols; ++c) gx[o + c] += y[o + c] * (g[o + c] - dot);
                              }
                            });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t cols = x.cols();
  const std::size_t rows = x.size() / cols;
  require_vector_of(gain, cols, "layer_norm", "gain");
  require_vector_of(bias, cols, "layer_norm", "bias");
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.size());
  auto xs = x.data();
  auto gs = gain.data();
  auto bs = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xs.data() + r * cols;
    T mu = T(0);
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<T>(cols);
    T var = T(0);
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(cols);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (xr[c] - mu) * rs;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gs[c] + bs[c];
    }
  }
  Tensor<T> xin = x, gin = gain, bin = bias;
  return Tensor<T>::from_op(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [xin, gin, bin, xhat, rstd, rows, cols](std::span<const T>, std::span<const T> g) mutable {
        const auto& h = *xhat;
        if (gin.requires_grad()) {
          auto gg = gin.mutable_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * h[r * cols + c];
        }
        if (bin.requires_grad()) {
          auto gb = bin.mutable_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
        }
        if (xin.requires_grad()) {
          auto gx = xin.mutable_grad();
          auto gs = gin.data();
          std::vector<T> dh(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * cols;
            T mean_dh = T(0), mean_dh_h = T(0);
            for (std::size_t c = 0; c < cols; ++c) {
              dh[c] = g[o + c] * gs[c];
              mean_dh += dh[c];
              mean_dh_h += dh[c] * h[o + c];
            }
            mean_dh /= static_cast<T>(cols);
            mean_dh_h /= static_cast<T>(cols);
            for (std::size_t c = 0; c < cols; ++c)
              gx[o + c] += (*rstd)[r] * (dh[c] - mean_dh - h[o + c] * mean_dh_h);
          }
        }
      });
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps) {
  if (!(eps > T(0))) throw ContractError("l2_normalize_rows: eps must be positive");
  const std::size_t cols = x.cols();
  const std::size_t rows = x.size() / cols;
  auto norms = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.size());
  auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = T(0);
    for (std::size_t c = 0; c < cols; ++c) ss += xs[r * cols + c] * xs[r * cols + c];
    const T n = std::sqrt(ss);
    (*norms)[r] = n;
    const T d = std::max(n, eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xs[r * cols + c] / d;
  }
  Tensor<T> xin = x;
  return Tensor<T>::from_op(x.shape(), std::move(out), "l2_normalize", {x},
                            [xin, norms, rows, cols, eps](std::span<const T> y, std::span<const T> g) mutable {
                              auto gx = xin.mutable_grad();
                              for (std::size_t r = 0; r < rows; ++r) {
                                const std::size_t o = r * cols;
                                const T n = (*norms)[r];
                                if (n > eps) {
                                  T dot = T(0);
                                  for (std::size_t c = 0; c < cols; ++c) dot += y[o + c] * g[o + c];
                                  for (std::size_t c = 0; c < cols; ++c) gx[o + c] += (g[o + c] - y[o + c] * dot) / n;
                                } else {
                                  for (std::size_t c = 0; c < cols; ++c) gx[o + c] += g[o + c] / eps;
                                }
                              }
                            });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> idx) {
  require_matrix(x, "gather_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (idx.empty()) throw ContractError("gather_rows: empty index list");
  for (auto i : idx) {
    if (i >= rows) {
      throw ContractError("gather_rows: index " + std::to_string(i) + " out of range for " +
                          std::to_string(rows) + " rows");
    }
  }
  std::vector<T> out(idx.size() * cols);
  auto xs = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(xs.data() + idx[r] * cols, cols, out.data() + r * cols);
  std::vector<std::size_t> saved(idx.begin(), idx.end());
  Tensor<T> xin = x;
  return Tensor<T>::from_op({idx.size(), cols}, std::move(out), "gather_rows", {x},
                            [xin, saved, cols](std::span<const T>, std::span<const T> g) mutable {
                              auto gx = xin.mutable_grad();
                              for (std::size_t r = 0; r < saved.size(); ++r)
                                for (std::size_t c = 0; c < cols; ++c) gx[saved[r] * cols + c] += g[r * cols + c];
                            });
}

template <typename T>
Tensor<T> replace_rows(const Tensor<T>& x, std::span<const std::uint8_t> flags, const Tensor<T>& token) {
  require_matrix(x, "replace_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (flags.size() != rows) {
    throw ShapeError("replace_rows: " + std::to_string(flags.size()) + " flags for " +
                     std::to_string(rows) + " rows");
  }
  require_vector_of(token, cols, "replace_rows", "token");
  std::vector<T> out(x.data().begin(), x.data().end());
  auto tv = token.data();
  for (std::size_t r = 0; r < rows; ++r)
    if (flags[r]) std::copy_n(tv.data(), cols, out.data() + r * cols);
  std::vector<std::uint8_t> saved(flags.begin(), flags.end());
  Tensor<T> xin = x, tin = token;
  return Tensor<T>::from_op(x.shape(), std::move(out), "replace_rows", {x, token},
                            [xin, tin, saved, rows, cols](std::span<const T>, std::span<const T> g) mutable {
                              if (xin.requires_grad()) {
                                auto gx = xin.mutable_grad();
                                for (std::size_t r = 0; r < rows; ++r)
                                  if (!saved[r])
                                    for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c];
                              }
                              if (tin.requires_grad()) {
                                auto gt = tin.mutable_grad();
                                for (std::size_t r = 0; r < rows; ++r)
                                  if (saved[r])
                                    for (std::size_t c = 0; c < cols; ++c) gt[c] += g[r * cols + c];
                              }
                            });
}

template <typename T>
Tensor<T> grouped_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const std::vector<std::vector<std::size_t>>& groups, std::size_t heads) {
  require_matrix(q, "grouped_attention");
  require_same_shape(q, k, "grouped_attention");
  require_same_shape(q, v, "grouped_attention");
  const std::size_t rows = q.dim(0), dim = q.dim(1);
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("grouped_attention: width " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  {
    std::vector<std::uint8_t> seen(rows, 0);
    std::size_t count = 0;
    for (const auto& grp : groups) {
      for (auto r : grp) {
        if (r >= rows || seen[r]) {
          throw ContractError("grouped_attention: groups must partition the " + std::to_string(rows) +
                              " rows");
        }
        seen[r] = 1;
        ++count;
      }
    }
    if (count != rows) throw ContractError("grouped_attention: groups do not cover every row");
  }
  const std::size_t hd = dim / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));

  // Attention probabilities for every (group, head), stored back to back.
  auto probs = std::make_shared<std::vector<T>>();
  std::size_t total = 0;
  for (const auto& grp : groups) total += grp.size() * grp.size() * heads;
  probs->resize(total);

  std::vector<T> out(rows * dim, T(0));
  auto qs = q.data(), ks = k.data(), vs = v.data();
  std::size_t offset = 0;
  for (const auto& grp : groups) {
    const std::size_t s = grp.size();
    for (std::size_t h = 0; h < heads; ++h) {
      T* a = probs->data() + offset;
      const std::size_t col0 = h * hd;
      for (std::size_t i = 0; i < s; ++i) {
        const T* qi = qs.data() + grp[i] * dim + col0;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < s; ++j) {
          const T* kj = ks.data() + grp[j] * dim + col0;
          T dot = T(0);
          for (std::size_t c = 0; c < hd; ++c) dot += qi[c] * kj[c];
          a[i * s + j] = dot * inv_sqrt;
          mx = std::max(mx, a[i * s + j]);
        }
        T z = T(0);
        for (std::size_t j = 0; j < s; ++j) {
          a[i * s + j] = std::exp(a[i * s + j] - mx);
          z += a[i * s + j];
        }
        T* oi = out.data() + grp[i] * dim + col0;
        for (std::size_t j = 0; j < s; ++j) {
          a[i * s + j] /= z;
          const T* vj = vs.data() + grp[j] * dim + col0;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += a[i * s + j] * vj[c];
        }
      }
      offset += s * s;
    }
  }

  Tensor<T> qin = q, kin = k, vin = v;
  auto saved_groups = std::make_shared<std::vector<std::vector<std::size_t>>>(groups);
  return Tensor<T>::from_op(
      q.shape(), std::move(out), "grouped_attention", {q, k, v},
      [qin, kin, vin, saved_groups, probs, heads, hd, dim, inv_sqrt](std::span<const T>,
                                                                   std::span<const T> g) mutable {
        auto qs = qin.data(), ks = kin.data(), vs = vin.data();
        std::span<T> gq, gk, gv;
        if (qin.requires_grad()) gq = qin.mutable_grad();
        if (kin.requires_grad()) gk = kin.mutable_grad();
        if (vin.requires_grad()) gv = vin.mutable_grad();
        std::vector<T> ds;
        std::size_t offset = 0;
        for (const auto& grp : *saved_groups) {
          const std::size_t s = grp.size();
          ds.assign(s * s, T(0));
          for (std::size_t h = 0; h < heads; ++h) {
            const T* a = probs->data() + offset;
            const std::size_t col0 = h * hd;
            for (std::size_t i = 0; i < s; ++i) {
              const T* gi = g.data() + grp[i] * dim + col0;
              // dA_ij = gO_i . V_j ; dV_j += A_ij gO_i
              T rowdot = T(0);
              for (std::size_t j = 0; j < s; ++j) {
                const T* vj = vs.data() + grp[j] * dim + col0;
                T d = T(0);
                for (std::size_t c = 0; c < hd; ++c) d += gi[c] * vj[c];
                ds[i * s + j] = d;
                rowdot += d * a[i * s + j];
                if (!gv.empty()) {
                  T* gvj = gv.data() + grp[j] * dim + col0;
                  for (std::size_t c = 0; c < hd; ++c) gvj[c] += a[i * s + j] * gi[c];
                }
              }
              for (std::size_t j = 0; j < s; ++j) ds[i * s + j] = a[i * s + j] * (ds[i * s + j] - rowdot) * inv_sqrt;
            }
            for (std::size_t i = 0; i < s; ++i) {
              const T* qi = qs.data() + grp[i] * dim + col0;
              for (std::size_t j = 0; j < s; ++j) {
                const T dij = ds[i * s + j];
                const T* kj = ks.data() + grp[j] * dim + col0;
                if (!gq.empty()) {
                  T* gqi = gq.data() + grp[i] * dim + col0;
                  for (std::size_t c = 0; c < hd; ++c) gqi[c] += dij * kj[c];
                }
                if (!gk.empty()) {
                  T* gkj = gk.data() + grp[j] * dim + col0;
                  for (std::size_t c = 0; c < hd; ++c) gkj[c] += dij * qi[c];
                }
              }
            }
            offset += s * s;
          }
        }
      });
}

#define SDMIM_INSTANTIATE_OPS(T)                                                                      \
  template void gemm_accumulate<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);    \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                   \
  template Tensor<T> add_row_bias<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                        \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                       \
  template Tensor<T> log_clamped<T>(const Tensor<T>&, T);                                             \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                        \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                       \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                               \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);          \
  template Tensor<T> l2_normalize_rows<T>(const Tensor<T>&, T);                                       \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);                  \
  template Tensor<T> replace_rows<T>(const Tensor<T>&, std::span<const std::uint8_t>, const Tensor<T>&); \
  template Tensor<T> grouped_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                          const std::vector<std::vector<std::size_t>>&, std::size_t);

SDMIM_INSTANTIATE_OPS(float)
SDMIM_INSTANTIATE_OPS(double)

#undef SDMIM_INSTANTIATE_OPS

}  // namespace sdmim
