#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "disent/tensor.hpp"

namespace disent {

// ---------------------------------------------------------------------------
// BLAS
// ---------------------------------------------------------------------------

inline void blas_gemm_raw(bool ta, bool tb, int m, int n, int k, float alpha, const float* a,
                          int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void blas_gemm_raw(bool ta, bool tb, int m, int n, int k, double alpha, const double* a,
                          int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// C (m x n) = alpha * A' * B' + beta * C, where A' is a (m x k) view of the
// stored row-major matrix a (transposed view when ta), likewise B'.
template <typename T>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  int lda = static_cast<int>(ta ? m : k);
  int ldb = static_cast<int>(tb ? k : n);
  blas_gemm_raw(ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                lda, b, ldb, beta, c, static_cast<int>(n));
}

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(
      a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& o) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
        }
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(
      a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& o) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(
      a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& o) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->value[i];
        }
      });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  std::vector<T> out(a.value());
  for (auto& v : out) v = -v;
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {an}, [an](Node<T>& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] -= o.grad[i];
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.value());
  for (auto& v : out) v += c;
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {an}, [an](Node<T>& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.value());
  for (auto& v : out) v *= c;
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {an}, [an, c](Node<T>& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * c;
  });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  std::vector<T> out(a.value());
  for (auto& v : out) v = v > T(0) ? v : slope * v;
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {an}, [an, slope](Node<T>& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      an->grad[i] += o.grad[i] * (an->value[i] > T(0) ? T(1) : slope);
    }
  });
}

template <typename T>
Tensor<T> tanh_t(const Tensor<T>& a) {
  std::vector<T> out(a.value());
  for (auto& v : out) v = std::tanh(v);
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {an}, [an](Node<T>& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      T y = o.value[i];
      an->grad[i] += o.grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid_t(const Tensor<T>& a) {
  std::vector<T> out(a.value());
  for (auto& v : out) v = stable_sigmoid(v);
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {an}, [an](Node<T>& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      T y = o.value[i];
      an->grad[i] += o.grad[i] * y * (T(1) - y);
    }
  });
}

// log(1 + exp(x)), computed without overflow for large |x|.
template <typename T>
Tensor<T> softplus_t(const Tensor<T>& a) {
  std::vector<T> out(a.value());
  for (auto& v : out) v = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {an}, [an](Node<T>& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      an->grad[i] += o.grad[i] * stable_sigmoid(an->value[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  check_shape_valid(new_shape);
  if (shape_numel(new_shape) != a.numel()) {
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                                shape_str(new_shape));
  }
  auto an = a.node();
  return make_op<T>(std::move(new_shape), std::vector<T>(a.value()), {an}, [an](Node<T>& o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
  });
}

// First-dim slice: rows [start, start+count) of a tensor viewed as (R, rest).
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::int64_t start, std::int64_t count) {
  const Shape& s = a.shape();
  std::int64_t rows = s[0];
  if (start < 0 || count <= 0 || start + count > rows) {
    throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + ", " +
                                std::to_string(start + count) + ") out of bounds for " +
                                shape_str(s));
  }
  std::int64_t stride = a.numel() / rows;
  Shape out_shape = s;
  out_shape[0] = count;
  std::vector<T> out(a.value().begin() + start * stride,
                     a.value().begin() + (start + count) * stride);
  auto an = a.node();
  return make_op<T>(std::move(out_shape), std::move(out), {an}, [an, start, stride](Node<T>& o) {
    an->ensure_grad();
    std::int64_t off = start * stride;
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[off + i] += o.grad[i];
  });
}

// First-dim concatenation. Repeating the same tensor is allowed; its grad
// accumulates once per occurrence.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Shape& s0 = parts[0].shape();
  Shape out_shape = s0;
  out_shape[0] = 0;
  std::vector<T> out;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size() || !std::equal(s.begin() + 1, s.end(), s0.begin() + 1)) {
      throw std::invalid_argument("concat_rows: trailing dims mismatch " + shape_str(s0) + " vs " +
                                  shape_str(s));
    }
    out_shape[0] += s[0];
    out.insert(out.end(), p.value().begin(), p.value().end());
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op<T>(std::move(out_shape), std::move(out), std::vector(nodes), [nodes](Node<T>& o) {
    std::size_t off = 0;
    for (const auto& n : nodes) {
      std::size_t len = n->value.size();
      if (n->requires_grad) {
        n->ensure_grad();
        for (std::size_t i = 0; i < len; ++i) n->grad[i] += o.grad[off + i];
      }
      off += len;
    }
  });
}

template <typename T>
Tensor<T> tile_rows(const Tensor<T>& a, std::int64_t copies) {
  if (copies <= 0) throw std::invalid_argument("tile_rows: copies must be positive");
  return concat_rows(std::vector<Tensor<T>>(static_cast<std::size_t>(copies), a));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.value()) s += v;
  auto an = a.node();
  return make_op<T>({1}, {s}, {an}, [an](Node<T>& o) {
    an->ensure_grad();
    for (auto& g : an->grad) g += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.value()) s += v;
  T inv = T(1) / static_cast<T>(a.numel());
  auto an = a.node();
  return make_op<T>({1}, {s * inv}, {an}, [an, inv](Node<T>& o) {
    an->ensure_grad();
    for (auto& g : an->grad) g += o.grad[0] * inv;
  });
}

// Sum over all dims except the first: (R, ...) -> (R).
template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
  std::int64_t rows = a.shape()[0];
  std::int64_t stride = a.numel() / rows;
  std::vector<T> out(static_cast<std::size_t>(rows), T(0));
  const auto& av = a.value();
  for (std::int64_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (std::int64_t i = 0; i < stride; ++i) s += av[r * stride + i];
    out[r] = s;
  }
  auto an = a.node();
  return make_op<T>({rows}, std::move(out), {an}, [an, rows, stride](Node<T>& o) {
    an->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t i = 0; i < stride; ++i) an->grad[r * stride + i] += o.grad[r];
    }
  });
}

// Max over all dims except the first: (R, ...) -> (R). Grad routes to the
// first occurrence of the max in each row.
template <typename T>
Tensor<T> row_max(const Tensor<T>& a) {
  std::int64_t rows = a.shape()[0];
  std::int64_t stride = a.numel() / rows;
  std::vector<T> out(static_cast<std::size_t>(rows));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(rows);
  const auto& av = a.value();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < stride; ++i) {
      if (av[r * stride + i] > av[r * stride + best]) best = i;
    }
    (*argmax)[r] = best;
    out[r] = av[r * stride + best];
  }
  auto an = a.node();
  return make_op<T>({rows}, std::move(out), {an}, [an, argmax, rows, stride](Node<T>& o) {
    an->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) an->grad[r * stride + (*argmax)[r]] += o.grad[r];
  });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

// General 2-D product with optional transposes of the stored operands.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
  if (a.shape().size() != 2 || b.shape().size() != 2) {
    throw std::invalid_argument("matmul: both operands must be rank 2, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::int64_t m = ta ? a.shape()[1] : a.shape()[0];
  std::int64_t k = ta ? a.shape()[0] : a.shape()[1];
  std::int64_t k2 = tb ? b.shape()[1] : b.shape()[0];
  std::int64_t n = tb ? b.shape()[0] : b.shape()[1];
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) +
                                (ta ? "^T" : "") + " x " + shape_str(b.shape()) +
                                (tb ? "^T" : ""));
  }
  std::vector<T> out(static_cast<std::size_t>(m * n));
  gemm<T>(ta, tb, m, n, k, T(1), a.value().data(), b.value().data(), T(0), out.data());
  auto an = a.node(), bn = b.node();
  return make_op<T>({m, n}, std::move(out), {an, bn}, [an, bn, ta, tb, m, n, k](Node<T>& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      if (!ta) {
        // dA (m x k) = G * B_eff^T
        gemm<T>(false, !tb, m, k, n, T(1), o.grad.data(), bn->value.data(), T(1),
                an->grad.data());
      } else {
        // stored a is (k x m); dA_stored = B_eff * G^T
        gemm<T>(tb, true, k, m, n, T(1), bn->value.data(), o.grad.data(), T(1),
                an->grad.data());
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      if (!tb) {
        // dB (k x n) = A_eff^T * G
        gemm<T>(!ta, false, k, n, m, T(1), an->value.data(), o.grad.data(), T(1),
                bn->grad.data());
      } else {
        // stored b is (n x k); dB_stored = G^T * A_eff
        gemm<T>(true, ta, n, k, m, T(1), o.grad.data(), an->value.data(), T(1),
                bn->grad.data());
      }
    }
  });
}

// Fully connected layer: x (B, in), w (out, in), bias (out) -> (B, out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || bias.shape().size() != 1) {
    throw std::invalid_argument("linear: expected x rank 2, w rank 2, bias rank 1");
  }
  std::int64_t batch = x.shape()[0], in = x.shape()[1];
  std::int64_t out_dim = w.shape()[0];
  if (w.shape()[1] != in || bias.shape()[0] != out_dim) {
    throw std::invalid_argument("linear: dim mismatch x" + shape_str(x.shape()) + " w" +
                                shape_str(w.shape()) + " bias" + shape_str(bias.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(batch * out_dim));
  for (std::int64_t r = 0; r < batch; ++r) {
    std::copy(bias.value().begin(), bias.value().end(), out.begin() + r * out_dim);
  }
  gemm<T>(false, true, batch, out_dim, in, T(1), x.value().data(), w.value().data(), T(1),
          out.data());
  auto xn = x.node(), wn = w.node(), bn = bias.node();
  return make_op<T>({batch, out_dim}, std::move(out), {xn, wn, bn},
                    [xn, wn, bn, batch, in, out_dim](Node<T>& o) {
                      if (xn->requires_grad) {
                        xn->ensure_grad();
                        gemm<T>(false, false, batch, in, out_dim, T(1), o.grad.data(),
                                wn->value.data(), T(1), xn->grad.data());
                      }
                      if (wn->requires_grad) {
                        wn->ensure_grad();
                        gemm<T>(true, false, out_dim, in, batch, T(1), o.grad.data(),
                                xn->value.data(), T(1), wn->grad.data());
                      }
                      if (bn->requires_grad) {
                        bn->ensure_grad();
                        for (std::int64_t r = 0; r < batch; ++r) {
                          for (std::int64_t c = 0; c < out_dim; ++c) {
                            bn->grad[c] += o.grad[r * out_dim + c];
                          }
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Convolution (square kernels)
// ---------------------------------------------------------------------------

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
  std::int64_t span = in + 2 * p - k;
  if (span < 0) throw std::invalid_argument("conv: kernel larger than padded input");
  return span / s + 1;
}

// Gathers kxk patches of one (C, H, W) image into a (C*k*k, oh*ow) matrix.
// Out-of-bounds taps read as zero.
template <typename T>
void im2col(const T* in, std::int64_t c_dim, std::int64_t h, std::int64_t w, std::int64_t k,
            std::int64_t s, std::int64_t p, std::int64_t oh, std::int64_t ow, T* cols) {
  for (std::int64_t c = 0; c < c_dim; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          std::int64_t iy = oy * s - p + ki;
          if (iy < 0 || iy >= h) {
            std::fill(row + oy * ow, row + (oy + 1) * ow, T(0));
            continue;
          }
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            std::int64_t ix = ox * s - p + kj;
            row[oy * ow + ox] = (ix >= 0 && ix < w) ? in[(c * h + iy) * w + ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col: accumulates a (C*k*k, oh*ow) matrix back
// into a (C, H, W) image.
template <typename T>
void col2im_add(const T* cols, std::int64_t c_dim, std::int64_t h, std::int64_t w, std::int64_t k,
                std::int64_t s, std::int64_t p, std::int64_t oh, std::int64_t ow, T* out) {
  for (std::int64_t c = 0; c < c_dim; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          std::int64_t iy = oy * s - p + ki;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            std::int64_t ix = ox * s - p + kj;
            if (ix >= 0 && ix < w) out[(c * h + iy) * w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

// x (B, C, H, W), w (O, C, k, k), bias (O) -> (B, O, oh, ow).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::int64_t s,
                 std::int64_t p) {
  if (x.shape().size() != 4 || w.shape().size() != 4 || bias.shape().size() != 1) {
    throw std::invalid_argument("conv2d: expected x rank 4, w rank 4, bias rank 1");
  }
  std::int64_t batch = x.shape()[0], c_in = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  std::int64_t o_dim = w.shape()[0], k = w.shape()[2];
  if (w.shape()[1] != c_in || w.shape()[3] != k || bias.shape()[0] != o_dim) {
    throw std::invalid_argument("conv2d: dim mismatch x" + shape_str(x.shape()) + " w" +
                                shape_str(w.shape()));
  }
  std::int64_t oh = conv_out_dim(h, k, s, p), ow = conv_out_dim(wd, k, s, p);
  std::int64_t ckk = c_in * k * k, ohw = oh * ow;

  std::vector<T> out(static_cast<std::size_t>(batch * o_dim * ohw));
  std::vector<T> cols(static_cast<std::size_t>(ckk * ohw));
  for (std::int64_t b = 0; b < batch; ++b) {
    im2col(x.value().data() + b * c_in * h * wd, c_in, h, wd, k, s, p, oh, ow, cols.data());
    T* yb = out.data() + b * o_dim * ohw;
    for (std::int64_t o = 0; o < o_dim; ++o) {
      std::fill(yb + o * ohw, yb + (o + 1) * ohw, bias.value()[o]);
    }
    gemm<T>(false, false, o_dim, ohw, ckk, T(1), w.value().data(), cols.data(), T(1), yb);
  }

  auto xn = x.node(), wn = w.node(), bn = bias.node();
  return make_op<T>(
      {batch, o_dim, oh, ow}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, batch, c_in, h, wd, o_dim, k, s, p, oh, ow, ckk, ohw](Node<T>& o) {
        std::vector<T> cols(static_cast<std::size_t>(ckk * ohw));
        std::vector<T> dcols(static_cast<std::size_t>(ckk * ohw));
        if (wn->requires_grad) wn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* gb = o.grad.data() + b * o_dim * ohw;
          if (bn->requires_grad) {
            for (std::int64_t oc = 0; oc < o_dim; ++oc) {
              T s_acc = T(0);
              for (std::int64_t i = 0; i < ohw; ++i) s_acc += gb[oc * ohw + i];
              bn->grad[oc] += s_acc;
            }
          }
          if (wn->requires_grad) {
            im2col(xn->value.data() + b * c_in * h * wd, c_in, h, wd, k, s, p, oh, ow,
                   cols.data());
            gemm<T>(false, true, o_dim, ckk, ohw, T(1), gb, cols.data(), T(1), wn->grad.data());
          }
          if (xn->requires_grad) {
            gemm<T>(true, false, ckk, ohw, o_dim, T(1), wn->value.data(), gb, T(0), dcols.data());
            col2im_add(dcols.data(), c_in, h, wd, k, s, p, oh, ow,
                       xn->grad.data() + b * c_in * h * wd);
          }
        }
      });
}

// Transposed convolution: x (B, C, H, W), w (C, O, k, k), bias (O) ->
// (B, O, (H-1)s - 2p + k, (W-1)s - 2p + k). Adjoint of conv2d with the same
// stride and padding.
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::int64_t s, std::int64_t p) {
  if (x.shape().size() != 4 || w.shape().size() != 4 || bias.shape().size() != 1) {
    throw std::invalid_argument("conv2d_transpose: expected x rank 4, w rank 4, bias rank 1");
  }
  std::int64_t batch = x.shape()[0], c_in = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  std::int64_t o_dim = w.shape()[1], k = w.shape()[2];
  if (w.shape()[0] != c_in || w.shape()[3] != k || bias.shape()[0] != o_dim) {
    throw std::invalid_argument("conv2d_transpose: dim mismatch x" + shape_str(x.shape()) + " w" +
                                shape_str(w.shape()));
  }
  std::int64_t oh = (h - 1) * s - 2 * p + k, ow = (wd - 1) * s - 2 * p + k;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d_transpose: empty output");
  std::int64_t okk = o_dim * k * k, hw = h * wd, ohw = oh * ow;

  std::vector<T> out(static_cast<std::size_t>(batch * o_dim * ohw));
  std::vector<T> cols(static_cast<std::size_t>(okk * hw));
  for (std::int64_t b = 0; b < batch; ++b) {
    // cols = W_r^T (okk x C) * x_b (C x hw)
    gemm<T>(true, false, okk, hw, c_in, T(1), w.value().data(),
            x.value().data() + b * c_in * hw, T(0), cols.data());
    T* yb = out.data() + b * o_dim * ohw;
    for (std::int64_t oc = 0; oc < o_dim; ++oc) {
      std::fill(yb + oc * ohw, yb + (oc + 1) * ohw, bias.value()[oc]);
    }
    col2im_add(cols.data(), o_dim, oh, ow, k, s, p, h, wd, yb);
  }

  auto xn = x.node(), wn = w.node(), bn = bias.node();
  return make_op<T>(
      {batch, o_dim, oh, ow}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, batch, c_in, h, wd, o_dim, k, s, p, oh, ow, okk, hw, ohw](Node<T>& o) {
        std::vector<T> dcols(static_cast<std::size_t>(okk * hw));
        if (wn->requires_grad) wn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* gb = o.grad.data() + b * o_dim * ohw;
          if (bn->requires_grad) {
            for (std::int64_t oc = 0; oc < o_dim; ++oc) {
              T s_acc = T(0);
              for (std::int64_t i = 0; i < ohw; ++i) s_acc += gb[oc * ohw + i];
              bn->grad[oc] += s_acc;
            }
          }
          if (xn->requires_grad || wn->requires_grad) {
            im2col(gb, o_dim, oh, ow, k, s, p, h, wd, dcols.data());
            if (xn->requires_grad) {
              gemm<T>(false, false, c_in, hw, okk, T(1), wn->value.data(), dcols.data(), T(1),
                      xn->grad.data() + b * c_in * hw);
            }
            if (wn->requires_grad) {
              gemm<T>(false, true, c_in, okk, hw, T(1), xn->value.data() + b * c_in * hw,
                      dcols.data(), T(1), wn->grad.data());
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;  // population variance

  static RunningStats make(std::int64_t channels) {
    RunningStats rs;
    rs.mean.assign(static_cast<std::size_t>(channels), T(0));
    rs.var.assign(static_cast<std::size_t>(channels), T(1));
    return rs;
  }
};

// Channel-wise batch normalization over dim 1 of (B, C, ...). In training
// mode normalizes by batch statistics (population variance) and folds them
// into the running stats with the given momentum; in eval mode uses the
// running stats as constants.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    RunningStats<T>& rs, bool training, T momentum = T(0.9), T eps = T(1e-5)) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw std::invalid_argument("batchnorm: input must have rank >= 2");
  std::int64_t batch = s[0], c_dim = s[1];
  std::int64_t spatial = x.numel() / (batch * c_dim);
  if (static_cast<std::int64_t>(rs.mean.size()) != c_dim ||
      gamma.shape() != Shape{c_dim} || beta.shape() != Shape{c_dim}) {
    throw std::invalid_argument("batchnorm: channel dim mismatch for " + shape_str(s));
  }
  std::int64_t n = batch * spatial;
  const auto& xv = x.value();

  std::vector<T> mean(c_dim), inv(c_dim);
  if (training) {
    if (n < 2) throw std::invalid_argument("batchnorm: training needs at least 2 samples per channel");
    for (std::int64_t c = 0; c < c_dim; ++c) {
      T m = T(0);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* p = xv.data() + (b * c_dim + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) m += p[i];
      }
      m /= static_cast<T>(n);
      T v = T(0);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* p = xv.data() + (b * c_dim + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) {
          T d = p[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<T>(n);
      mean[c] = m;
      inv[c] = T(1) / std::sqrt(v + eps);
      rs.mean[c] = momentum * rs.mean[c] + (T(1) - momentum) * m;
      rs.var[c] = momentum * rs.var[c] + (T(1) - momentum) * v;
    }
  } else {
    for (std::int64_t c = 0; c < c_dim; ++c) {
      mean[c] = rs.mean[c];
      inv[c] = T(1) / std::sqrt(rs.var[c] + eps);
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  std::vector<T> out(xv.size());
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t c = 0; c < c_dim; ++c) {
      const T* p = xv.data() + (b * c_dim + c) * spatial;
      T* xh = xhat->data() + (b * c_dim + c) * spatial;
      T* po = out.data() + (b * c_dim + c) * spatial;
      T g = gamma.value()[c], be = beta.value()[c];
      for (std::int64_t i = 0; i < spatial; ++i) {
        xh[i] = (p[i] - mean[c]) * inv[c];
        po[i] = g * xh[i] + be;
      }
    }
  }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  auto inv_sh = std::make_shared<std::vector<T>>(std::move(inv));
  return make_op<T>(
      s, std::move(out), {xn, gn, bn},
      [xn, gn, bn, xhat, inv_sh, batch, c_dim, spatial, n, training](Node<T>& o) {
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (std::int64_t c = 0; c < c_dim; ++c) {
          T sum_g = T(0), sum_gx = T(0);
          for (std::int64_t b = 0; b < batch; ++b) {
            const T* g = o.grad.data() + (b * c_dim + c) * spatial;
            const T* xh = xhat->data() + (b * c_dim + c) * spatial;
            for (std::int64_t i = 0; i < spatial; ++i) {
              sum_g += g[i];
              sum_gx += g[i] * xh[i];
            }
          }
          if (bn->requires_grad) bn->grad[c] += sum_g;
          if (gn->requires_grad) gn->grad[c] += sum_gx;
          if (xn->requires_grad) {
            T gam = gn->value[c], ic = (*inv_sh)[c];
            if (training) {
              // dx = gamma*inv/N * (N*dy - sum(dy) - xhat*sum(dy*xhat))
              T invn = T(1) / static_cast<T>(n);
              for (std::int64_t b = 0; b < batch; ++b) {
                const T* g = o.grad.data() + (b * c_dim + c) * spatial;
                const T* xh = xhat->data() + (b * c_dim + c) * spatial;
                T* gx = xn->grad.data() + (b * c_dim + c) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) {
                  gx[i] += gam * ic * invn *
                           (static_cast<T>(n) * g[i] - sum_g - xh[i] * sum_gx);
                }
              }
            } else {
              for (std::int64_t b = 0; b < batch; ++b) {
                const T* g = o.grad.data() + (b * c_dim + c) * spatial;
                T* gx = xn->grad.data() + (b * c_dim + c) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) gx[i] += gam * ic * g[i];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Classification loss
// ---------------------------------------------------------------------------

// Mean softmax cross entropy of logits (B, C) against integer labels.
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, const std::vector<std::int64_t>& labels) {
  if (logits.shape().size() != 2) {
    throw std::invalid_argument("cross_entropy_logits: logits must be rank 2");
  }
  std::int64_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (static_cast<std::int64_t>(labels.size()) != batch) {
    throw std::invalid_argument("cross_entropy_logits: label count mismatch");
  }
  const auto& lv = logits.value();
  auto probs = std::make_shared<std::vector<T>>(lv.size());
  T total = T(0);
  for (std::int64_t b = 0; b < batch; ++b) {
    std::int64_t lab = labels[b];
    if (lab < 0 || lab >= classes) throw std::invalid_argument("cross_entropy_logits: label out of range");
    const T* row = lv.data() + b * classes;
    T m = row[0];
    for (std::int64_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
    T z = T(0);
    for (std::int64_t c = 0; c < classes; ++c) z += std::exp(row[c] - m);
    T* pr = probs->data() + b * classes;
    for (std::int64_t c = 0; c < classes; ++c) pr[c] = std::exp(row[c] - m) / z;
    total += m + std::log(z) - row[lab];
  }
  T inv_b = T(1) / static_cast<T>(batch);
  auto ln = logits.node();
  auto labs = std::make_shared<std::vector<std::int64_t>>(labels);
  return make_op<T>({1}, {total * inv_b}, {ln},
                    [ln, probs, labs, batch, classes, inv_b](Node<T>& o) {
                      ln->ensure_grad();
                      T g0 = o.grad[0] * inv_b;
                      for (std::int64_t b = 0; b < batch; ++b) {
                        const T* pr = probs->data() + b * classes;
                        T* gx = ln->grad.data() + b * classes;
                        for (std::int64_t c = 0; c < classes; ++c) {
                          gx[c] += g0 * (pr[c] - ((c == (*labs)[b]) ? T(1) : T(0)));
                        }
                      }
                    });
}

}  // namespace disent
