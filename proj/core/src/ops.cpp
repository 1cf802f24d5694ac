#include "minivla/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace minivla::core {

namespace {

constexpr double kPi = 3.14159265358979323846;

// C[M,N] += A[M,K] @ B[K,N]
void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, const double* b,
             double* c) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[K,N] += A[M,K]^T @ B[M,N]
void gemm_tn(int64_t m, int64_t n, int64_t k, const double* a, const double* b,
             double* c) {
  for (int64_t p = 0; p < m; ++p) {
    const double* arow = a + p * k;
    const double* brow = b + p * n;
    for (int64_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,K] += A[M,N] @ B[K,N]^T
void gemm_nt(int64_t m, int64_t n, int64_t k, const double* a, const double* b,
             double* c) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

Tensor unary_op(const Tensor& a, double (*fwd)(double), double (*dydx)(double)) {
  Tensor y = make_op(a.shape(), {a}, [a, dydx](Node& self) {
    double* ga = Tensor(a).grad();
    if (!ga) return;
    const double* x = a.data();
    const size_t n = self.value.size();
    for (size_t i = 0; i < n; ++i) ga[i] += dydx(x[i]) * self.grad[i];
  });
  const double* x = a.data();
  double* out = y.data();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = fwd(x[i]);
  return y;
}

}  // namespace

AttentionMask::AttentionMask(int64_t t_q, int64_t t_kv, bool allow_all)
    : t_q_(t_q), t_kv_(t_kv),
      allow_(static_cast<size_t>(t_q * t_kv), allow_all ? 1 : 0) {}

AttentionMask AttentionMask::full(int64_t t_q, int64_t t_kv) {
  return AttentionMask(t_q, t_kv, true);
}

AttentionMask AttentionMask::causal(int64_t t) {
  AttentionMask m(t, t, false);
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j <= i; ++j) m.set(i, j, true);
  return m;
}

Tensor add(const Tensor& a, const Tensor& b) {
  // Elementwise on matching shapes; a 1D (or single-row) b of width a.cols()
  // broadcasts over a's rows.
  const bool bcast = a.shape() != b.shape();
  if (bcast) {
    check(a.rank() == 2 && b.numel() == a.cols(),
          "add: b must match a or broadcast over rows");
  }
  const int64_t rows = bcast ? a.rows() : 1;
  const int64_t cols = bcast ? a.cols() : a.numel();
  Tensor y = make_op(a.shape(), {a, b}, [a, b, bcast, rows, cols](Node& self) {
    double* ga = Tensor(a).grad();
    double* gb = Tensor(b).grad();
    const double* g = self.grad.data();
    if (ga)
      for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i];
    if (gb) {
      if (bcast) {
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      } else {
        for (size_t i = 0; i < self.grad.size(); ++i) gb[i] += g[i];
      }
    }
  });
  const double* pa = a.data();
  const double* pb = b.data();
  double* out = y.data();
  if (bcast) {
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) out[r * cols + c] = pa[r * cols + c] + pb[c];
  } else {
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] + pb[i];
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor y = make_op(a.shape(), {a, b}, [a, b](Node& self) {
    double* ga = Tensor(a).grad();
    double* gb = Tensor(b).grad();
    const double* g = self.grad.data();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (ga) ga[i] += g[i];
      if (gb) gb[i] -= g[i];
    }
  });
  const double* pa = a.data();
  const double* pb = b.data();
  double* out = y.data();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] - pb[i];
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor y = make_op(a.shape(), {a, b}, [a, b](Node& self) {
    double* ga = Tensor(a).grad();
    double* gb = Tensor(b).grad();
    const double* g = self.grad.data();
    const double* pa = a.data();
    const double* pb = b.data();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (ga) ga[i] += pb[i] * g[i];
      if (gb) gb[i] += pa[i] * g[i];
    }
  });
  const double* pa = a.data();
  const double* pb = b.data();
  double* out = y.data();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] * pb[i];
  return y;
}

Tensor scale(const Tensor& a, double s) {
  Tensor y = make_op(a.shape(), {a}, [a, s](Node& self) {
    double* ga = Tensor(a).grad();
    if (!ga) return;
    const double* g = self.grad.data();
    for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += s * g[i];
  });
  const double* pa = a.data();
  double* out = y.data();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = s * pa[i];
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul: expects 2D tensors");
  check(a.cols() == b.rows(), "matmul: inner dims disagree " +
                                  shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor y = make_op({m, n}, {a, b}, [a, b, m, k, n](Node& self) {
    double* ga = Tensor(a).grad();
    double* gb = Tensor(b).grad();
    const double* g = self.grad.data();
    if (ga) gemm_nt(m, n, k, g, b.data(), ga);   // dA += dY @ B^T
    if (gb) gemm_tn(m, n, k, a.data(), g, gb);   // dB += A^T @ dY
  });
  gemm_nn(m, n, k, a.data(), b.data(), y.data());
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  check(x.rank() == 2 && w.rank() == 2, "linear: expects 2D x and w");
  check(x.cols() == w.rows(), "linear: inner dims disagree " +
                                  shape_str(x.shape()) + " @ " + shape_str(w.shape()));
  check(bias.numel() == w.cols(), "linear: bias size mismatch");
  const int64_t m = x.rows(), k = x.cols(), n = w.cols();
  Tensor y = make_op({m, n}, {x, w, bias}, [x, w, bias, m, k, n](Node& self) {
    double* gx = Tensor(x).grad();
    double* gw = Tensor(w).grad();
    double* gb = Tensor(bias).grad();
    const double* g = self.grad.data();
    if (gx) gemm_nt(m, n, k, g, w.data(), gx);
    if (gw) gemm_tn(m, n, k, x.data(), g, gw);
    if (gb)
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
  });
  double* out = y.data();
  const double* pb = bias.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[i * n + j] = pb[j];
  gemm_nn(m, n, k, x.data(), w.data(), out);
  return y;
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double x) {
        double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 - s);
      });
}

Tensor gelu(const Tensor& a) {
  return unary_op(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); },
      [](double x) {
        double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
        double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
        return cdf + x * pdf;
      });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  check(x.rank() == 2, "layer_norm: expects 2D input");
  const int64_t rows = x.rows(), cols = x.cols();
  check(gamma.numel() == cols && beta.numel() == cols,
        "layer_norm: gamma/beta size mismatch");
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * cols));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));

  Tensor y = make_op(x.shape(), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, rows, cols](Node& self) {
    double* gx = Tensor(x).grad();
    double* gg = Tensor(gamma).grad();
    double* gb = Tensor(beta).grad();
    const double* g = self.grad.data();
    const double* pg = gamma.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* grow = g + r * cols;
      const double* xh = xhat->data() + r * cols;
      if (gg || gb) {
        for (int64_t c = 0; c < cols; ++c) {
          if (gg) gg[c] += grow[c] * xh[c];
          if (gb) gb[c] += grow[c];
        }
      }
      if (gx) {
        double mean_dy = 0.0, mean_dy_xh = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
          double dyh = grow[c] * pg[c];
          mean_dy += dyh;
          mean_dy_xh += dyh * xh[c];
        }
        mean_dy /= static_cast<double>(cols);
        mean_dy_xh /= static_cast<double>(cols);
        const double is = (*inv_std)[static_cast<size_t>(r)];
        double* gxrow = gx + r * cols;
        for (int64_t c = 0; c < cols; ++c) {
          double dyh = grow[c] * pg[c];
          gxrow[c] += is * (dyh - mean_dy - xh[c] * mean_dy_xh);
        }
      }
    }
  });

  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* out = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * cols;
    double mu = 0.0;
    for (int64_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      double d = xr[c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    double* xh = xhat->data() + r * cols;
    double* yr = out + r * cols;
    for (int64_t c = 0; c < cols; ++c) {
      xh[c] = (xr[c] - mu) * is;
      yr[c] = xh[c] * pg[c] + pb[c];
    }
  }
  return y;
}

Tensor softmax_rows(const Tensor& x) {
  check(x.rank() == 2, "softmax_rows: expects 2D input");
  const int64_t rows = x.rows(), cols = x.cols();
  Tensor y = make_op(x.shape(), {x}, [x, rows, cols](Node& self) {
    double* gx = Tensor(x).grad();
    if (!gx) return;
    const double* g = self.grad.data();
    const double* p = self.value.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* pr = p + r * cols;
      const double* gr = g + r * cols;
      double dot = 0.0;
      for (int64_t c = 0; c < cols; ++c) dot += pr[c] * gr[c];
      double* gxr = gx + r * cols;
      for (int64_t c = 0; c < cols; ++c) gxr[c] += pr[c] * (gr[c] - dot);
    }
  });
  const double* px = x.data();
  double* out = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * cols;
    double* yr = out + r * cols;
    double mx = xr[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double z = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      z += yr[c];
    }
    for (int64_t c = 0; c < cols; ++c) yr[c] /= z;
  }
  return y;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows: empty input");
  const int64_t cols = parts[0].cols();
  int64_t rows = 0;
  for (const auto& p : parts) {
    check(p.rank() == 2 && p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Tensor y = make_op({rows, cols}, parts, [parts, cols](Node& self) {
    const double* g = self.grad.data();
    int64_t off = 0;
    for (const auto& p : parts) {
      double* gp = Tensor(p).grad();
      const int64_t n = p.numel();
      if (gp)
        for (int64_t i = 0; i < n; ++i) gp[i] += g[off + i];
      off += n;
    }
  });
  double* out = y.data();
  int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out + off, p.data(), static_cast<size_t>(p.numel()) * sizeof(double));
    off += p.numel();
  }
  return y;
}

Tensor slice_rows(const Tensor& x, int64_t start, int64_t len) {
  check(x.rank() == 2, "slice_rows: expects 2D input");
  check(start >= 0 && len >= 0 && start + len <= x.rows(), "slice_rows: out of range");
  const int64_t cols = x.cols();
  Tensor y = make_op({len, cols}, {x}, [x, start, cols](Node& self) {
    double* gx = Tensor(x).grad();
    if (!gx) return;
    const double* g = self.grad.data();
    const size_t n = self.grad.size();
    double* dst = gx + start * cols;
    for (size_t i = 0; i < n; ++i) dst[i] += g[i];
  });
  std::memcpy(y.data(), x.data() + start * cols,
              static_cast<size_t>(len * cols) * sizeof(double));
  return y;
}

Tensor slice_cols(const Tensor& x, int64_t start, int64_t len) {
  check(x.rank() == 2, "slice_cols: expects 2D input");
  check(start >= 0 && len >= 0 && start + len <= x.cols(), "slice_cols: out of range");
  const int64_t rows = x.rows(), cols = x.cols();
  Tensor y = make_op({rows, len}, {x}, [x, start, len, rows, cols](Node& self) {
    double* gx = Tensor(x).grad();
    if (!gx) return;
    const double* g = self.grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      double* dst = gx + r * cols + start;
      const double* src = g + r * len;
      for (int64_t c = 0; c < len; ++c) dst[c] += src[c];
    }
  });
  double* out = y.data();
  const double* px = x.data();
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(out + r * len, px + r * cols + start,
                static_cast<size_t>(len) * sizeof(double));
  return y;
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids) {
  check(table.rank() == 2, "gather_rows: expects 2D table");
  const int64_t cols = table.cols();
  const int64_t rows = static_cast<int64_t>(ids.size());
  for (int64_t id : ids)
    check(id >= 0 && id < table.rows(), "gather_rows: id out of range");
  Tensor y = make_op({rows, cols}, {table}, [table, ids, cols](Node& self) {
    double* gt = Tensor(table).grad();
    if (!gt) return;
    const double* g = self.grad.data();
    for (size_t r = 0; r < ids.size(); ++r) {
      double* dst = gt + ids[r] * cols;
      const double* src = g + static_cast<int64_t>(r) * cols;
      for (int64_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
  double* out = y.data();
  for (size_t r = 0; r < ids.size(); ++r)
    std::memcpy(out + static_cast<int64_t>(r) * cols, table.data() + ids[r] * cols,
                static_cast<size_t>(cols) * sizeof(double));
  return y;
}

Tensor reshape(const Tensor& x, Shape s) {
  check(shape_numel(s) == x.numel(), "reshape: element count mismatch");
  Tensor y = make_op(std::move(s), {x}, [x](Node& self) {
    double* gx = Tensor(x).grad();
    if (!gx) return;
    const double* g = self.grad.data();
    for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i];
  });
  std::memcpy(y.data(), x.data(), static_cast<size_t>(x.numel()) * sizeof(double));
  return y;
}

Tensor sum(const Tensor& x) {
  Tensor y = make_op({1}, {x}, [x](Node& self) {
    double* gx = Tensor(x).grad();
    if (!gx) return;
    const double g = self.grad[0];
    for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
  });
  double acc = 0.0;
  const double* px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
  y.data()[0] = acc;
  return y;
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor y = make_op({1}, {x}, [x, inv](Node& self) {
    double* gx = Tensor(x).grad();
    if (!gx) return;
    const double g = self.grad[0] * inv;
    for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
  });
  double acc = 0.0;
  const double* px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
  y.data()[0] = acc * inv;
  return y;
}

namespace {

// Shared softmax-of-scores path so the inspection helper cannot drift from
// the real forward pass. Scores for disallowed pairs are never formed.
void attention_scores_softmax(const double* q, const double* k, int64_t q_start,
                              int64_t q_len, int64_t kv_start, int64_t kv_len,
                              int64_t d, int64_t head, int64_t dh,
                              const AttentionMask* mask, double* probs) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int64_t i = 0; i < q_len; ++i) {
    const double* qrow = q + (q_start + i) * d + head * dh;
    double* prow = probs + i * kv_len;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < kv_len; ++j) {
      if (mask && !mask->allowed(i, j)) {
        prow[j] = -std::numeric_limits<double>::infinity();
        continue;
      }
      const double* krow = k + (kv_start + j) * d + head * dh;
      double s = 0.0;
      for (int64_t c = 0; c < dh; ++c) s += qrow[c] * krow[c];
      s *= inv_sqrt;
      prow[j] = s;
      mx = std::max(mx, s);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      // Query row with no visible keys contributes exactly nothing. This is
      // the defined meaning of a zero-visibility cross-attention mask.
      for (int64_t j = 0; j < kv_len; ++j) prow[j] = 0.0;
      continue;
    }
    double z = 0.0;
    for (int64_t j = 0; j < kv_len; ++j) {
      if (prow[j] == -std::numeric_limits<double>::infinity()) {
        prow[j] = 0.0;
      } else {
        prow[j] = std::exp(prow[j] - mx);
        z += prow[j];
      }
    }
    const double invz = 1.0 / z;
    for (int64_t j = 0; j < kv_len; ++j) prow[j] *= invz;
  }
}

}  // namespace

Tensor block_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const std::vector<AttentionBlock>& blocks, int n_heads) {
  check(q.rank() == 2 && k.rank() == 2 && v.rank() == 2,
        "block_attention: expects 2D q/k/v");
  const int64_t d = q.cols();
  check(k.cols() == d && v.cols() == d, "block_attention: width mismatch");
  check(n_heads > 0 && d % n_heads == 0,
        "block_attention: width not divisible by n_heads");
  const int64_t dh = d / n_heads;
  for (const auto& b : blocks) {
    check(b.q_start >= 0 && b.q_start + b.q_len <= q.rows(),
          "block_attention: query block out of range");
    check(b.kv_start >= 0 && b.kv_start + b.kv_len <= k.rows(),
          "block_attention: key block out of range");
    check(b.kv_start + b.kv_len <= v.rows(), "block_attention: value block out of range");
    if (b.mask)
      check(b.mask->t_q() == b.q_len && b.mask->t_kv() == b.kv_len,
            "block_attention: mask shape does not match block");
  }

  // Probabilities are kept for the backward pass: probs[block][head] is a
  // q_len x kv_len row-major matrix.
  auto probs = std::make_shared<std::vector<std::vector<double>>>();
  probs->reserve(blocks.size() * static_cast<size_t>(n_heads));

  Tensor y = make_op(q.shape(), {q, k, v},
                     [q, k, v, blocks, n_heads, d, dh, probs](Node& self) {
    double* gq = Tensor(q).grad();
    double* gk = Tensor(k).grad();
    double* gv = Tensor(v).grad();
    const double* g = self.grad.data();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> dp, ds;
    for (size_t bi = 0; bi < blocks.size(); ++bi) {
      const auto& blk = blocks[bi];
      dp.assign(static_cast<size_t>(blk.q_len * blk.kv_len), 0.0);
      ds.assign(static_cast<size_t>(blk.q_len * blk.kv_len), 0.0);
      for (int h = 0; h < n_heads; ++h) {
        const auto& p = (*probs)[bi * static_cast<size_t>(n_heads) + static_cast<size_t>(h)];
        // dP = dO @ V^T ; dV += P^T @ dO
        for (int64_t i = 0; i < blk.q_len; ++i) {
          const double* grow = g + (blk.q_start + i) * d + h * dh;
          double* dprow = dp.data() + i * blk.kv_len;
          for (int64_t j = 0; j < blk.kv_len; ++j) {
            const double* vrow = v.data() + (blk.kv_start + j) * d + h * dh;
            double acc = 0.0;
            for (int64_t c = 0; c < dh; ++c) acc += grow[c] * vrow[c];
            dprow[j] = acc;
          }
        }
        if (gv) {
          for (int64_t j = 0; j < blk.kv_len; ++j) {
            double* gvrow = gv + (blk.kv_start + j) * d + h * dh;
            for (int64_t i = 0; i < blk.q_len; ++i) {
              const double pij = p[static_cast<size_t>(i * blk.kv_len + j)];
              if (pij == 0.0) continue;
              const double* grow = g + (blk.q_start + i) * d + h * dh;
              for (int64_t c = 0; c < dh; ++c) gvrow[c] += pij * grow[c];
            }
          }
        }
        // dS = P * (dP - rowsum(dP * P))
        for (int64_t i = 0; i < blk.q_len; ++i) {
          const double* prow = p.data() + i * blk.kv_len;
          const double* dprow = dp.data() + i * blk.kv_len;
          double dot = 0.0;
          for (int64_t j = 0; j < blk.kv_len; ++j) dot += prow[j] * dprow[j];
          double* dsrow = ds.data() + i * blk.kv_len;
          for (int64_t j = 0; j < blk.kv_len; ++j)
            dsrow[j] = prow[j] * (dprow[j] - dot);
        }
        // dQ += dS @ K * inv_sqrt ; dK += dS^T @ Q * inv_sqrt
        if (gq) {
          for (int64_t i = 0; i < blk.q_len; ++i) {
            double* gqrow = gq + (blk.q_start + i) * d + h * dh;
            const double* dsrow = ds.data() + i * blk.kv_len;
            for (int64_t j = 0; j < blk.kv_len; ++j) {
              const double w = dsrow[j] * inv_sqrt;
              if (w == 0.0) continue;
              const double* krow = k.data() + (blk.kv_start + j) * d + h * dh;
              for (int64_t c = 0; c < dh; ++c) gqrow[c] += w * krow[c];
            }
          }
        }
        if (gk) {
          for (int64_t j = 0; j < blk.kv_len; ++j) {
            double* gkrow = gk + (blk.kv_start + j) * d + h * dh;
            for (int64_t i = 0; i < blk.q_len; ++i) {
              const double w = ds[static_cast<size_t>(i * blk.kv_len + j)] * inv_sqrt;
              if (w == 0.0) continue;
              const double* qrow = q.data() + (blk.q_start + i) * d + h * dh;
              for (int64_t c = 0; c < dh; ++c) gkrow[c] += w * qrow[c];
            }
          }
        }
      }
    }
  });

  double* out = y.data();
  std::fill(out, out + y.numel(), 0.0);
  for (const auto& blk : blocks) {
    for (int h = 0; h < n_heads; ++h) {
      std::vector<double> p(static_cast<size_t>(blk.q_len * blk.kv_len));
      attention_scores_softmax(q.data(), k.data(), blk.q_start, blk.q_len,
                               blk.kv_start, blk.kv_len, d, h, dh,
                               blk.mask.get(), p.data());
      for (int64_t i = 0; i < blk.q_len; ++i) {
        double* orow = out + (blk.q_start + i) * d + h * dh;
        const double* prow = p.data() + i * blk.kv_len;
        for (int64_t j = 0; j < blk.kv_len; ++j) {
          const double pij = prow[j];
          if (pij == 0.0) continue;
          const double* vrow = v.data() + (blk.kv_start + j) * d + h * dh;
          for (int64_t c = 0; c < dh; ++c) orow[c] += pij * vrow[c];
        }
      }
      probs->push_back(std::move(p));
    }
  }
  return y;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionMask& mask, int n_heads) {
  check(mask.t_q() == q.rows() && mask.t_kv() == k.rows(),
        "multi_head_attention: mask shape mismatch");
  AttentionBlock blk;
  blk.q_start = 0;
  blk.q_len = q.rows();
  blk.kv_start = 0;
  blk.kv_len = k.rows();
  blk.mask = std::make_shared<AttentionMask>(mask);
  return block_attention(q, k, v, {blk}, n_heads);
}

Tensor cross_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const AttentionMask& mask, int n_heads) {
  return multi_head_attention(q, k, v, mask, n_heads);
}

std::vector<double> attention_probs(const Tensor& q, const Tensor& k,
                                    const AttentionMask& mask, int n_heads) {
  const int64_t d = q.cols();
  check(d % n_heads == 0, "attention_probs: width not divisible by n_heads");
  const int64_t dh = d / n_heads;
  const int64_t tq = q.rows(), tkv = k.rows();
  std::vector<double> out(static_cast<size_t>(n_heads * tq * tkv));
  for (int h = 0; h < n_heads; ++h)
    attention_scores_softmax(q.data(), k.data(), 0, tq, 0, tkv, d, h, dh, &mask,
                             out.data() + static_cast<int64_t>(h) * tq * tkv);
  return out;
}

void attention_row_nograd(const double* q, const double* k, const double* v,
                          int64_t t, int64_t d, int n_heads, double* out) {
  const int64_t dh = d / n_heads;
  std::vector<double> p(static_cast<size_t>(t));
  for (int64_t c = 0; c < d; ++c) out[c] = 0.0;
  for (int h = 0; h < n_heads; ++h) {
    attention_scores_softmax(q, k, 0, 1, 0, t, d, h, dh, nullptr, p.data());
    double* orow = out + h * dh;
    for (int64_t j = 0; j < t; ++j) {
      const double pij = p[static_cast<size_t>(j)];
      if (pij == 0.0) continue;
      const double* vrow = v + j * d + h * dh;
      for (int64_t c = 0; c < dh; ++c) orow[c] += pij * vrow[c];
    }
  }
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse");
  const double inv = 1.0 / static_cast<double>(pred.numel());
  Tensor y = make_op({1}, {pred, target}, [pred, target, inv](Node& self) {
    double* gp = Tensor(pred).grad();
    double* gt = Tensor(target).grad();
    const double g = self.grad[0];
    const double* pp = pred.data();
    const double* pt = target.data();
    for (int64_t i = 0; i < pred.numel(); ++i) {
      const double d = 2.0 * (pp[i] - pt[i]) * inv * g;
      if (gp) gp[i] += d;
      if (gt) gt[i] -= d;
    }
  });
  double acc = 0.0;
  const double* pp = pred.data();
  const double* pt = target.data();
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = pp[i] - pt[i];
    acc += d * d;
  }
  y.data()[0] = acc * inv;
  return y;
}

namespace {
constexpr double kBceEps = 1e-12;
}

Tensor bce(const Tensor& p, const Tensor& target) {
  check_same_shape(p, target, "bce");
  const double inv = 1.0 / static_cast<double>(p.numel());
  Tensor y = make_op({1}, {p, target}, [p, target, inv](Node& self) {
    double* gp = Tensor(p).grad();
    if (!gp) return;
    const double g = self.grad[0];
    const double* pp = p.data();
    const double* pt = target.data();
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double pi = std::clamp(pp[i], kBceEps, 1.0 - kBceEps);
      gp[i] += g * inv * (-pt[i] / pi + (1.0 - pt[i]) / (1.0 - pi));
    }
  });
  double acc = 0.0;
  const double* pp = p.data();
  const double* pt = target.data();
  for (int64_t i = 0; i < p.numel(); ++i) {
    const double pi = std::clamp(pp[i], kBceEps, 1.0 - kBceEps);
    acc += -(pt[i] * std::log(pi) + (1.0 - pt[i]) * std::log(1.0 - pi));
  }
  y.data()[0] = acc * inv;
  return y;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets) {
  check(logits.rank() == 2, "softmax_cross_entropy: expects 2D logits");
  const int64_t rows = logits.rows(), cols = logits.cols();
  check(static_cast<int64_t>(targets.size()) == rows,
        "softmax_cross_entropy: one target per row required");
  for (int64_t t : targets)
    check(t >= 0 && t < cols, "softmax_cross_entropy: target out of range");
  const double inv = 1.0 / static_cast<double>(rows);
  // Cache softmax for backward.
  auto soft = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * cols));

  Tensor y = make_op({1}, {logits}, [logits, targets, soft, rows, cols, inv](Node& self) {
    double* gl = Tensor(logits).grad();
    if (!gl) return;
    const double g = self.grad[0] * inv;
    for (int64_t r = 0; r < rows; ++r) {
      const double* sr = soft->data() + r * cols;
      double* gr = gl + r * cols;
      for (int64_t c = 0; c < cols; ++c) gr[c] += g * sr[c];
      gr[targets[static_cast<size_t>(r)]] -= g;
    }
  });

  const double* pl = logits.data();
  double acc = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const double* lr = pl + r * cols;
    double mx = lr[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, lr[c]);
    double z = 0.0;
    double* sr = soft->data() + r * cols;
    for (int64_t c = 0; c < cols; ++c) {
      sr[c] = std::exp(lr[c] - mx);
      z += sr[c];
    }
    const double invz = 1.0 / z;
    for (int64_t c = 0; c < cols; ++c) sr[c] *= invz;
    acc += std::log(z) + mx - lr[targets[static_cast<size_t>(r)]];
  }
  y.data()[0] = acc * inv;
  return y;
}

void assert_finite(const Tensor& t, const std::string& what) {
  const double* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(p[i]))
      throw Error(what + ": non-finite value at flat index " + std::to_string(i));
}

}  // namespace minivla::core
