#pragma once

#include <memory>
#include <vector>

#include "minivla/core/tensor.hpp"

namespace minivla::core {

// ---- attention masking ------------------------------------------------
// Explicit allow-matrix: allow(i, j) means query row i may attend key row j.
// Disallowed pairs receive exactly zero attention weight.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(int64_t t_q, int64_t t_kv, bool allow_all);

  static AttentionMask full(int64_t t_q, int64_t t_kv);
  static AttentionMask causal(int64_t t);

  int64_t t_q() const { return t_q_; }
  int64_t t_kv() const { return t_kv_; }
  bool allowed(int64_t i, int64_t j) const {
    return allow_[static_cast<size_t>(i * t_kv_ + j)] != 0;
  }
  void set(int64_t i, int64_t j, bool v) {
    allow_[static_cast<size_t>(i * t_kv_ + j)] = v ? 1 : 0;
  }

 private:
  int64_t t_q_ = 0, t_kv_ = 0;
  std::vector<uint8_t> allow_;
};

// One attention instance inside row-stacked q/k/v matrices. Rows
// [q_start, q_start+q_len) of q attend rows [kv_start, kv_start+kv_len) of
// k/v. mask == nullptr means full visibility.
struct AttentionBlock {
  int64_t q_start = 0, q_len = 0;
  int64_t kv_start = 0, kv_len = 0;
  std::shared_ptr<const AttentionMask> mask;
};

// ---- basic ops ---------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or b broadcast over rows
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);                       // [M,K]@[K,N]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);   // x@w + bias
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int64_t start, int64_t len);
Tensor slice_cols(const Tensor& x, int64_t start, int64_t len);
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids);
Tensor reshape(const Tensor& x, Shape s);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- attention ----------------------------------------------------------
// Scaled dot-product attention over row blocks; q/k/v carry already-projected
// features of width D, D divisible by n_heads.
Tensor block_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const std::vector<AttentionBlock>& blocks, int n_heads);

// Single-block self attention over full rows of q/k/v.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionMask& mask, int n_heads);

// Queries attend a distinct key/value stream.
Tensor cross_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const AttentionMask& mask, int n_heads);

// Attention probabilities for inspection, laid out [n_heads*t_q, t_kv].
// Shares the forward softmax path; never recorded on the tape.
std::vector<double> attention_probs(const Tensor& q, const Tensor& k,
                                    const AttentionMask& mask, int n_heads);

// One query row against t cached key/value rows, all plain buffers, full
// visibility. Shares the forward math with block_attention bit for bit; used
// by incremental decoding.
void attention_row_nograd(const double* q, const double* k, const double* v,
                          int64_t t, int64_t d, int n_heads, double* out);

// ---- losses ----------------------------------------------------------
Tensor mse(const Tensor& pred, const Tensor& target);       // mean over elements
Tensor bce(const Tensor& p, const Tensor& target);          // probabilities in [0,1]
// Mean over rows of -log softmax(logits)[target].
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets);

void assert_finite(const Tensor& t, const std::string& what);

}  // namespace minivla::core
