#pragma once

#include <vector>

#include "ctxsent/tensor.hpp"

namespace ctxsent::nn {

// All reductions in this file run in fixed sequential order so that repeated
// runs are bitwise reproducible.

// Attention mask value for padded key positions (stands in for -inf without
// propagating NaN through the backward pass).
inline constexpr double kMaskValue = -1e9;

// ---- matmul -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// dA += dC * B^T, dB += A^T * dC
void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc,
                     Tensor& da, Tensor& db);

// ---- layer norm ---------------------------------------------------------

struct LayerNormCache {
    Tensor x;
    std::vector<double> mean;
    std::vector<double> rstd;
};

// Per-row normalization, then elementwise gain/bias (both length = cols).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps, LayerNormCache* cache = nullptr);

void layer_norm_backward(const LayerNormCache& cache, const Tensor& gain,
                         const Tensor& dy, Tensor& dx, Tensor& dgain, Tensor& dbias);

// ---- softmax ------------------------------------------------------------

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);

// dx += p .* (dp - rowsum(dp .* p))
void softmax_backward(const Tensor& probs, const Tensor& dprobs, Tensor& dx);

// ---- gelu ---------------------------------------------------------------

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& x);

void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

// ---- multi-head attention ----------------------------------------------

struct AttentionParams {
    int n_heads = 1;
    // Projections are [d_model, d_model]; biases length d_model.
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct AttentionGrads {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    explicit AttentionGrads(const AttentionParams& p);
};

struct AttentionCache {
    Tensor q_in, kv_in;
    Tensor q, k, v;                 // post-projection, [T, d_model]
    std::vector<Tensor> attn;       // per-head [Tq, Tk] softmax weights
    Tensor concat;                  // merged head outputs, [Tq, d_model]
};

// Scaled dot-product attention over one sequence. `key_mask[t] == 1` marks a
// real key position; masked keys get exactly zero attention weight.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in,
                            const std::vector<int>& key_mask,
                            const AttentionParams& params,
                            AttentionCache* cache = nullptr);

void multi_head_attention_backward(const AttentionCache& cache,
                                   const std::vector<int>& key_mask,
                                   const AttentionParams& params,
                                   const Tensor& d_out,
                                   Tensor& d_q_in, Tensor& d_kv_in,
                                   AttentionGrads& grads);

// ---- weighted cross entropy --------------------------------------------

struct WceResult {
    double loss = 0.0;
    Tensor dlogits;
};

// loss = (1/B) sum_i w[y_i] * (-log softmax(logits_i)[y_i])
WceResult weighted_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                 const std::vector<double>& class_weights);

// ---- AdamW --------------------------------------------------------------

struct AdamConfig {
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamState {
    Tensor m, v;
    long step = 0;
    explicit AdamState(const Tensor& like) : m(Tensor::zeros_like(like)), v(Tensor::zeros_like(like)) {}
    AdamState() = default;
};

// Decoupled weight decay; bias-corrected moments. Throws RuntimeFailure
// naming the parameter if its gradient is non-finite.
void adamw_step(Parameter& p, AdamState& state, const AdamConfig& cfg);

} // namespace ctxsent::nn
