#include "ctxsent/nn.hpp"

#include <cmath>
#include <string>

#include "ctxsent/error.hpp"

namespace ctxsent::nn {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw ValidationError("matmul: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
    int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c(m, n);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            double av = a(i, p);
            for (int j = 0; j < n; ++j) c(i, j) += av * b(p, j);
        }
    return c;
}

void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc,
                     Tensor& da, Tensor& db) {
    int m = a.rows(), k = a.cols(), n = b.cols();
    if (dc.rows() != m || dc.cols() != n)
        throw ValidationError("matmul_backward: dC shape mismatch");
    // dA += dC * B^T
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += dc(i, j) * b(p, j);
            da(i, p) += s;
        }
    // dB += A^T * dC
    for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += a(i, p) * dc(i, j);
            db(p, j) += s;
        }
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps, LayerNormCache* cache) {
    if (eps <= 0.0) throw ValidationError("layer_norm: eps must be positive");
    int r = x.rows(), c = x.cols();
    if (gain.size() != c || bias.size() != c)
        throw ValidationError("layer_norm: gain/bias length mismatch");
    Tensor y(r, c);
    std::vector<double> means(r), rstds(r);
    for (int i = 0; i < r; ++i) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += x(i, j);
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            double d = x(i, j) - mean;
            var += d * d;
        }
        var /= c;
        double rstd = 1.0 / std::sqrt(var + eps);
        means[i] = mean;
        rstds[i] = rstd;
        for (int j = 0; j < c; ++j)
            y(i, j) = (x(i, j) - mean) * rstd * gain[j] + bias[j];
    }
    if (cache) {
        cache->x = x;
        cache->mean = std::move(means);
        cache->rstd = std::move(rstds);
    }
    return y;
}

void layer_norm_backward(const LayerNormCache& cache, const Tensor& gain,
                         const Tensor& dy, Tensor& dx, Tensor& dgain, Tensor& dbias) {
    const Tensor& x = cache.x;
    int r = x.rows(), c = x.cols();
    for (int i = 0; i < r; ++i) {
        double mean = cache.mean[i];
        double rstd = cache.rstd[i];
        // dxhat = dy .* gain; dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < c; ++j) {
            double xhat = (x(i, j) - mean) * rstd;
            double dxhat = dy(i, j) * gain[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgain[j] += dy(i, j) * xhat;
            dbias[j] += dy(i, j);
        }
        for (int j = 0; j < c; ++j) {
            double xhat = (x(i, j) - mean) * rstd;
            double dxhat = dy(i, j) * gain[j];
            dx(i, j) += rstd * (dxhat - sum_dxhat / c - xhat * sum_dxhat_xhat / c);
        }
    }
}

Tensor softmax_rows(const Tensor& x) {
    int r = x.rows(), c = x.cols();
    Tensor p(r, c);
    for (int i = 0; i < r; ++i) {
        double mx = x(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, x(i, j));
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            double e = std::exp(x(i, j) - mx);
            p(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < c; ++j) p(i, j) /= sum;
    }
    return p;
}

void softmax_backward(const Tensor& probs, const Tensor& dprobs, Tensor& dx) {
    int r = probs.rows(), c = probs.cols();
    for (int i = 0; i < r; ++i) {
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += dprobs(i, j) * probs(i, j);
        for (int j = 0; j < c; ++j)
            dx(i, j) += probs(i, j) * (dprobs(i, j) - dot);
    }
}

namespace {
constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)

double gelu_scalar(double x) {
    double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
    return 0.5 * x * (1.0 + t);
}

double gelu_grad_scalar(double x) {
    double inner = kGeluC * (x + 0.044715 * x * x * x);
    double t = std::tanh(inner);
    double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}
} // namespace

Tensor gelu(const Tensor& x) {
    Tensor y = Tensor::zeros_like(x);
    for (int64_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
    return y;
}

void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    for (int64_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * gelu_grad_scalar(x[i]);
}

AttentionGrads::AttentionGrads(const AttentionParams& p)
    : wq(Tensor::zeros_like(p.wq)), bq(Tensor::zeros_like(p.bq)),
      wk(Tensor::zeros_like(p.wk)), bk(Tensor::zeros_like(p.bk)),
      wv(Tensor::zeros_like(p.wv)), bv(Tensor::zeros_like(p.bv)),
      wo(Tensor::zeros_like(p.wo)), bo(Tensor::zeros_like(p.bo)) {}

namespace {
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    for (int i = 0; i < y.rows(); ++i)
        for (int j = 0; j < y.cols(); ++j) y(i, j) += b[j];
    return y;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                     Tensor& dx, Tensor& dw, Tensor& db) {
    matmul_backward(x, w, dy, dx, dw);
    for (int i = 0; i < dy.rows(); ++i)
        for (int j = 0; j < dy.cols(); ++j) db[j] += dy(i, j);
}
} // namespace

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in,
                            const std::vector<int>& key_mask,
                            const AttentionParams& params,
                            AttentionCache* cache) {
    int d_model = params.wq.rows();
    int h = params.n_heads;
    if (h <= 0 || d_model % h != 0)
        throw ValidationError("attention: n_heads must divide d_model");
    if (q_in.cols() != d_model || kv_in.cols() != d_model)
        throw ValidationError("attention: input width mismatch");
    int tq = q_in.rows(), tk = kv_in.rows();
    if (static_cast<int>(key_mask.size()) != tk)
        throw ValidationError("attention: mask length mismatch");
    int dh = d_model / h;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor q = linear(q_in, params.wq, params.bq);
    Tensor k = linear(kv_in, params.wk, params.bk);
    Tensor v = linear(kv_in, params.wv, params.bv);

    Tensor concat(tq, d_model);
    std::vector<Tensor> attn_weights;
    attn_weights.reserve(h);
    for (int head = 0; head < h; ++head) {
        int off = head * dh;
        Tensor scores(tq, tk);
        for (int i = 0; i < tq; ++i)
            for (int j = 0; j < tk; ++j) {
                double s = 0.0;
                for (int d = 0; d < dh; ++d) s += q(i, off + d) * k(j, off + d);
                scores(i, j) = key_mask[j] ? s * scale : kMaskValue;
            }
        Tensor attn = softmax_rows(scores);
        for (int i = 0; i < tq; ++i)
            for (int d = 0; d < dh; ++d) {
                double s = 0.0;
                for (int j = 0; j < tk; ++j) s += attn(i, j) * v(j, off + d);
                concat(i, off + d) = s;
            }
        attn_weights.push_back(std::move(attn));
    }

    Tensor out = linear(concat, params.wo, params.bo);
    if (cache) {
        cache->q_in = q_in;
        cache->kv_in = kv_in;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn_weights);
        cache->concat = std::move(concat);
    }
    return out;
}

void multi_head_attention_backward(const AttentionCache& cache,
                                   const std::vector<int>& key_mask,
                                   const AttentionParams& params,
                                   const Tensor& d_out,
                                   Tensor& d_q_in, Tensor& d_kv_in,
                                   AttentionGrads& grads) {
    int d_model = params.wq.rows();
    int h = params.n_heads;
    int dh = d_model / h;
    int tq = cache.q_in.rows(), tk = cache.kv_in.rows();
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor d_concat(tq, d_model);
    linear_backward(cache.concat, params.wo, d_out, d_concat, grads.wo, grads.bo);

    Tensor dq(tq, d_model), dk(tk, d_model), dv(tk, d_model);
    for (int head = 0; head < h; ++head) {
        int off = head * dh;
        const Tensor& attn = cache.attn[head];
        // d attn and dV
        Tensor d_attn(tq, tk);
        for (int i = 0; i < tq; ++i)
            for (int j = 0; j < tk; ++j) {
                double s = 0.0;
                for (int d = 0; d < dh; ++d) s += d_concat(i, off + d) * cache.v(j, off + d);
                d_attn(i, j) = s;
            }
        for (int j = 0; j < tk; ++j)
            for (int d = 0; d < dh; ++d) {
                double s = 0.0;
                for (int i = 0; i < tq; ++i) s += attn(i, j) * d_concat(i, off + d);
                dv(j, off + d) += s;
            }
        // through softmax to scores; masked keys carry no gradient
        Tensor d_scores(tq, tk);
        softmax_backward(attn, d_attn, d_scores);
        for (int i = 0; i < tq; ++i)
            for (int j = 0; j < tk; ++j) {
                if (!key_mask[j]) { d_scores(i, j) = 0.0; continue; }
                double ds = d_scores(i, j) * scale;
                for (int d = 0; d < dh; ++d) {
                    dq(i, off + d) += ds * cache.k(j, off + d);
                    dk(j, off + d) += ds * cache.q(i, off + d);
                }
            }
    }

    linear_backward(cache.q_in, params.wq, dq, d_q_in, grads.wq, grads.bq);
    linear_backward(cache.kv_in, params.wk, dk, d_kv_in, grads.wk, grads.bk);
    linear_backward(cache.kv_in, params.wv, dv, d_kv_in, grads.wv, grads.bv);
}

WceResult weighted_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                 const std::vector<double>& class_weights) {
    int b = logits.rows(), k = logits.cols();
    if (static_cast<int>(labels.size()) != b)
        throw ValidationError("cross_entropy: label count mismatch");
    if (static_cast<int>(class_weights.size()) != k)
        throw ValidationError("cross_entropy: weight count mismatch");
    for (int y : labels)
        if (y < 0 || y >= k)
            throw ValidationError("cross_entropy: label index " + std::to_string(y) + " out of range");

    Tensor probs = softmax_rows(logits);
    WceResult res;
    res.dlogits = Tensor(b, k);
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        int y = labels[i];
        double w = class_weights[y];
        loss += -w * std::log(probs(i, y));
        for (int j = 0; j < k; ++j)
            res.dlogits(i, j) = w * (probs(i, j) - (j == y ? 1.0 : 0.0)) / b;
    }
    res.loss = loss / b;
    if (!std::isfinite(res.loss))
        throw RuntimeFailure("cross_entropy: non-finite loss");
    return res;
}

void adamw_step(Parameter& p, AdamState& state, const AdamConfig& cfg) {
    if (!p.grad.all_finite())
        throw RuntimeFailure("adamw: non-finite gradient for parameter '" + p.name + "'");
    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (int64_t i = 0; i < p.value.size(); ++i) {
        double g = p.grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        p.value[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.value[i]);
    }
}

} // namespace ctxsent::nn
