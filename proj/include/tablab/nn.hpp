#pragma once

// Transformer building blocks and the AdamW optimizer.
//
// Architecture defaults: 3 pre-norm blocks, embedding size 192, 8 heads,
// ReGLU feed-forward with hidden size floor(d * 4/3), attention dropout 0.2,
// FFN dropout 0.1, residual dropout 0.0, Kaiming-initialized linear weights.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tablab/rng.hpp"
#include "tablab/tensor.hpp"
#include "tablab/types.hpp"

namespace tablab {

struct ParamInfo {
    std::string name;
    Tensor tensor;       // shares storage with the owning layer
    bool decay_exempt;   // tokenizer, LayerNorm, biases, CLS and MASK tokens
};

using ParamList = std::vector<ParamInfo>;

inline Tensor kaiming_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor w(Shape{fan_in, fan_out});
    const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w.vec()) v = rng.normal(0.0, s);
    w.set_requires_grad(true);
    return w;
}

inline Tensor uniform_bias(std::size_t fan_in, std::size_t n, Rng& rng) {
    Tensor b(Shape{n});
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : b.vec()) v = rng.uniform(-bound, bound);
    b.set_requires_grad(true);
    return b;
}

// Zeroes with probability `rate` during training and rescales survivors by
// 1/(1-rate); identity in eval mode.
inline Tensor dropout(const Tensor& x, double rate, bool training, Rng* rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!training || rate == 0.0) return x;
    if (!rng) throw std::logic_error("dropout: training mode needs an RNG");
    Tensor mask(x.shape());
    const double scale = 1.0 / (1.0 - rate);
    for (double& v : mask.vec()) v = rng->bernoulli(rate) ? 0.0 : scale;
    return mul(x, mask);
}

class Linear {
public:
    Linear() = default;

    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) : in_(in), out_(out) {
        weight_ = kaiming_weight(in, out, rng);
        if (with_bias) bias_ = uniform_bias(in, out, rng);
    }

    // x: [..., in] -> [..., out]
    Tensor forward(const Tensor& x) const {
        if (x.shape().back() != in_)
            throw std::invalid_argument("Linear: input width " + std::to_string(x.shape().back()) +
                                        " != " + std::to_string(in_));
        Tensor y = matmul(x, weight_);
        if (bias_) y = add(y, *bias_);
        return y;
    }

    std::size_t in() const { return in_; }
    std::size_t out() const { return out_; }
    Tensor& weight() { return weight_; }
    const Tensor& weight() const { return weight_; }
    std::optional<Tensor>& bias() { return bias_; }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".weight", weight_, false});
        if (bias_) out.push_back({prefix + ".bias", *bias_, true});
    }

private:
    std::size_t in_ = 0, out_ = 0;
    Tensor weight_;
    std::optional<Tensor> bias_;
};

class LayerNorm {
public:
    LayerNorm() = default;

    explicit LayerNorm(std::size_t d, double eps = 1e-5) : d_(d), eps_(eps) {
        gain_ = Tensor(Shape{d}, 1.0);
        shift_ = Tensor(Shape{d}, 0.0);
        gain_.set_requires_grad(true);
        shift_.set_requires_grad(true);
    }

    // Standardizes the last axis, then applies the learned affine map.
    Tensor forward(const Tensor& x) const {
        if (x.shape().back() != d_) throw std::invalid_argument("LayerNorm: width mismatch");
        Tensor mu = mean(x, -1, true);
        Tensor centered = sub(x, mu);
        Tensor var = mean(mul(centered, centered), -1, true);
        Tensor norm = div(centered, sqrt(var + eps_));
        return add(mul(norm, gain_), shift_);
    }

    Tensor& gain() { return gain_; }
    Tensor& shift() { return shift_; }
    double eps() const { return eps_; }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".gain", gain_, true});
        out.push_back({prefix + ".shift", shift_, true});
    }

private:
    std::size_t d_ = 0;
    double eps_ = 1e-5;
    Tensor gain_, shift_;
};

class MultiHeadAttention {
public:
    MultiHeadAttention() = default;

    MultiHeadAttention(std::size_t d, std::size_t heads, double attn_dropout, Rng& rng)
        : d_(d), heads_(heads), attn_dropout_(attn_dropout) {
        if (heads == 0 || d % heads != 0)
            throw std::invalid_argument("MultiHeadAttention: embedding size " + std::to_string(d) +
                                        " not divisible by head count " + std::to_string(heads));
        q_ = Linear(d, d, rng);
        k_ = Linear(d, d, rng);
        v_ = Linear(d, d, rng);
        out_ = Linear(d, d, rng);
    }

    // T: [B, s, d] -> [B, s, d]. Dropout hits attention weights only.
    Tensor forward(const Tensor& T, bool training, Rng* rng) const {
        if (T.rank() != 3 || T.shape()[2] != d_)
            throw std::invalid_argument("MultiHeadAttention: expected [B,s," + std::to_string(d_) + "]");
        const std::size_t B = T.shape()[0], s = T.shape()[1], hd = d_ / heads_;
        auto split = [&](const Tensor& x) {
            return permute(reshape(x, Shape{B, s, heads_, hd}), {0, 2, 1, 3});  // [B,h,s,hd]
        };
        Tensor q = split(q_.forward(T));
        Tensor k = split(k_.forward(T));
        Tensor v = split(v_.forward(T));
        Tensor scores = matmul(q, transpose_last2(k)) * (1.0 / std::sqrt(static_cast<double>(hd)));
        Tensor attn = softmax_lastdim(scores);
        attn = dropout(attn, attn_dropout_, training, rng);
        Tensor ctx = matmul(attn, v);                                     // [B,h,s,hd]
        Tensor merged = reshape(permute(ctx, {0, 2, 1, 3}), Shape{B, s, d_});
        return out_.forward(merged);
    }

    std::size_t heads() const { return heads_; }

    void collect(const std::string& prefix, ParamList& out) {
        q_.collect(prefix + ".q", out);
        k_.collect(prefix + ".k", out);
        v_.collect(prefix + ".v", out);
        out_.collect(prefix + ".out", out);
    }

private:
    std::size_t d_ = 0, heads_ = 8;
    double attn_dropout_ = 0.2;
    Linear q_, k_, v_, out_;
};

// ReGLU feed-forward: up-projection to 2*hidden, gate with relu on the
// second half, project back down. hidden = floor(d * 4/3).
class ReGLUFFN {
public:
    ReGLUFFN() = default;

    ReGLUFFN(std::size_t d, double ffn_dropout, Rng& rng) : d_(d), ffn_dropout_(ffn_dropout) {
        hidden_ = (d * 4) / 3;
        up_ = Linear(d, 2 * hidden_, rng);
        down_ = Linear(hidden_, d, rng);
    }

    Tensor forward(const Tensor& x, bool training, Rng* rng) const {
        Tensor u = up_.forward(x);
        const std::size_t last = u.rank() - 1;
        Tensor a = slice(u, last, 0, hidden_);
        Tensor b = slice(u, last, hidden_, hidden_);
        Tensor h = mul(a, relu(b));
        h = dropout(h, ffn_dropout_, training, rng);
        return down_.forward(h);
    }

    std::size_t hidden() const { return hidden_; }

    void collect(const std::string& prefix, ParamList& out) {
        up_.collect(prefix + ".up", out);
        down_.collect(prefix + ".down", out);
    }

private:
    std::size_t d_ = 0, hidden_ = 0;
    double ffn_dropout_ = 0.1;
    Linear up_, down_;
};

// Pre-norm residual block: T + MHA(LN(T)), then + FFN(LN(.)).
class TransformerBlock {
public:
    TransformerBlock() = default;

    TransformerBlock(std::size_t d, std::size_t heads, double attn_dropout, double ffn_dropout,
                     double residual_dropout, double ln_eps, Rng& rng)
        : attn_ln_(d, ln_eps),
          attn_(d, heads, attn_dropout, rng),
          ffn_ln_(d, ln_eps),
          ffn_(d, ffn_dropout, rng),
          residual_dropout_(residual_dropout) {}

    Tensor forward(const Tensor& T, bool training, Rng* rng) const {
        Tensor x = add(T, dropout(attn_.forward(attn_ln_.forward(T), training, rng), residual_dropout_,
                                  training, rng));
        return add(x, dropout(ffn_.forward(ffn_ln_.forward(x), training, rng), residual_dropout_, training,
                              rng));
    }

    void collect(const std::string& prefix, ParamList& out) {
        attn_ln_.collect(prefix + ".attn_ln", out);
        attn_.collect(prefix + ".attn", out);
        ffn_ln_.collect(prefix + ".ffn_ln", out);
        ffn_.collect(prefix + ".ffn", out);
    }

    MultiHeadAttention& attention() { return attn_; }
    ReGLUFFN& ffn() { return ffn_; }

private:
    LayerNorm attn_ln_;
    MultiHeadAttention attn_;
    LayerNorm ffn_ln_;
    ReGLUFFN ffn_;
    double residual_dropout_ = 0.0;
};

// ---------------------------------------------------------------------------
// Losses (per-sample vectors; callers weight and reduce)

// Numerically stable sigmoid cross-entropy on one logit per sample.
// z: [B] or [B,1]; y in [0,1]. Returns [B].
inline Tensor bce_with_logits(const Tensor& z, const std::vector<double>& y) {
    Tensor zf = z.rank() == 2 ? reshape(z, Shape{z.shape()[0]}) : z;
    if (zf.size() != y.size()) throw std::invalid_argument("bce_with_logits: batch size mismatch");
    const std::size_t n = zf.size();
    Tensor out(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
        const double zi = zf.at(i);
        out.data()[i] = std::max(zi, 0.0) - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    if (OpCtx::tracked(zf)) {
        std::int64_t iz = OpCtx::input_id(zf);
        auto zd = OpCtx::storage(zf);
        auto yc = std::make_shared<std::vector<double>>(y);
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            auto& slot = t.acc(iz, n);
            for (std::size_t i = 0; i < n; ++i) {
                const double zi = (*zd)[i];
                const double p = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
                slot[i] += g[i] * (p - (*yc)[i]);
            }
        });
    }
    return out;
}

// Softmax cross-entropy with integer labels, log-sum-exp form. z: [B,C].
inline Tensor softmax_xent(const Tensor& z, const std::vector<std::size_t>& labels) {
    if (z.rank() != 2) throw std::invalid_argument("softmax_xent: logits must be [B,C]");
    const std::size_t B = z.shape()[0], C = z.shape()[1];
    if (labels.size() != B) throw std::invalid_argument("softmax_xent: batch size mismatch");
    Tensor out(Shape{B});
    for (std::size_t b = 0; b < B; ++b) {
        if (labels[b] >= C) throw std::out_of_range("softmax_xent: label out of range");
        const double* row = z.data() + b * C;
        double m = row[0];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - m);
        out.data()[b] = std::log(s) + m - row[labels[b]];
    }
    if (OpCtx::tracked(z)) {
        std::int64_t iz = OpCtx::input_id(z);
        auto zd = OpCtx::storage(z);
        auto lc = std::make_shared<std::vector<std::size_t>>(labels);
        OpCtx::attach(out, [=](Tape& t, const std::vector<double>& g) {
            auto& slot = t.acc(iz, B * C);
            for (std::size_t b = 0; b < B; ++b) {
                const double* row = zd->data() + b * C;
                double m = row[0];
                for (std::size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
                double s = 0.0;
                for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - m);
                for (std::size_t c = 0; c < C; ++c) {
                    double p = std::exp(row[c] - m) / s;
                    slot[b * C + c] += g[b] * (p - (c == (*lc)[b] ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

// Squared error per sample against constant targets. pred: [B] or [B,1].
inline Tensor squared_error(const Tensor& pred, const std::vector<double>& target) {
    Tensor pf = pred.rank() == 2 ? reshape(pred, Shape{pred.shape()[0]}) : pred;
    if (pf.size() != target.size()) throw std::invalid_argument("squared_error: batch size mismatch");
    Tensor diff = sub(pf, Tensor(Shape{target.size()}, std::vector<double>(target)));
    return mul(diff, diff);
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay; decay skipped for the exempt set.

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamW {
public:
    AdamW() = default;

    AdamW(const ParamList& params, AdamWConfig cfg = {}) : cfg_(cfg) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].tensor.size(), 0.0);
            v_[i].assign(params[i].tensor.size(), 0.0);
        }
    }

    std::size_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }

    // One update from the gradients recorded on `tape`. Throws RunError on a
    // non-finite gradient, leaving parameters untouched.
    void step(ParamList& params, const Tape& tape) {
        for (const auto& p : params) {
            const auto* g = tape.grad_if(p.tensor);
            if (!g) continue;
            for (double v : *g)
                if (!std::isfinite(v))
                    throw RunError("AdamW: non-finite gradient in parameter '" + p.name + "' at step " +
                                   std::to_string(step_ + 1));
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            const auto* gp = tape.grad_if(p.tensor);
            double* w = p.tensor.data();
            const std::size_t n = p.tensor.size();
            if (!p.decay_exempt && cfg_.weight_decay != 0.0) {
                const double shrink = 1.0 - cfg_.lr * cfg_.weight_decay;
                for (std::size_t j = 0; j < n; ++j) w[j] *= shrink;
            }
            if (!gp) continue;  // untouched by this forward: no moment update
            const double* g = gp->data();
            for (std::size_t j = 0; j < n; ++j) {
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    AdamWConfig cfg_;
    std::size_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Snapshot/restore of parameter values (early-stopping checkpoints).
inline std::vector<std::vector<double>> snapshot(const ParamList& params) {
    std::vector<std::vector<double>> s;
    s.reserve(params.size());
    for (const auto& p : params) s.push_back(p.tensor.vec());
    return s;
}

inline void restore(ParamList& params, const std::vector<std::vector<double>>& snap) {
    if (snap.size() != params.size()) throw std::logic_error("restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.vec() = snap[i];
}

}  // namespace tablab
