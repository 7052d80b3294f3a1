#pragma once

// The five data augmentations, each with its own label-mixing orientation:
//
//   mask-token replacement (after / before bias)  -- no label mixing
//   SCARF corruption            -- no label mixing
//   Cutmix                      -- y_i <- (1 - l') y_i + l' y_j
//   HiddenMix                   -- y_i <- l y_i + (1 - l) y_j
//   Manifold Mixup              -- y_i <- (1 - l) y_i + l y_j
//
// Augmentations return a MixedTarget rather than a raw coefficient so the
// orientation cannot be misapplied downstream. Every op bumps a process-wide
// call counter; evaluation paths assert it stays put.

#include <atomic>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tablab/model.hpp"
#include "tablab/rng.hpp"
#include "tablab/tensor.hpp"
#include "tablab/types.hpp"

namespace tablab {

enum class Method {
    none,
    mtr_after_bias,
    mtr_before_bias,
    scarf,
    cutmix,
    hiddenmix,
    manifold_mixup,
};

inline std::string method_name(Method m) {
    switch (m) {
        case Method::none: return "none";
        case Method::mtr_after_bias: return "mtr_after_bias";
        case Method::mtr_before_bias: return "mtr_before_bias";
        case Method::scarf: return "scarf";
        case Method::cutmix: return "cutmix";
        case Method::hiddenmix: return "hiddenmix";
        case Method::manifold_mixup: return "manifold_mixup";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    for (Method m : {Method::none, Method::mtr_after_bias, Method::mtr_before_bias, Method::scarf,
                     Method::cutmix, Method::hiddenmix, Method::manifold_mixup})
        if (method_name(m) == s) return m;
    throw ConfigError("unknown augmentation method: " + s);
}

// p_m methods draw a Bernoulli mask; the rest draw Beta(alpha, alpha).
inline bool uses_mask_fraction(Method m) {
    return m == Method::mtr_after_bias || m == Method::mtr_before_bias || m == Method::scarf;
}

inline bool mixes_labels(Method m) {
    return m == Method::cutmix || m == Method::hiddenmix || m == Method::manifold_mixup;
}

inline bool needs_pairs(Method m) { return mixes_labels(m); }

struct AugmentationSpec {
    Method method = Method::none;
    double param = 0.0;              // p_m or alpha
    double apply_probability = 0.5;  // supervised default; SSL uses 1.0

    void validate() const {
        if (apply_probability < 0.0 || apply_probability > 1.0)
            throw ConfigError("AugmentationSpec: apply_probability must be in [0,1]");
        if (method == Method::none) return;
        if (uses_mask_fraction(method)) {
            if (!(param > 0.0 && param < 1.0))
                throw ConfigError("AugmentationSpec: p_m must be in (0,1) for " + method_name(method));
        } else if (!(param > 0.0)) {
            throw ConfigError("AugmentationSpec: alpha must be positive for " + method_name(method));
        }
    }
};

// Targets with an optional per-sample mixing partner. `self_weight[i]` is the
// coefficient on y[i]; the partner gets the complement.
struct MixedTarget {
    std::vector<double> y;
    std::vector<std::size_t> partner;
    std::vector<double> self_weight;

    bool mixed() const { return !partner.empty(); }

    static MixedTarget plain(std::vector<double> targets) {
        MixedTarget t;
        t.y = std::move(targets);
        return t;
    }

    static MixedTarget with_pairs(std::vector<double> targets, std::vector<std::size_t> partner,
                                  std::vector<double> self_weight) {
        MixedTarget t;
        t.y = std::move(targets);
        t.partner = std::move(partner);
        t.self_weight = std::move(self_weight);
        for (double w : t.self_weight)
            if (w < 0.0 || w > 1.0) throw std::invalid_argument("MixedTarget: coefficient outside [0,1]");
        return t;
    }
};

// Per-column training-split value multisets; SCARF samples uniformly from
// these. Fit on the train split only.
struct ColumnMarginals {
    std::vector<std::vector<double>> numeric;
    std::vector<std::vector<std::int32_t>> categorical;
};

namespace detail {
inline std::atomic<std::uint64_t> g_augment_calls{0};
}

inline std::uint64_t augment_call_count() { return detail::g_augment_calls.load(); }
inline void bump_augment_calls() { detail::g_augment_calls.fetch_add(1); }

// ---------------------------------------------------------------------------
// Mask-token replacement

// Independent Bernoulli(p_m) per sample per column.
inline std::vector<std::uint8_t> bernoulli_mask(std::size_t n, double p_m, Rng& rng) {
    if (p_m < 0.0 || p_m > 1.0) throw std::invalid_argument("bernoulli_mask: p_m must be in [0,1]");
    std::vector<std::uint8_t> flags(n);
    for (auto& f : flags) f = rng.bernoulli(p_m) ? 1 : 0;
    return flags;
}

struct MaskedTokens {
    Tensor tokens;                    // [B, k, d]
    std::vector<std::uint8_t> mask;   // B x k, 1 where replaced
};

// Replaces whole embedding rows (bias included) with the shared mask token.
// T must come from the tokenizer, before the CLS append.
inline MaskedTokens mtr_after_bias(const Tensor& T, double p_m, const Tensor& mask_token, Rng& rng) {
    if (T.rank() != 3) throw std::invalid_argument("mtr_after_bias: expected [B,k,d]");
    bump_augment_calls();
    auto flags = bernoulli_mask(T.shape()[0] * T.shape()[1], p_m, rng);
    bool any = false;
    for (auto f : flags) any = any || f;
    if (!any) return {T, std::move(flags)};  // untouched pass-through, bit-identical
    return {replace_rows(T, flags, mask_token), std::move(flags)};
}

// Masks only the value-dependent term, keeping the per-column bias visible:
// for a masked column j the row is b_j + mask_token.
inline MaskedTokens mtr_before_bias(const FTTransformer& model, const Batch& batch, double p_m, Rng& rng) {
    bump_augment_calls();
    Tensor value = model.tokenize_value(batch);
    auto flags = bernoulli_mask(value.shape()[0] * value.shape()[1], p_m, rng);
    bool any = false;
    for (auto f : flags) any = any || f;
    Tensor masked = any ? replace_rows(value, flags, model.mask_token()) : value;
    return {add(masked, model.token_bias()), std::move(flags)};
}

// ---------------------------------------------------------------------------
// SCARF corruption (input space, preprocessed values)

inline Batch scarf_corrupt(const Batch& batch, double p_m, const ColumnMarginals& marginals, Rng& rng) {
    if (p_m < 0.0 || p_m > 1.0) throw std::invalid_argument("scarf_corrupt: p_m must be in [0,1]");
    if (marginals.numeric.size() != batch.k_num || marginals.categorical.size() != batch.k_cat)
        throw std::invalid_argument("scarf_corrupt: marginals do not match the batch schema");
    for (const auto& col : marginals.numeric)
        if (col.empty()) throw std::invalid_argument("scarf_corrupt: empty numeric marginal");
    for (const auto& col : marginals.categorical)
        if (col.empty()) throw std::invalid_argument("scarf_corrupt: empty categorical marginal");
    bump_augment_calls();
    Batch out = batch;
    const std::size_t k = batch.k_num + batch.k_cat;
    for (std::size_t i = 0; i < batch.n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            if (!rng.bernoulli(p_m)) continue;
            if (j < batch.k_num) {
                const auto& col = marginals.numeric[j];
                out.x_num[i * batch.k_num + j] = col[rng.below(col.size())];
            } else {
                const auto& col = marginals.categorical[j - batch.k_num];
                out.x_cat[i * batch.k_cat + (j - batch.k_num)] = col[rng.below(col.size())];
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Cutmix (input space)

// Pairing for mixup-family methods: a seeded random permutation of the batch.
inline std::vector<std::size_t> pair_within_batch(std::size_t batch_size, Rng& rng) {
    return rng.permutation(batch_size);
}

// Overwrites floor(lambda*k) randomly chosen entries of row i with row j's
// values; returns the realized swap fraction lambda'.
inline double cutmix_row_with_lambda(std::size_t k_num, std::size_t k_cat, double* xi_num,
                                     std::int32_t* xi_cat, const double* xj_num,
                                     const std::int32_t* xj_cat, double lambda, Rng& rng) {
    const std::size_t k = k_num + k_cat;
    if (k == 0) throw std::invalid_argument("cutmix: no columns");
    const std::size_t swaps = static_cast<std::size_t>(lambda * static_cast<double>(k));
    for (std::size_t j : rng.choose(k, swaps)) {
        if (j < k_num)
            xi_num[j] = xj_num[j];
        else
            xi_cat[j - k_num] = xj_cat[j - k_num];
    }
    return static_cast<double>(swaps) / static_cast<double>(k);
}

inline double cutmix_row(std::size_t k_num, std::size_t k_cat, double* xi_num, std::int32_t* xi_cat,
                         const double* xj_num, const std::int32_t* xj_cat, double alpha, Rng& rng) {
    return cutmix_row_with_lambda(k_num, k_cat, xi_num, xi_cat, xj_num, xj_cat, rng.beta(alpha, alpha),
                                  rng);
}

// Label-mixing orientations, one per method (self coefficient on y_i).
inline double cutmix_self_weight(double lambda_prime) { return 1.0 - lambda_prime; }
inline double hiddenmix_self_weight(double lambda) { return lambda; }
inline double manifold_mixup_self_weight(double lambda) { return 1.0 - lambda; }

struct CutmixResult {
    Batch batch;
    MixedTarget target;
};

inline CutmixResult cutmix_batch(const Batch& batch, double alpha, Rng& rng) {
    if (batch.n < 2) throw std::invalid_argument("cutmix_batch: needs at least 2 samples");
    bump_augment_calls();
    auto partner = pair_within_batch(batch.n, rng);
    Batch out = batch;
    std::vector<double> self_w(batch.n);
    for (std::size_t i = 0; i < batch.n; ++i) {
        const std::size_t j = partner[i];
        const double lp = cutmix_row(batch.k_num, batch.k_cat, out.x_num.data() + i * batch.k_num,
                                     out.x_cat.data() + i * batch.k_cat, batch.x_num.data() + j * batch.k_num,
                                     batch.x_cat.data() + j * batch.k_cat, alpha, rng);
        self_w[i] = cutmix_self_weight(lp);
    }
    return {std::move(out), MixedTarget::with_pairs(batch.y, std::move(partner), std::move(self_w))};
}

// ---------------------------------------------------------------------------
// HiddenMix (embedding space, before the CLS append)

// One 0/1 vector with exactly floor(lambda*d) ones, shared by all k rows.
inline std::vector<std::uint8_t> hiddenmix_flags(std::size_t d, double lambda, Rng& rng) {
    std::vector<std::uint8_t> s(d, 0);
    const std::size_t ones = static_cast<std::size_t>(lambda * static_cast<double>(d));
    for (std::size_t j : rng.choose(d, ones)) s[j] = 1;
    return s;
}

// Pair form on [k, d] token matrices: T_i <- S (*) T_i + (1 - S) (*) T_j.
inline std::pair<Tensor, double> hiddenmix_pair(const Tensor& Ti, const Tensor& Tj, double alpha, Rng& rng) {
    if (Ti.rank() != 2 || Tj.shape() != Ti.shape())
        throw std::invalid_argument("hiddenmix_pair: token matrices must share a [k,d] shape");
    bump_augment_calls();
    const std::size_t d = Ti.shape()[1];
    const double lambda = rng.beta(alpha, alpha);
    auto s = hiddenmix_flags(d, lambda, rng);
    Tensor S(Shape{1, d});
    for (std::size_t j = 0; j < d; ++j) S.data()[j] = s[j] ? 1.0 : 0.0;
    Tensor mixed = add(mul(Ti, S), mul(Tj, (S * -1.0) + 1.0));
    return {mixed, lambda};
}

struct HiddenMixResult {
    Tensor tokens;                   // [B, k, d]
    MixedTarget target;
    std::vector<std::uint8_t> s;     // B x d row flags (shared across the k rows)
};

inline HiddenMixResult hiddenmix_batch(const Tensor& T, const std::vector<double>& y, double alpha,
                                       Rng& rng) {
    if (T.rank() != 3) throw std::invalid_argument("hiddenmix_batch: expected [B,k,d]");
    const std::size_t B = T.shape()[0], d = T.shape()[2];
    if (B < 2) throw std::invalid_argument("hiddenmix_batch: needs at least 2 samples");
    bump_augment_calls();
    auto partner = pair_within_batch(B, rng);
    std::vector<double> self_w(B);
    std::vector<std::uint8_t> flags(B * d);
    Tensor S(Shape{B, 1, d});
    for (std::size_t b = 0; b < B; ++b) {
        const double lambda = rng.beta(alpha, alpha);
        auto s = hiddenmix_flags(d, lambda, rng);
        for (std::size_t j = 0; j < d; ++j) {
            flags[b * d + j] = s[j];
            S.data()[b * d + j] = s[j] ? 1.0 : 0.0;
        }
        self_w[b] = hiddenmix_self_weight(lambda);
    }
    Tensor Tj = take_axis0(T, partner);
    Tensor mixed = add(mul(T, S), mul(Tj, (S * -1.0) + 1.0));
    return {mixed, MixedTarget::with_pairs(y, std::move(partner), std::move(self_w)), std::move(flags)};
}

// ---------------------------------------------------------------------------
// Manifold Mixup (encoded CLS space)

inline std::pair<Tensor, double> manifold_mixup_pair(const Tensor& ci, const Tensor& cj, double alpha,
                                                     Rng& rng) {
    if (ci.shape() != cj.shape()) throw std::invalid_argument("manifold_mixup_pair: shape mismatch");
    bump_augment_calls();
    const double lambda = rng.beta(alpha, alpha);
    Tensor mixed = add(ci * (1.0 - lambda), cj * lambda);
    return {mixed, lambda};
}

struct ManifoldMixResult {
    Tensor cls;  // [B, d]
    MixedTarget target;
};

inline ManifoldMixResult manifold_mixup_batch(const Tensor& C, const std::vector<double>& y, double alpha,
                                              Rng& rng) {
    if (C.rank() != 2) throw std::invalid_argument("manifold_mixup_batch: expected [B,d]");
    const std::size_t B = C.shape()[0];
    if (B < 2) throw std::invalid_argument("manifold_mixup_batch: needs at least 2 samples");
    bump_augment_calls();
    auto partner = pair_within_batch(B, rng);
    std::vector<double> self_w(B);
    Tensor w_self(Shape{B, 1}), w_other(Shape{B, 1});
    for (std::size_t b = 0; b < B; ++b) {
        const double lambda = rng.beta(alpha, alpha);
        self_w[b] = manifold_mixup_self_weight(lambda);
        w_self.data()[b] = self_w[b];
        w_other.data()[b] = lambda;
    }
    Tensor mixed = add(mul(C, w_self), mul(take_axis0(C, partner), w_other));
    return {mixed, MixedTarget::with_pairs(y, std::move(partner), std::move(self_w))};
}

// ---------------------------------------------------------------------------
// Loss under (possibly mixed) targets

// Classification mixes the two per-target losses; regression mixes the
// target value itself.
inline Tensor mixed_loss(const Tensor& logits, const MixedTarget& target, Task task) {
    const std::size_t B = logits.shape()[0];
    if (target.y.size() != B) throw std::invalid_argument("mixed_loss: target count mismatch");
    if (!target.mixed()) {
        switch (task) {
            case Task::binary: return mean_all(bce_with_logits(logits, target.y));
            case Task::multiclass: {
                std::vector<std::size_t> labels(B);
                for (std::size_t i = 0; i < B; ++i) labels[i] = static_cast<std::size_t>(target.y[i]);
                return mean_all(softmax_xent(logits, labels));
            }
            case Task::regression: return mean_all(squared_error(logits, target.y));
        }
    }
    std::vector<double> y_partner(B);
    for (std::size_t i = 0; i < B; ++i) y_partner[i] = target.y[target.partner[i]];
    if (task == Task::regression) {
        std::vector<double> mixed(B);
        for (std::size_t i = 0; i < B; ++i)
            mixed[i] = target.self_weight[i] * target.y[i] + (1.0 - target.self_weight[i]) * y_partner[i];
        return mean_all(squared_error(logits, mixed));
    }
    Tensor w(Shape{B}, std::vector<double>(target.self_weight));
    Tensor wc = (w * -1.0) + 1.0;
    Tensor loss_self, loss_partner;
    if (task == Task::binary) {
        loss_self = bce_with_logits(logits, target.y);
        loss_partner = bce_with_logits(logits, y_partner);
    } else {
        std::vector<std::size_t> l_self(B), l_partner(B);
        for (std::size_t i = 0; i < B; ++i) {
            l_self[i] = static_cast<std::size_t>(target.y[i]);
            l_partner[i] = static_cast<std::size_t>(y_partner[i]);
        }
        loss_self = softmax_xent(logits, l_self);
        loss_partner = softmax_xent(logits, l_partner);
    }
    return mean_all(add(mul(w, loss_self), mul(wc, loss_partner)));
}

inline Tensor plain_task_loss(const Tensor& logits, const std::vector<double>& y, Task task) {
    return mixed_loss(logits, MixedTarget::plain(y), task);
}

}  // namespace tablab
