#pragma once

// Training protocol.
//
// Supervised: shuffled minibatches, one optimizer step per batch, per-batch
// augmentation coin (probability 0.5 by default), plain validation loss for
// early stopping (patience 15, max 500 epochs), best checkpoint restored.
//
// Self-supervised: NT-Xent between a clean view and an augmented view
// (augmentation probability 1 on the second view), early stopping on the
// validation contrastive loss (patience 10, max 200 epochs), trained on an
// ssl_fraction prefix of the train split.

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "tablab/augment.hpp"
#include "tablab/data.hpp"
#include "tablab/metrics.hpp"
#include "tablab/model.hpp"
#include "tablab/nn.hpp"
#include "tablab/rng.hpp"
#include "tablab/tensor.hpp"

namespace tablab {

struct TrainConfig {
    std::size_t max_epochs = 500;
    std::size_t patience = 15;
    std::size_t ssl_max_epochs = 200;
    std::size_t ssl_patience = 10;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    std::uint64_t seed = 0;
    AugmentationSpec augment;
    double ssl_fraction = 0.25;
    double tau = 1.0;  // NT-Xent temperature

    void validate() const {
        if (max_epochs < 1 || ssl_max_epochs < 1) throw ConfigError("TrainConfig: max_epochs must be >= 1");
        if (patience < 1 || ssl_patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
        if (!(tau > 0.0)) throw ConfigError("TrainConfig: tau must be positive");
        if (!(ssl_fraction > 0.0 && ssl_fraction <= 1.0))
            throw ConfigError("TrainConfig: ssl_fraction must be in (0,1]");
        augment.validate();
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_metric = 0.0;
    double wall_time = 0.0;  // seconds since training start
};

struct History {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;  // 1-based; 0 means no epoch ran
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t skipped_mix_batches = 0;
};

// JSON-lines trace: {epoch, train_loss, val_loss, val_metric, wall_time}.
inline void write_history(const History& h, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    for (const auto& e : h.epochs)
        out << nlohmann::json{{"epoch", e.epoch},
                              {"train_loss", e.train_loss},
                              {"val_loss", e.val_loss},
                              {"val_metric", e.val_metric},
                              {"wall_time", e.wall_time}}
                   .dump()
            << "\n";
}

// ---------------------------------------------------------------------------
// Evaluation (never augments; eval-mode forward)

struct EvalResult {
    double loss = 0.0;
    double metric_value = 0.0;
    std::vector<double> scores;  // per-sample score (logit / prediction)
};

inline EvalResult evaluate(const FTTransformer& model, const Batch& split, Task task, Metric metric,
                           double target_std, std::size_t batch_size) {
    EvalResult res;
    if (split.n == 0) throw DataError("evaluate: empty split");
    std::vector<std::size_t> pred_class;
    double loss_sum = 0.0;
    for (const auto& idx : epoch_batches(split.n, batch_size, false, nullptr)) {
        Batch b = gather_batch(split, idx);
        Tensor logits = model.forward(b, false, nullptr);
        loss_sum += plain_task_loss(logits, b.y, task).item() * static_cast<double>(b.n);
        if (task == Task::multiclass) {
            const std::size_t C = logits.shape()[1];
            for (std::size_t i = 0; i < b.n; ++i) {
                const double* row = logits.data() + i * C;
                std::size_t best = 0;
                for (std::size_t c = 1; c < C; ++c)
                    if (row[c] > row[best]) best = c;
                pred_class.push_back(best);
                res.scores.push_back(static_cast<double>(best));
            }
        } else {
            for (std::size_t i = 0; i < b.n; ++i) res.scores.push_back(logits.at(i));
        }
    }
    res.loss = loss_sum / static_cast<double>(split.n);
    switch (metric) {
        case Metric::auc: {
            std::vector<int> labels(split.n);
            for (std::size_t i = 0; i < split.n; ++i) labels[i] = split.y[i] > 0.5 ? 1 : 0;
            res.metric_value = auc(res.scores, labels);
            break;
        }
        case Metric::acc: {
            std::vector<std::size_t> labels(split.n);
            for (std::size_t i = 0; i < split.n; ++i) labels[i] = static_cast<std::size_t>(split.y[i]);
            res.metric_value = accuracy(pred_class, labels);
            break;
        }
        case Metric::rmse:
            res.metric_value = rmse(res.scores, split.y, target_std);
            break;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Augmentation routing: input space before tokenize, embedding space between
// tokenize and the CLS append, CLS space after encode.

inline std::pair<Tensor, MixedTarget> augmented_forward(FTTransformer& model, const Batch& batch,
                                                        const AugmentationSpec& spec,
                                                        const ColumnMarginals* marginals, bool training,
                                                        Rng& rng_aug, Rng* rng_drop,
                                                        std::size_t* skipped_mix = nullptr) {
    bool apply = training && spec.method != Method::none && spec.apply_probability > 0.0 &&
                 (spec.apply_probability >= 1.0 || rng_aug.bernoulli(spec.apply_probability));
    if (apply && needs_pairs(spec.method) && batch.n < 2) {
        apply = false;  // unmixable tail batch: train it plain
        if (skipped_mix) ++*skipped_mix;
    }
    if (!apply) return {model.forward(batch, training, rng_drop), MixedTarget::plain(batch.y)};
    switch (spec.method) {
        case Method::scarf: {
            if (!marginals) throw RunError("scarf needs training marginals");
            Batch corrupted = scarf_corrupt(batch, spec.param, *marginals, rng_aug);
            return {model.forward(corrupted, training, rng_drop), MixedTarget::plain(batch.y)};
        }
        case Method::cutmix: {
            auto r = cutmix_batch(batch, spec.param, rng_aug);
            return {model.forward(r.batch, training, rng_drop), std::move(r.target)};
        }
        case Method::mtr_after_bias: {
            auto m = mtr_after_bias(model.tokenize(batch), spec.param, model.mask_token(), rng_aug);
            Tensor logits = model.predict(model.encode(model.append_cls(m.tokens), training, rng_drop));
            return {logits, MixedTarget::plain(batch.y)};
        }
        case Method::mtr_before_bias: {
            auto m = mtr_before_bias(model, batch, spec.param, rng_aug);
            Tensor logits = model.predict(model.encode(model.append_cls(m.tokens), training, rng_drop));
            return {logits, MixedTarget::plain(batch.y)};
        }
        case Method::hiddenmix: {
            auto r = hiddenmix_batch(model.tokenize(batch), batch.y, spec.param, rng_aug);
            Tensor logits = model.predict(model.encode(model.append_cls(r.tokens), training, rng_drop));
            return {logits, std::move(r.target)};
        }
        case Method::manifold_mixup: {
            Tensor enc = model.encode(model.append_cls(model.tokenize(batch)), training, rng_drop);
            auto r = manifold_mixup_batch(model.cls_of(enc), batch.y, spec.param, rng_aug);
            return {model.head(r.cls), std::move(r.target)};
        }
        case Method::none: break;
    }
    return {model.forward(batch, training, rng_drop), MixedTarget::plain(batch.y)};
}

// ---------------------------------------------------------------------------
// Supervised training

inline History supervised_train(FTTransformer& model, const DatasetBundle& bundle, const TrainConfig& cfg,
                                const Batch* train_split = nullptr) {
    cfg.validate();
    const Batch& train = train_split ? *train_split : bundle.train;
    if (train.n == 0) throw DataError("supervised_train: empty train split");
    ParamList params = model.parameters();
    AdamW opt(params, AdamWConfig{cfg.lr, cfg.weight_decay});
    Rng rng_data(mix_seed(cfg.seed, 0xda7a));
    Rng rng_aug(mix_seed(cfg.seed, 0xa716));
    Rng rng_drop(mix_seed(cfg.seed, 0xd409));

    History hist;
    std::vector<std::vector<double>> best_snapshot = snapshot(params);
    std::size_t since_best = 0;
    const auto t0 = std::chrono::steady_clock::now();

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (const auto& idx : epoch_batches(train.n, bundle.batch_size, true, &rng_data)) {
            ++batch_no;
            Batch b = gather_batch(train, idx);
            Tape tape;
            TapeScope scope(tape);
            auto [logits, target] = augmented_forward(model, b, cfg.augment, &bundle.marginals, true,
                                                      rng_aug, &rng_drop, &hist.skipped_mix_batches);
            Tensor loss = mixed_loss(logits, target, bundle.task);
            if (!std::isfinite(loss.item()))
                throw RunError("supervised_train: non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_no));
            tape.backward(loss);
            opt.step(params, tape);
            loss_sum += loss.item();
        }
        EvalResult val =
            evaluate(model, bundle.val, bundle.task, bundle.metric, bundle.target_std, bundle.batch_size);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(batch_no);
        rec.val_loss = val.loss;
        rec.val_metric = val.metric_value;
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        hist.epochs.push_back(rec);

        if (val.loss < hist.best_val_loss) {
            hist.best_val_loss = val.loss;
            hist.best_epoch = epoch;
            best_snapshot = snapshot(params);
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    restore(params, best_snapshot);
    return hist;
}

// ---------------------------------------------------------------------------
// NT-Xent

// L2-normalized two-view contrastive loss: positives are counterpart views,
// negatives the other 2B-2 vectors, mean over all 2B anchors.
inline Tensor nt_xent_loss(const Tensor& z, const Tensor& zhat, double tau) {
    if (z.rank() != 2 || zhat.shape() != z.shape())
        throw std::invalid_argument("nt_xent_loss: views must share a [B,h] shape");
    const std::size_t B = z.shape()[0];
    if (B < 2) throw std::invalid_argument("nt_xent_loss: need at least 2 samples");
    if (!(tau > 0.0)) throw std::invalid_argument("nt_xent_loss: tau must be positive");
    auto normalize = [](const Tensor& v) {
        Tensor n2 = sum(mul(v, v), -1, true);
        for (double s : n2.vec())
            if (s == 0.0) throw std::invalid_argument("nt_xent_loss: zero-norm vector");
        return div(v, sqrt(n2));
    };
    Tensor u = concat({normalize(z), normalize(zhat)}, 0);  // [2B, h]
    Tensor sims = matmul(u, transpose_last2(u)) * (1.0 / tau);
    const std::size_t N = 2 * B;
    Tensor diag_mask(Shape{N, N}, 0.0);
    Tensor pos_mask(Shape{N, N}, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        diag_mask.data()[i * N + i] = -1e30;  // self-similarity never a candidate
        const std::size_t p = i < B ? i + B : i - B;
        pos_mask.data()[i * N + p] = 1.0;
    }
    Tensor masked = add(sims, diag_mask);
    Tensor row_max = max(masked, -1, true);
    Tensor lse = add(log(sum(exp(sub(masked, row_max)), -1, true)), row_max);
    Tensor s_pos = sum(mul(sims, pos_mask), -1, true);
    return mean_all(sub(lse, s_pos));
}

// ---------------------------------------------------------------------------
// Self-supervised pretraining

// Augmented-view projection with the method applied unconditionally. Label
// mixing never happens here; the mixup-family methods mix features only.
inline Tensor ssl_view(FTTransformer& model, const Batch& batch, const AugmentationSpec& spec,
                       const ColumnMarginals* marginals, bool training, Rng& rng_aug, Rng* rng_drop) {
    switch (spec.method) {
        case Method::scarf: {
            Batch corrupted = scarf_corrupt(batch, spec.param, *marginals, rng_aug);
            return model.project(model.encode(model.append_cls(model.tokenize(corrupted)), training, rng_drop));
        }
        case Method::mtr_after_bias: {
            auto m = mtr_after_bias(model.tokenize(batch), spec.param, model.mask_token(), rng_aug);
            return model.project(model.encode(model.append_cls(m.tokens), training, rng_drop));
        }
        case Method::mtr_before_bias: {
            auto m = mtr_before_bias(model, batch, spec.param, rng_aug);
            return model.project(model.encode(model.append_cls(m.tokens), training, rng_drop));
        }
        case Method::hiddenmix: {
            auto r = hiddenmix_batch(model.tokenize(batch), batch.y, spec.param, rng_aug);
            return model.project(model.encode(model.append_cls(r.tokens), training, rng_drop));
        }
        case Method::manifold_mixup: {
            Tensor enc = model.encode(model.append_cls(model.tokenize(batch)), training, rng_drop);
            auto r = manifold_mixup_batch(model.cls_of(enc), batch.y, spec.param, rng_aug);
            return model.project_cls(r.cls);
        }
        default:
            throw ConfigError("ssl_view: method " + method_name(spec.method) +
                              " is not usable for contrastive pretraining");
    }
}

inline void validate_ssl_method(Method m) {
    if (m == Method::cutmix)
        throw ConfigError(
            "cutmix is excluded from contrastive pretraining: without label mixing it degenerates to "
            "per-column resampling (use scarf instead)");
    if (m == Method::none)
        throw ConfigError("ssl_pretrain: an augmentation method is required to form the second view");
}

// The ssl_fraction prefix of the (already shuffled) train split.
inline Batch ssl_subset(const Batch& train, double fraction) {
    const std::size_t m = static_cast<std::size_t>(fraction * static_cast<double>(train.n));
    std::vector<std::size_t> rows(m);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return gather_batch(train, rows);
}

inline History ssl_pretrain(FTTransformer& model, const DatasetBundle& bundle, const TrainConfig& cfg) {
    cfg.validate();
    validate_ssl_method(cfg.augment.method);
    AugmentationSpec spec = cfg.augment;
    spec.apply_probability = 1.0;  // the augmented view is always augmented

    Batch train = ssl_subset(bundle.train, cfg.ssl_fraction);
    if (train.n < 2) throw DataError("ssl_pretrain: subset too small");
    ParamList params = model.parameters();
    AdamW opt(params, AdamWConfig{cfg.lr, cfg.weight_decay});
    Rng rng_data(mix_seed(cfg.seed, 0x55da));
    Rng rng_aug(mix_seed(cfg.seed, 0x55a6));
    Rng rng_drop(mix_seed(cfg.seed, 0x55d0));
    const std::uint64_t val_aug_seed = mix_seed(cfg.seed, 0x55e1);

    History hist;
    std::vector<std::vector<double>> best_snapshot = snapshot(params);
    std::size_t since_best = 0;
    const auto t0 = std::chrono::steady_clock::now();

    auto val_contrastive_loss = [&] {
        // fixed augmentation draws per epoch keep the series comparable
        Rng rng_val(val_aug_seed);
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& idx : epoch_batches(bundle.val.n, bundle.batch_size, false, nullptr)) {
            if (idx.size() < 2) continue;
            Batch b = gather_batch(bundle.val, idx);
            Tensor z = model.project(model.encode(model.append_cls(model.tokenize(b)), false, nullptr));
            Tensor zhat = ssl_view(model, b, spec, &bundle.marginals, false, rng_val, nullptr);
            sum += nt_xent_loss(z, zhat, cfg.tau).item() * static_cast<double>(b.n);
            count += b.n;
        }
        if (count == 0) throw DataError("ssl_pretrain: validation split has no usable batches");
        return sum / static_cast<double>(count);
    };

    for (std::size_t epoch = 1; epoch <= cfg.ssl_max_epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (const auto& idx : epoch_batches(train.n, bundle.batch_size, true, &rng_data)) {
            if (idx.size() < 2) {
                ++hist.skipped_mix_batches;
                continue;
            }
            ++batch_no;
            Batch b = gather_batch(train, idx);
            Tape tape;
            TapeScope scope(tape);
            Tensor z = model.project(model.encode(model.append_cls(model.tokenize(b)), true, &rng_drop));
            Tensor zhat = ssl_view(model, b, spec, &bundle.marginals, true, rng_aug, &rng_drop);
            Tensor loss = nt_xent_loss(z, zhat, cfg.tau);
            if (!std::isfinite(loss.item()))
                throw RunError("ssl_pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_no));
            tape.backward(loss);
            opt.step(params, tape);
            loss_sum += loss.item();
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = batch_no ? loss_sum / static_cast<double>(batch_no) : 0.0;
        rec.val_loss = val_contrastive_loss();
        rec.val_metric = 0.0;  // no task metric during pretraining
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        hist.epochs.push_back(rec);

        if (rec.val_loss < hist.best_val_loss) {
            hist.best_val_loss = rec.val_loss;
            hist.best_epoch = epoch;
            best_snapshot = snapshot(params);
            since_best = 0;
        } else if (++since_best >= cfg.ssl_patience) {
            break;
        }
    }
    restore(params, best_snapshot);
    return hist;
}

// Supervised training from pretrained weights: heads reinitialized, all
// weights updated, same ssl_fraction subset of train.
inline History finetune(FTTransformer& model, const DatasetBundle& bundle, const TrainConfig& cfg) {
    Rng head_rng(mix_seed(cfg.seed, 0xf1e7));
    model.reinit_heads(head_rng);
    Batch subset = ssl_subset(bundle.train, cfg.ssl_fraction);
    return supervised_train(model, bundle, cfg, &subset);
}

}  // namespace tablab
