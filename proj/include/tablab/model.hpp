#pragma once

// Feature tokenizer and full model assembly.
//
// Pipeline: tokenize -> append CLS -> 3-block encoder -> head on the CLS
// row. Numeric column j embeds as b_j + x_j * W_j; categorical column j as
// b_j + table_j[index]. The MASK token is a single learnable vector shared
// across columns; the CLS token is appended last and is never maskable.

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "tablab/nn.hpp"
#include "tablab/rng.hpp"
#include "tablab/tensor.hpp"
#include "tablab/types.hpp"

namespace tablab {

struct ModelConfig {
    std::size_t d = 192;
    std::size_t layers = 3;
    std::size_t heads = 8;
    double attn_dropout = 0.2;
    double ffn_dropout = 0.1;
    double residual_dropout = 0.0;
    double ln_eps = 1e-5;
    std::size_t ssl_dim = 0;  // latent dim h of the SSL projection; 0 means d
};

class FeatureTokenizer {
public:
    FeatureTokenizer() = default;

    FeatureTokenizer(const ColumnSchema& schema, std::size_t d, Rng& rng) : d_(d) {
        schema.validate();
        k_num_ = schema.k_num();
        k_cat_ = schema.k_cat();
        const double bound = 1.0 / std::sqrt(static_cast<double>(d));
        auto fill = [&](Tensor& t) {
            for (double& v : t.vec()) v = rng.uniform(-bound, bound);
            t.set_requires_grad(true);
        };
        if (k_num_ > 0) {
            num_weight_ = Tensor(Shape{k_num_, d});
            num_bias_ = Tensor(Shape{k_num_, d});
            fill(num_weight_);
            fill(num_bias_);
        }
        if (k_cat_ > 0) {
            cat_bias_ = Tensor(Shape{k_cat_, d});
            fill(cat_bias_);
            for (std::size_t j = 0; j < k_cat_; ++j) {
                const auto& col = schema.columns[k_num_ + j];
                Tensor table(Shape{col.cardinality, d});
                fill(table);
                cat_tables_.push_back(std::move(table));
            }
        }
    }

    std::size_t k() const { return k_num_ + k_cat_; }
    std::size_t k_num() const { return k_num_; }
    std::size_t k_cat() const { return k_cat_; }
    std::size_t d() const { return d_; }

    // Value-dependent part only: x_j * W_j for numeric columns, the looked-up
    // table row for categorical ones. [B, k, d]
    Tensor value_term(const Batch& batch) const {
        if (batch.k_num != k_num_ || batch.k_cat != k_cat_)
            throw std::invalid_argument("FeatureTokenizer: batch schema mismatch");
        std::vector<Tensor> parts;
        if (k_num_ > 0) {
            for (double v : batch.x_num)
                if (!std::isfinite(v)) throw DataError("FeatureTokenizer: non-finite numeric feature value");
            Tensor x(Shape{batch.n, k_num_, 1}, std::vector<double>(batch.x_num));
            parts.push_back(mul(x, num_weight_));  // [B,k_num,1] x [k_num,d]
        }
        if (k_cat_ > 0) {
            std::vector<Tensor> cols;
            for (std::size_t j = 0; j < k_cat_; ++j) {
                std::vector<std::size_t> idx(batch.n);
                const std::size_t card = cat_tables_[j].shape()[0];
                for (std::size_t b = 0; b < batch.n; ++b) {
                    const std::int32_t raw = batch.cat_at(b, j);
                    if (raw < 0 || static_cast<std::size_t>(raw) >= card)
                        throw DataError("FeatureTokenizer: category index " + std::to_string(raw) +
                                        " out of range for column " + std::to_string(j) +
                                        " (cardinality " + std::to_string(card) + ")");
                    idx[b] = static_cast<std::size_t>(raw);
                }
                cols.push_back(reshape(take_axis0(cat_tables_[j], idx), Shape{batch.n, 1, d_}));
            }
            parts.push_back(cols.size() == 1 ? cols[0] : concat(cols, 1));
        }
        return parts.size() == 1 ? parts[0] : concat(parts, 1);
    }

    // Per-column biases stacked to [k, d].
    Tensor bias_rows() const {
        if (k_num_ > 0 && k_cat_ > 0) return concat({num_bias_, cat_bias_}, 0);
        return k_num_ > 0 ? num_bias_ : cat_bias_;
    }

    // T = bias + value term. [B, k, d]
    Tensor forward(const Batch& batch) const { return add(value_term(batch), bias_rows()); }

    void collect(ParamList& out) {
        if (k_num_ > 0) {
            out.push_back({"tokenizer.num_weight", num_weight_, true});
            out.push_back({"tokenizer.num_bias", num_bias_, true});
        }
        for (std::size_t j = 0; j < cat_tables_.size(); ++j)
            out.push_back({"tokenizer.cat_table." + std::to_string(j), cat_tables_[j], true});
        if (k_cat_ > 0) out.push_back({"tokenizer.cat_bias", cat_bias_, true});
    }

private:
    std::size_t d_ = 0, k_num_ = 0, k_cat_ = 0;
    Tensor num_weight_, num_bias_;
    std::vector<Tensor> cat_tables_;
    Tensor cat_bias_;
};

class FTTransformer {
public:
    FTTransformer() = default;

    FTTransformer(ColumnSchema schema, std::size_t out_dim, ModelConfig cfg, Rng& rng)
        : schema_(std::move(schema)), cfg_(cfg), out_dim_(out_dim) {
        if (out_dim_ == 0) throw std::invalid_argument("FTTransformer: output dim must be positive");
        tokenizer_ = FeatureTokenizer(schema_, cfg_.d, rng);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.d));
        cls_token_ = Tensor(Shape{cfg_.d});
        mask_token_ = Tensor(Shape{cfg_.d});
        for (double& v : cls_token_.vec()) v = rng.uniform(-bound, bound);
        for (double& v : mask_token_.vec()) v = rng.uniform(-bound, bound);
        cls_token_.set_requires_grad(true);
        mask_token_.set_requires_grad(true);
        for (std::size_t i = 0; i < cfg_.layers; ++i)
            blocks_.emplace_back(cfg_.d, cfg_.heads, cfg_.attn_dropout, cfg_.ffn_dropout,
                                 cfg_.residual_dropout, cfg_.ln_eps, rng);
        init_heads(rng);
    }

    const ColumnSchema& schema() const { return schema_; }
    const ModelConfig& config() const { return cfg_; }
    std::size_t out_dim() const { return out_dim_; }
    std::size_t ssl_dim() const { return cfg_.ssl_dim ? cfg_.ssl_dim : cfg_.d; }
    Tensor& mask_token() { return mask_token_; }
    const Tensor& mask_token() const { return mask_token_; }
    Tensor& cls_token() { return cls_token_; }

    Tensor tokenize(const Batch& batch) const { return tokenizer_.forward(batch); }
    Tensor tokenize_value(const Batch& batch) const { return tokenizer_.value_term(batch); }
    Tensor token_bias() const { return tokenizer_.bias_rows(); }

    // Appends the CLS row (last position, broadcast across the batch).
    Tensor append_cls(const Tensor& T) const {
        if (T.rank() != 3) throw std::invalid_argument("append_cls: expected [B,k,d]");
        Tensor cls = broadcast_to(reshape(cls_token_, Shape{1, 1, cfg_.d}), Shape{T.shape()[0], 1, cfg_.d});
        return concat({T, cls}, 1);
    }

    Tensor encode(const Tensor& Tprime, bool training, Rng* rng) const {
        Tensor x = Tprime;
        for (const auto& block : blocks_) x = block.forward(x, training, rng);
        return x;
    }

    // CLS row of the encoded sequence: [B, d].
    Tensor cls_of(const Tensor& T_encode) const {
        const std::size_t s = T_encode.shape()[1];
        return reshape(slice(T_encode, 1, s - 1, 1), Shape{T_encode.shape()[0], cfg_.d});
    }

    // Head reads only the CLS row: LayerNorm -> relu -> linear.
    Tensor head(const Tensor& cls_vec) const { return head_out_.forward(relu(head_ln_.forward(cls_vec))); }

    Tensor predict(const Tensor& T_encode) const { return head(cls_of(T_encode)); }

    // SSL projection z = PredictionHead(cls): linear -> relu -> linear.
    Tensor project_cls(const Tensor& cls_vec) const {
        return pred_fc2_.forward(relu(pred_fc1_.forward(cls_vec)));
    }

    Tensor project(const Tensor& T_encode) const { return project_cls(cls_of(T_encode)); }

    // Plain supervised forward.
    Tensor forward(const Batch& batch, bool training, Rng* rng) const {
        return predict(encode(append_cls(tokenize(batch)), training, rng));
    }

    ParamList parameters() {
        ParamList out;
        tokenizer_.collect(out);
        out.push_back({"cls_token", cls_token_, true});
        out.push_back({"mask_token", mask_token_, true});
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect("encoder.block" + std::to_string(i), out);
        head_ln_.collect("head.ln", out);
        head_out_.collect("head.out", out);
        pred_fc1_.collect("pred_head.fc1", out);
        pred_fc2_.collect("pred_head.fc2", out);
        return out;
    }

    // Encoder-side parameters (everything except the two heads); used to
    // transfer pretrained weights into a fine-tuning model.
    ParamList encoder_parameters() {
        ParamList out;
        tokenizer_.collect(out);
        out.push_back({"cls_token", cls_token_, true});
        out.push_back({"mask_token", mask_token_, true});
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect("encoder.block" + std::to_string(i), out);
        return out;
    }

    void reinit_heads(Rng& rng) { init_heads(rng); }

    // ------------------------------------------------------------------
    // Checkpoints: JSON container of named arrays; self-describing.

    nlohmann::json checkpoint() {
        nlohmann::json j;
        j["format"] = "tablab-checkpoint";
        j["version"] = 1;
        j["out_dim"] = out_dim_;
        j["config"] = {{"d", cfg_.d},
                       {"layers", cfg_.layers},
                       {"heads", cfg_.heads},
                       {"attn_dropout", cfg_.attn_dropout},
                       {"ffn_dropout", cfg_.ffn_dropout},
                       {"residual_dropout", cfg_.residual_dropout},
                       {"ln_eps", cfg_.ln_eps},
                       {"ssl_dim", cfg_.ssl_dim}};
        nlohmann::json cols = nlohmann::json::array();
        for (const auto& c : schema_.columns)
            cols.push_back({{"name", c.name},
                            {"kind", c.kind == ColumnKind::numeric ? "numeric" : "categorical"},
                            {"cardinality", c.cardinality}});
        j["schema"] = cols;
        nlohmann::json params = nlohmann::json::object();
        for (auto& p : parameters())
            params[p.name] = {{"shape", p.tensor.shape()}, {"data", p.tensor.vec()}};
        j["params"] = params;
        return j;
    }

    static FTTransformer from_checkpoint(const nlohmann::json& j) {
        if (!j.contains("format") || j["format"] != "tablab-checkpoint")
            throw DataError("checkpoint: unrecognized container format");
        if (j.at("version").get<int>() != 1)
            throw DataError("checkpoint: unsupported version " + j.at("version").dump());
        ColumnSchema schema;
        for (const auto& c : j.at("schema")) {
            Column col;
            col.name = c.at("name").get<std::string>();
            col.kind = c.at("kind") == "numeric" ? ColumnKind::numeric : ColumnKind::categorical;
            col.cardinality = c.at("cardinality").get<std::size_t>();
            schema.columns.push_back(col);
        }
        ModelConfig cfg;
        const auto& jc = j.at("config");
        cfg.d = jc.at("d").get<std::size_t>();
        cfg.layers = jc.at("layers").get<std::size_t>();
        cfg.heads = jc.at("heads").get<std::size_t>();
        cfg.attn_dropout = jc.at("attn_dropout").get<double>();
        cfg.ffn_dropout = jc.at("ffn_dropout").get<double>();
        cfg.residual_dropout = jc.at("residual_dropout").get<double>();
        cfg.ln_eps = jc.at("ln_eps").get<double>();
        cfg.ssl_dim = jc.at("ssl_dim").get<std::size_t>();
        Rng rng(0);
        FTTransformer model(schema, j.at("out_dim").get<std::size_t>(), cfg, rng);
        auto params = model.parameters();
        const auto& jp = j.at("params");
        for (auto& p : params) {
            if (!jp.contains(p.name)) throw DataError("checkpoint: missing parameter '" + p.name + "'");
            const auto& entry = jp.at(p.name);
            auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            if (shape != p.tensor.shape())
                throw DataError("checkpoint: shape mismatch for '" + p.name + "'");
            p.tensor.vec() = entry.at("data").get<std::vector<double>>();
        }
        return model;
    }

private:
    void init_heads(Rng& rng) {
        head_ln_ = LayerNorm(cfg_.d, cfg_.ln_eps);
        head_out_ = Linear(cfg_.d, out_dim_, rng);
        pred_fc1_ = Linear(cfg_.d, cfg_.d, rng);
        pred_fc2_ = Linear(cfg_.d, ssl_dim(), rng);
    }

    ColumnSchema schema_;
    ModelConfig cfg_;
    std::size_t out_dim_ = 1;
    FeatureTokenizer tokenizer_;
    Tensor cls_token_, mask_token_;
    std::vector<TransformerBlock> blocks_;
    LayerNorm head_ln_;
    Linear head_out_;
    Linear pred_fc1_, pred_fc2_;
};

// Copies parameter values between two aligned parameter lists.
inline void copy_parameters(const ParamList& src, ParamList& dst) {
    if (src.size() != dst.size()) throw std::logic_error("copy_parameters: list size mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape())
            throw std::logic_error("copy_parameters: mismatch at '" + src[i].name + "'");
        dst[i].tensor.vec() = src[i].tensor.vec();
    }
}

}  // namespace tablab
