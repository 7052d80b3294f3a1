#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tablab {

enum class Task { binary, multiclass, regression };
enum class Metric { auc, acc, rmse };

inline std::string task_name(Task t) {
    switch (t) {
        case Task::binary: return "binary";
        case Task::multiclass: return "multiclass";
        case Task::regression: return "regression";
    }
    return "?";
}

inline Task task_from_string(const std::string& s) {
    if (s == "binary") return Task::binary;
    if (s == "multiclass") return Task::multiclass;
    if (s == "regression") return Task::regression;
    throw std::invalid_argument("unknown task: " + s);
}

inline std::string metric_name(Metric m) {
    switch (m) {
        case Metric::auc: return "AUC";
        case Metric::acc: return "ACC";
        case Metric::rmse: return "RMSE";
    }
    return "?";
}

inline Metric metric_from_string(const std::string& s) {
    if (s == "AUC" || s == "auc") return Metric::auc;
    if (s == "ACC" || s == "acc") return Metric::acc;
    if (s == "RMSE" || s == "rmse") return Metric::rmse;
    throw std::invalid_argument("unknown metric: " + s);
}

inline bool higher_is_better(Metric m) { return m != Metric::rmse; }

enum class ColumnKind { numeric, categorical };

struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    std::size_t cardinality = 0;  // categorical only; includes the reserved unknown index
};

// Model-facing column layout: all numeric columns first, then all
// categorical ones. Categorical cardinalities include the unknown slot.
struct ColumnSchema {
    std::vector<Column> columns;

    std::size_t k() const { return columns.size(); }

    std::size_t k_num() const {
        std::size_t n = 0;
        for (const auto& c : columns)
            if (c.kind == ColumnKind::numeric) ++n;
        return n;
    }

    std::size_t k_cat() const { return columns.size() - k_num(); }

    void validate() const {
        if (columns.empty()) throw std::invalid_argument("ColumnSchema: need at least one column");
        bool seen_cat = false;
        for (const auto& c : columns) {
            if (c.kind == ColumnKind::categorical) {
                seen_cat = true;
                if (c.cardinality < 2)
                    throw std::invalid_argument("ColumnSchema: column '" + c.name +
                                                "' cardinality must be >= 2 (categories + unknown)");
            } else if (seen_cat) {
                throw std::invalid_argument("ColumnSchema: numeric columns must precede categorical ones");
            }
        }
    }
};

// A preprocessed slab of samples: numeric features row-major [n x k_num],
// categorical index features row-major [n x k_cat], targets (class index or
// standardized value) per sample. Doubles as split storage and minibatch.
struct Batch {
    std::size_t n = 0;
    std::size_t k_num = 0;
    std::size_t k_cat = 0;
    std::vector<double> x_num;
    std::vector<std::int32_t> x_cat;
    std::vector<double> y;

    double num_at(std::size_t row, std::size_t col) const { return x_num[row * k_num + col]; }
    std::int32_t cat_at(std::size_t row, std::size_t col) const { return x_cat[row * k_cat + col]; }
};

inline Batch gather_batch(const Batch& full, const std::vector<std::size_t>& idx) {
    Batch b;
    b.n = idx.size();
    b.k_num = full.k_num;
    b.k_cat = full.k_cat;
    b.x_num.resize(b.n * b.k_num);
    b.x_cat.resize(b.n * b.k_cat);
    b.y.resize(b.n);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::size_t r = idx[i];
        for (std::size_t j = 0; j < b.k_num; ++j) b.x_num[i * b.k_num + j] = full.x_num[r * b.k_num + j];
        for (std::size_t j = 0; j < b.k_cat; ++j) b.x_cat[i * b.k_cat + j] = full.x_cat[r * b.k_cat + j];
        b.y[i] = full.y[r];
    }
    return b;
}

// Error taxonomy used to map failures to CLI exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RunError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace tablab
