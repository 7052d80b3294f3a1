#pragma once

// Dataset ingestion and preprocessing.
//
// Protocol: seeded 6:2:2 split (stratified for classification, validation
// truncated to 20,000 rows), quantile transformation of numeric features to
// standard-normal quantiles, ordinal encoding of categorical features with a
// reserved unknown index, target standardization for regression. Every
// statistic is fitted on the train split only.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tablab/augment.hpp"
#include "tablab/rng.hpp"
#include "tablab/types.hpp"

namespace tablab {

// ---------------------------------------------------------------------------
// Schema descriptor: {columns:[{name,kind}], target, task, metric}

struct SchemaDescriptor {
    struct Col {
        std::string name;
        ColumnKind kind;
    };
    std::vector<Col> columns;
    std::string target;
    Task task = Task::binary;
    Metric metric = Metric::auc;
    std::size_t classes = 0;  // optional; inferred from data when 0

    static SchemaDescriptor from_json(const nlohmann::json& j) {
        SchemaDescriptor d;
        for (const auto& c : j.at("columns"))
            d.columns.push_back({c.at("name").get<std::string>(),
                                 c.at("kind") == "numeric" ? ColumnKind::numeric : ColumnKind::categorical});
        d.target = j.at("target").get<std::string>();
        d.task = task_from_string(j.at("task").get<std::string>());
        d.metric = metric_from_string(j.at("metric").get<std::string>());
        if (j.contains("classes")) d.classes = j.at("classes").get<std::size_t>();
        d.validate();
        return d;
    }

    nlohmann::json to_json() const {
        nlohmann::json cols = nlohmann::json::array();
        for (const auto& c : columns)
            cols.push_back({{"name", c.name}, {"kind", c.kind == ColumnKind::numeric ? "numeric" : "categorical"}});
        return {{"columns", cols}, {"target", target}, {"task", task_name(task)},
                {"metric", metric_name(metric)}, {"classes", classes}};
    }

    void validate() const {
        if (columns.empty()) throw ConfigError("schema descriptor: no feature columns");
        if (target.empty()) throw ConfigError("schema descriptor: missing target");
        const bool ok = (task == Task::binary && metric == Metric::auc) ||
                        (task == Task::multiclass && metric == Metric::acc) ||
                        (task == Task::regression && metric == Metric::rmse);
        if (!ok)
            throw ConfigError("schema descriptor: metric " + metric_name(metric) +
                              " does not match task " + task_name(task));
    }
};

// Column-major raw table. Numeric columns hold NaN for missing cells;
// categorical columns keep raw strings.
struct RawDataset {
    SchemaDescriptor desc;
    std::size_t n = 0;
    std::vector<std::vector<double>> num_cols;
    std::vector<std::vector<std::string>> cat_cols;
    std::vector<double> y_reg;          // regression targets
    std::vector<std::string> y_cls;     // classification labels (raw)
};

// ---------------------------------------------------------------------------
// CSV loading (RFC-4180-ish: quoted fields, escaped quotes, no embedded
// newlines)

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (quoted) throw DataError("csv: unterminated quote on line " + std::to_string(line_no));
    out.push_back(cur);
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

}  // namespace detail

inline RawDataset load_csv(const std::string& path, const SchemaDescriptor& desc) {
    desc.validate();
    std::ifstream in(path);
    if (!in) throw DataError("csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("csv: missing header row in " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = detail::split_csv_line(line, 1);
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < header.size(); ++i) pos[header[i]] = i;

    std::vector<std::size_t> feat_pos;
    for (const auto& c : desc.columns) {
        auto it = pos.find(c.name);
        if (it == pos.end()) throw DataError("csv: column '" + c.name + "' not found in header");
        feat_pos.push_back(it->second);
    }
    auto tit = pos.find(desc.target);
    if (tit == pos.end()) throw DataError("csv: missing target column '" + desc.target + "'");
    const std::size_t target_pos = tit->second;

    RawDataset raw;
    raw.desc = desc;
    std::size_t k_num = 0, k_cat = 0;
    for (const auto& c : desc.columns) (c.kind == ColumnKind::numeric ? k_num : k_cat)++;
    raw.num_cols.resize(k_num);
    raw.cat_cols.resize(k_cat);

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line, line_no);
        if (cells.size() != header.size())
            throw DataError("csv: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
        std::size_t ni = 0, ci = 0;
        for (std::size_t f = 0; f < desc.columns.size(); ++f) {
            const std::string& cell = cells[feat_pos[f]];
            if (desc.columns[f].kind == ColumnKind::numeric) {
                double v = std::numeric_limits<double>::quiet_NaN();
                if (!cell.empty() && !detail::parse_double(cell, v))
                    throw DataError("csv: line " + std::to_string(line_no) + ", column '" +
                                    desc.columns[f].name + "': unparseable numeric value '" + cell + "'");
                raw.num_cols[ni++].push_back(v);
            } else {
                raw.cat_cols[ci++].push_back(cell);
            }
        }
        const std::string& tcell = cells[target_pos];
        if (tcell.empty()) throw DataError("csv: line " + std::to_string(line_no) + ": missing target value");
        if (desc.task == Task::regression) {
            double v;
            if (!detail::parse_double(tcell, v))
                throw DataError("csv: line " + std::to_string(line_no) + ": unparseable regression target '" +
                                tcell + "'");
            raw.y_reg.push_back(v);
        } else {
            raw.y_cls.push_back(tcell);
        }
        ++raw.n;
    }
    if (raw.n == 0) throw DataError("csv: no data rows in " + path);
    return raw;
}

// ---------------------------------------------------------------------------
// Split protocol

struct SplitIdx {
    std::vector<std::size_t> train, val, test;
};

namespace detail {

// Allocates per-group counts so each group is split close to proportionally
// while the global counts are met exactly (largest-remainder rounding).
inline std::vector<std::size_t> proportional_alloc(const std::vector<std::size_t>& group_sizes,
                                                   std::size_t want_total, std::size_t have_total) {
    std::vector<std::size_t> alloc(group_sizes.size());
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t given = 0;
    for (std::size_t g = 0; g < group_sizes.size(); ++g) {
        const double quota = static_cast<double>(group_sizes[g]) * static_cast<double>(want_total) /
                             static_cast<double>(have_total);
        alloc[g] = static_cast<std::size_t>(quota);
        alloc[g] = std::min(alloc[g], group_sizes[g]);
        given += alloc[g];
        rema.push_back({quota - static_cast<double>(alloc[g]), g});
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [frac, g] : rema) {
        if (given >= want_total) break;
        if (alloc[g] < group_sizes[g]) {
            ++alloc[g];
            ++given;
        }
    }
    // fallback pass if remainders could not absorb everything
    for (std::size_t g = 0; given < want_total && g < alloc.size(); ++g)
        while (given < want_total && alloc[g] < group_sizes[g]) {
            ++alloc[g];
            ++given;
        }
    return alloc;
}

}  // namespace detail

inline constexpr std::size_t kValTruncation = 20000;

// Seeded shuffle, then a 6:2:2 partition (stratified by label for
// classification); the validation split is truncated to 20,000 rows.
inline SplitIdx split(const RawDataset& raw, std::uint64_t seed) {
    if (raw.n < 10) throw DataError("split: need at least 10 rows, got " + std::to_string(raw.n));
    const std::size_t n = raw.n;
    const std::size_t n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
    const std::size_t n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));

    Rng rng(mix_seed(seed, 0x5eedu));
    SplitIdx out;
    if (raw.desc.task == Task::regression) {
        auto perm = rng.permutation(n);
        out.train.assign(perm.begin(), perm.begin() + n_train);
        out.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
        out.test.assign(perm.begin() + n_train + n_val, perm.end());
    } else {
        std::map<std::string, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < n; ++i) by_class[raw.y_cls[i]].push_back(i);
        std::vector<std::vector<std::size_t>> groups;
        for (auto& [label, idx] : by_class) {
            rng.shuffle(idx);
            groups.push_back(idx);
        }
        std::vector<std::size_t> sizes;
        for (const auto& g : groups) sizes.push_back(g.size());
        auto train_alloc = detail::proportional_alloc(sizes, n_train, n);
        std::vector<std::size_t> rest_sizes(sizes.size());
        for (std::size_t g = 0; g < sizes.size(); ++g) rest_sizes[g] = sizes[g] - train_alloc[g];
        auto val_alloc = detail::proportional_alloc(rest_sizes, n_val, n - n_train);
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (train_alloc[g] == 0)
                throw DataError("split: a class would be absent from the train split");
            const auto& idx = groups[g];
            out.train.insert(out.train.end(), idx.begin(), idx.begin() + train_alloc[g]);
            out.val.insert(out.val.end(), idx.begin() + train_alloc[g],
                           idx.begin() + train_alloc[g] + val_alloc[g]);
            out.test.insert(out.test.end(), idx.begin() + train_alloc[g] + val_alloc[g], idx.end());
        }
        // class-blocked order would leak label structure into batching
        rng.shuffle(out.train);
        rng.shuffle(out.val);
        rng.shuffle(out.test);
    }
    if (out.val.size() > kValTruncation) out.val.resize(kValTruncation);
    return out;
}

// ---------------------------------------------------------------------------
// Quantile transform: empirical CDF (up to 1000 knots, linear interpolation,
// tie-averaged) mapped through the standard-normal quantile function.

namespace detail {

// Acklam's rational approximation of the inverse normal CDF with one Halley
// refinement; good to ~1e-15 over the clipped domain.
inline double inverse_normal_cdf(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,  -2.759285104469687e+02,
                               1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01, -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};
    const double p_low = 0.02425, p_high = 1.0 - p_low;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= p_high) {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

}  // namespace detail

class QuantileTransform {
public:
    static constexpr std::size_t kMaxKnots = 1000;
    static constexpr double kClip = 1e-7;

    QuantileTransform() = default;

    // Fit on finite training values (missing cells imputed upstream).
    static QuantileTransform fit(std::vector<double> values) {
        if (values.empty()) throw DataError("QuantileTransform: no values to fit");
        std::sort(values.begin(), values.end());
        QuantileTransform qt;
        const std::size_t n = values.size();
        if (n <= kMaxKnots) {
            qt.knots_ = std::move(values);
        } else {
            qt.knots_.resize(kMaxKnots);
            for (std::size_t i = 0; i < kMaxKnots; ++i) {
                const double pos =
                    static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(kMaxKnots - 1);
                qt.knots_[i] = values[static_cast<std::size_t>(std::llround(pos))];
            }
        }
        return qt;
    }

    double cdf(double x) const {
        const std::size_t K = knots_.size();
        if (K == 1) return 0.5;
        x = std::clamp(x, knots_.front(), knots_.back());
        auto lo = std::lower_bound(knots_.begin(), knots_.end(), x);
        auto hi = std::upper_bound(knots_.begin(), knots_.end(), x);
        auto ref = [&](std::size_t i) {
            return static_cast<double>(i) / static_cast<double>(K - 1);
        };
        if (lo != hi) {
            // tied run: mid-rank, keeping the train median near 0.5
            const std::size_t first = static_cast<std::size_t>(lo - knots_.begin());
            const std::size_t last = static_cast<std::size_t>(hi - knots_.begin()) - 1;
            return 0.5 * (ref(first) + ref(last));
        }
        const std::size_t j = static_cast<std::size_t>(lo - knots_.begin());  // knots_[j-1] < x < knots_[j]
        const double x0 = knots_[j - 1], x1 = knots_[j];
        const double t = (x - x0) / (x1 - x0);
        return ref(j - 1) + t * (ref(j) - ref(j - 1));
    }

    double transform(double x) const {
        const double u = std::clamp(cdf(x), kClip, 1.0 - kClip);
        return detail::inverse_normal_cdf(u);
    }

    const std::vector<double>& knots() const { return knots_; }

    nlohmann::json to_json() const { return {{"knots", knots_}}; }
    static QuantileTransform from_json(const nlohmann::json& j) {
        QuantileTransform qt;
        qt.knots_ = j.at("knots").get<std::vector<double>>();
        return qt;
    }

private:
    std::vector<double> knots_;
};

// ---------------------------------------------------------------------------
// Ordinal encoding with a reserved unknown index (the last one).

class OrdinalEncoding {
public:
    OrdinalEncoding() = default;

    static OrdinalEncoding fit(const std::vector<std::string>& values) {
        OrdinalEncoding enc;
        std::vector<std::string> uniq(values);
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        for (std::size_t i = 0; i < uniq.size(); ++i) enc.index_[uniq[i]] = static_cast<std::int32_t>(i);
        return enc;
    }

    std::int32_t encode(const std::string& value) const {
        auto it = index_.find(value);
        return it == index_.end() ? unknown_index() : it->second;
    }

    std::int32_t unknown_index() const { return static_cast<std::int32_t>(index_.size()); }
    std::size_t cardinality() const { return index_.size() + 1; }  // categories + unknown

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : index_) j[k] = v;
        return j;
    }
    static OrdinalEncoding from_json(const nlohmann::json& j) {
        OrdinalEncoding enc;
        for (auto it = j.begin(); it != j.end(); ++it) enc.index_[it.key()] = it.value().get<std::int32_t>();
        return enc;
    }

private:
    std::map<std::string, std::int32_t> index_;  // deterministic lexicographic order
};

// ---------------------------------------------------------------------------
// Table 2 batch-size schedule (train-split row count).

inline std::size_t batch_size_for(std::size_t train_size) {
    if (train_size > 50000) return 1024;
    if (train_size > 10000) return 512;
    if (train_size > 5000) return 256;
    if (train_size > 1000) return 128;
    return 64;
}

// ---------------------------------------------------------------------------
// DatasetBundle: preprocessed splits plus the fitted transforms.

struct DatasetBundle {
    ColumnSchema schema;  // numeric columns first, then categorical
    Task task = Task::binary;
    Metric metric = Metric::auc;
    std::size_t classes = 0;  // class count for classification
    Batch train, val, test;
    std::vector<QuantileTransform> quantile;   // per numeric column
    std::vector<double> impute_median;         // per numeric column
    std::vector<OrdinalEncoding> encoding;     // per categorical column
    double target_mean = 0.0, target_std = 1.0;
    ColumnMarginals marginals;                 // train split, preprocessed space
    std::size_t batch_size = 64;

    std::size_t out_dim() const { return task == Task::multiclass ? classes : 1; }
};

namespace detail {

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

inline DatasetBundle prepare_bundle(const RawDataset& raw, std::uint64_t seed) {
    raw.desc.validate();
    SplitIdx idx = split(raw, seed);

    DatasetBundle bundle;
    bundle.task = raw.desc.task;
    bundle.metric = raw.desc.metric;

    // descriptor order, numeric block first
    std::vector<std::size_t> num_desc, cat_desc;
    {
        std::size_t ni = 0, ci = 0;
        for (const auto& c : raw.desc.columns)
            if (c.kind == ColumnKind::numeric)
                num_desc.push_back(ni++);
            else
                cat_desc.push_back(ci++);
    }
    const std::size_t k_num = num_desc.size(), k_cat = cat_desc.size();

    // fit on train only
    bundle.impute_median.resize(k_num);
    for (std::size_t j = 0; j < k_num; ++j) {
        std::vector<double> train_vals;
        for (std::size_t i : idx.train) {
            const double v = raw.num_cols[j][i];
            if (std::isfinite(v)) train_vals.push_back(v);
        }
        if (train_vals.empty())
            throw DataError("prepare: numeric column " + std::to_string(j) + " has no finite train values");
        bundle.impute_median[j] = detail::median_of(train_vals);
        std::vector<double> imputed;
        imputed.reserve(idx.train.size());
        for (std::size_t i : idx.train) {
            const double v = raw.num_cols[j][i];
            imputed.push_back(std::isfinite(v) ? v : bundle.impute_median[j]);
        }
        bundle.quantile.push_back(QuantileTransform::fit(std::move(imputed)));
    }
    for (std::size_t j = 0; j < k_cat; ++j) {
        std::vector<std::string> train_vals;
        train_vals.reserve(idx.train.size());
        for (std::size_t i : idx.train) train_vals.push_back(raw.cat_cols[j][i]);
        bundle.encoding.push_back(OrdinalEncoding::fit(train_vals));
    }

    // model schema: numeric block then categorical block
    std::size_t ni = 0, ci = 0;
    for (const auto& c : raw.desc.columns)
        if (c.kind == ColumnKind::numeric) {
            bundle.schema.columns.push_back({c.name, ColumnKind::numeric, 0});
            ++ni;
        }
    for (const auto& c : raw.desc.columns)
        if (c.kind == ColumnKind::categorical)
            bundle.schema.columns.push_back({c.name, ColumnKind::categorical, bundle.encoding[ci++].cardinality()});
    bundle.schema.validate();

    // targets
    std::map<std::string, double> label_index;
    if (raw.desc.task != Task::regression) {
        std::vector<std::string> uniq(raw.y_cls);
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        for (std::size_t i = 0; i < uniq.size(); ++i) label_index[uniq[i]] = static_cast<double>(i);
        bundle.classes = uniq.size();
        if (raw.desc.task == Task::binary && bundle.classes != 2)
            throw DataError("prepare: binary task needs exactly 2 classes, found " +
                            std::to_string(bundle.classes));
        if (raw.desc.classes && raw.desc.classes != bundle.classes)
            throw DataError("prepare: declared class count " + std::to_string(raw.desc.classes) +
                            " != observed " + std::to_string(bundle.classes));
    } else {
        double s = 0.0, s2 = 0.0;
        for (std::size_t i : idx.train) s += raw.y_reg[i];
        bundle.target_mean = s / static_cast<double>(idx.train.size());
        for (std::size_t i : idx.train) {
            const double d = raw.y_reg[i] - bundle.target_mean;
            s2 += d * d;
        }
        bundle.target_std = std::sqrt(s2 / static_cast<double>(idx.train.size()));
        if (bundle.target_std == 0.0) throw DataError("prepare: regression target has zero train variance");
    }

    auto materialize = [&](const std::vector<std::size_t>& rows) {
        Batch b;
        b.n = rows.size();
        b.k_num = k_num;
        b.k_cat = k_cat;
        b.x_num.resize(b.n * k_num);
        b.x_cat.resize(b.n * k_cat);
        b.y.resize(b.n);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const std::size_t i = rows[r];
            for (std::size_t j = 0; j < k_num; ++j) {
                double v = raw.num_cols[j][i];
                if (!std::isfinite(v)) v = bundle.impute_median[j];
                b.x_num[r * k_num + j] = bundle.quantile[j].transform(v);
            }
            for (std::size_t j = 0; j < k_cat; ++j)
                b.x_cat[r * k_cat + j] = bundle.encoding[j].encode(raw.cat_cols[j][i]);
            if (raw.desc.task == Task::regression)
                b.y[r] = (raw.y_reg[i] - bundle.target_mean) / bundle.target_std;
            else
                b.y[r] = label_index.at(raw.y_cls[i]);
        }
        return b;
    };
    bundle.train = materialize(idx.train);
    bundle.val = materialize(idx.val);
    bundle.test = materialize(idx.test);

    // train-split marginals in preprocessed space
    bundle.marginals.numeric.resize(k_num);
    for (std::size_t j = 0; j < k_num; ++j) {
        bundle.marginals.numeric[j].resize(bundle.train.n);
        for (std::size_t i = 0; i < bundle.train.n; ++i)
            bundle.marginals.numeric[j][i] = bundle.train.num_at(i, j);
    }
    bundle.marginals.categorical.resize(k_cat);
    for (std::size_t j = 0; j < k_cat; ++j) {
        bundle.marginals.categorical[j].resize(bundle.train.n);
        for (std::size_t i = 0; i < bundle.train.n; ++i)
            bundle.marginals.categorical[j][i] = bundle.train.cat_at(i, j);
    }

    bundle.batch_size = batch_size_for(bundle.train.n);
    return bundle;
}

// ---------------------------------------------------------------------------
// Bundle (de)serialization: versioned JSON container.

namespace detail {

inline nlohmann::json batch_to_json(const Batch& b) {
    return {{"n", b.n}, {"k_num", b.k_num}, {"k_cat", b.k_cat},
            {"x_num", b.x_num}, {"x_cat", b.x_cat}, {"y", b.y}};
}

inline Batch batch_from_json(const nlohmann::json& j) {
    Batch b;
    b.n = j.at("n").get<std::size_t>();
    b.k_num = j.at("k_num").get<std::size_t>();
    b.k_cat = j.at("k_cat").get<std::size_t>();
    b.x_num = j.at("x_num").get<std::vector<double>>();
    b.x_cat = j.at("x_cat").get<std::vector<std::int32_t>>();
    b.y = j.at("y").get<std::vector<double>>();
    return b;
}

}  // namespace detail

inline nlohmann::json bundle_to_json(const DatasetBundle& b) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : b.schema.columns)
        cols.push_back({{"name", c.name},
                        {"kind", c.kind == ColumnKind::numeric ? "numeric" : "categorical"},
                        {"cardinality", c.cardinality}});
    nlohmann::json qt = nlohmann::json::array();
    for (const auto& q : b.quantile) qt.push_back(q.to_json());
    nlohmann::json enc = nlohmann::json::array();
    for (const auto& e : b.encoding) enc.push_back(e.to_json());
    return {{"format", "tablab-bundle"},
            {"version", 1},
            {"schema", cols},
            {"task", task_name(b.task)},
            {"metric", metric_name(b.metric)},
            {"classes", b.classes},
            {"train", detail::batch_to_json(b.train)},
            {"val", detail::batch_to_json(b.val)},
            {"test", detail::batch_to_json(b.test)},
            {"quantile", qt},
            {"impute_median", b.impute_median},
            {"encoding", enc},
            {"target_mean", b.target_mean},
            {"target_std", b.target_std},
            {"batch_size", b.batch_size}};
}

inline DatasetBundle bundle_from_json(const nlohmann::json& j) {
    if (!j.contains("format") || j["format"] != "tablab-bundle" || j.at("version").get<int>() != 1)
        throw DataError("bundle: unrecognized container");
    DatasetBundle b;
    for (const auto& c : j.at("schema"))
        b.schema.columns.push_back({c.at("name").get<std::string>(),
                                    c.at("kind") == "numeric" ? ColumnKind::numeric : ColumnKind::categorical,
                                    c.at("cardinality").get<std::size_t>()});
    b.task = task_from_string(j.at("task").get<std::string>());
    b.metric = metric_from_string(j.at("metric").get<std::string>());
    b.classes = j.at("classes").get<std::size_t>();
    b.train = detail::batch_from_json(j.at("train"));
    b.val = detail::batch_from_json(j.at("val"));
    b.test = detail::batch_from_json(j.at("test"));
    for (const auto& q : j.at("quantile")) b.quantile.push_back(QuantileTransform::from_json(q));
    b.impute_median = j.at("impute_median").get<std::vector<double>>();
    for (const auto& e : j.at("encoding")) b.encoding.push_back(OrdinalEncoding::from_json(e));
    b.target_mean = j.at("target_mean").get<double>();
    b.target_std = j.at("target_std").get<double>();
    b.batch_size = j.at("batch_size").get<std::size_t>();
    b.marginals.numeric.resize(b.train.k_num);
    for (std::size_t jj = 0; jj < b.train.k_num; ++jj) {
        b.marginals.numeric[jj].resize(b.train.n);
        for (std::size_t i = 0; i < b.train.n; ++i) b.marginals.numeric[jj][i] = b.train.num_at(i, jj);
    }
    b.marginals.categorical.resize(b.train.k_cat);
    for (std::size_t jj = 0; jj < b.train.k_cat; ++jj) {
        b.marginals.categorical[jj].resize(b.train.n);
        for (std::size_t i = 0; i < b.train.n; ++i) b.marginals.categorical[jj][i] = b.train.cat_at(i, jj);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Epoch batching: seeded shuffle for train, fixed order otherwise; the final
// partial batch is kept.

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                           bool shuffle, Rng* rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        if (!rng) throw std::logic_error("epoch_batches: shuffling needs an RNG");
        rng->shuffle(order);
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic datasets for the experiment harness.

enum class SynthKind {
    two_gaussians_binary,
    redundant_columns_binary,
    linear_regression,
    multiclass_blobs,
};

inline SynthKind synth_kind_from_string(const std::string& s) {
    if (s == "two_gaussians_binary") return SynthKind::two_gaussians_binary;
    if (s == "redundant_columns_binary") return SynthKind::redundant_columns_binary;
    if (s == "linear_regression") return SynthKind::linear_regression;
    if (s == "multiclass_blobs") return SynthKind::multiclass_blobs;
    throw ConfigError("unknown synthetic dataset kind: " + s);
}

// Gaussian class-conditional separation for two_gaussians: total mean
// distance 2*delta along the all-ones direction. The Bayes AUC is
// Phi(distance / sqrt(2)).
inline constexpr double kTwoGaussiansDelta = 2.0;
inline constexpr std::size_t kTwoGaussiansFeatures = 6;

inline constexpr std::size_t kRedundantLatents = 4;
inline constexpr std::size_t kRedundantCopies = 5;  // 20 columns total
inline constexpr double kRedundantNoise = 0.1;      // duplicate corr = 1/(1+noise^2)

inline RawDataset synth_generate(SynthKind kind, std::size_t n, std::uint64_t seed) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind) + 0x517f));
    RawDataset raw;
    raw.n = n;
    auto numeric_desc = [&](std::size_t k, Task task, Metric metric) {
        for (std::size_t j = 0; j < k; ++j)
            raw.desc.columns.push_back({"f" + std::to_string(j), ColumnKind::numeric});
        raw.desc.target = "y";
        raw.desc.task = task;
        raw.desc.metric = metric;
        raw.num_cols.resize(k, std::vector<double>(n));
    };
    switch (kind) {
        case SynthKind::two_gaussians_binary: {
            const std::size_t k = kTwoGaussiansFeatures;
            numeric_desc(k, Task::binary, Metric::auc);
            const double shift = kTwoGaussiansDelta / std::sqrt(static_cast<double>(k));
            for (std::size_t i = 0; i < n; ++i) {
                const bool pos = rng.bernoulli(0.5);
                for (std::size_t j = 0; j < k; ++j)
                    raw.num_cols[j][i] = rng.normal() + (pos ? shift : -shift);
                raw.y_cls.push_back(pos ? "1" : "0");
            }
            break;
        }
        case SynthKind::redundant_columns_binary: {
            const std::size_t k = kRedundantLatents * kRedundantCopies;
            numeric_desc(k, Task::binary, Metric::auc);
            for (std::size_t i = 0; i < n; ++i) {
                double score = 0.0;
                for (std::size_t l = 0; l < kRedundantLatents; ++l) {
                    const double g = rng.normal();
                    score += g;
                    for (std::size_t c = 0; c < kRedundantCopies; ++c)
                        raw.num_cols[l * kRedundantCopies + c][i] = g + kRedundantNoise * rng.normal();
                }
                raw.y_cls.push_back(score > 0.0 ? "1" : "0");
            }
            break;
        }
        case SynthKind::linear_regression: {
            const std::size_t k = 8;
            numeric_desc(k, Task::regression, Metric::rmse);
            std::vector<double> w(k);
            for (double& v : w) v = rng.normal();
            raw.y_reg.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                double y = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    raw.num_cols[j][i] = rng.normal();
                    y += w[j] * raw.num_cols[j][i];
                }
                raw.y_reg[i] = y + 0.1 * rng.normal();
            }
            break;
        }
        case SynthKind::multiclass_blobs: {
            const std::size_t k = 6, classes = 5;
            numeric_desc(k, Task::multiclass, Metric::acc);
            std::vector<std::vector<double>> centers(classes, std::vector<double>(k));
            for (auto& c : centers)
                for (double& v : c) v = 2.2 * rng.normal();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t c = rng.below(classes);
                for (std::size_t j = 0; j < k; ++j) raw.num_cols[j][i] = centers[c][j] + rng.normal();
                raw.y_cls.push_back(std::to_string(c));
            }
            break;
        }
    }
    return raw;
}

}  // namespace tablab
