#pragma once

// Task metrics, seed aggregation, and report/plot-data export.
//
// AUC is computed by rank sum with average ranks for ties (O(n log n));
// hyperparameter selection uses the mean validation metric; ranks are
// direction-aware with ties resolved to the average rank.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tablab/types.hpp"

namespace tablab {

// P(score of a random positive > score of a random negative), ties at 0.5.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: length mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l == 1 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc: both classes must be present");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

inline double accuracy(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& labels) {
    if (pred.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
    if (pred.empty()) throw std::invalid_argument("accuracy: empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// Predictions and targets live in standardized space; the result is scaled
// back to original units by the train-split target std.
inline double rmse(const std::vector<double>& pred, const std::vector<double>& target, double target_std) {
    if (pred.size() != target.size()) throw std::invalid_argument("rmse: length mismatch");
    if (pred.empty()) throw std::invalid_argument("rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return std::sqrt(s / static_cast<double>(pred.size())) * target_std;
}

// ---------------------------------------------------------------------------
// Score records and aggregation

struct ScoreRecord {
    std::string dataset;
    std::string method;
    double param = 0.0;
    std::uint64_t seed = 0;
    std::string metric;          // AUC | ACC | RMSE
    bool higher_is_better = true;
    double value = 0.0;          // test metric
    double val_value = 0.0;      // validation metric (drives selection)

    nlohmann::json to_json() const {
        return {{"dataset", dataset}, {"method", method}, {"param", param},
                {"seed", seed},       {"metric", metric}, {"higher_is_better", higher_is_better},
                {"value", value},     {"val_value", val_value}};
    }

    static ScoreRecord from_json(const nlohmann::json& j) {
        ScoreRecord r;
        r.dataset = j.at("dataset").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.param = j.at("param").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.metric = j.at("metric").get<std::string>();
        r.higher_is_better = j.at("higher_is_better").get<bool>();
        r.value = j.at("value").get<double>();
        r.val_value = j.at("val_value").get<double>();
        return r;
    }
};

inline void write_jsonl(const std::vector<ScoreRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    for (const auto& r : records) out << r.to_json().dump() << "\n";
}

inline std::vector<ScoreRecord> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    std::vector<ScoreRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(ScoreRecord::from_json(nlohmann::json::parse(line)));
    }
    return out;
}

struct CellStats {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t seeds = 0;
};

// Aggregated view: per (dataset, method) the best hyperparameter by mean
// validation metric and its test mean +- std, plus the full per-param grid.
struct MethodSummary {
    std::string dataset;
    std::string method;
    std::string metric;
    bool higher_is_better = true;
    double best_param = 0.0;
    CellStats best_test;  // test stats at the selected hyperparameter
    std::map<double, CellStats> test_by_param;
    std::map<double, CellStats> val_by_param;
};

namespace detail {

inline CellStats stats_of(const std::vector<double>& xs) {
    CellStats s;
    s.seeds = xs.size();
    if (xs.empty()) return s;
    for (double v : xs) s.mean += v;
    s.mean /= static_cast<double>(xs.size());
    double acc = 0.0;
    for (double v : xs) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(xs.size()));
    return s;
}

}  // namespace detail

inline std::vector<MethodSummary> aggregate(const std::vector<ScoreRecord>& records) {
    if (records.empty()) throw DataError("aggregate: no records");
    std::map<std::pair<std::string, std::string>, std::map<double, std::pair<std::vector<double>, std::vector<double>>>>
        cells;  // (dataset, method) -> param -> (test values, val values)
    std::map<std::pair<std::string, std::string>, std::pair<std::string, bool>> meta;
    for (const auto& r : records) {
        auto key = std::make_pair(r.dataset, r.method);
        cells[key][r.param].first.push_back(r.value);
        cells[key][r.param].second.push_back(r.val_value);
        auto it = meta.find(key);
        if (it == meta.end())
            meta[key] = {r.metric, r.higher_is_better};
        else if (it->second.first != r.metric)
            throw DataError("aggregate: mixed metrics for " + r.dataset + "/" + r.method);
    }
    std::vector<MethodSummary> out;
    for (auto& [key, by_param] : cells) {
        MethodSummary s;
        s.dataset = key.first;
        s.method = key.second;
        s.metric = meta[key].first;
        s.higher_is_better = meta[key].second;
        bool first = true;
        double best_val = 0.0;
        for (auto& [param, vecs] : by_param) {
            CellStats test_stats = detail::stats_of(vecs.first);
            CellStats val_stats = detail::stats_of(vecs.second);
            s.test_by_param[param] = test_stats;
            s.val_by_param[param] = val_stats;
            const bool better = first || (s.higher_is_better ? val_stats.mean > best_val
                                                             : val_stats.mean < best_val);
            if (better) {
                best_val = val_stats.mean;
                s.best_param = param;
                s.best_test = test_stats;
                first = false;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Average ranks (direction-aware, ties get the average rank)

struct RankTable {
    std::vector<std::string> methods;
    std::vector<std::string> datasets;
    std::map<std::string, std::map<std::string, double>> rank;  // dataset -> method -> rank
    std::map<std::string, double> average;                      // method -> mean rank
};

inline RankTable average_rank(const std::vector<MethodSummary>& summaries) {
    RankTable table;
    std::map<std::string, std::vector<const MethodSummary*>> by_dataset;
    std::map<std::string, bool> seen_method;
    for (const auto& s : summaries) {
        by_dataset[s.dataset].push_back(&s);
        if (!seen_method.count(s.method)) {
            seen_method[s.method] = true;
            table.methods.push_back(s.method);
        }
    }
    for (auto& [dataset, rows] : by_dataset) {
        table.datasets.push_back(dataset);
        if (rows.size() != table.methods.size())
            throw DataError("average_rank: dataset '" + dataset + "' lacks scores for some methods");
        std::vector<std::size_t> order(rows.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        const bool hib = rows[0]->higher_is_better;
        auto better = [&](std::size_t a, std::size_t b) {
            return hib ? rows[a]->best_test.mean > rows[b]->best_test.mean
                       : rows[a]->best_test.mean < rows[b]->best_test.mean;
        };
        std::sort(order.begin(), order.end(), better);
        std::size_t i = 0;
        while (i < order.size()) {
            std::size_t j = i;
            while (j < order.size() &&
                   rows[order[j]]->best_test.mean == rows[order[i]]->best_test.mean)
                ++j;
            const double avg = 0.5 * static_cast<double>(i + 1 + j);
            for (std::size_t k = i; k < j; ++k) table.rank[dataset][rows[order[k]]->method] = avg;
            i = j;
        }
    }
    for (const auto& m : table.methods) {
        double total = 0.0;
        for (const auto& d : table.datasets) total += table.rank[d][m];
        table.average[m] = total / static_cast<double>(table.datasets.size());
    }
    return table;
}

// ---------------------------------------------------------------------------
// Exports

// One CSV per (dataset, method): hyperparam, mean, std of the test metric.
inline void export_curves(const std::vector<MethodSummary>& summaries, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& s : summaries) {
        const std::string path = dir + "/" + s.dataset + "__" + s.method + ".csv";
        std::ofstream out(path);
        if (!out) throw DataError("cannot write " + path);
        out << "hyperparam,mean,std\n";
        for (const auto& [param, stats] : s.test_by_param)
            out << param << "," << stats.mean << "," << stats.stddev << "\n";
    }
}

// Minimal SVG rendering of a score-vs-hyperparameter curve with a +-sigma band.
inline void export_curve_svg(const MethodSummary& s, const std::string& path) {
    if (s.test_by_param.empty()) return;
    const double W = 640, H = 400, ml = 60, mr = 20, mt = 30, mb = 50;
    double xmin = s.test_by_param.begin()->first, xmax = s.test_by_param.rbegin()->first;
    if (xmax == xmin) xmax = xmin + 1.0;
    double ymin = 1e300, ymax = -1e300;
    for (const auto& [p, st] : s.test_by_param) {
        ymin = std::min(ymin, st.mean - st.stddev);
        ymax = std::max(ymax, st.mean + st.stddev);
    }
    if (ymax == ymin) {
        ymax += 1.0;
        ymin -= 1.0;
    }
    auto X = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto Y = [&](double v) { return H - mb - (v - ymin) / (ymax - ymin) * (H - mt - mb); };
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<polygon fill='steelblue' fill-opacity='0.2' stroke='none' points='";
    for (const auto& [p, st] : s.test_by_param) svg << X(p) << "," << Y(st.mean + st.stddev) << " ";
    for (auto it = s.test_by_param.rbegin(); it != s.test_by_param.rend(); ++it)
        svg << X(it->first) << "," << Y(it->second.mean - it->second.stddev) << " ";
    svg << "'/>\n<polyline fill='none' stroke='steelblue' stroke-width='2' points='";
    for (const auto& [p, st] : s.test_by_param) svg << X(p) << "," << Y(st.mean) << " ";
    svg << "'/>\n";
    svg << "<text x='" << W / 2 << "' y='" << H - 12 << "' text-anchor='middle' font-size='13'>"
        << s.dataset << " / " << s.method << " (" << s.metric << ")</text>\n</svg>\n";
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << svg.str();
}

// Table-shaped report: one row per method, one column per dataset
// ("mean+-std (param)"), final column the average rank.
inline void write_report_csv(const std::vector<MethodSummary>& summaries, const RankTable& ranks,
                             const std::string& path) {
    std::map<std::string, std::map<std::string, const MethodSummary*>> by_method;
    for (const auto& s : summaries) by_method[s.method][s.dataset] = &s;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "method";
    for (const auto& d : ranks.datasets) out << "," << d;
    out << ",rank\n";
    out.precision(6);
    for (const auto& m : ranks.methods) {
        out << m;
        for (const auto& d : ranks.datasets) {
            const auto* s = by_method[m][d];
            out << "," << s->best_test.mean << "+-" << s->best_test.stddev << " (" << s->best_param << ")";
        }
        out << "," << ranks.average.at(m) << "\n";
    }
}

}  // namespace tablab
