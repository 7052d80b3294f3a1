#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tablab/metrics.hpp"
#include "tablab/rng.hpp"
#include "testutil.hpp"

using namespace tablab;

TEST_CASE("auc basics", "[metrics]") {
    CHECK(auc({0.1, 0.4, 0.9, 0.95}, {0, 0, 1, 1}) == 1.0);
    CHECK(auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);  // all ties
    CHECK(auc({0.9, 0.8, 0.3, 0.2}, {1, 0, 1, 0}) == 0.75);  // brute force over 4 pairs
    CHECK_THROWS_AS(auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST_CASE("rank-sum auc equals the all-pairs oracle", "[metrics]") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(199);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            // coarse grid so ties actually occur
            scores[i] = std::floor(rng.uniform(0, 10)) / 10.0;
            labels[i] = rng.bernoulli(0.4) ? 1 : 0;
            (labels[i] ? has_pos : has_neg) = true;
        }
        if (!has_pos) labels[0] = 1;
        if (!has_neg) labels[n - 1] = 0;
        CHECK(auc(scores, labels) == testutil::auc_all_pairs(scores, labels));
    }
}

TEST_CASE("auc is invariant under strictly increasing transforms", "[metrics]") {
    Rng rng(2);
    std::vector<double> scores(150);
    std::vector<int> labels(150);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.normal();
        labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    const double base = auc(scores, labels);
    std::vector<double> warped(scores);
    for (double& v : warped) v = std::exp(3.0 * v) + 7.0;
    CHECK(auc(warped, labels) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("accuracy and rmse", "[metrics]") {
    CHECK(accuracy({1, 2, 0}, {1, 2, 0}) == 1.0);
    CHECK(accuracy({1, 1, 1}, {0, 0, 0}) == 0.0);
    CHECK(accuracy({1, 2, 0, 3}, {1, 2, 0, 0}) == 0.75);
    CHECK_THROWS_AS(accuracy({1}, {1, 2}), std::invalid_argument);

    CHECK(rmse({1, 2, 3}, {1, 2, 3}, 2.0) == 0.0);
    CHECK(rmse({1, -1}, {0, 0}, 1.0) == 1.0);
    // destandardization scales the reported value by sigma
    const double r = rmse({0.5, 1.5}, {0, 1}, 1.0);
    CHECK(rmse({0.5, 1.5}, {0, 1}, 2.0) == Catch::Approx(2.0 * r).margin(1e-15));
    CHECK_THROWS_AS(rmse({}, {}, 1.0), std::invalid_argument);
}

namespace {

ScoreRecord rec(const std::string& dataset, const std::string& method, double param, std::uint64_t seed,
                double test, double val, bool hib = true) {
    ScoreRecord r;
    r.dataset = dataset;
    r.method = method;
    r.param = param;
    r.seed = seed;
    r.metric = hib ? "AUC" : "RMSE";
    r.higher_is_better = hib;
    r.value = test;
    r.val_value = val;
    return r;
}

}  // namespace

TEST_CASE("aggregate picks the best hyperparameter on validation", "[metrics]") {
    std::vector<ScoreRecord> records{
        rec("ds", "mtr", 0.1, 0, 0.80, 0.78), rec("ds", "mtr", 0.1, 1, 0.90, 0.80),
        rec("ds", "mtr", 0.3, 0, 0.70, 0.90), rec("ds", "mtr", 0.3, 1, 0.72, 0.92),
    };
    auto sums = aggregate(records);
    REQUIRE(sums.size() == 1);
    // 0.3 wins on validation even though 0.1 has the better test mean
    CHECK(sums[0].best_param == 0.3);
    CHECK(sums[0].best_test.mean == Catch::Approx(0.71));
    CHECK(sums[0].best_test.stddev == Catch::Approx(0.01));
    CHECK(sums[0].test_by_param.at(0.1).mean == Catch::Approx(0.85));

    // single seed: mean = value, std = 0
    auto single = aggregate({rec("ds", "m", 0.5, 0, 0.8, 0.8)});
    CHECK(single[0].best_test.mean == 0.8);
    CHECK(single[0].best_test.stddev == 0.0);

    // lower-is-better selects the minimum validation mean
    std::vector<ScoreRecord> low{
        rec("ds", "m", 0.1, 0, 1.4, 1.5, false),
        rec("ds", "m", 0.7, 0, 2.0, 0.9, false),
    };
    auto lsums = aggregate(low);
    CHECK(lsums[0].best_param == 0.7);

    CHECK_THROWS_AS(aggregate({}), DataError);
}

TEST_CASE("aggregation respects metric direction", "[metrics]") {
    // flipping the direction flag flips the selection
    for (bool hib : {true, false}) {
        std::vector<ScoreRecord> records{
            rec("ds", "m", 0.1, 0, 0.5, 0.2, hib),
            rec("ds", "m", 0.9, 0, 0.6, 0.8, hib),
        };
        auto sums = aggregate(records);
        CHECK(sums[0].best_param == (hib ? 0.9 : 0.1));
    }
}

TEST_CASE("average rank with ties", "[metrics]") {
    // 2 methods, A better everywhere -> ranks 1.0 and 2.0
    std::vector<ScoreRecord> records;
    for (const char* ds : {"d1", "d2", "d3"}) {
        records.push_back(rec(ds, "A", 0.1, 0, 0.9, 0.9));
        records.push_back(rec(ds, "B", 0.1, 0, 0.8, 0.8));
    }
    auto table = average_rank(aggregate(records));
    CHECK(table.average.at("A") == 1.0);
    CHECK(table.average.at("B") == 2.0);

    // exact tie -> both get 1.5
    std::vector<ScoreRecord> tie{
        rec("d", "A", 0.1, 0, 0.8, 0.8),
        rec("d", "B", 0.1, 0, 0.8, 0.8),
    };
    auto ttable = average_rank(aggregate(tie));
    CHECK(ttable.rank["d"]["A"] == 1.5);
    CHECK(ttable.rank["d"]["B"] == 1.5);

    // rows sum to M(M+1)/2
    Rng rng(3);
    std::vector<ScoreRecord> many;
    const char* methods[] = {"m1", "m2", "m3", "m4", "m5", "m6"};
    for (int d = 0; d < 13; ++d)
        for (const char* m : methods)
            many.push_back(rec("ds" + std::to_string(d), m, 0.1, 0, rng.uniform(), rng.uniform()));
    auto big = average_rank(aggregate(many));
    CHECK(big.methods.size() == 6);
    CHECK(big.datasets.size() == 13);
    for (const auto& d : big.datasets) {
        double sum = 0.0;
        for (const auto& m : big.methods) sum += big.rank[d][m];
        CHECK(sum == Catch::Approx(21.0));  // 6*7/2
    }

    // incomplete coverage rejected
    std::vector<ScoreRecord> incomplete{rec("d1", "A", 0.1, 0, 1, 1), rec("d1", "B", 0.1, 0, 1, 1),
                                        rec("d2", "A", 0.1, 0, 1, 1)};
    CHECK_THROWS_AS(average_rank(aggregate(incomplete)), DataError);
}

TEST_CASE("jsonl roundtrip and curve export", "[metrics]") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "tablab_metrics_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    std::vector<ScoreRecord> records;
    const double grid[] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
    for (double p : grid)
        for (std::uint64_t seed : {0ULL, 1ULL, 2ULL})
            records.push_back(rec("synth", "mtr", p, seed, 0.8 + 0.01 * p * static_cast<double>(seed),
                                  0.75 + 0.01 * p));
    const std::string path = (dir / "results.jsonl").string();
    write_jsonl(records, path);
    auto back = read_jsonl(path);
    REQUIRE(back.size() == records.size());
    CHECK(back[5].value == records[5].value);
    CHECK(back[5].param == records[5].param);

    auto sums = aggregate(back);
    export_curves(sums, (dir / "curves").string());
    std::ifstream csv(dir / "curves" / "synth__mtr.csv");
    REQUIRE(csv.good());
    std::string line;
    std::getline(csv, line);
    CHECK(line == "hyperparam,mean,std");
    std::size_t rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 7);  // one per grid point

    export_curve_svg(sums[0], (dir / "curves" / "synth__mtr.svg").string());
    CHECK(fs::exists(dir / "curves" / "synth__mtr.svg"));

    auto ranks = average_rank(sums);
    write_report_csv(sums, ranks, (dir / "report.csv").string());
    std::ifstream rep(dir / "report.csv");
    std::getline(rep, line);
    CHECK(line == "method,synth,rank");
    std::getline(rep, line);
    CHECK(line.find("mtr") == 0);
}

TEST_CASE("single-seed curves report zero std", "[metrics]") {
    auto sums = aggregate({rec("d", "m", 0.1, 7, 0.9, 0.8)});
    CHECK(sums[0].test_by_param.at(0.1).stddev == 0.0);
    CHECK(sums[0].test_by_param.at(0.1).seeds == 1);
}
