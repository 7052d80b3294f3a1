#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "tablab/data.hpp"

using namespace tablab;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path.string();
}

SchemaDescriptor small_desc() {
    SchemaDescriptor d;
    d.columns = {{"age", ColumnKind::numeric}, {"height", ColumnKind::numeric}, {"color", ColumnKind::categorical}};
    d.target = "label";
    d.task = Task::binary;
    d.metric = Metric::auc;
    return d;
}

}  // namespace

TEST_CASE("csv loading", "[data]") {
    auto path = write_temp("tablab_small.csv",
                           "age,height,color,label\n"
                           "1,170,red,0\n"
                           "2,,blue,1\n"
                           "3,182,\"green,ish\",1\n");
    RawDataset raw = load_csv(path, small_desc());
    CHECK(raw.n == 3);
    CHECK(raw.desc.columns.size() == 3);
    CHECK(raw.num_cols[0] == std::vector<double>{1, 2, 3});
    CHECK(std::isnan(raw.num_cols[1][1]));  // missing cell recorded
    CHECK(raw.cat_cols[0][2] == "green,ish");
    CHECK(raw.y_cls == std::vector<std::string>{"0", "1", "1"});

    auto empty = write_temp("tablab_empty.csv", "");
    CHECK_THROWS_AS(load_csv(empty, small_desc()), DataError);

    auto bad = write_temp("tablab_bad.csv", "age,height,color,label\nx,170,red,0\n");
    CHECK_THROWS_WITH(load_csv(bad, small_desc()), Catch::Matchers::ContainsSubstring("age"));

    auto no_target = write_temp("tablab_nt.csv", "age,height,color\n1,2,red\n");
    CHECK_THROWS_WITH(load_csv(no_target, small_desc()), Catch::Matchers::ContainsSubstring("label"));

    // CA-like descriptor: 9 numeric features, regression, RMSE
    SchemaDescriptor ca;
    for (int i = 0; i < 9; ++i) ca.columns.push_back({"x" + std::to_string(i), ColumnKind::numeric});
    ca.target = "price";
    ca.task = Task::regression;
    ca.metric = Metric::rmse;
    std::string header = "x0,x1,x2,x3,x4,x5,x6,x7,x8,price\n";
    std::string row = "1,2,3,4,5,6,7,8,9,4.5\n";
    auto ca_path = write_temp("tablab_ca.csv", header + row + row);
    RawDataset ca_raw = load_csv(ca_path, ca);
    CHECK(ca_raw.desc.columns.size() == 9);
    CHECK(ca_raw.y_reg.size() == 2);
}

TEST_CASE("schema descriptor json roundtrip and metric pairing", "[data]") {
    auto d = small_desc();
    auto j = d.to_json();
    auto back = SchemaDescriptor::from_json(j);
    CHECK(back.columns.size() == 3);
    CHECK(back.target == "label");
    CHECK(back.task == Task::binary);

    SchemaDescriptor bad = d;
    bad.metric = Metric::rmse;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("split is 6:2:2, seeded, stratified", "[data]") {
    RawDataset raw = synth_generate(SynthKind::two_gaussians_binary, 100, 7);
    SplitIdx s1 = split(raw, 3);
    CHECK(s1.train.size() == 60);
    CHECK(s1.val.size() == 20);
    CHECK(s1.test.size() == 20);

    std::set<std::size_t> all;
    for (auto* part : {&s1.train, &s1.val, &s1.test}) all.insert(part->begin(), part->end());
    CHECK(all.size() == 100);  // a partition

    SplitIdx s2 = split(raw, 3);
    CHECK(s1.train == s2.train);
    CHECK(s1.val == s2.val);
    SplitIdx s3 = split(raw, 4);
    CHECK(s1.train != s3.train);

    // stratification: class balance preserved within one row per class
    auto count_pos = [&](const std::vector<std::size_t>& rows) {
        std::size_t c = 0;
        for (auto i : rows) c += raw.y_cls[i] == "1" ? 1 : 0;
        return c;
    };
    std::size_t total_pos = count_pos(s1.train) + count_pos(s1.val) + count_pos(s1.test);
    const double frac = static_cast<double>(total_pos) / 100.0;
    CHECK(std::abs(static_cast<double>(count_pos(s1.train)) - frac * 60.0) <= 1.0);
    CHECK(std::abs(static_cast<double>(count_pos(s1.val)) - frac * 20.0) <= 1.0);

    RawDataset tiny = synth_generate(SynthKind::two_gaussians_binary, 9, 0);
    CHECK_THROWS_AS(split(tiny, 0), DataError);
}

TEST_CASE("validation split truncates to 20000 rows", "[data]") {
    // one numeric column keeps this cheap
    RawDataset raw;
    raw.desc.columns = {{"x", ColumnKind::numeric}};
    raw.desc.target = "y";
    raw.desc.task = Task::regression;
    raw.desc.metric = Metric::rmse;
    raw.n = 200000;
    raw.num_cols.resize(1, std::vector<double>(raw.n));
    raw.y_reg.resize(raw.n);
    for (std::size_t i = 0; i < raw.n; ++i) {
        raw.num_cols[0][i] = static_cast<double>(i % 977);
        raw.y_reg[i] = static_cast<double>(i % 13);
    }
    SplitIdx s = split(raw, 1);
    CHECK(s.train.size() == 120000);
    CHECK(s.val.size() == 20000);  // truncated from 40000
    CHECK(s.test.size() == 40000);
}

TEST_CASE("quantile transform maps the median near zero and is monotone", "[data]") {
    Rng rng(5);
    std::vector<double> values;
    for (int i = 0; i < 2500; ++i) values.push_back(rng.normal(3.0, 2.0));
    auto qt = QuantileTransform::fit(values);
    CHECK(qt.knots().size() == QuantileTransform::kMaxKnots);

    std::sort(values.begin(), values.end());
    const double median = values[values.size() / 2];
    CHECK(std::abs(qt.transform(median)) < 0.01);

    double prev = -std::numeric_limits<double>::infinity();
    for (double x = -6.0; x <= 12.0; x += 0.05) {
        const double t = qt.transform(x);
        CHECK(t >= prev);
        CHECK(std::isfinite(t));
        prev = t;
    }

    // ties collapse to the mid-rank; out-of-range values clip
    auto tied = QuantileTransform::fit({1, 1, 1, 1, 5});
    CHECK(qt.transform(-100.0) == qt.transform(values.front()));
    CHECK(std::abs(tied.transform(1.0) - detail::inverse_normal_cdf(0.375)) < 1e-12);
}

TEST_CASE("inverse normal cdf sanity", "[data]") {
    CHECK(detail::inverse_normal_cdf(0.5) == 0.0);
    CHECK(detail::inverse_normal_cdf(0.975) == Catch::Approx(1.959963984540054).epsilon(1e-9));
    CHECK(detail::inverse_normal_cdf(0.025) == Catch::Approx(-1.959963984540054).epsilon(1e-9));
    CHECK(detail::inverse_normal_cdf(1e-7) == Catch::Approx(-5.199337582187471).epsilon(1e-6));
}

TEST_CASE("ordinal encoding with reserved unknown index", "[data]") {
    auto enc = OrdinalEncoding::fit({"b", "a", "c", "a"});
    CHECK(enc.cardinality() == 4);  // 3 categories + unknown
    CHECK(enc.encode("a") == 0);    // lexicographic order
    CHECK(enc.encode("b") == 1);
    CHECK(enc.encode("c") == 2);
    CHECK(enc.encode("zebra") == enc.unknown_index());
    CHECK(enc.unknown_index() == 3);
}

TEST_CASE("prepare_bundle fits on train and standardizes targets", "[data]") {
    auto csv_path = [&] {
        std::string text = "age,height,color,label\n";
        Rng rng(9);
        for (int i = 0; i < 200; ++i) {
            const char* colors[] = {"red", "green", "blue"};
            text += std::to_string(rng.uniform(0, 50)) + "," + std::to_string(rng.uniform(140, 200)) + "," +
                    colors[rng.below(3)] + "," + (rng.bernoulli(0.4) ? "yes" : "no") + "\n";
        }
        // an unseen category in the tail so val/test can hit the unknown index
        text += "30,170,violet,yes\n";
        return write_temp("tablab_bundle.csv", text);
    }();
    RawDataset raw = load_csv(csv_path, small_desc());
    DatasetBundle b = prepare_bundle(raw, 11);
    CHECK(b.schema.columns.size() == 3);
    CHECK(b.schema.columns[2].kind == ColumnKind::categorical);
    CHECK(b.train.n == 121);
    CHECK(b.batch_size == 64);
    CHECK(b.classes == 2);

    // encoded categories stay inside the cardinality (unknown included)
    const auto card = static_cast<std::int32_t>(b.schema.columns[2].cardinality);
    for (auto v : b.val.x_cat) CHECK(v < card);

    // regression standardization: train target mean 0, std 1
    RawDataset reg = synth_generate(SynthKind::linear_regression, 300, 3);
    DatasetBundle rb = prepare_bundle(reg, 5);
    double mean = 0.0, var = 0.0;
    for (double v : rb.train.y) mean += v;
    mean /= static_cast<double>(rb.train.n);
    for (double v : rb.train.y) var += (v - mean) * (v - mean);
    var /= static_cast<double>(rb.train.n);
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-9);

    // marginals are exactly the preprocessed train columns
    CHECK(rb.marginals.numeric.size() == 8);
    CHECK(rb.marginals.numeric[0].size() == rb.train.n);
    CHECK(rb.marginals.numeric[2][7] == rb.train.num_at(7, 2));
}

TEST_CASE("apply is deterministic given a fitted bundle", "[data]") {
    RawDataset raw = synth_generate(SynthKind::two_gaussians_binary, 300, 21);
    DatasetBundle b1 = prepare_bundle(raw, 4);
    DatasetBundle b2 = prepare_bundle(raw, 4);
    CHECK(b1.train.x_num == b2.train.x_num);
    CHECK(b1.val.x_num == b2.val.x_num);
    CHECK(b1.test.y == b2.test.y);
}

TEST_CASE("bundle json roundtrip", "[data]") {
    RawDataset raw = synth_generate(SynthKind::two_gaussians_binary, 120, 2);
    DatasetBundle b = prepare_bundle(raw, 1);
    auto j = bundle_to_json(b);
    DatasetBundle back = bundle_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.train.x_num == b.train.x_num);
    CHECK(back.val.y == b.val.y);
    CHECK(back.batch_size == b.batch_size);
    CHECK(back.marginals.numeric == b.marginals.numeric);
    CHECK(back.schema.columns.size() == b.schema.columns.size());

    nlohmann::json bad = j;
    bad["format"] = "nope";
    CHECK_THROWS_AS(bundle_from_json(bad), DataError);
}

TEST_CASE("batch size schedule reproduces the size table", "[data]") {
    CHECK(batch_size_for(60000) == 1024);
    CHECK(batch_size_for(50001) == 1024);
    CHECK(batch_size_for(50000) == 512);
    CHECK(batch_size_for(10001) == 512);
    CHECK(batch_size_for(10000) == 256);
    CHECK(batch_size_for(5001) == 256);
    CHECK(batch_size_for(5000) == 128);
    CHECK(batch_size_for(3000) == 128);
    CHECK(batch_size_for(1001) == 128);
    CHECK(batch_size_for(1000) == 64);
    CHECK(batch_size_for(1) == 64);
}

TEST_CASE("epoch batches partition the split", "[data]") {
    Rng rng(3);
    auto batches = epoch_batches(103, 32, true, &rng);
    CHECK(batches.size() == 4);  // ceil(103/32)
    CHECK(batches.back().size() == 7);
    std::set<std::size_t> seen;
    for (const auto& b : batches) seen.insert(b.begin(), b.end());
    CHECK(seen.size() == 103);

    Rng r2(3);
    auto again = epoch_batches(103, 32, true, &r2);
    CHECK(again == batches);
    auto shuffled = epoch_batches(103, 32, true, &r2);
    CHECK(shuffled != batches);  // new epoch, new order

    auto fixed = epoch_batches(10, 4, false, nullptr);
    CHECK(fixed[0] == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("synthetic generators are seed-deterministic", "[data]") {
    for (auto kind : {SynthKind::two_gaussians_binary, SynthKind::redundant_columns_binary,
                      SynthKind::linear_regression, SynthKind::multiclass_blobs}) {
        RawDataset a = synth_generate(kind, 200, 5);
        RawDataset b = synth_generate(kind, 200, 5);
        CHECK(a.num_cols == b.num_cols);
        CHECK(a.y_cls == b.y_cls);
        CHECK(a.y_reg == b.y_reg);
        RawDataset c = synth_generate(kind, 200, 6);
        CHECK(a.num_cols != c.num_cols);
    }
}

TEST_CASE("two_gaussians is near-separable by construction", "[data]") {
    // closed-form Bayes AUC: Phi(mean distance / sqrt(2))
    const double distance = 2.0 * kTwoGaussiansDelta;
    const double bayes_auc = 0.5 * std::erfc(-(distance / std::sqrt(2.0)) / std::sqrt(2.0));
    CHECK(bayes_auc > 0.99);

    // the optimal direction (sum of features) separates empirically too
    RawDataset raw = synth_generate(SynthKind::two_gaussians_binary, 2000, 13);
    double correct = 0.0;
    for (std::size_t i = 0; i < raw.n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < kTwoGaussiansFeatures; ++j) s += raw.num_cols[j][i];
        correct += ((s > 0.0) == (raw.y_cls[i] == "1")) ? 1.0 : 0.0;
    }
    CHECK(correct / static_cast<double>(raw.n) > 0.95);
}

TEST_CASE("redundant_columns duplicates correlate above 0.95", "[data]") {
    RawDataset raw = synth_generate(SynthKind::redundant_columns_binary, 4000, 17);
    REQUIRE(raw.desc.columns.size() == kRedundantLatents * kRedundantCopies);
    auto corr = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double ma = 0, mb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ma += a[i];
            mb += b[i];
        }
        ma /= a.size();
        mb /= b.size();
        double sab = 0, sa = 0, sb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            sab += (a[i] - ma) * (b[i] - mb);
            sa += (a[i] - ma) * (a[i] - ma);
            sb += (b[i] - mb) * (b[i] - mb);
        }
        return sab / std::sqrt(sa * sb);
    };
    for (std::size_t l = 0; l < kRedundantLatents; ++l)
        for (std::size_t c = 1; c < kRedundantCopies; ++c)
            CHECK(corr(raw.num_cols[l * kRedundantCopies], raw.num_cols[l * kRedundantCopies + c]) > 0.95);
}
