#pragma once

// Config-driven experiment harness: prepare -> (pretrain) -> train/sweep ->
// report. Runs are independent (method x hyperparameter x seed), scheduled
// on a bounded worker pool, each seeded from the config alone so that an
// interrupted sweep resumed from its per-run files merges byte-identically.

#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tablab/augment.hpp"
#include "tablab/data.hpp"
#include "tablab/metrics.hpp"
#include "tablab/model.hpp"
#include "tablab/train.hpp"

namespace tablab {

inline const std::vector<double>& default_pm_grid() {
    static const std::vector<double> g{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
    return g;
}

inline const std::vector<double>& default_alpha_grid() {
    static const std::vector<double> g{0.1, 0.2, 0.5, 0.75, 1.0, 1.5, 2.0};
    return g;
}

struct MethodGrid {
    Method method = Method::none;
    std::vector<double> grid{0.0};

    bool operator==(const MethodGrid&) const = default;
};

struct ExperimentConfig {
    std::string experiment = "supervised";  // supervised | ssl
    std::string dataset_id = "dataset";
    std::string dataset_kind = "synthetic";  // synthetic | csv
    std::string synth_name = "two_gaussians_binary";
    std::size_t synth_n = 2000;
    std::string csv_path;
    SchemaDescriptor csv_schema;
    std::vector<MethodGrid> methods;
    std::vector<std::uint64_t> seeds{0};
    std::string out_dir = "out";
    ModelConfig model;
    TrainConfig train;
    std::size_t workers = 0;  // 0: all hardware threads

    void validate() const {
        if (experiment != "supervised" && experiment != "ssl")
            throw ConfigError("config: experiment must be 'supervised' or 'ssl'");
        if (dataset_kind != "synthetic" && dataset_kind != "csv")
            throw ConfigError("config: dataset kind must be 'synthetic' or 'csv'");
        if (methods.empty()) throw ConfigError("config: no methods listed");
        for (const auto& m : methods) {
            if (m.grid.empty()) throw ConfigError("config: empty grid for " + method_name(m.method));
            if (experiment == "ssl" && m.method == Method::cutmix)
                throw ConfigError(
                    "config: cutmix is excluded from self-supervised runs (no label mixing in "
                    "contrastive pretraining; it degenerates to scarf)");
            for (double p : m.grid) {
                if (m.method == Method::none) continue;
                AugmentationSpec probe{m.method, p, train.augment.apply_probability};
                probe.validate();
            }
        }
        std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
        if (uniq.size() != seeds.size()) throw ConfigError("config: seeds must be distinct");
        if (seeds.empty()) throw ConfigError("config: no seeds");
        if (out_dir.empty()) throw ConfigError("config: out_dir required");
    }

    static std::vector<double> default_grid(Method m) {
        if (m == Method::none) return {0.0};
        return uses_mask_fraction(m) ? default_pm_grid() : default_alpha_grid();
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        c.experiment = j.value("experiment", c.experiment);
        const auto& ds = j.at("dataset");
        c.dataset_kind = ds.at("kind").get<std::string>();
        c.dataset_id = ds.value("id", std::string{});
        if (c.dataset_kind == "synthetic") {
            c.synth_name = ds.at("name").get<std::string>();
            c.synth_n = ds.at("n").get<std::size_t>();
            if (c.dataset_id.empty()) c.dataset_id = c.synth_name;
        } else {
            c.csv_path = ds.at("path").get<std::string>();
            c.csv_schema = SchemaDescriptor::from_json(ds.at("schema"));
            if (c.dataset_id.empty())
                c.dataset_id = std::filesystem::path(c.csv_path).stem().string();
        }
        for (const auto& m : j.at("methods")) {
            MethodGrid g;
            if (m.is_string()) {
                g.method = method_from_string(m.get<std::string>());
                g.grid = default_grid(g.method);
            } else {
                g.method = method_from_string(m.at("method").get<std::string>());
                g.grid = m.contains("grid") ? m.at("grid").get<std::vector<double>>()
                                            : default_grid(g.method);
            }
            c.methods.push_back(std::move(g));
        }
        c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        c.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("model")) {
            const auto& m = j["model"];
            c.model.d = m.value("d", c.model.d);
            c.model.layers = m.value("layers", c.model.layers);
            c.model.heads = m.value("heads", c.model.heads);
            c.model.attn_dropout = m.value("attn_dropout", c.model.attn_dropout);
            c.model.ffn_dropout = m.value("ffn_dropout", c.model.ffn_dropout);
            c.model.residual_dropout = m.value("residual_dropout", c.model.residual_dropout);
            c.model.ln_eps = m.value("ln_eps", c.model.ln_eps);
            c.model.ssl_dim = m.value("ssl_dim", c.model.ssl_dim);
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
            c.train.patience = t.value("patience", c.train.patience);
            c.train.ssl_max_epochs = t.value("ssl_max_epochs", c.train.ssl_max_epochs);
            c.train.ssl_patience = t.value("ssl_patience", c.train.ssl_patience);
            c.train.lr = t.value("lr", c.train.lr);
            c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
            c.train.ssl_fraction = t.value("ssl_fraction", c.train.ssl_fraction);
            c.train.tau = t.value("tau", c.train.tau);
            c.train.augment.apply_probability =
                t.value("apply_probability", c.train.augment.apply_probability);
        }
        c.workers = j.value("workers", c.workers);
        c.validate();
        return c;
    }

    nlohmann::json to_json() const {
        nlohmann::json ds;
        ds["kind"] = dataset_kind;
        ds["id"] = dataset_id;
        if (dataset_kind == "synthetic") {
            ds["name"] = synth_name;
            ds["n"] = synth_n;
        } else {
            ds["path"] = csv_path;
            ds["schema"] = csv_schema.to_json();
        }
        nlohmann::json ms = nlohmann::json::array();
        for (const auto& m : methods)
            ms.push_back({{"method", method_name(m.method)}, {"grid", m.grid}});
        return {{"experiment", experiment},
                {"dataset", ds},
                {"methods", ms},
                {"seeds", seeds},
                {"out_dir", out_dir},
                {"model",
                 {{"d", model.d},
                  {"layers", model.layers},
                  {"heads", model.heads},
                  {"attn_dropout", model.attn_dropout},
                  {"ffn_dropout", model.ffn_dropout},
                  {"residual_dropout", model.residual_dropout},
                  {"ln_eps", model.ln_eps},
                  {"ssl_dim", model.ssl_dim}}},
                {"train",
                 {{"max_epochs", train.max_epochs},
                  {"patience", train.patience},
                  {"ssl_max_epochs", train.ssl_max_epochs},
                  {"ssl_patience", train.ssl_patience},
                  {"lr", train.lr},
                  {"weight_decay", train.weight_decay},
                  {"ssl_fraction", train.ssl_fraction},
                  {"tau", train.tau},
                  {"apply_probability", train.augment.apply_probability}}},
                {"workers", workers}};
    }
};

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return ExperimentConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Dataset preparation with on-disk caching

inline std::string cache_dir_for(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv("TABLAB_CACHE_DIR"); env && *env) return env;
    return cfg.out_dir + "/cache";
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline RawDataset load_raw(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.dataset_kind == "synthetic")
        return synth_generate(synth_kind_from_string(cfg.synth_name), cfg.synth_n, seed);
    return load_csv(cfg.csv_path, cfg.csv_schema);
}

// Split + preprocess for one seed, cached under a content key.
inline DatasetBundle prepare_cached(const ExperimentConfig& cfg, std::uint64_t seed) {
    nlohmann::json key;
    key["dataset"] = cfg.to_json()["dataset"];
    key["seed"] = seed;
    const std::string dir = cache_dir_for(cfg);
    std::filesystem::create_directories(dir);
    std::ostringstream name;
    name << "bundle_" << std::hex << fnv1a(key.dump()) << ".json";
    const auto path = std::filesystem::path(dir) / name.str();
    if (std::filesystem::exists(path)) {
        std::ifstream in(path);
        nlohmann::json j;
        in >> j;
        return bundle_from_json(j);
    }
    DatasetBundle bundle = prepare_bundle(load_raw(cfg, seed), seed);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        out << bundle_to_json(bundle).dump();
    }
    std::filesystem::rename(tmp, path);
    return bundle;
}

inline void cmd_prepare(const ExperimentConfig& cfg) {
    cfg.validate();
    for (std::uint64_t seed : cfg.seeds) {
        DatasetBundle b = prepare_cached(cfg, seed);
        std::cout << "prepared " << cfg.dataset_id << " seed " << seed << ": train " << b.train.n
                  << ", val " << b.val.n << ", test " << b.test.n << ", batch " << b.batch_size << "\n";
    }
}

// ---------------------------------------------------------------------------
// Run enumeration and execution

struct RunTask {
    std::string dataset_id;
    Method method = Method::none;
    double param = 0.0;
    std::size_t param_idx = 0;
    std::uint64_t seed = 0;

    std::string run_id() const {
        return dataset_id + "__" + method_name(method) + "__p" + std::to_string(param_idx) + "__s" +
               std::to_string(seed);
    }
};

inline std::vector<RunTask> enumerate_runs(const ExperimentConfig& cfg) {
    std::vector<RunTask> out;
    for (const auto& mg : cfg.methods)
        for (std::size_t pi = 0; pi < mg.grid.size(); ++pi)
            for (std::uint64_t seed : cfg.seeds)
                out.push_back({cfg.dataset_id, mg.method, mg.grid[pi], pi, seed});
    return out;
}

inline ScoreRecord execute_run(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                               const RunTask& task) {
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(mix_seed(task.seed, static_cast<std::uint64_t>(task.method)),
                       task.param_idx + 0x9000);
    tc.augment.method = task.method;
    tc.augment.param = task.param;

    Rng model_rng(mix_seed(tc.seed, 0x30de1));
    FTTransformer model(bundle.schema, bundle.out_dim(), cfg.model, model_rng);

    if (cfg.experiment == "supervised") {
        supervised_train(model, bundle, tc);
    } else if (task.method == Method::none) {
        // "Supervised" control: same data budget, no pretraining, no augmentation
        Batch subset = ssl_subset(bundle.train, tc.ssl_fraction);
        TrainConfig plain = tc;
        plain.augment = AugmentationSpec{Method::none, 0.0, tc.augment.apply_probability};
        supervised_train(model, bundle, plain, &subset);
    } else {
        ssl_pretrain(model, bundle, tc);
        finetune(model, bundle, tc);
    }

    EvalResult val =
        evaluate(model, bundle.val, bundle.task, bundle.metric, bundle.target_std, bundle.batch_size);
    EvalResult test =
        evaluate(model, bundle.test, bundle.task, bundle.metric, bundle.target_std, bundle.batch_size);

    ScoreRecord rec;
    rec.dataset = task.dataset_id;
    rec.method = method_name(task.method);
    rec.param = task.param;
    rec.seed = task.seed;
    rec.metric = metric_name(bundle.metric);
    rec.higher_is_better = higher_is_better(bundle.metric);
    rec.value = test.metric_value;
    rec.val_value = val.metric_value;
    return rec;
}

// Executes the sweep. With `resume`, runs whose record files already parse
// are skipped. Returns the number of failed runs.
inline std::size_t cmd_run(const ExperimentConfig& cfg, bool resume) {
    cfg.validate();
    namespace fs = std::filesystem;
    const fs::path runs_dir = fs::path(cfg.out_dir) / "runs";
    fs::create_directories(runs_dir);

    // bundles once per seed, shared read-only by the workers
    std::map<std::uint64_t, DatasetBundle> bundles;
    for (std::uint64_t seed : cfg.seeds) bundles.emplace(seed, prepare_cached(cfg, seed));

    auto tasks = enumerate_runs(cfg);
    std::atomic<std::size_t> next{0}, failures{0};
    std::mutex io_mutex;

    auto record_path = [&](const RunTask& t) { return runs_dir / (t.run_id() + ".json"); };
    auto has_record = [&](const RunTask& t) {
        std::ifstream in(record_path(t));
        if (!in) return false;
        try {
            nlohmann::json j;
            in >> j;
            ScoreRecord::from_json(j);
            return true;
        } catch (...) {
            return false;
        }
    };

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const RunTask& task = tasks[i];
            if (resume && has_record(task)) {
                std::lock_guard lock(io_mutex);
                std::cout << "skip " << task.run_id() << " (already done)\n";
                continue;
            }
            try {
                ScoreRecord rec = execute_run(cfg, bundles.at(task.seed), task);
                const auto tmp = record_path(task).string() + ".tmp";
                {
                    std::ofstream out(tmp);
                    out << rec.to_json().dump() << "\n";
                }
                fs::rename(tmp, record_path(task));
                std::lock_guard lock(io_mutex);
                std::cout << "done " << task.run_id() << ": " << rec.metric << " " << rec.value << "\n";
            } catch (const std::exception& e) {
                ++failures;
                std::ofstream err(runs_dir / (task.run_id() + ".error.txt"));
                err << e.what() << "\n";
                std::lock_guard lock(io_mutex);
                std::cerr << "FAIL " << task.run_id() << ": " << e.what() << "\n";
            }
        }
    };

    std::size_t n_workers = cfg.workers ? cfg.workers : std::thread::hardware_concurrency();
    n_workers = std::max<std::size_t>(1, std::min(n_workers, tasks.size()));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    // canonical merge: enumeration order, one record per line
    std::ofstream out(fs::path(cfg.out_dir) / "results.jsonl");
    for (const auto& task : tasks) {
        std::ifstream in(record_path(task));
        if (!in) continue;
        nlohmann::json j;
        in >> j;
        out << ScoreRecord::from_json(j).to_json().dump() << "\n";
    }
    return failures.load();
}

inline void cmd_report(const std::string& results_dir, const std::string& report_dir) {
    auto records = read_jsonl((std::filesystem::path(results_dir) / "results.jsonl").string());
    if (records.empty()) throw DataError("report: no records in " + results_dir);
    auto summaries = aggregate(records);
    auto ranks = average_rank(summaries);
    std::filesystem::create_directories(report_dir);
    write_report_csv(summaries, ranks, (std::filesystem::path(report_dir) / "report.csv").string());
    const std::string curves = (std::filesystem::path(report_dir) / "curves").string();
    export_curves(summaries, curves);
    for (const auto& s : summaries)
        export_curve_svg(s, curves + "/" + s.dataset + "__" + s.method + ".svg");
    std::ofstream ranks_csv(std::filesystem::path(report_dir) / "ranks.csv");
    ranks_csv << "dataset";
    for (const auto& m : ranks.methods) ranks_csv << "," << m;
    ranks_csv << "\n";
    for (const auto& d : ranks.datasets) {
        ranks_csv << d;
        for (const auto& m : ranks.methods) ranks_csv << "," << ranks.rank[d][m];
        ranks_csv << "\n";
    }
    ranks_csv << "average";
    for (const auto& m : ranks.methods) ranks_csv << "," << ranks.average[m];
    ranks_csv << "\n";
}

// ---------------------------------------------------------------------------
// Selfcheck: the fast invariant suite (gradient checks, augmentation
// invariants, metric oracles). Prints one line per check.

namespace selfcheck {

inline double fd_gradient(const std::function<double()>& f, double* slot, double step = 1e-5) {
    const double orig = *slot;
    *slot = orig + step;
    const double up = f();
    *slot = orig - step;
    const double down = f();
    *slot = orig;
    return (up - down) / (2.0 * step);
}

inline bool gradients_match(const std::function<Tensor()>& forward, std::vector<Tensor> params,
                            double tol) {
    Tape tape;
    std::vector<std::vector<double>> analytic;
    {
        TapeScope scope(tape);
        Tensor loss = forward();
        tape.backward(loss);
        for (const auto& p : params) analytic.push_back(tape.grad(p));
    }
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (std::size_t i = 0; i < params[pi].size(); ++i) {
            const double fd = fd_gradient([&] { return forward().item(); }, params[pi].data() + i);
            const double a = analytic[pi][i];
            if (std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}) > tol) return false;
        }
    return true;
}

}  // namespace selfcheck

inline bool cmd_selfcheck(std::ostream& os) {
    struct Check {
        std::string name;
        std::function<bool()> fn;
    };
    std::vector<Check> checks;

    checks.push_back({"tensor ops gradient vs finite differences", [] {
        Rng rng(1);
        Tensor a(Shape{3, 4}), b(Shape{4, 2}), c(Shape{3, 4});
        for (double& v : a.vec()) v = rng.uniform(-2, 2);
        for (double& v : b.vec()) v = rng.uniform(-2, 2);
        for (double& v : c.vec()) v = rng.uniform(0.5, 2.0);
        a.set_requires_grad(true);
        b.set_requires_grad(true);
        c.set_requires_grad(true);
        return selfcheck::gradients_match(
            [&] {
                return mean_all(mul(softmax_lastdim(matmul(mul(a, c), b)),
                                    matmul(sigmoid(a), exp(b * 0.1))));
            },
            {a, b, c}, 1e-4);
    }});

    checks.push_back({"full model loss gradient vs finite differences", [] {
        ColumnSchema schema;
        for (int i = 0; i < 3; ++i)
            schema.columns.push_back({"f" + std::to_string(i), ColumnKind::numeric, 0});
        ModelConfig mc;
        mc.d = 8;
        mc.layers = 1;
        mc.heads = 2;
        mc.attn_dropout = 0;
        mc.ffn_dropout = 0;
        Rng rng(2);
        FTTransformer model(schema, 1, mc, rng);
        Batch b;
        b.n = 2;
        b.k_num = 3;
        b.k_cat = 0;
        b.x_num = {0.3, -1.0, 0.5, 1.2, 0.1, -0.4};
        b.y = {1, 0};
        std::vector<Tensor> sample;
        for (auto& p : model.parameters()) sample.push_back(p.tensor);
        sample.resize(6);  // a few parameter tensors keep this under budget
        return selfcheck::gradients_match(
            [&] { return mean_all(bce_with_logits(model.forward(b, false, nullptr), b.y)); }, sample,
            1e-4);
    }});

    checks.push_back({"mtr identity and full-mask exactness", [] {
        Rng rng(3);
        Tensor T(Shape{3, 4, 5});
        Tensor mask(Shape{5});
        for (double& v : T.vec()) v = rng.normal();
        for (double& v : mask.vec()) v = rng.normal();
        auto zero = mtr_after_bias(T, 0.0, mask, rng);
        if (zero.tokens.vec() != T.vec()) return false;
        auto full = mtr_after_bias(T, 1.0, mask, rng);
        for (std::size_t r = 0; r < 12; ++r)
            for (std::size_t j = 0; j < 5; ++j)
                if (full.tokens.at(r * 5 + j) != mask.at(j)) return false;
        return true;
    }});

    checks.push_back({"cutmix and hiddenmix swap counts", [] {
        Rng rng(4);
        for (double lambda : {0.0, 0.3, 0.6, 0.9}) {
            std::vector<double> xi{1, 2, 3, 4, 5}, xj{9, 8, 7, 6, 0};
            const double lp =
                cutmix_row_with_lambda(5, 0, xi.data(), nullptr, xj.data(), nullptr, lambda, rng);
            if (lp != std::floor(lambda * 5.0) / 5.0) return false;
            auto s = hiddenmix_flags(16, lambda, rng);
            if (std::count(s.begin(), s.end(), 1) != static_cast<long>(std::floor(lambda * 16)))
                return false;
        }
        return true;
    }});

    checks.push_back({"scarf outputs within training marginals", [] {
        Rng rng(5);
        Batch b;
        b.n = 40;
        b.k_num = 1;
        b.k_cat = 0;
        b.x_num.resize(40);
        for (double& v : b.x_num) v = rng.normal();
        b.y.assign(40, 0.0);
        ColumnMarginals m;
        m.numeric = {{-1.0, 0.0, 1.0}};
        Batch out = scarf_corrupt(b, 0.9, m, rng);
        for (std::size_t i = 0; i < 40; ++i) {
            const double v = out.num_at(i, 0);
            if (v != b.num_at(i, 0) && v != -1.0 && v != 0.0 && v != 1.0) return false;
        }
        return true;
    }});

    checks.push_back({"label-mixing orientations", [] {
        return cutmix_self_weight(0.3) == 0.7 && hiddenmix_self_weight(0.3) == 0.3 &&
               manifold_mixup_self_weight(0.3) == 0.7;
    }});

    checks.push_back({"rank-sum auc equals brute force", [] {
        Rng rng(6);
        for (int t = 0; t < 30; ++t) {
            const std::size_t n = 5 + rng.below(60);
            std::vector<double> s(n);
            std::vector<int> l(n);
            for (std::size_t i = 0; i < n; ++i) {
                s[i] = std::floor(rng.uniform(0, 6));
                l[i] = rng.bernoulli(0.5) ? 1 : 0;
            }
            l[0] = 1;
            l[1] = 0;
            double brute = 0.0;
            std::size_t pairs = 0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    if (l[i] != 1 || l[j] != 0) continue;
                    ++pairs;
                    brute += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
                }
            if (auc(s, l) != brute / static_cast<double>(pairs)) return false;
        }
        return true;
    }});

    checks.push_back({"nt-xent equals the direct formula", [] {
        Rng rng(7);
        for (int t = 0; t < 20; ++t) {
            const std::size_t B = 2 + rng.below(6), h = 3;
            Tensor z(Shape{B, h}), zh(Shape{B, h});
            for (double& v : z.vec()) v = rng.normal();
            for (double& v : zh.vec()) v = rng.normal();
            // direct evaluation
            std::vector<std::vector<double>> u(2 * B, std::vector<double>(h));
            for (std::size_t i = 0; i < B; ++i)
                for (std::size_t j = 0; j < h; ++j) {
                    u[i][j] = z.at(i * h + j);
                    u[B + i][j] = zh.at(i * h + j);
                }
            for (auto& row : u) {
                double n2 = 0;
                for (double v : row) n2 += v * v;
                for (double& v : row) v /= std::sqrt(n2);
            }
            const double tau = 0.8;
            double total = 0.0;
            for (std::size_t a = 0; a < 2 * B; ++a) {
                const std::size_t pos = a < B ? a + B : a - B;
                double denom = 0.0, spos = 0.0;
                for (std::size_t c = 0; c < 2 * B; ++c) {
                    if (c == a) continue;
                    double dot = 0;
                    for (std::size_t j = 0; j < h; ++j) dot += u[a][j] * u[c][j];
                    denom += std::exp(dot / tau);
                    if (c == pos) spos = dot / tau;
                }
                total += -(spos - std::log(denom));
            }
            total /= static_cast<double>(2 * B);
            if (std::abs(nt_xent_loss(z, zh, tau).item() - total) > 1e-9) return false;
        }
        return true;
    }});

    checks.push_back({"batch-size schedule table", [] {
        return batch_size_for(60000) == 1024 && batch_size_for(30000) == 512 &&
               batch_size_for(8000) == 256 && batch_size_for(3000) == 128 && batch_size_for(800) == 64;
    }});

    checks.push_back({"quantile transform monotone", [] {
        Rng rng(8);
        std::vector<double> vals(500);
        for (double& v : vals) v = rng.normal(1.0, 3.0);
        auto qt = QuantileTransform::fit(vals);
        double prev = -1e300;
        for (double x = -9; x < 11; x += 0.1) {
            const double t = qt.transform(x);
            if (t < prev) return false;
            prev = t;
        }
        return true;
    }});

    bool all_ok = true;
    for (auto& check : checks) {
        bool ok = false;
        try {
            ok = check.fn();
        } catch (const std::exception& e) {
            os << "ERROR " << check.name << ": " << e.what() << "\n";
            ok = false;
        }
        os << (ok ? "PASS " : "FAIL ") << check.name << "\n";
        all_ok = all_ok && ok;
    }
    return all_ok;
}

}  // namespace tablab
