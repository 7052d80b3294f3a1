#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tablab/harness.hpp"

using namespace tablab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// A sweep small enough to run in seconds.
ExperimentConfig tiny_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.experiment = "supervised";
    cfg.dataset_kind = "synthetic";
    cfg.synth_name = "two_gaussians_binary";
    cfg.dataset_id = "tg";
    cfg.synth_n = 300;
    cfg.methods = {{Method::none, {0.0}}, {Method::mtr_after_bias, {0.2, 0.5}}};
    cfg.seeds = {0, 1};
    cfg.out_dir = out_dir;
    cfg.model.d = 8;
    cfg.model.layers = 1;
    cfg.model.heads = 2;
    cfg.train.max_epochs = 2;
    cfg.workers = 2;
    return cfg;
}

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("config json roundtrip", "[harness]") {
    ExperimentConfig cfg = tiny_config("/tmp/tablab_cfg");
    auto j = cfg.to_json();
    ExperimentConfig back = ExperimentConfig::from_json(j);
    CHECK(back.to_json().dump() == j.dump());

    // defaults fill in grids and ids
    nlohmann::json minimal = {
        {"dataset", {{"kind", "synthetic"}, {"name", "two_gaussians_binary"}, {"n", 500}}},
        {"methods", {"none", "scarf", "hiddenmix"}},
        {"seeds", {0, 1, 2}},
        {"out_dir", "out"},
    };
    ExperimentConfig m = ExperimentConfig::from_json(minimal);
    CHECK(m.dataset_id == "two_gaussians_binary");
    CHECK(m.methods[1].grid == default_pm_grid());
    CHECK(m.methods[2].grid == default_alpha_grid());
    CHECK(m.train.max_epochs == 500);     // supervised default
    CHECK(m.train.patience == 15);
    CHECK(m.train.ssl_max_epochs == 200);
    CHECK(m.train.ssl_patience == 10);
    CHECK(m.train.lr == 1e-4);
    CHECK(m.train.weight_decay == 1e-5);
    CHECK(m.train.augment.apply_probability == 0.5);
    CHECK(m.model.d == 192);              // architecture defaults
    CHECK(m.model.layers == 3);
    CHECK(m.model.heads == 8);
}

TEST_CASE("config validation catches bad setups", "[harness]") {
    ExperimentConfig cfg = tiny_config("/tmp/tablab_cfg2");
    cfg.seeds = {3, 3};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config("/tmp/tablab_cfg2");
    cfg.methods.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config("/tmp/tablab_cfg2");
    cfg.methods[1].grid = {1.5};  // p_m out of range
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    // ssl config rejects cutmix
    cfg = tiny_config("/tmp/tablab_cfg2");
    cfg.experiment = "ssl";
    cfg.methods = {{Method::cutmix, {1.0}}};
    CHECK_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("cutmix"));
}

TEST_CASE("prepare caches bundles and reruns hit the cache", "[harness]") {
    auto dir = fresh_dir("tablab_prepare");
    ExperimentConfig cfg = tiny_config(dir.string());
    DatasetBundle b1 = prepare_cached(cfg, 0);
    const fs::path cache = fs::path(cache_dir_for(cfg));
    REQUIRE(fs::exists(cache));
    std::size_t files = 0;
    for (auto& e : fs::directory_iterator(cache)) files += e.is_regular_file() ? 1 : 0;
    CHECK(files == 1);
    DatasetBundle b2 = prepare_cached(cfg, 0);  // served from the cache file
    CHECK(b1.train.x_num == b2.train.x_num);
    CHECK(b1.val.y == b2.val.y);

    // per-seed bundles differ
    DatasetBundle b3 = prepare_cached(cfg, 1);
    CHECK(b1.train.x_num != b3.train.x_num);
}

TEST_CASE("sweep writes canonical results and a report", "[harness]") {
    auto dir = fresh_dir("tablab_sweep");
    ExperimentConfig cfg = tiny_config(dir.string());
    const std::size_t failures = cmd_run(cfg, false);
    CHECK(failures == 0);

    auto tasks = enumerate_runs(cfg);
    CHECK(tasks.size() == 1 * 2 + 2 * 2);  // none x2 seeds + mtr 2 params x2 seeds
    for (const auto& t : tasks) CHECK(fs::exists(dir / "runs" / (t.run_id() + ".json")));

    auto records = read_jsonl((dir / "results.jsonl").string());
    REQUIRE(records.size() == tasks.size());
    CHECK(records[0].dataset == "tg");
    CHECK(records[0].metric == "AUC");

    cmd_report(dir.string(), (dir / "report").string());
    CHECK(fs::exists(dir / "report" / "report.csv"));
    CHECK(fs::exists(dir / "report" / "ranks.csv"));
    CHECK(fs::exists(dir / "report" / "curves" / "tg__mtr_after_bias.csv"));
    CHECK(fs::exists(dir / "report" / "curves" / "tg__mtr_after_bias.svg"));

    std::string report = slurp(dir / "report" / "report.csv");
    CHECK(report.find("none") != std::string::npos);
    CHECK(report.find("mtr_after_bias") != std::string::npos);
    CHECK(report.rfind("method,tg,rank", 0) == 0);
}

TEST_CASE("interrupted sweep resumes to byte-identical results", "[harness]") {
    auto dir_a = fresh_dir("tablab_sweep_a");
    ExperimentConfig cfg_a = tiny_config(dir_a.string());
    REQUIRE(cmd_run(cfg_a, false) == 0);
    const std::string full = slurp(dir_a / "results.jsonl");
    REQUIRE(!full.empty());

    // simulate an interrupt: only some run files survive in a fresh out dir
    auto dir_b = fresh_dir("tablab_sweep_b");
    ExperimentConfig cfg_b = tiny_config(dir_b.string());
    fs::create_directories(dir_b / "runs");
    auto tasks = enumerate_runs(cfg_a);
    for (std::size_t i = 0; i < tasks.size(); i += 2)
        fs::copy_file(dir_a / "runs" / (tasks[i].run_id() + ".json"),
                      dir_b / "runs" / (tasks[i].run_id() + ".json"));

    REQUIRE(cmd_run(cfg_b, true) == 0);
    CHECK(slurp(dir_b / "results.jsonl") == full);
}

TEST_CASE("ssl sweep includes a supervised control and runs end to end", "[harness]") {
    auto dir = fresh_dir("tablab_ssl_sweep");
    ExperimentConfig cfg = tiny_config(dir.string());
    cfg.experiment = "ssl";
    cfg.synth_n = 400;
    cfg.methods = {{Method::none, {0.0}}, {Method::mtr_after_bias, {0.3}}};
    cfg.seeds = {0};
    cfg.train.ssl_max_epochs = 2;
    cfg.train.max_epochs = 2;
    cfg.train.ssl_fraction = 0.5;
    REQUIRE(cmd_run(cfg, false) == 0);
    auto records = read_jsonl((dir / "results.jsonl").string());
    REQUIRE(records.size() == 2);
    CHECK(records[0].method == "none");  // the Supervised control row
    CHECK(records[1].method == "mtr_after_bias");
}

TEST_CASE("per-run failures are recorded and the sweep continues", "[harness]") {
    auto dir = fresh_dir("tablab_failures");
    ExperimentConfig cfg = tiny_config(dir.string());
    cfg.synth_n = 30;  // enough rows to split, but classes can go missing: force a run error instead
    cfg.methods = {{Method::none, {0.0}}};
    cfg.seeds = {0};
    cfg.model.d = 9;  // 9 % heads(2) != 0 -> model construction fails inside the run
    cfg.model.heads = 2;
    // d=9, heads=2 is indivisible
    const std::size_t failures = cmd_run(cfg, false);
    CHECK(failures == 1);
    auto tasks = enumerate_runs(cfg);
    CHECK(fs::exists(dir / "runs" / (tasks[0].run_id() + ".error.txt")));
    CHECK(slurp(dir / "results.jsonl").empty());
}

TEST_CASE("selfcheck suite passes on a fresh build", "[harness]") {
    std::ostringstream out;
    CHECK(cmd_selfcheck(out));
    std::string text = out.str();
    CHECK(text.find("FAIL") == std::string::npos);
    CHECK(text.find("PASS") != std::string::npos);
}

#ifdef TABLAB_CLI_PATH
TEST_CASE("cli exit codes distinguish config, data, and run errors", "[harness]") {
    const std::string cli = TABLAB_CLI_PATH;
    auto dir = fresh_dir("tablab_cli");

    auto run_cli = [&](const std::string& args) {
        const int status = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };

    // config error: unparseable config file
    std::ofstream(dir / "bad.json") << "{ not json";
    CHECK(run_cli("prepare --config " + (dir / "bad.json").string()) == 2);

    // data error: csv file missing
    nlohmann::json cfg = {
        {"dataset",
         {{"kind", "csv"},
          {"path", (dir / "missing.csv").string()},
          {"schema",
           {{"columns", {{{"name", "x"}, {"kind", "numeric"}}}},
            {"target", "y"},
            {"task", "regression"},
            {"metric", "RMSE"}}}}},
        {"methods", {"none"}},
        {"seeds", {0}},
        {"out_dir", (dir / "out").string()},
    };
    std::ofstream(dir / "data.json") << cfg.dump();
    CHECK(run_cli("prepare --config " + (dir / "data.json").string()) == 3);

    // run error: sweep failures surface as exit 4
    nlohmann::json runcfg = {
        {"dataset", {{"kind", "synthetic"}, {"name", "two_gaussians_binary"}, {"n", 300}}},
        {"methods", {"none"}},
        {"seeds", {0}},
        {"out_dir", (dir / "out2").string()},
        {"model", {{"d", 9}, {"heads", 2}, {"layers", 1}}},
        {"train", {{"max_epochs", 1}}},
    };
    std::ofstream(dir / "run.json") << runcfg.dump();
    CHECK(run_cli("run --config " + (dir / "run.json").string()) == 4);

    // success path
    CHECK(run_cli("selfcheck") == 0);
}
#endif
