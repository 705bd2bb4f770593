#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_binary() {
    const char* env = std::getenv("LEAKBENCH_BIN");
    REQUIRE(env != nullptr);
    return env;
}

struct RunOutcome {
    int exit_code = 0;
    std::string stdout_text;
};

RunOutcome run_cli(const std::string& args) {
    const fs::path out = fs::temp_directory_path() / "leakbench_cli_stdout.txt";
    const std::string cmd = cli_binary() + " " + args + " > " + out.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    RunOutcome outcome;
    outcome.exit_code = WEXITSTATUS(status);
    std::ifstream is(out);
    std::stringstream ss;
    ss << is.rdbuf();
    outcome.stdout_text = ss.str();
    return outcome;
}

fs::path work_dir() {
    const auto dir = fs::temp_directory_path() / "leakbench_cli_test";
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("gen, split, audit, run, and report work end to end") {
    const fs::path dir = work_dir();
    fs::remove_all(dir);
    fs::create_directories(dir);

    write_file(dir / "synth.json", R"({
        "n_groups": 24, "items_per_group": 8, "feature_dim": 6,
        "within_group_noise": 0.3, "label_noise": 0.15, "quality_signal": 0.3,
        "structure": "video-frames", "seed": 99
    })");

    auto gen = run_cli("gen --config " + (dir / "synth.json").string() + " --out " +
                       (dir / "data").string());
    CHECK(gen.exit_code == 0);
    CHECK(fs::exists(dir / "data" / "manifest.csv"));
    CHECK(fs::exists(dir / "data" / "features.lbf"));
    CHECK(fs::exists(dir / "data" / "run_manifest.json"));
    const json gen_summary = json::parse(gen.stdout_text);
    CHECK(gen_summary.at("items") == 24 * 8);
    CHECK(gen_summary.at("groups") == 24);

    // the run manifest lists every artifact with a content hash
    const json manifest = json::parse(read_file(dir / "data" / "run_manifest.json"));
    CHECK(manifest.at("files").size() == 2);
    for (const auto& f : manifest.at("files"))
        CHECK(f.at("fnv64").get<std::string>().size() == 16);

    write_file(dir / "split.json", R"({
        "protocol": "leaky-frame-pool", "seed": 3,
        "test_fraction": 0.25, "frame_fraction": 0.5, "ratio": [3, 1]
    })");
    auto split = run_cli("split --config " + (dir / "split.json").string() + " --data " +
                         (dir / "data" / "manifest.csv").string() + " --out " +
                         (dir / "splits").string());
    CHECK(split.exit_code == 0);
    CHECK(fs::exists(dir / "splits" / "plan.json"));

    auto audit = run_cli("audit --plan " + (dir / "splits" / "plan.json").string() + " --data " +
                         (dir / "data" / "manifest.csv").string());
    CHECK(audit.exit_code == 0);
    const json audit_report = json::parse(audit.stdout_text);
    CHECK(audit_report.at("verdict") == "group-leak");

    write_file(dir / "matrix.json", R"({
        "base_seed": 7, "replicates": 2,
        "dataset": {"manifest": "data/manifest.csv", "features": "data/features.lbf"},
        "defaults": {
            "arch": [12, 4], "kfold_k": 4,
            "ft_schedule": {"learning_rate": 0.03, "max_epochs": 5, "patience": 3},
            "svr": {"c": 4.0}
        },
        "protocols": [
            {"name": "none-independent"},
            {"name": "leaky-tainted", "ft_mode": "leaky", "test_mode": "tainted"}
        ]
    })");

    auto run1 = run_cli("run --config " + (dir / "matrix.json").string() + " --out " +
                        (dir / "results").string());
    CHECK(run1.exit_code == 0);
    CHECK(fs::exists(dir / "results" / "report.json"));
    const std::string report1 = read_file(dir / "results" / "report.json");

    auto run2 = run_cli("run --config " + (dir / "matrix.json").string() + " --out " +
                        (dir / "results2").string());
    CHECK(run2.exit_code == 0);
    CHECK(read_file(dir / "results2" / "report.json") == report1);  // byte identical

    const json report = json::parse(report1);
    CHECK(report.at("cells").size() == 2);
    CHECK(report.at("cells")[0].at("per_replicate").size() == 2);

    auto rep = run_cli("report --in " + (dir / "results").string() + " --svg " +
                       (dir / "chart.svg").string());
    CHECK(rep.exit_code == 0);
    const std::string svg = read_file(dir / "chart.svg");
    CHECK(svg.find("<svg") != std::string::npos);

    // every chart value equals the corresponding report value exactly
    for (const auto& cell : report.at("cells")) {
        const std::string name = cell.at("protocol").at("name").get<std::string>();
        for (const std::string metric : {"plcc", "srocc"}) {
            const double mean = cell.at("summary").at(metric + "_mean").get<double>();
            const std::string needle = "data-cell=\"" + name + "\" data-metric=\"" + metric +
                                       "\" data-mean=\"";
            const auto pos = svg.find(needle);
            REQUIRE(pos != std::string::npos);
            const auto start = pos + needle.size();
            const auto end = svg.find('"', start);
            CHECK(std::stod(svg.substr(start, end - start)) == mean);
        }
    }
}

TEST_CASE("error classes map to exit codes") {
    const fs::path dir = work_dir();

    // 2: config error (missing keys)
    write_file(dir / "bad_synth.json", R"({"n_groups": 4})");
    CHECK(run_cli("gen --config " + (dir / "bad_synth.json").string() + " --out " +
                  (dir / "x").string())
              .exit_code == 2);

    // 3: data error (missing manifest)
    write_file(dir / "split_ok.json", R"({"protocol": "holdout-group", "seed": 1})");
    CHECK(run_cli("split --config " + (dir / "split_ok.json").string() +
                  " --data /nonexistent.csv --out " + (dir / "x").string())
              .exit_code == 3);

    // 4: protocol violation (tainted without fine-tuning)
    write_file(dir / "synth_small.json", R"({
        "n_groups": 12, "items_per_group": 4, "feature_dim": 4, "seed": 1
    })");
    run_cli("gen --config " + (dir / "synth_small.json").string() + " --out " +
            (dir / "small").string());
    write_file(dir / "bad_matrix.json", R"({
        "base_seed": 1, "replicates": 1,
        "dataset": {"manifest": "small/manifest.csv", "features": "small/features.lbf"},
        "protocols": [{"name": "invalid", "ft_mode": "none", "test_mode": "tainted"}]
    })");
    CHECK(run_cli("run --config " + (dir / "bad_matrix.json").string() + " --out " +
                  (dir / "y").string())
              .exit_code == 4);
}
