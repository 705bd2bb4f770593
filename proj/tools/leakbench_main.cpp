// Command-line front end: generate synthetic grouped datasets, produce and
// audit split plans, run protocol matrices and render SVG summaries.
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 protocol violation.
// Failures print one machine-parsable JSON line to stderr.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "leakbench/common.hpp"
#include "leakbench/dataset.hpp"
#include "leakbench/pipeline.hpp"
#include "leakbench/split.hpp"
#include "leakbench/svg_report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "leakbench 1.0.0";

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw leakbench::DataError("cannot open file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

json parse_config(const std::string& path) {
    try {
        return json::parse(slurp(path));
    } catch (const json::exception& e) {
        throw leakbench::ConfigError("config parse error in " + path + ": " + e.what());
    }
}

void atomic_write_text(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw leakbench::DataError("cannot open for write: " + tmp);
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw leakbench::DataError("rename failed for " + path + ": " + ec.message());
}

std::string file_hash(const std::string& path) {
    return leakbench::hex64(leakbench::fnv1a64(slurp(path)));
}

void write_run_manifest(const std::string& out_dir, const std::string& config_path,
                        std::uint64_t seed, const std::vector<std::string>& files) {
    json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["config"] = config_path;
    manifest["out_dir"] = out_dir;
    manifest["seed"] = seed;
    json entries = json::array();
    for (const std::string& f : files) {
        json e;
        e["path"] = f;
        e["fnv64"] = file_hash((fs::path(out_dir) / f).string());
        entries.push_back(std::move(e));
    }
    manifest["files"] = std::move(entries);
    atomic_write_text((fs::path(out_dir) / "run_manifest.json").string(),
                      manifest.dump(2) + "\n");
}

leakbench::SynthConfig synth_from_json(const json& j) try {
    leakbench::SynthConfig cfg;
    cfg.n_groups = j.at("n_groups").get<std::size_t>();
    cfg.items_per_group = j.at("items_per_group").get<std::size_t>();
    cfg.feature_dim = j.at("feature_dim").get<std::size_t>();
    if (j.contains("within_group_noise"))
        cfg.within_group_noise = j.at("within_group_noise").get<double>();
    if (j.contains("label_noise")) cfg.label_noise = j.at("label_noise").get<double>();
    if (j.contains("quality_signal")) cfg.quality_signal = j.at("quality_signal").get<double>();
    if (j.contains("structure"))
        cfg.structure = leakbench::structure_from_string(j.at("structure").get<std::string>());
    if (j.contains("n_distortions")) cfg.n_distortions = j.at("n_distortions").get<std::size_t>();
    if (j.contains("n_levels")) cfg.n_levels = j.at("n_levels").get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
} catch (const json::exception& e) {
    throw leakbench::ConfigError(std::string("synthesis config: ") + e.what());
}

struct DatasetBundle {
    leakbench::GroupedDataset dataset;
    leakbench::FeatureSet features;
};

DatasetBundle load_dataset(const json& spec, const std::string& config_dir) {
    const auto resolve = [&](const std::string& p) {
        fs::path path(p);
        if (path.is_relative()) path = fs::path(config_dir) / path;
        return path.string();
    };
    if (spec.contains("synthetic")) {
        const auto result = leakbench::generate_synthetic(synth_from_json(spec.at("synthetic")));
        return {result.dataset, result.features};
    }
    if (spec.contains("manifest") && spec.contains("features")) {
        auto dataset = leakbench::read_manifest(resolve(spec.at("manifest").get<std::string>()));
        auto features = leakbench::read_features(resolve(spec.at("features").get<std::string>()));
        features.validate_against(dataset);
        return {std::move(dataset), std::move(features)};
    }
    throw leakbench::ConfigError(
        "dataset spec needs either \"synthetic\" or \"manifest\"+\"features\"");
}

int cmd_gen(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed_override) {
    json cfg = parse_config(config_path);
    leakbench::SynthConfig synth = synth_from_json(cfg);
    if (seed_override) synth.seed = *seed_override;
    const auto result = leakbench::generate_synthetic(synth);

    fs::create_directories(out_dir);
    const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
    const std::string features_path = (fs::path(out_dir) / "features.lbf").string();
    leakbench::write_manifest(result.dataset, manifest_path);
    leakbench::write_features(result.features, features_path);
    write_run_manifest(out_dir, config_path, synth.seed, {"manifest.csv", "features.lbf"});

    json out;
    out["items"] = result.dataset.size();
    out["groups"] = result.dataset.n_groups();
    out["feature_dim"] = result.features.dim;
    out["structure"] = leakbench::to_string(result.dataset.structure());
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_split(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, std::optional<std::uint64_t> seed_override) {
    const json cfg = parse_config(config_path);
    const auto dataset = leakbench::read_manifest(data_path);
    const std::string protocol = cfg.at("protocol").get<std::string>();
    std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
    if (seed_override) seed = *seed_override;
    const double test_fraction = cfg.value("test_fraction", 0.2);
    const double frame_fraction = cfg.value("frame_fraction", 0.2);
    leakbench::TrainValRatio ratio;
    if (cfg.contains("ratio")) {
        ratio.train = cfg.at("ratio").at(0).get<int>();
        ratio.val = cfg.at("ratio").at(1).get<int>();
    }

    fs::create_directories(out_dir);
    std::vector<std::string> files;
    if (protocol == "kfold") {
        const int k = cfg.value("k", 5);
        const int replicates = cfg.value("replicates", 1);
        const bool grouped = cfg.value("grouped", true);
        const auto plans = leakbench::make_kfold_plans(dataset, k, replicates, grouped, seed);
        int idx = 0;
        for (const auto& plan : plans) {
            char name[64];
            std::snprintf(name, sizeof(name), "plan_r%03d_f%02d.json", idx / k, idx % k);
            leakbench::write_split_plan(plan, (fs::path(out_dir) / name).string());
            files.emplace_back(name);
            ++idx;
        }
    } else {
        leakbench::SplitPlan plan;
        if (protocol == "holdout-group")
            plan = leakbench::split_holdout_by_group(dataset, test_fraction, ratio, seed);
        else if (protocol == "leaky-frame-pool")
            plan = leakbench::split_leaky_frame_pool(dataset, test_fraction, frame_fraction,
                                                     ratio, seed);
        else if (protocol == "clean-frame-sample")
            plan = leakbench::split_clean_frame_sample(dataset, test_fraction, frame_fraction,
                                                       ratio, seed);
        else
            throw leakbench::ConfigError("unknown split protocol: " + protocol);
        leakbench::write_split_plan(plan, (fs::path(out_dir) / "plan.json").string());
        files.emplace_back("plan.json");
    }
    write_run_manifest(out_dir, config_path, seed, files);

    json out;
    out["plans"] = files;
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_audit(const std::string& plan_path, const std::string& data_path,
              const std::string& finetune_groups_path) {
    const auto dataset = leakbench::read_manifest(data_path);
    const auto plan = leakbench::read_split_plan(plan_path);
    std::optional<std::set<std::string>> finetune_groups;
    if (!finetune_groups_path.empty()) {
        const json groups = parse_config(finetune_groups_path);
        std::set<std::string> set;
        for (const auto& g : groups) set.insert(g.get<std::string>());
        finetune_groups = std::move(set);
    }
    const auto report = leakbench::audit_plan(plan, dataset, finetune_groups);
    std::cout << leakbench::audit_report_to_json(report);
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed_override, int jobs_override) {
    const json cfg = parse_config(config_path);
    const std::string config_dir = fs::path(config_path).parent_path().string();
    const DatasetBundle data = load_dataset(cfg.at("dataset"), config_dir);

    std::uint64_t base_seed = cfg.value("base_seed", std::uint64_t{0});
    if (seed_override) base_seed = *seed_override;
    const int replicates = cfg.value("replicates", 5);
    int jobs = cfg.value("jobs", 1);
    if (jobs_override > 0) jobs = jobs_override;

    leakbench::ProtocolConfig defaults;
    if (cfg.contains("defaults"))
        defaults = leakbench::protocol_config_from_json(cfg.at("defaults").dump(), defaults);
    if (!cfg.contains("protocols") || !cfg.at("protocols").is_array() ||
        cfg.at("protocols").empty())
        throw leakbench::ConfigError("run config needs a non-empty \"protocols\" array");
    std::vector<leakbench::ProtocolConfig> protocols;
    for (const auto& p : cfg.at("protocols"))
        protocols.push_back(leakbench::protocol_config_from_json(p.dump(), defaults));

    const auto result = leakbench::run_matrix(data.dataset, data.features, protocols, replicates,
                                              base_seed, jobs);
    fs::create_directories(out_dir);
    const std::string report = leakbench::matrix_result_to_json(result);
    atomic_write_text((fs::path(out_dir) / "report.json").string(), report);
    write_run_manifest(out_dir, config_path, base_seed, {"report.json"});

    json summary;
    for (const auto& cell : result.cells) {
        json s;
        s["plcc_mean"] = cell.aggregate.plcc.mean;
        s["srocc_mean"] = cell.aggregate.srocc.mean;
        summary[cell.protocol.name] = std::move(s);
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_report(const std::string& in_path, const std::string& svg_path) {
    fs::path report_path(in_path);
    if (fs::is_directory(report_path)) report_path /= "report.json";
    const std::string svg = leakbench::render_report_svg(slurp(report_path.string()));
    atomic_write_text(svg_path, svg);
    std::cout << "{\"svg\":\"" << svg_path << "\"}\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Group-leakage evaluation harness for quality-assessment style pipelines"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    std::string config_path, data_path, out_path, plan_path, finetune_groups_path;
    std::string in_path, svg_path;
    std::uint64_t seed_value = 0;
    bool seed_given = false;
    int jobs = 0;

    auto* gen = app.add_subcommand("gen", "Generate a synthetic grouped dataset");
    gen->add_option("--config", config_path, "Synthesis config (JSON)")->required();
    gen->add_option("--out", out_path, "Output directory")->required();
    gen->add_option("--seed", seed_value, "Seed override")->each([&](const std::string&) {
        seed_given = true;
    });

    auto* split = app.add_subcommand("split", "Produce a train/validation/test plan");
    split->add_option("--config", config_path, "Split config (JSON)")->required();
    split->add_option("--data", data_path, "Manifest CSV")->required();
    split->add_option("--out", out_path, "Output directory")->required();
    split->add_option("--seed", seed_value, "Seed override")->each([&](const std::string&) {
        seed_given = true;
    });

    auto* audit = app.add_subcommand("audit", "Audit a plan for group leaks and taint");
    audit->add_option("--plan", plan_path, "Plan JSON")->required();
    audit->add_option("--data", data_path, "Manifest CSV")->required();
    audit->add_option("--finetune-groups", finetune_groups_path,
                      "JSON array of group ids used by fine-tuning");

    auto* run = app.add_subcommand("run", "Run a protocol matrix");
    run->add_option("--config", config_path, "Matrix config (JSON)")->required();
    run->add_option("--out", out_path, "Output directory")->required();
    run->add_option("--seed", seed_value, "Base seed override")->each([&](const std::string&) {
        seed_given = true;
    });
    run->add_option("--jobs", jobs, "Concurrent replicates");

    auto* report = app.add_subcommand("report", "Render an SVG bar chart from a report");
    report->add_option("--in", in_path, "Results directory or report.json")->required();
    report->add_option("--svg", svg_path, "Output SVG path")->required();

    CLI11_PARSE(app, argc, argv);

    std::optional<std::uint64_t> seed_override;
    if (seed_given) seed_override = seed_value;

    try {
        if (gen->parsed()) return cmd_gen(config_path, out_path, seed_override);
        if (split->parsed()) return cmd_split(config_path, data_path, out_path, seed_override);
        if (audit->parsed()) return cmd_audit(plan_path, data_path, finetune_groups_path);
        if (run->parsed()) return cmd_run(config_path, out_path, seed_override, jobs);
        if (report->parsed()) return cmd_report(in_path, svg_path);
    } catch (const leakbench::ConfigError& e) {
        std::cerr << json{{"error", "config"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    } catch (const leakbench::DataError& e) {
        std::cerr << json{{"error", "data"}, {"message", e.what()}}.dump() << "\n";
        return 3;
    } catch (const leakbench::ProtocolError& e) {
        std::cerr << json{{"error", "protocol"}, {"message", e.what()}}.dump() << "\n";
        return 4;
    } catch (const json::exception& e) {
        std::cerr << json{{"error", "config"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
