#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "leakbench/pipeline.hpp"

using namespace leakbench;

namespace {

// Small but non-trivial synthetic world; heavy calibration lives in the
// acceptance suite.
SynthResult small_video_world(std::uint64_t seed = 100) {
    SynthConfig cfg;
    cfg.n_groups = 40;
    cfg.items_per_group = 10;
    cfg.feature_dim = 8;
    cfg.within_group_noise = 0.3;
    cfg.label_noise = 0.15;
    cfg.quality_signal = 0.3;
    cfg.seed = seed;
    return generate_synthetic(cfg);
}

ProtocolConfig fast_cell(const std::string& name) {
    ProtocolConfig p;
    p.name = name;
    p.arch = {16, 6};
    p.ft_schedule.learning_rate = 0.03;
    p.ft_schedule.max_epochs = 8;
    p.ft_schedule.patience = 3;
    p.kfold_k = 4;
    p.svr.c = 4.0;
    return p;
}

}  // namespace

TEST_CASE("protocol validation rejects invalid compositions") {
    ProtocolConfig p = fast_cell("x");
    p.test_mode = TestMode::tainted;
    p.ft_mode = FtMode::none;
    CHECK_THROWS_AS(p.validate(), ProtocolError);

    p = fast_cell("x");
    p.predictor = PredictorKind::e2e;
    p.ft_mode = FtMode::none;
    CHECK_THROWS_AS(p.validate(), ProtocolError);
    p.ft_mode = FtMode::clean;
    p.test_mode = TestMode::tainted;
    CHECK_THROWS_AS(p.validate(), ProtocolError);
    p.test_mode = TestMode::independent;
    CHECK_NOTHROW(p.validate());

    p = fast_cell("x");
    p.task = TaskKind::degraded_split;
    p.ft_mode = FtMode::leaky;
    CHECK_THROWS_AS(p.validate(), ProtocolError);
}

TEST_CASE("matrix shape, determinism, and seed isolation") {
    const auto world = small_video_world();
    std::vector<ProtocolConfig> protocols;
    for (const char* name : {"none-ind", "clean-ind", "leaky-ind", "leaky-taint"}) {
        ProtocolConfig p = fast_cell(name);
        if (std::string(name) == "clean-ind") p.ft_mode = FtMode::clean;
        if (std::string(name) == "leaky-ind") p.ft_mode = FtMode::leaky;
        if (std::string(name) == "leaky-taint") {
            p.ft_mode = FtMode::leaky;
            p.test_mode = TestMode::tainted;
        }
        protocols.push_back(p);
    }

    const auto result = run_matrix(world.dataset, world.features, protocols, 5, 777, 1);
    CHECK(result.cells.size() == 4);
    std::size_t total = 0;
    for (const auto& cell : result.cells) total += cell.replicates.size();
    CHECK(total == 20);

    // bitwise determinism of the serialized report
    const auto again = run_matrix(world.dataset, world.features, protocols, 5, 777, 1);
    CHECK(matrix_result_to_json(result) == matrix_result_to_json(again));

    // concurrency does not change results
    const auto parallel = run_matrix(world.dataset, world.features, protocols, 5, 777, 4);
    CHECK(matrix_result_to_json(result) == matrix_result_to_json(parallel));

    // changing one cell's parameters leaves other cells bitwise unchanged
    auto tweaked = protocols;
    tweaked[1].ft_schedule.learning_rate = 0.07;
    const auto partial = run_matrix(world.dataset, world.features, tweaked, 5, 777, 1);
    for (std::size_t c : {std::size_t{0}, std::size_t{2}, std::size_t{3}}) {
        for (int r = 0; r < 5; ++r) {
            CHECK(partial.cells[c].replicates[r].metrics.plcc ==
                  result.cells[c].replicates[r].metrics.plcc);
            CHECK(partial.cells[c].replicates[r].metrics.srocc ==
                  result.cells[c].replicates[r].metrics.srocc);
            CHECK(partial.cells[c].replicates[r].label_access.digest ==
                  result.cells[c].replicates[r].label_access.digest);
        }
    }
}

TEST_CASE("protocol honesty: audits and label-access logs match the mode") {
    const auto world = small_video_world(200);

    ProtocolConfig independent = fast_cell("independent");
    independent.ft_mode = FtMode::clean;
    const auto ind = run_protocol(world.dataset, world.features, independent, 42);
    CHECK(ind.audit_verdict == AuditVerdict::clean);
    CHECK(ind.n_tainted_test_items == 0);
    CHECK(ind.label_access.pre_eval_test_reads == 0);
    CHECK(ind.ft_audit_verdict == AuditVerdict::clean);

    ProtocolConfig tainted = fast_cell("tainted");
    tainted.ft_mode = FtMode::clean;
    tainted.test_mode = TestMode::tainted;
    const auto tnt = run_protocol(world.dataset, world.features, tainted, 42);
    CHECK((tnt.audit_verdict == AuditVerdict::tainted_test ||
           tnt.audit_verdict == AuditVerdict::both));
    CHECK(tnt.n_tainted_test_items > 0);
    CHECK(tnt.label_access.pre_eval_test_reads > 0);
    CHECK(tnt.tainted_test_fraction == doctest::Approx(0.8).epsilon(0.05));

    ProtocolConfig leaky = fast_cell("leaky");
    leaky.ft_mode = FtMode::leaky;
    const auto lk = run_protocol(world.dataset, world.features, leaky, 42);
    CHECK(lk.ft_audit_verdict == AuditVerdict::group_leak);
    CHECK(lk.audit_verdict == AuditVerdict::clean);  // predictor stage stays independent
    CHECK(lk.label_access.pre_eval_test_reads == 0);
}

TEST_CASE("lstm and e2e predictors run end to end") {
    const auto world = small_video_world(300);

    ProtocolConfig lstm_cell = fast_cell("lstm");
    lstm_cell.predictor = PredictorKind::lstm;
    lstm_cell.ft_mode = FtMode::clean;
    lstm_cell.lstm_hidden = 8;
    lstm_cell.lstm_schedule.max_epochs = 6;
    lstm_cell.lstm_schedule.patience = 3;
    const auto lstm_result = run_protocol(world.dataset, world.features, lstm_cell, 9);
    CHECK(lstm_result.metrics.n == 8);  // 20% of 40 groups
    CHECK(std::abs(lstm_result.metrics.srocc) <= 1.0);
    CHECK_FALSE(lstm_result.predictor_trace_digest.empty());
    CHECK(lstm_result.label_access.pre_eval_test_reads == 0);

    ProtocolConfig e2e_cell = fast_cell("e2e");
    e2e_cell.predictor = PredictorKind::e2e;
    e2e_cell.ft_mode = FtMode::clean;
    e2e_cell.e2e_arch = {16, 8, 4};
    e2e_cell.e2e_schedule.max_epochs = 6;
    const auto e2e_result = run_protocol(world.dataset, world.features, e2e_cell, 9);
    CHECK(e2e_result.metrics.n == 8);
    CHECK(std::abs(e2e_result.metrics.plcc) <= 1.0);
    CHECK(e2e_result.label_access.pre_eval_test_reads == 0);
    CHECK(e2e_result.ft_epochs > 0);
}

TEST_CASE("dominant-class baseline equals the dominant-class test frequency") {
    const auto world = small_video_world(400);
    const auto plan = split_holdout_by_group(world.dataset, 0.25, {3, 1}, 5);

    std::array<std::size_t, kNumQualityClasses> train_counts{};
    std::array<std::size_t, kNumQualityClasses> test_counts{};
    std::size_t n_test = 0;
    for (const auto& item : world.dataset.items()) {
        const auto p = plan.at(item.item_id);
        if (p == Partition::train)
            ++train_counts[static_cast<std::size_t>(bin_mos(item.mos))];
        if (p == Partition::test) {
            ++test_counts[static_cast<std::size_t>(bin_mos(item.mos))];
            ++n_test;
        }
    }
    std::size_t dominant = 0;
    for (std::size_t c = 1; c < train_counts.size(); ++c)
        if (train_counts[c] > train_counts[dominant]) dominant = c;
    const double expected =
        static_cast<double>(test_counts[dominant]) / static_cast<double>(n_test);

    CHECK(dominant_class_baseline(plan, world.dataset) == doctest::Approx(expected));
}

TEST_CASE("degraded experiment separates random from grouped splits") {
    SynthConfig cfg;
    cfg.structure = DatasetStructure::degraded_variants;
    cfg.n_groups = 30;
    cfg.n_distortions = 6;
    cfg.n_levels = 4;
    cfg.items_per_group = 24;
    cfg.feature_dim = 8;
    cfg.within_group_noise = 0.2;
    cfg.label_noise = 0.1;
    cfg.seed = 500;
    const auto world = generate_synthetic(cfg);

    ProtocolConfig base = fast_cell("degraded");
    base.task = TaskKind::degraded_split;
    base.extract_mode = ExtractMode::all_layers;
    base.svr.c = 8.0;

    ProtocolConfig random_split = base;
    random_split.name = "random";
    random_split.grouped_split = false;
    ProtocolConfig grouped_split = base;
    grouped_split.name = "grouped";
    grouped_split.grouped_split = true;

    const auto random_result = degraded_split_experiment(world.dataset, world.features,
                                                         random_split, 11);
    const auto grouped_result = degraded_split_experiment(world.dataset, world.features,
                                                          grouped_split, 11);

    CHECK(random_result.ft_audit_verdict == AuditVerdict::group_leak);
    CHECK(grouped_result.ft_audit_verdict == AuditVerdict::clean);
    CHECK(grouped_result.audit_verdict == AuditVerdict::clean);
    CHECK(random_result.metrics.plcc > grouped_result.metrics.plcc);

    // structure guard
    const auto video = small_video_world(1);
    CHECK_THROWS_AS(degraded_split_experiment(video.dataset, video.features, random_split, 1),
                    ProtocolError);
}

TEST_CASE("protocol config json round-trip with defaults and overrides") {
    ProtocolConfig defaults = fast_cell("defaults");
    defaults.svr.c = 2.5;
    const std::string cell_json = R"({
        "name": "leaky-tainted",
        "ft_mode": "leaky",
        "test_mode": "tainted",
        "pooling": "max",
        "kernel": {"kind": "gaussian", "gamma": 0.25},
        "ft_schedule": {"learning_rate": 0.01}
    })";
    const ProtocolConfig parsed = protocol_config_from_json(cell_json, defaults);
    CHECK(parsed.name == "leaky-tainted");
    CHECK(parsed.ft_mode == FtMode::leaky);
    CHECK(parsed.test_mode == TestMode::tainted);
    CHECK(parsed.pooling == PoolingMethod::max);
    CHECK(parsed.kernel.gamma == 0.25);
    CHECK(parsed.ft_schedule.learning_rate == 0.01);
    // untouched fields inherit the defaults
    CHECK(parsed.svr.c == 2.5);
    CHECK(parsed.arch == defaults.arch);

    // full round trip through the serializer
    const ProtocolConfig reparsed =
        protocol_config_from_json(protocol_config_to_json(parsed), ProtocolConfig{});
    CHECK(protocol_config_to_json(reparsed) == protocol_config_to_json(parsed));
}
