#pragma once

// Protocol orchestration: split -> (optional) fine-tune -> extract ->
// pool/sequence -> predict -> evaluate, across the leakage matrix.
//
// Every MOS read during training flows through a ledger; test-item label
// reads that happen before a cell's evaluation step are the runtime
// signature of a tainted protocol and are reported per replicate.

#include <cstdint>
#include <string>
#include <vector>

#include "leakbench/dataset.hpp"
#include "leakbench/lstm.hpp"
#include "leakbench/metrics.hpp"
#include "leakbench/mlp.hpp"
#include "leakbench/split.hpp"
#include "leakbench/svr.hpp"

namespace leakbench {

enum class FtMode { none, clean, leaky };
enum class TestMode { independent, tainted };
enum class PredictorKind { svr, lstm, e2e };
enum class TaskKind { video_matrix, degraded_split };

std::string to_string(FtMode m);
std::string to_string(TestMode m);
std::string to_string(PredictorKind k);
std::string to_string(TaskKind k);
FtMode ft_mode_from_string(const std::string& s);
TestMode test_mode_from_string(const std::string& s);
PredictorKind predictor_from_string(const std::string& s);
TaskKind task_from_string(const std::string& s);
std::string to_string(BatchingMode m);
BatchingMode batching_from_string(const std::string& s);

struct ProtocolConfig {
    std::string name = "cell";
    TaskKind task = TaskKind::video_matrix;
    FtMode ft_mode = FtMode::none;
    TestMode test_mode = TestMode::independent;
    PredictorKind predictor = PredictorKind::svr;

    KernelSpec kernel;                                // svr
    PoolingMethod pooling = PoolingMethod::mean;      // svr on video-frames
    ExtractMode extract_mode = ExtractMode::last_layer;

    double test_fraction = 0.2;
    double frame_fraction = 0.2;
    TrainValRatio ft_ratio{3, 1};
    int kfold_k = 5;
    bool grouped_split = true;  // degraded task only

    std::vector<std::size_t> arch{32, 8};  // surrogate extractor
    TrainSchedule ft_schedule;
    std::size_t lstm_hidden = 32;
    TrainSchedule lstm_schedule;
    BatchingMode lstm_batching = BatchingMode::sorted_nonrandom;
    std::vector<std::size_t> e2e_arch{64, 32, 8};
    double e2e_dropout = 0.25;
    TrainSchedule e2e_schedule;
    SvrConfig svr;
    std::size_t svr_train_cap = 0;  // 0 = train on everything

    ProtocolConfig();

    void validate() const;
};

struct LabelAccessLog {
    std::size_t pre_eval_test_reads = 0;
    std::string digest;
};

// One replicate of one protocol cell.
struct RunResult {
    std::string protocol_name;
    int replicate = 0;
    std::uint64_t seed = 0;
    MetricSummary metrics;
    AuditVerdict audit_verdict = AuditVerdict::clean;      // predictor-stage plan
    AuditVerdict ft_audit_verdict = AuditVerdict::clean;   // fine-tune-stage plan
    std::size_t n_tainted_test_items = 0;
    double tainted_test_fraction = 0.0;
    LabelAccessLog label_access;
    std::string ft_trace_digest;
    std::string predictor_trace_digest;
    int ft_epochs = 0;
};

struct CellSummary {
    ProtocolConfig protocol;
    std::vector<std::uint64_t> seeds;
    std::vector<RunResult> replicates;
    MetricAggregate aggregate;
};

struct MatrixResult {
    std::uint64_t base_seed = 0;
    int replicates = 0;
    std::vector<CellSummary> cells;
};

// Runs one protocol cell once. `seed` drives every stage of the replicate.
RunResult run_protocol(const GroupedDataset& dataset, const FeatureSet& raw_features,
                       const ProtocolConfig& protocol, std::uint64_t seed, int replicate_index = 0);

// Cells x replicates, each with seed = hash(base_seed, protocol name,
// replicate index). `jobs` > 1 runs replicates concurrently; assembly is
// order-independent.
MatrixResult run_matrix(const GroupedDataset& dataset, const FeatureSet& raw_features,
                        const std::vector<ProtocolConfig>& protocols, int replicates,
                        std::uint64_t base_seed, int jobs = 1);

// Accuracy of always predicting the training partition's most frequent MOS
// bin, evaluated on the test partition.
double dominant_class_baseline(const SplitPlan& plan, const GroupedDataset& dataset);

// Table-2 style experiment on degraded-variants data: reference-grouped or
// fully random splits, optional regression-head fine-tuning, item-level SVR
// on extracted features.
RunResult degraded_split_experiment(const GroupedDataset& dataset, const FeatureSet& raw_features,
                                    const ProtocolConfig& protocol, std::uint64_t seed,
                                    int replicate_index = 0);

std::string matrix_result_to_json(const MatrixResult& result);
std::string protocol_config_to_json(const ProtocolConfig& config);
// Parses a protocol cell, starting from `defaults` and applying overrides
// present in the JSON object text.
ProtocolConfig protocol_config_from_json(const std::string& json_text,
                                         const ProtocolConfig& defaults);

}  // namespace leakbench
