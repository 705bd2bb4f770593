#pragma once

// Clean and deliberately-leaky train/validation/test assignment, plus the
// audit that flags group-integrity violations and tainted test items.
//
// All splitters consume randomness in the same order (group shuffle first,
// then the test-count tie-break), so one seed reserves the same test groups
// regardless of which splitter runs. The pipeline pairs protocols on that.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "leakbench/dataset.hpp"

namespace leakbench {

enum class Partition { train, validation, test, excluded };

std::string to_string(Partition p);
Partition partition_from_string(const std::string& s);

struct SplitPlan {
    std::map<std::string, Partition> assignment;
    std::string protocol_tag;
    std::uint64_t seed = 0;

    Partition at(const std::string& item_id) const;
    std::size_t count(Partition p) const;
    // Item indices in dataset order belonging to a partition.
    std::vector<std::size_t> indices_in(const GroupedDataset& dataset, Partition p) const;
    // Groups with at least one item in the partition.
    std::set<std::string> groups_in(const GroupedDataset& dataset, Partition p) const;
};

enum class AuditVerdict { clean, group_leak, tainted_test, both };

std::string to_string(AuditVerdict v);

struct LeakyGroup {
    std::string group_id;
    std::vector<Partition> partitions;  // among train/validation/test, sorted
};

struct AuditReport {
    std::vector<LeakyGroup> leaky_groups;
    std::size_t n_tainted_test_items = 0;
    AuditVerdict verdict = AuditVerdict::clean;
};

struct TrainValRatio {
    int train = 3;
    int val = 1;
};

// Largest-remainder apportionment of `total` across weights; remainder ties
// broken by a seeded shuffle of the part order.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights,
                                   Rng& rng);

// Whole groups go to one partition; sizes follow the fractions to within
// one group (largest-remainder rounding, seeded tie-break).
SplitPlan split_holdout_by_group(const GroupedDataset& dataset, double test_fraction,
                                 TrainValRatio trainval_ratio, std::uint64_t seed);

// Leakage type 1: reserve test groups, pool frame_fraction of the remaining
// items, then split the pool item-wise train:val. Frames of one group land
// on both sides; unsampled items are excluded.
SplitPlan split_leaky_frame_pool(const GroupedDataset& dataset, double test_fraction,
                                 double frame_fraction, TrainValRatio train_val_ratio,
                                 std::uint64_t seed);

// Corrected protocol: sample frame_fraction within each non-test group,
// then assign whole groups to train or validation.
SplitPlan split_clean_frame_sample(const GroupedDataset& dataset, double test_fraction,
                                   double frame_fraction, TrainValRatio train_val_ratio,
                                   std::uint64_t seed);

// k-fold plans for `replicates` replicates (replicate-major order). Folds
// cover items when grouped == false, whole groups otherwise. Non-test items
// go to train; validation stays empty.
std::vector<SplitPlan> make_kfold_plans(const GroupedDataset& dataset, int k, int replicates,
                                        bool grouped, std::uint64_t seed);

// Pure audit. finetune_groups, when given, marks test items whose group was
// used by an upstream fine-tuning stage.
AuditReport audit_plan(const SplitPlan& plan, const GroupedDataset& dataset,
                       const std::optional<std::set<std::string>>& finetune_groups = std::nullopt);

std::string split_plan_to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const std::string& text);
void write_split_plan(const SplitPlan& plan, const std::string& path);
SplitPlan read_split_plan(const std::string& path);
std::string audit_report_to_json(const AuditReport& report);

}  // namespace leakbench
