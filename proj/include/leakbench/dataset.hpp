#pragma once

// Grouped-dataset data model plus the synthetic generators. Items carry a
// group identity (the parent video or reference image), a sequence index
// and a MOS label; features live in a separate FeatureSet keyed by item id.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "leakbench/common.hpp"

namespace leakbench {

enum class DatasetStructure { video_frames, degraded_variants };

std::string to_string(DatasetStructure s);
DatasetStructure structure_from_string(const std::string& s);

struct ItemRecord {
    std::string item_id;
    std::string group_id;
    int seq_index = 0;
    double mos = 0.0;  // in [1, 5]
};

class GroupedDataset {
public:
    GroupedDataset() = default;

    // Validates invariants: MOS in range, (group_id, seq_index) unique,
    // and for video_frames equal MOS within each group.
    GroupedDataset(std::vector<ItemRecord> items, DatasetStructure structure);

    const std::vector<ItemRecord>& items() const { return items_; }
    const ItemRecord& item(std::size_t idx) const { return items_[idx]; }
    std::size_t size() const { return items_.size(); }
    DatasetStructure structure() const { return structure_; }

    // group_id -> item indices ordered by seq_index.
    const std::map<std::string, std::vector<std::size_t>>& group_index() const {
        return group_index_;
    }
    std::size_t n_groups() const { return group_index_.size(); }
    std::size_t index_of(const std::string& item_id) const;
    bool contains(const std::string& item_id) const;

    bool operator==(const GroupedDataset& other) const {
        return structure_ == other.structure_ && items_equal(other);
    }

private:
    bool items_equal(const GroupedDataset& other) const;

    std::vector<ItemRecord> items_;
    DatasetStructure structure_ = DatasetStructure::video_frames;
    std::map<std::string, std::vector<std::size_t>> group_index_;
    std::map<std::string, std::size_t> id_index_;
};

enum class FeatureProvenance { raw, last_layer, all_layers };

std::string to_string(FeatureProvenance p);

struct FeatureSet {
    std::size_t dim = 0;
    FeatureProvenance provenance = FeatureProvenance::raw;
    // Ordered by item id for deterministic serialization.
    std::map<std::string, std::vector<double>> vectors;

    const std::vector<double>& at(const std::string& item_id) const;
    void validate_against(const GroupedDataset& dataset) const;
};

struct SynthConfig {
    std::size_t n_groups = 0;
    std::size_t items_per_group = 0;
    std::size_t feature_dim = 0;
    double within_group_noise = 0.3;  // sigma_w
    double label_noise = 0.15;
    // Strength of the generalizable quality direction mixed into frame
    // features (video_frames only). Zero removes any cross-group signal.
    double quality_signal = 0.25;
    DatasetStructure structure = DatasetStructure::video_frames;
    std::size_t n_distortions = 0;  // degraded_variants only
    std::size_t n_levels = 0;       // degraded_variants only
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthResult {
    GroupedDataset dataset;
    FeatureSet features;
};

// Deterministic generator; identical configs (incl. seed) give identical
// output. video_frames: feature = e_g + sigma_w * noise + q_signal, one MOS
// per group. degraded_variants: feature = e_g + level * d_k + sigma_w *
// noise, per-variant MOS = base_g - severity_k * level/n_levels + noise.
SynthResult generate_synthetic(const SynthConfig& config);

// Manifest CSV: header item_id,group_id,seq_index,mos (UTF-8, LF).
// Structure is inferred on read: uniform group MOS -> video_frames.
GroupedDataset read_manifest(const std::string& path);
void write_manifest(const GroupedDataset& dataset, const std::string& path);

// Feature file, chosen by extension: ".csv" for text, anything else is the
// binary container (magic LBFS, u32 version, u32 dim, u64 count, then per
// item u16 id length, id bytes, dim little-endian f64).
FeatureSet read_features(const std::string& path);
void write_features(const FeatureSet& features, const std::string& path);

}  // namespace leakbench
