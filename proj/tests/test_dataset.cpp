#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "leakbench/dataset.hpp"
#include "oracles.hpp"

using namespace leakbench;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
    SynthConfig cfg;
    cfg.n_groups = 2;
    cfg.items_per_group = 3;
    cfg.feature_dim = 4;
    cfg.seed = 7;
    return cfg;
}

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "leakbench_test";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("generator produces the requested shape") {
    const auto result = generate_synthetic(small_config());
    CHECK(result.dataset.size() == 6);
    CHECK(result.dataset.n_groups() == 2);
    for (const auto& [gid, idxs] : result.dataset.group_index()) CHECK(idxs.size() == 3);
    CHECK(result.features.dim == 4);
    CHECK(result.features.provenance == FeatureProvenance::raw);
    result.features.validate_against(result.dataset);
}

TEST_CASE("generator rejects bad configs") {
    SynthConfig cfg = small_config();
    cfg.feature_dim = 0;
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
    cfg = small_config();
    cfg.structure = DatasetStructure::degraded_variants;
    cfg.n_distortions = 2;
    cfg.n_levels = 2;  // 2*2 != items_per_group
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
}

TEST_CASE("zero within-group noise collapses a group to one point") {
    SynthConfig cfg = small_config();
    cfg.within_group_noise = 0.0;
    const auto result = generate_synthetic(cfg);
    for (const auto& [gid, idxs] : result.dataset.group_index()) {
        const auto& first = result.features.at(result.dataset.item(idxs[0]).item_id);
        for (std::size_t i : idxs)
            CHECK(result.features.at(result.dataset.item(i).item_id) == first);
    }
}

TEST_CASE("video-frames groups share one MOS; degraded variants vary") {
    SynthConfig cfg = small_config();
    cfg.n_groups = 5;
    const auto video = generate_synthetic(cfg);
    for (const auto& [gid, idxs] : video.dataset.group_index()) {
        const double mos = video.dataset.item(idxs[0]).mos;
        for (std::size_t i : idxs) CHECK(video.dataset.item(i).mos == mos);
    }

    SynthConfig deg = small_config();
    deg.structure = DatasetStructure::degraded_variants;
    deg.n_groups = 4;
    deg.n_distortions = 3;
    deg.n_levels = 2;
    deg.items_per_group = 6;
    const auto degraded = generate_synthetic(deg);
    CHECK(degraded.dataset.size() == 24);
    CHECK(degraded.dataset.structure() == DatasetStructure::degraded_variants);
    bool any_varies = false;
    for (const auto& [gid, idxs] : degraded.dataset.group_index())
        for (std::size_t i : idxs)
            if (degraded.dataset.item(i).mos != degraded.dataset.item(idxs[0]).mos)
                any_varies = true;
    CHECK(any_varies);
}

TEST_CASE("generator is deterministic per seed") {
    SynthConfig cfg = small_config();
    cfg.n_groups = 8;
    const auto a = generate_synthetic(cfg);
    const auto b = generate_synthetic(cfg);
    CHECK(a.dataset == b.dataset);
    CHECK(a.features.vectors == b.features.vectors);
    cfg.seed = 8;
    const auto c = generate_synthetic(cfg);
    CHECK_FALSE(a.features.vectors == c.features.vectors);
}

TEST_CASE("1-NN recovers groups of held-out items at the calibration scale") {
    SynthConfig cfg;
    cfg.n_groups = 200;
    cfg.items_per_group = 30;
    cfg.feature_dim = 16;
    cfg.within_group_noise = 0.3;
    cfg.label_noise = 0.15;
    cfg.seed = 11;
    const auto result = generate_synthetic(cfg);
    CHECK(oracles::knn_group_recovery(result.dataset, result.features) > 0.99);
}

TEST_CASE("identifiability is monotone in the within-group noise") {
    SynthConfig low;
    low.n_groups = 60;
    low.items_per_group = 12;
    low.feature_dim = 16;
    low.within_group_noise = 0.1;
    low.seed = 5;
    SynthConfig high = low;
    high.within_group_noise = 1.0;
    const auto a = generate_synthetic(low);
    const auto b = generate_synthetic(high);
    CHECK(oracles::knn_group_recovery(a.dataset, a.features) >=
          oracles::knn_group_recovery(b.dataset, b.features));
}

TEST_CASE("manifest round-trip") {
    const auto result = generate_synthetic(small_config());
    const auto path = temp_file("manifest_roundtrip.csv");
    write_manifest(result.dataset, path.string());
    const auto loaded = read_manifest(path.string());
    CHECK(loaded == result.dataset);
}

TEST_CASE("manifest parse errors carry line numbers") {
    const auto path = temp_file("manifest_bad.csv");
    {
        std::ofstream os(path);
        os << "item_id,group_id,seq_index,mos\n";
        os << "a0,g0,0,3.2\n";
        os << "a1,g0,1,5.5\n";
    }
    CHECK_THROWS_WITH_AS(read_manifest(path.string()),
                         "manifest: MOS out of range at line 3", DataError);
    {
        std::ofstream os(path);
        os << "item_id,group_id,seq_index,mos\n";
        os << "a0,g1,0,3.2\n";
        os << "a1,g1,0,3.2\n";
    }
    CHECK_THROWS_WITH_AS(read_manifest(path.string()),
                         "manifest: duplicate (group_id, seq_index) at line 3", DataError);
    {
        std::ofstream os(path);
        os << "item_id,group_id,seq_index,mos\n";
        os << "a0,g1,zero,3.2\n";
    }
    CHECK_THROWS_WITH_AS(read_manifest(path.string()), "manifest: bad seq_index at line 2",
                         DataError);
    {
        std::ofstream os(path);
        os << "item_id,group_id,seq_index,mos\n";
        os << "a0,g1,0\n";
    }
    CHECK_THROWS_WITH_AS(read_manifest(path.string()), "manifest: malformed row at line 2",
                         DataError);
}

TEST_CASE("manifest infers degraded structure from varying MOS") {
    const auto path = temp_file("manifest_structure.csv");
    {
        std::ofstream os(path);
        os << "item_id,group_id,seq_index,mos\n";
        os << "a0,g0,0,3.0\n";
        os << "a1,g0,1,2.0\n";
        os << "b0,g1,0,4.0\n";
    }
    CHECK(read_manifest(path.string()).structure() == DatasetStructure::degraded_variants);
}

TEST_CASE("feature files round-trip in both encodings") {
    SynthConfig cfg = small_config();
    cfg.feature_dim = 16;
    const auto result = generate_synthetic(cfg);

    const auto bin_path = temp_file("features.lbf");
    write_features(result.features, bin_path.string());
    const auto bin_loaded = read_features(bin_path.string());
    CHECK(bin_loaded.dim == result.features.dim);
    CHECK(bin_loaded.vectors == result.features.vectors);  // bit exact

    const auto csv_path = temp_file("features.csv");
    write_features(result.features, csv_path.string());
    const auto csv_loaded = read_features(csv_path.string());
    CHECK(csv_loaded.dim == result.features.dim);
    CHECK(csv_loaded.vectors == result.features.vectors);  // shortest round-trip text
}

TEST_CASE("feature file errors") {
    FeatureSet fs;
    fs.dim = 3;
    fs.vectors["a"] = {1.0, 2.0};  // wrong length
    const auto path = temp_file("features_bad.lbf");
    CHECK_THROWS_AS(write_features(fs, path.string()), DataError);

    fs.vectors["a"] = {1.0, 2.0, std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_AS(write_features(fs, path.string()), DataError);

    const auto csv_path = temp_file("features_bad.csv");
    {
        std::ofstream os(csv_path);
        os << "item_id,v0,v1\n";
        os << "a,1.0\n";
    }
    CHECK_THROWS_AS(read_features(csv_path.string()), DataError);
    {
        std::ofstream os(csv_path);
        os << "item_id,v0,v1\n";
        os << "a,1.0,nan\n";
    }
    CHECK_THROWS_AS(read_features(csv_path.string()), DataError);
}

TEST_CASE("dataset invariants are enforced on construction") {
    std::vector<ItemRecord> items;
    items.push_back({"a", "g0", 0, 3.0});
    items.push_back({"b", "g0", 0, 3.0});  // duplicate (group, seq)
    CHECK_THROWS_AS(GroupedDataset(items, DatasetStructure::video_frames), DataError);

    items[1] = {"b", "g0", 1, 2.0};  // varying MOS under video-frames
    CHECK_THROWS_AS(GroupedDataset(items, DatasetStructure::video_frames), DataError);
    CHECK_NOTHROW(GroupedDataset(items, DatasetStructure::degraded_variants));

    items[1] = {"b", "g0", 1, 9.0};  // MOS out of range
    CHECK_THROWS_AS(GroupedDataset(items, DatasetStructure::degraded_variants), DataError);
}
