#include "leakbench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace leakbench {

std::string to_string(DatasetStructure s) {
    return s == DatasetStructure::video_frames ? "video-frames" : "degraded-variants";
}

DatasetStructure structure_from_string(const std::string& s) {
    if (s == "video-frames") return DatasetStructure::video_frames;
    if (s == "degraded-variants") return DatasetStructure::degraded_variants;
    throw ConfigError("unknown dataset structure: " + s);
}

std::string to_string(FeatureProvenance p) {
    switch (p) {
        case FeatureProvenance::raw: return "raw";
        case FeatureProvenance::last_layer: return "last-layer";
        case FeatureProvenance::all_layers: return "all-layers";
    }
    return "raw";
}

GroupedDataset::GroupedDataset(std::vector<ItemRecord> items, DatasetStructure structure)
    : items_(std::move(items)), structure_(structure) {
    if (items_.empty()) throw DataError("dataset: no items");
    std::set<std::pair<std::string, int>> seen;
    for (std::size_t i = 0; i < items_.size(); ++i) {
        const ItemRecord& it = items_[i];
        if (it.item_id.empty() || it.group_id.empty())
            throw DataError("dataset: empty id on item " + std::to_string(i));
        if (!std::isfinite(it.mos) || it.mos < 1.0 || it.mos > 5.0)
            throw DataError("dataset: MOS out of range for item " + it.item_id);
        if (it.seq_index < 0)
            throw DataError("dataset: negative seq_index for item " + it.item_id);
        if (!seen.emplace(it.group_id, it.seq_index).second)
            throw DataError("dataset: duplicate (group_id, seq_index) for item " + it.item_id);
        if (!id_index_.emplace(it.item_id, i).second)
            throw DataError("dataset: duplicate item_id " + it.item_id);
        group_index_[it.group_id].push_back(i);
    }
    for (auto& [gid, idxs] : group_index_) {
        std::sort(idxs.begin(), idxs.end(), [&](std::size_t a, std::size_t b) {
            return items_[a].seq_index < items_[b].seq_index;
        });
        if (structure_ == DatasetStructure::video_frames) {
            const double mos0 = items_[idxs.front()].mos;
            for (std::size_t idx : idxs)
                if (items_[idx].mos != mos0)
                    throw DataError("dataset: group " + gid +
                                    " has varying MOS under video-frames structure");
        }
    }
}

std::size_t GroupedDataset::index_of(const std::string& item_id) const {
    auto it = id_index_.find(item_id);
    if (it == id_index_.end()) throw DataError("dataset: unknown item id " + item_id);
    return it->second;
}

bool GroupedDataset::contains(const std::string& item_id) const {
    return id_index_.count(item_id) != 0;
}

bool GroupedDataset::items_equal(const GroupedDataset& other) const {
    if (items_.size() != other.items_.size()) return false;
    for (std::size_t i = 0; i < items_.size(); ++i) {
        const ItemRecord& a = items_[i];
        const ItemRecord& b = other.items_[i];
        if (a.item_id != b.item_id || a.group_id != b.group_id || a.seq_index != b.seq_index ||
            a.mos != b.mos)
            return false;
    }
    return true;
}

const std::vector<double>& FeatureSet::at(const std::string& item_id) const {
    auto it = vectors.find(item_id);
    if (it == vectors.end()) throw DataError("features: no vector for item " + item_id);
    return it->second;
}

void FeatureSet::validate_against(const GroupedDataset& dataset) const {
    if (vectors.size() != dataset.size())
        throw DataError("features: item count mismatch with dataset");
    for (const auto& it : dataset.items()) {
        auto f = vectors.find(it.item_id);
        if (f == vectors.end()) throw DataError("features: missing vector for " + it.item_id);
        if (f->second.size() != dim)
            throw DataError("features: dimension mismatch for " + it.item_id);
    }
}

void SynthConfig::validate() const {
    if (n_groups == 0 || items_per_group == 0 || feature_dim == 0)
        throw ConfigError("synth: n_groups, items_per_group and feature_dim must be positive");
    if (within_group_noise < 0.0 || label_noise < 0.0)
        throw ConfigError("synth: noise levels must be non-negative");
    if (structure == DatasetStructure::degraded_variants) {
        if (n_distortions == 0 || n_levels == 0)
            throw ConfigError("synth: degraded-variants needs n_distortions and n_levels");
        if (n_distortions * n_levels != items_per_group)
            throw ConfigError("synth: items_per_group must equal n_distortions * n_levels");
    }
}

namespace {

std::string padded(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

std::vector<double> draw_vector(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    return v;
}

void normalize(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    if (n > 0.0)
        for (double& x : v) x /= n;
}

double clamp_mos(double v) { return std::min(5.0, std::max(1.0, v)); }

}  // namespace

SynthResult generate_synthetic(const SynthConfig& config) {
    config.validate();
    Rng rng(config.seed);

    std::vector<ItemRecord> items;
    items.reserve(config.n_groups * config.items_per_group);
    FeatureSet features;
    features.dim = config.feature_dim;
    features.provenance = FeatureProvenance::raw;

    if (config.structure == DatasetStructure::video_frames) {
        // One direction carries the cross-group quality signal; everything
        // else about a group's embedding is uninformative about its MOS.
        std::vector<double> quality_dir = draw_vector(rng, config.feature_dim);
        normalize(quality_dir);
        for (std::size_t g = 0; g < config.n_groups; ++g) {
            const std::string gid = "g" + padded(g, 4);
            const std::vector<double> embedding = draw_vector(rng, config.feature_dim);
            const double q = rng.uniform(1.0, 5.0);
            const double mos = clamp_mos(q + config.label_noise * rng.normal());
            for (std::size_t i = 0; i < config.items_per_group; ++i) {
                ItemRecord rec;
                rec.item_id = gid + "_i" + padded(i, 4);
                rec.group_id = gid;
                rec.seq_index = static_cast<int>(i);
                rec.mos = mos;
                std::vector<double> f(config.feature_dim);
                for (std::size_t d = 0; d < config.feature_dim; ++d) {
                    f[d] = embedding[d] + config.within_group_noise * rng.normal() +
                           config.quality_signal * (q - 3.0) * quality_dir[d];
                }
                features.vectors.emplace(rec.item_id, std::move(f));
                items.push_back(std::move(rec));
            }
        }
    } else {
        // Distortion directions are shared across groups, so the level
        // component generalizes; the per-group base quality does not.
        std::vector<std::vector<double>> dist_dirs(config.n_distortions);
        std::vector<double> severities(config.n_distortions);
        for (std::size_t k = 0; k < config.n_distortions; ++k) {
            dist_dirs[k] = draw_vector(rng, config.feature_dim);
            normalize(dist_dirs[k]);
            const double magnitude = rng.uniform(0.8, 1.6);
            for (double& x : dist_dirs[k]) x *= magnitude / static_cast<double>(config.n_levels);
            severities[k] = rng.uniform(1.2, 3.2);
        }
        for (std::size_t g = 0; g < config.n_groups; ++g) {
            const std::string gid = "g" + padded(g, 4);
            const std::vector<double> embedding = draw_vector(rng, config.feature_dim);
            const double base = rng.uniform(2.8, 5.0);
            for (std::size_t k = 0; k < config.n_distortions; ++k) {
                for (std::size_t l = 1; l <= config.n_levels; ++l) {
                    const std::size_t seq = k * config.n_levels + (l - 1);
                    ItemRecord rec;
                    rec.item_id = gid + "_i" + padded(seq, 4);
                    rec.group_id = gid;
                    rec.seq_index = static_cast<int>(seq);
                    const double frac =
                        static_cast<double>(l) / static_cast<double>(config.n_levels);
                    rec.mos = clamp_mos(base - severities[k] * frac +
                                        config.label_noise * rng.normal());
                    std::vector<double> f(config.feature_dim);
                    for (std::size_t d = 0; d < config.feature_dim; ++d) {
                        f[d] = embedding[d] + static_cast<double>(l) * dist_dirs[k][d] +
                               config.within_group_noise * rng.normal();
                    }
                    features.vectors.emplace(rec.item_id, std::move(f));
                    items.push_back(std::move(rec));
                }
            }
        }
    }

    SynthResult out{GroupedDataset(std::move(items), config.structure), std::move(features)};
    return out;
}

namespace {

void atomic_write(const std::string& path, const std::string& content, bool binary) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, binary ? std::ios::binary | std::ios::trunc
                                     : std::ios::trunc);
        if (!os) throw DataError("cannot open for write: " + tmp);
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!os) throw DataError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("rename failed for " + path + ": " + ec.message());
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

void write_manifest(const GroupedDataset& dataset, const std::string& path) {
    std::string out = "item_id,group_id,seq_index,mos\n";
    for (const auto& it : dataset.items()) {
        out += it.item_id;
        out += ',';
        out += it.group_id;
        out += ',';
        out += std::to_string(it.seq_index);
        out += ',';
        out += format_double(it.mos);
        out += '\n';
    }
    atomic_write(path, out, false);
}

GroupedDataset read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest: " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("manifest is empty: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "item_id,group_id,seq_index,mos")
        throw DataError("manifest: unexpected header at line 1: " + line);

    std::vector<ItemRecord> items;
    std::set<std::pair<std::string, int>> seen;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        const std::string at = " at line " + std::to_string(lineno);
        if (fields.size() != 4) throw DataError("manifest: malformed row" + at);
        ItemRecord rec;
        rec.item_id = fields[0];
        rec.group_id = fields[1];
        if (rec.item_id.empty() || rec.group_id.empty())
            throw DataError("manifest: empty id" + at);
        try {
            std::size_t pos = 0;
            rec.seq_index = std::stoi(fields[2], &pos);
            if (pos != fields[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw DataError("manifest: bad seq_index" + at);
        }
        bool ok = false;
        rec.mos = parse_double(fields[3], ok);
        if (!ok) throw DataError("manifest: bad mos" + at);
        if (!std::isfinite(rec.mos) || rec.mos < 1.0 || rec.mos > 5.0)
            throw DataError("manifest: MOS out of range" + at);
        if (!seen.emplace(rec.group_id, rec.seq_index).second)
            throw DataError("manifest: duplicate (group_id, seq_index)" + at);
        items.push_back(std::move(rec));
    }
    if (items.empty()) throw DataError("manifest has no items: " + path);

    // Infer structure: uniform MOS within every group means video-frames.
    std::map<std::string, double> group_mos;
    bool uniform = true;
    for (const auto& it : items) {
        auto [pos, inserted] = group_mos.emplace(it.group_id, it.mos);
        if (!inserted && pos->second != it.mos) {
            uniform = false;
            break;
        }
    }
    return GroupedDataset(std::move(items), uniform ? DatasetStructure::video_frames
                                                    : DatasetStructure::degraded_variants);
}

namespace {

constexpr char kFeatureMagic[4] = {'L', 'B', 'F', 'S'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

struct ByteReader {
    const std::string& data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > data.size()) throw DataError("feature file truncated");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint8_t>(data[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(data[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data.substr(pos, n);
        pos += n;
        return s;
    }
};

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void write_features(const FeatureSet& features, const std::string& path) {
    if (features.dim == 0) throw DataError("features: zero dimension");
    for (const auto& [id, vec] : features.vectors) {
        if (vec.size() != features.dim)
            throw DataError("features: dimension mismatch for " + id);
        for (double v : vec)
            if (!std::isfinite(v)) throw DataError("features: non-finite entry for " + id);
    }

    if (has_suffix(path, ".csv")) {
        std::string out = "item_id";
        for (std::size_t d = 0; d < features.dim; ++d) out += ",v" + std::to_string(d);
        out += '\n';
        for (const auto& [id, vec] : features.vectors) {
            out += id;
            for (double v : vec) {
                out += ',';
                out += format_double(v);
            }
            out += '\n';
        }
        atomic_write(path, out, false);
        return;
    }

    std::string out;
    out.append(kFeatureMagic, 4);
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(features.dim));
    put_u64(out, features.vectors.size());
    for (const auto& [id, vec] : features.vectors) {
        if (id.size() > 0xffff) throw DataError("features: item id too long: " + id);
        put_u16(out, static_cast<std::uint16_t>(id.size()));
        out += id;
        for (double v : vec) put_f64(out, v);
    }
    atomic_write(path, out, true);
}

FeatureSet read_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open feature file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string data = ss.str();

    FeatureSet fs;
    if (has_suffix(path, ".csv")) {
        std::istringstream text(data);
        std::string line;
        if (!std::getline(text, line)) throw DataError("feature csv is empty: " + path);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto header = split_csv_line(line);
        if (header.size() < 2 || header[0] != "item_id")
            throw DataError("feature csv: unexpected header");
        fs.dim = header.size() - 1;
        std::size_t lineno = 1;
        while (std::getline(text, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            const std::string at = " at line " + std::to_string(lineno);
            if (fields.size() != fs.dim + 1)
                throw DataError("feature csv: dimension mismatch" + at);
            std::vector<double> vec(fs.dim);
            for (std::size_t d = 0; d < fs.dim; ++d) {
                bool ok = false;
                vec[d] = parse_double(fields[d + 1], ok);
                if (!ok) throw DataError("feature csv: bad value" + at);
                if (!std::isfinite(vec[d]))
                    throw DataError("feature csv: non-finite entry" + at);
            }
            if (!fs.vectors.emplace(fields[0], std::move(vec)).second)
                throw DataError("feature csv: duplicate item id" + at);
        }
    } else {
        ByteReader r{data};
        const std::string magic = r.bytes(4);
        if (std::memcmp(magic.data(), kFeatureMagic, 4) != 0)
            throw DataError("feature file: bad magic");
        const std::uint32_t version = r.u32();
        if (version != 1) throw DataError("feature file: unsupported version");
        fs.dim = r.u32();
        if (fs.dim == 0) throw DataError("feature file: zero dimension");
        const std::uint64_t count = r.u64();
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::uint16_t idlen = r.u16();
            const std::string id = r.bytes(idlen);
            std::vector<double> vec(fs.dim);
            for (std::size_t d = 0; d < fs.dim; ++d) {
                vec[d] = r.f64();
                if (!std::isfinite(vec[d]))
                    throw DataError("feature file: non-finite entry for " + id);
            }
            if (!fs.vectors.emplace(id, std::move(vec)).second)
                throw DataError("feature file: duplicate item id " + id);
        }
        if (r.pos != data.size()) throw DataError("feature file: trailing bytes");
    }
    if (fs.vectors.empty()) throw DataError("feature file has no vectors: " + path);
    return fs;
}

}  // namespace leakbench
