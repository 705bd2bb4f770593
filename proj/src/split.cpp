#include "leakbench/split.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace leakbench {

std::string to_string(Partition p) {
    switch (p) {
        case Partition::train: return "train";
        case Partition::validation: return "validation";
        case Partition::test: return "test";
        case Partition::excluded: return "excluded";
    }
    return "excluded";
}

Partition partition_from_string(const std::string& s) {
    if (s == "train") return Partition::train;
    if (s == "validation") return Partition::validation;
    if (s == "test") return Partition::test;
    if (s == "excluded") return Partition::excluded;
    throw DataError("unknown partition label: " + s);
}

std::string to_string(AuditVerdict v) {
    switch (v) {
        case AuditVerdict::clean: return "clean";
        case AuditVerdict::group_leak: return "group-leak";
        case AuditVerdict::tainted_test: return "tainted-test";
        case AuditVerdict::both: return "both";
    }
    return "clean";
}

Partition SplitPlan::at(const std::string& item_id) const {
    auto it = assignment.find(item_id);
    if (it == assignment.end()) throw DataError("plan has no assignment for item " + item_id);
    return it->second;
}

std::size_t SplitPlan::count(Partition p) const {
    std::size_t n = 0;
    for (const auto& [id, part] : assignment)
        if (part == p) ++n;
    return n;
}

std::vector<std::size_t> SplitPlan::indices_in(const GroupedDataset& dataset, Partition p) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (at(dataset.item(i).item_id) == p) out.push_back(i);
    return out;
}

std::set<std::string> SplitPlan::groups_in(const GroupedDataset& dataset, Partition p) const {
    std::set<std::string> out;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (at(dataset.item(i).item_id) == p) out.insert(dataset.item(i).group_id);
    return out;
}

std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights,
                                   Rng& rng) {
    const double wsum = [&] {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    }();
    std::vector<std::size_t> counts(weights.size(), 0);
    std::vector<double> remainders(weights.size(), 0.0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double quota = static_cast<double>(total) * weights[i] / wsum;
        counts[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
        remainders[i] = quota - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::vector<std::size_t> order(weights.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return remainders[a] > remainders[b];
    });
    for (std::size_t i = 0; assigned < total; ++i) {
        ++counts[order[i % order.size()]];
        ++assigned;
    }
    return counts;
}

namespace {

std::vector<std::string> shuffled_groups(const GroupedDataset& dataset, Rng& rng) {
    std::vector<std::string> groups;
    groups.reserve(dataset.n_groups());
    for (const auto& [gid, idxs] : dataset.group_index()) groups.push_back(gid);
    rng.shuffle(groups);
    return groups;
}

// Shared first stage: every splitter reserves the same leading segment of
// the shuffled group list as test for a given seed.
std::size_t test_group_count(std::size_t n_groups, double test_fraction, Rng& rng) {
    const auto counts = apportion(n_groups, {test_fraction, 1.0 - test_fraction}, rng);
    return counts[0];
}

void assign_group(SplitPlan& plan, const GroupedDataset& dataset, const std::string& gid,
                  Partition p) {
    for (std::size_t idx : dataset.group_index().at(gid))
        plan.assignment[dataset.item(idx).item_id] = p;
}

void check_fractions(double test_fraction, TrainValRatio ratio) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction must be in (0, 1)");
    if (ratio.train <= 0 || ratio.val <= 0)
        throw ConfigError("train:val ratio parts must be positive");
}

}  // namespace

SplitPlan split_holdout_by_group(const GroupedDataset& dataset, double test_fraction,
                                 TrainValRatio trainval_ratio, std::uint64_t seed) {
    check_fractions(test_fraction, trainval_ratio);
    if (dataset.n_groups() < 3)
        throw ConfigError("holdout split needs at least as many groups as partitions");
    Rng rng(seed);
    const auto groups = shuffled_groups(dataset, rng);
    const std::size_t n_test = test_group_count(groups.size(), test_fraction, rng);
    const std::size_t n_rest = groups.size() - n_test;
    const auto rest = apportion(
        n_rest,
        {static_cast<double>(trainval_ratio.train), static_cast<double>(trainval_ratio.val)}, rng);

    SplitPlan plan;
    plan.seed = seed;
    plan.protocol_tag = "holdout-group/test=" + format_double(test_fraction) + "/ratio=" +
                        std::to_string(trainval_ratio.train) + ":" +
                        std::to_string(trainval_ratio.val);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        Partition p = Partition::validation;
        if (i < n_test)
            p = Partition::test;
        else if (i < n_test + rest[0])
            p = Partition::train;
        assign_group(plan, dataset, groups[i], p);
    }
    return plan;
}

SplitPlan split_leaky_frame_pool(const GroupedDataset& dataset, double test_fraction,
                                 double frame_fraction, TrainValRatio train_val_ratio,
                                 std::uint64_t seed) {
    check_fractions(test_fraction, train_val_ratio);
    if (!(frame_fraction > 0.0 && frame_fraction <= 1.0))
        throw ConfigError("frame_fraction must be in (0, 1]");
    Rng rng(seed);
    const auto groups = shuffled_groups(dataset, rng);
    const std::size_t n_test = test_group_count(groups.size(), test_fraction, rng);

    SplitPlan plan;
    plan.seed = seed;
    plan.protocol_tag = "leaky-frame-pool/test=" + format_double(test_fraction) +
                        "/frames=" + format_double(frame_fraction) + "/ratio=" +
                        std::to_string(train_val_ratio.train) + ":" +
                        std::to_string(train_val_ratio.val);

    std::set<std::string> test_groups;
    for (std::size_t i = 0; i < n_test; ++i) {
        test_groups.insert(groups[i]);
        assign_group(plan, dataset, groups[i], Partition::test);
    }

    // One pool over all remaining frames, regardless of parent group.
    std::vector<std::size_t> pool_candidates;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (!test_groups.count(dataset.item(i).group_id)) pool_candidates.push_back(i);
    rng.shuffle(pool_candidates);
    const std::size_t n_pool =
        apportion(pool_candidates.size(), {frame_fraction, 1.0 - frame_fraction}, rng)[0];
    if (n_pool == 0) throw ConfigError("leaky frame pool is empty");
    const auto pool_split = apportion(
        n_pool,
        {static_cast<double>(train_val_ratio.train), static_cast<double>(train_val_ratio.val)},
        rng);

    for (std::size_t i = 0; i < pool_candidates.size(); ++i) {
        Partition p = Partition::excluded;
        if (i < pool_split[0])
            p = Partition::train;
        else if (i < n_pool)
            p = Partition::validation;
        plan.assignment[dataset.item(pool_candidates[i]).item_id] = p;
    }
    return plan;
}

SplitPlan split_clean_frame_sample(const GroupedDataset& dataset, double test_fraction,
                                   double frame_fraction, TrainValRatio train_val_ratio,
                                   std::uint64_t seed) {
    check_fractions(test_fraction, train_val_ratio);
    if (!(frame_fraction > 0.0 && frame_fraction <= 1.0))
        throw ConfigError("frame_fraction must be in (0, 1]");
    if (dataset.n_groups() < 3)
        throw ConfigError("clean frame split needs at least as many groups as partitions");
    Rng rng(seed);
    const auto groups = shuffled_groups(dataset, rng);
    const std::size_t n_test = test_group_count(groups.size(), test_fraction, rng);
    const std::size_t n_rest = groups.size() - n_test;
    const auto rest = apportion(
        n_rest,
        {static_cast<double>(train_val_ratio.train), static_cast<double>(train_val_ratio.val)},
        rng);

    SplitPlan plan;
    plan.seed = seed;
    plan.protocol_tag = "clean-frame-sample/test=" + format_double(test_fraction) +
                        "/frames=" + format_double(frame_fraction) + "/ratio=" +
                        std::to_string(train_val_ratio.train) + ":" +
                        std::to_string(train_val_ratio.val);

    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (i < n_test) {
            assign_group(plan, dataset, groups[i], Partition::test);
            continue;
        }
        const Partition p =
            (i < n_test + rest[0]) ? Partition::train : Partition::validation;
        const auto& idxs = dataset.group_index().at(groups[i]);
        std::vector<std::size_t> order(idxs.begin(), idxs.end());
        rng.shuffle(order);
        std::size_t n_samp = apportion(
            order.size(), {frame_fraction, 1.0 - frame_fraction}, rng)[0];
        if (n_samp == 0) n_samp = 1;
        for (std::size_t j = 0; j < order.size(); ++j)
            plan.assignment[dataset.item(order[j]).item_id] =
                j < n_samp ? p : Partition::excluded;
    }
    return plan;
}

std::vector<SplitPlan> make_kfold_plans(const GroupedDataset& dataset, int k, int replicates,
                                        bool grouped, std::uint64_t seed) {
    if (k < 2) throw ConfigError("k-fold needs k >= 2");
    if (replicates < 1) throw ConfigError("k-fold needs at least one replicate");
    const std::size_t population = grouped ? dataset.n_groups() : dataset.size();
    if (static_cast<std::size_t>(k) > population)
        throw ConfigError("k-fold: k exceeds population size");

    std::vector<SplitPlan> plans;
    plans.reserve(static_cast<std::size_t>(k) * static_cast<std::size_t>(replicates));
    for (int r = 0; r < replicates; ++r) {
        const std::uint64_t rep_seed = derive_seed(seed, "kfold-replicate", static_cast<std::uint64_t>(r));
        Rng rng(rep_seed);

        std::vector<std::string> units;  // group ids or item ids
        if (grouped) {
            for (const auto& [gid, idxs] : dataset.group_index()) units.push_back(gid);
        } else {
            for (const auto& it : dataset.items()) units.push_back(it.item_id);
        }
        rng.shuffle(units);
        const auto fold_sizes = apportion(
            units.size(), std::vector<double>(static_cast<std::size_t>(k), 1.0), rng);

        std::vector<int> fold_of(units.size(), 0);
        std::size_t cursor = 0;
        for (int f = 0; f < k; ++f)
            for (std::size_t j = 0; j < fold_sizes[static_cast<std::size_t>(f)]; ++j)
                fold_of[cursor++] = f;

        for (int f = 0; f < k; ++f) {
            SplitPlan plan;
            plan.seed = rep_seed;
            plan.protocol_tag = std::string("kfold/") + (grouped ? "grouped" : "item") +
                                "/k=" + std::to_string(k) + "/replicate=" + std::to_string(r) +
                                "/fold=" + std::to_string(f);
            for (std::size_t u = 0; u < units.size(); ++u) {
                const Partition p = fold_of[u] == f ? Partition::test : Partition::train;
                if (grouped)
                    assign_group(plan, dataset, units[u], p);
                else
                    plan.assignment[units[u]] = p;
            }
            plans.push_back(std::move(plan));
        }
    }
    return plans;
}

AuditReport audit_plan(const SplitPlan& plan, const GroupedDataset& dataset,
                       const std::optional<std::set<std::string>>& finetune_groups) {
    if (plan.assignment.size() != dataset.size())
        throw DataError("audit: plan and dataset cover different item sets");
    for (const auto& it : dataset.items())
        if (!plan.assignment.count(it.item_id))
            throw DataError("audit: plan missing item " + it.item_id);

    AuditReport report;
    for (const auto& [gid, idxs] : dataset.group_index()) {
        std::set<Partition> parts;
        for (std::size_t idx : idxs) {
            const Partition p = plan.at(dataset.item(idx).item_id);
            if (p != Partition::excluded) parts.insert(p);
        }
        if (parts.size() >= 2) {
            LeakyGroup lg;
            lg.group_id = gid;
            lg.partitions.assign(parts.begin(), parts.end());
            report.leaky_groups.push_back(std::move(lg));
        }
    }
    if (finetune_groups) {
        for (const auto& it : dataset.items())
            if (plan.at(it.item_id) == Partition::test && finetune_groups->count(it.group_id))
                ++report.n_tainted_test_items;
    }
    const bool leak = !report.leaky_groups.empty();
    const bool taint = report.n_tainted_test_items > 0;
    report.verdict = leak && taint  ? AuditVerdict::both
                     : leak         ? AuditVerdict::group_leak
                     : taint        ? AuditVerdict::tainted_test
                                    : AuditVerdict::clean;
    return report;
}

std::string split_plan_to_json(const SplitPlan& plan) {
    nlohmann::json j;
    j["protocol_tag"] = plan.protocol_tag;
    j["seed"] = plan.seed;
    nlohmann::json assignment = nlohmann::json::object();
    for (const auto& [id, p] : plan.assignment) assignment[id] = to_string(p);
    j["assignment"] = std::move(assignment);
    return j.dump(2) + "\n";
}

SplitPlan split_plan_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("plan json parse error: ") + e.what());
    }
    SplitPlan plan;
    try {
        plan.protocol_tag = j.at("protocol_tag").get<std::string>();
        plan.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& [id, p] : j.at("assignment").items())
            plan.assignment[id] = partition_from_string(p.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("plan json: ") + e.what());
    }
    return plan;
}

void write_split_plan(const SplitPlan& plan, const std::string& path) {
    const std::string text = split_plan_to_json(plan);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw DataError("cannot open for write: " + tmp);
        os << text;
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("rename failed for " + path + ": " + ec.message());
}

SplitPlan read_split_plan(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open plan: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return split_plan_from_json(ss.str());
}

std::string audit_report_to_json(const AuditReport& report) {
    nlohmann::json j;
    nlohmann::json leaky = nlohmann::json::array();
    for (const auto& lg : report.leaky_groups) {
        nlohmann::json entry;
        entry["group_id"] = lg.group_id;
        nlohmann::json parts = nlohmann::json::array();
        for (Partition p : lg.partitions) parts.push_back(to_string(p));
        entry["partitions"] = std::move(parts);
        leaky.push_back(std::move(entry));
    }
    j["leaky_groups"] = std::move(leaky);
    j["n_tainted_test_items"] = report.n_tainted_test_items;
    j["verdict"] = to_string(report.verdict);
    return j.dump(2) + "\n";
}

}  // namespace leakbench
