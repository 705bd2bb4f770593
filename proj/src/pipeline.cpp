#include "leakbench/pipeline.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace leakbench {

std::string to_string(FtMode m) {
    switch (m) {
        case FtMode::none: return "none";
        case FtMode::clean: return "clean";
        case FtMode::leaky: return "leaky";
    }
    return "none";
}

std::string to_string(TestMode m) {
    return m == TestMode::independent ? "independent" : "tainted";
}

std::string to_string(PredictorKind k) {
    switch (k) {
        case PredictorKind::svr: return "svr";
        case PredictorKind::lstm: return "lstm";
        case PredictorKind::e2e: return "e2e";
    }
    return "svr";
}

std::string to_string(TaskKind k) {
    return k == TaskKind::video_matrix ? "video-matrix" : "degraded-split";
}

std::string to_string(BatchingMode m) {
    return m == BatchingMode::sorted_nonrandom ? "sorted-nonrandom" : "shuffled";
}

FtMode ft_mode_from_string(const std::string& s) {
    if (s == "none") return FtMode::none;
    if (s == "clean") return FtMode::clean;
    if (s == "leaky") return FtMode::leaky;
    throw ConfigError("unknown ft mode: " + s);
}

TestMode test_mode_from_string(const std::string& s) {
    if (s == "independent") return TestMode::independent;
    if (s == "tainted") return TestMode::tainted;
    throw ConfigError("unknown test mode: " + s);
}

PredictorKind predictor_from_string(const std::string& s) {
    if (s == "svr") return PredictorKind::svr;
    if (s == "lstm") return PredictorKind::lstm;
    if (s == "e2e") return PredictorKind::e2e;
    throw ConfigError("unknown predictor: " + s);
}

TaskKind task_from_string(const std::string& s) {
    if (s == "video-matrix") return TaskKind::video_matrix;
    if (s == "degraded-split") return TaskKind::degraded_split;
    throw ConfigError("unknown task: " + s);
}

BatchingMode batching_from_string(const std::string& s) {
    if (s == "sorted-nonrandom") return BatchingMode::sorted_nonrandom;
    if (s == "shuffled") return BatchingMode::shuffled;
    throw ConfigError("unknown batching mode: " + s);
}

ProtocolConfig::ProtocolConfig() {
    ft_schedule.learning_rate = 0.02;
    ft_schedule.batch_size = 32;
    ft_schedule.max_epochs = 40;
    ft_schedule.patience = 4;
    ft_schedule.lr_drop_factor = 0.1;

    lstm_schedule.learning_rate = 0.01;
    lstm_schedule.batch_size = 27;
    lstm_schedule.max_epochs = 40;
    lstm_schedule.patience = 5;
    lstm_schedule.lr_drop_factor = 0.5;

    e2e_schedule.learning_rate = 1e-3;
    e2e_schedule.batch_size = 32;
    e2e_schedule.max_epochs = 10;
    e2e_schedule.patience = 10;
    e2e_schedule.lr_drop_factor = 1.0;
    e2e_schedule.epoch_lr_decay = 0.75;
    e2e_schedule.head_lr_multiplier = 10.0;
}

void ProtocolConfig::validate() const {
    if (name.empty()) throw ConfigError("protocol: name must not be empty");
    if (test_mode == TestMode::tainted && ft_mode == FtMode::none)
        throw ProtocolError("protocol: tainted test mode requires fine-tuning (taint is defined "
                            "relative to fine-tuning usage)");
    if (predictor == PredictorKind::e2e) {
        if (ft_mode == FtMode::none)
            throw ProtocolError("protocol: e2e predictor is the fine-tuning stage; ft mode must "
                                "be clean or leaky");
        if (test_mode == TestMode::tainted)
            throw ProtocolError("protocol: e2e predictor supports independent test mode only");
    }
    if (task == TaskKind::degraded_split) {
        if (predictor != PredictorKind::svr)
            throw ProtocolError("protocol: degraded-split task uses the svr predictor");
        if (ft_mode == FtMode::leaky)
            throw ProtocolError("protocol: degraded-split task supports ft none or clean");
        if (test_mode == TestMode::tainted)
            throw ProtocolError("protocol: degraded-split taint comes from the random split, not "
                                "the test mode flag");
    }
    if (kfold_k < 2) throw ConfigError("protocol: kfold_k must be >= 2");
    if (arch.empty() || e2e_arch.empty()) throw ConfigError("protocol: empty architecture");
    ft_schedule.validate();
    lstm_schedule.validate();
    e2e_schedule.validate();
    svr.validate();
    kernel.validate();
}

namespace {

// Central funnel for MOS reads. Reads outside evaluation are logged; the
// per-item counts existing when a test item reaches evaluation are the
// taint signature.
class LabelLedger {
public:
    double read_item(const ItemRecord& item) {
        if (!evaluating_) ++item_reads_[item.item_id];
        return item.mos;
    }

    double read_group(const GroupedDataset& ds, const std::string& gid) {
        if (!evaluating_) ++group_reads_[gid];
        return ds.item(ds.group_index().at(gid).front()).mos;
    }

    void begin_evaluation() { evaluating_ = true; }
    void end_evaluation() { evaluating_ = false; }

    MosReader item_reader() {
        return [this](const ItemRecord& item) { return read_item(item); };
    }

    std::size_t reads_for_items(const GroupedDataset& ds,
                                const std::vector<std::size_t>& idxs) const {
        std::size_t total = 0;
        for (std::size_t i : idxs) {
            const ItemRecord& item = ds.item(i);
            auto it = item_reads_.find(item.item_id);
            if (it != item_reads_.end()) total += it->second;
            auto g = group_reads_.find(item.group_id);
            if (g != group_reads_.end()) total += g->second;
        }
        return total;
    }

    std::string digest(std::size_t pre_eval_reads) const {
        std::string blob = "pre=" + std::to_string(pre_eval_reads) + ";items|";
        for (const auto& [id, n] : item_reads_) {
            blob += id;
            blob += '=';
            blob += std::to_string(n);
            blob += ';';
        }
        blob += "|groups|";
        for (const auto& [id, n] : group_reads_) {
            blob += id;
            blob += '=';
            blob += std::to_string(n);
            blob += ';';
        }
        return hex64(fnv1a64(blob));
    }

private:
    std::map<std::string, std::size_t> item_reads_;
    std::map<std::string, std::size_t> group_reads_;
    bool evaluating_ = false;
};

struct Standardizer {
    Vec mean, scale;

    void fit(const std::vector<Vec>& xs) {
        const std::size_t dim = xs.front().size();
        mean.assign(dim, 0.0);
        scale.assign(dim, 1.0);
        for (const Vec& x : xs)
            for (std::size_t d = 0; d < dim; ++d) mean[d] += x[d];
        for (double& m : mean) m /= static_cast<double>(xs.size());
        Vec var(dim, 0.0);
        for (const Vec& x : xs)
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = x[d] - mean[d];
                var[d] += diff * diff;
            }
        for (std::size_t d = 0; d < dim; ++d) {
            const double v = var[d] / static_cast<double>(xs.size());
            scale[d] = v > 1e-24 ? std::sqrt(v) : 1.0;
        }
    }

    Vec apply(const Vec& x) const {
        Vec out(x.size());
        for (std::size_t d = 0; d < x.size(); ++d) out[d] = (x[d] - mean[d]) / scale[d];
        return out;
    }
};

MetricSummary correlate(const std::vector<double>& preds, const std::vector<double>& actual) {
    MetricSummary m;
    m.n = preds.size();
    try {
        m.plcc = plcc(preds, actual);
        m.srocc = srocc(preds, actual);
    } catch (const DataError&) {
        m.plcc = 0.0;
        m.srocc = 0.0;
        m.undefined = true;
    }
    return m;
}

AuditVerdict merge_verdicts(AuditVerdict a, AuditVerdict b) {
    const bool leak = a == AuditVerdict::group_leak || a == AuditVerdict::both ||
                      b == AuditVerdict::group_leak || b == AuditVerdict::both;
    const bool taint = a == AuditVerdict::tainted_test || a == AuditVerdict::both ||
                       b == AuditVerdict::tainted_test || b == AuditVerdict::both;
    if (leak && taint) return AuditVerdict::both;
    if (leak) return AuditVerdict::group_leak;
    if (taint) return AuditVerdict::tainted_test;
    return AuditVerdict::clean;
}

std::map<std::string, Vec> pool_by_group(const GroupedDataset& ds, const FeatureSet& features,
                                         PoolingMethod method) {
    std::map<std::string, Vec> pooled;
    for (const auto& [gid, idxs] : ds.group_index()) {
        std::vector<Vec> members;
        members.reserve(idxs.size());
        for (std::size_t i : idxs) members.push_back(features.at(ds.item(i).item_id));
        pooled.emplace(gid, pool_features(members, method));
    }
    return pooled;
}

// Group-level plan describing what the predictor stage actually consumed.
SplitPlan make_group_plan(const GroupedDataset& ds, const std::set<std::string>& train_groups,
                          const std::set<std::string>& val_groups,
                          const std::set<std::string>& test_groups, const std::string& tag,
                          std::uint64_t seed) {
    SplitPlan plan;
    plan.protocol_tag = tag;
    plan.seed = seed;
    for (const auto& item : ds.items()) {
        Partition p = Partition::excluded;
        if (train_groups.count(item.group_id))
            p = Partition::train;
        else if (val_groups.count(item.group_id))
            p = Partition::validation;
        else if (test_groups.count(item.group_id))
            p = Partition::test;
        plan.assignment[item.item_id] = p;
    }
    return plan;
}

struct GroupSvrEval {
    MetricSummary metrics;
    std::size_t pre_eval_reads = 0;
};

GroupSvrEval eval_group_svr(const GroupedDataset& ds, const std::map<std::string, Vec>& pooled,
                            const std::set<std::string>& train_groups,
                            const std::set<std::string>& test_groups,
                            const ProtocolConfig& cfg, std::uint64_t svr_seed,
                            LabelLedger& ledger) {
    std::vector<Vec> x;
    Vec y;
    x.reserve(train_groups.size());
    for (const std::string& gid : train_groups) {
        x.push_back(pooled.at(gid));
        y.push_back(ledger.read_group(ds, gid));
    }
    Standardizer stdz;
    stdz.fit(x);
    for (Vec& v : x) v = stdz.apply(v);

    SvrConfig svr_cfg = cfg.svr;
    svr_cfg.seed = svr_seed;
    const SvrModel model = train_svr(x, y, cfg.kernel, svr_cfg);

    std::vector<std::size_t> test_items;
    for (const std::string& gid : test_groups)
        for (std::size_t i : ds.group_index().at(gid)) test_items.push_back(i);

    GroupSvrEval out;
    out.pre_eval_reads = ledger.reads_for_items(ds, test_items);
    ledger.begin_evaluation();
    std::vector<double> preds, actual;
    preds.reserve(test_groups.size());
    for (const std::string& gid : test_groups) {
        preds.push_back(predict_svr(model, stdz.apply(pooled.at(gid))));
        actual.push_back(ledger.read_group(ds, gid));
    }
    ledger.end_evaluation();
    out.metrics = correlate(preds, actual);
    return out;
}

SequenceDataset build_sequences(const GroupedDataset& ds, const FeatureSet& features,
                                const std::map<std::string, Partition>& partition,
                                LabelLedger& ledger) {
    SequenceDataset seq;
    for (const auto& [gid, idxs] : ds.group_index()) {
        auto it = partition.find(gid);
        if (it == partition.end()) continue;
        seq.group_ids.push_back(gid);
        std::vector<Vec> s;
        s.reserve(idxs.size());
        for (std::size_t i : idxs) s.push_back(features.at(ds.item(i).item_id));
        seq.sequences.push_back(std::move(s));
        // Labels are read only where training will use them.
        if (it->second == Partition::train || it->second == Partition::validation)
            seq.labels.push_back(ledger.read_group(ds, gid));
        else
            seq.labels.push_back(std::numeric_limits<double>::quiet_NaN());
    }
    return seq;
}

// Splits a sorted group set into train/validation by the ratio.
void carve_validation_groups(const std::set<std::string>& groups, TrainValRatio ratio,
                             std::uint64_t seed, std::set<std::string>& train_out,
                             std::set<std::string>& val_out) {
    std::vector<std::string> order(groups.begin(), groups.end());
    Rng rng(seed);
    rng.shuffle(order);
    const auto counts = apportion(
        order.size(), {static_cast<double>(ratio.train), static_cast<double>(ratio.val)}, rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < counts[0])
            train_out.insert(order[i]);
        else
            val_out.insert(order[i]);
    }
}

struct GroupLstmEval {
    MetricSummary metrics;
    std::size_t pre_eval_reads = 0;
    std::string trace_digest;
};

GroupLstmEval eval_group_lstm(const GroupedDataset& ds, const FeatureSet& features,
                              const std::set<std::string>& fit_groups,
                              const std::set<std::string>& test_groups,
                              const ProtocolConfig& cfg, std::uint64_t pred_seed,
                              LabelLedger& ledger) {
    std::set<std::string> train_groups, val_groups;
    carve_validation_groups(fit_groups, cfg.ft_ratio, derive_seed(pred_seed, "lstm-val-carve"),
                            train_groups, val_groups);

    std::map<std::string, Partition> partition;
    for (const auto& g : train_groups) partition[g] = Partition::train;
    for (const auto& g : val_groups) partition[g] = Partition::validation;
    for (const auto& g : test_groups) partition[g] = Partition::test;

    const SequenceDataset seq = build_sequences(ds, features, partition, ledger);

    LstmConfig lstm_cfg;
    lstm_cfg.hidden_dim = cfg.lstm_hidden;
    lstm_cfg.schedule = cfg.lstm_schedule;
    lstm_cfg.schedule.seed = derive_seed(pred_seed, "lstm-train");
    const LstmTrainResult trained = train_lstm(seq, partition, lstm_cfg, cfg.lstm_batching);

    std::vector<std::size_t> test_items;
    for (const std::string& gid : test_groups)
        for (std::size_t i : ds.group_index().at(gid)) test_items.push_back(i);

    GroupLstmEval out;
    out.trace_digest = trained.trace.digest();
    out.pre_eval_reads = ledger.reads_for_items(ds, test_items);
    ledger.begin_evaluation();
    std::vector<double> preds, actual;
    for (std::size_t i = 0; i < seq.group_ids.size(); ++i) {
        if (!test_groups.count(seq.group_ids[i])) continue;
        preds.push_back(trained.model.predict(seq.sequences[i]));
        actual.push_back(ledger.read_group(ds, seq.group_ids[i]));
    }
    ledger.end_evaluation();
    out.metrics = correlate(preds, actual);
    return out;
}

SplitPlan item_random_holdout(const GroupedDataset& ds, double test_fraction, TrainValRatio ratio,
                              std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const double rest = 1.0 - test_fraction;
    const double total_ratio = static_cast<double>(ratio.train + ratio.val);
    const auto counts =
        apportion(order.size(),
                  {test_fraction, rest * static_cast<double>(ratio.train) / total_ratio,
                   rest * static_cast<double>(ratio.val) / total_ratio},
                  rng);
    SplitPlan plan;
    plan.seed = seed;
    plan.protocol_tag = "item-random-holdout/test=" + format_double(test_fraction) + "/ratio=" +
                        std::to_string(ratio.train) + ":" + std::to_string(ratio.val);
    for (std::size_t i = 0; i < order.size(); ++i) {
        Partition p = Partition::validation;
        if (i < counts[0])
            p = Partition::test;
        else if (i < counts[0] + counts[1])
            p = Partition::train;
        plan.assignment[ds.item(order[i]).item_id] = p;
    }
    return plan;
}

RunResult run_video_cell(const GroupedDataset& ds, const FeatureSet& raw,
                         const ProtocolConfig& cfg, std::uint64_t seed, int replicate) {
    LabelLedger ledger;
    RunResult result;
    result.protocol_name = cfg.name;
    result.replicate = replicate;
    result.seed = seed;

    const std::uint64_t split_seed = derive_seed(seed, "split");
    const std::uint64_t ft_seed = derive_seed(seed, "ft");
    const std::uint64_t pred_seed = derive_seed(seed, "pred");

    // Stage 1: fine-tune split. All three splitters reserve the same test
    // groups for a given seed.
    SplitPlan ft_plan;
    switch (cfg.ft_mode) {
        case FtMode::none:
            ft_plan = split_holdout_by_group(ds, cfg.test_fraction, cfg.ft_ratio, split_seed);
            break;
        case FtMode::clean:
            ft_plan = split_clean_frame_sample(ds, cfg.test_fraction, cfg.frame_fraction,
                                               cfg.ft_ratio, split_seed);
            break;
        case FtMode::leaky:
            ft_plan = split_leaky_frame_pool(ds, cfg.test_fraction, cfg.frame_fraction,
                                             cfg.ft_ratio, split_seed);
            break;
    }
    const std::set<std::string> test_groups = ft_plan.groups_in(ds, Partition::test);
    std::set<std::string> ft_groups;
    for (const auto& g : ft_plan.groups_in(ds, Partition::train)) ft_groups.insert(g);
    for (const auto& g : ft_plan.groups_in(ds, Partition::validation)) ft_groups.insert(g);
    result.ft_audit_verdict = audit_plan(ft_plan, ds).verdict;

    // End-to-end path: the regression network is the fine-tuning stage.
    if (cfg.predictor == PredictorKind::e2e) {
        TrainSchedule sched = cfg.e2e_schedule;
        sched.seed = ft_seed;
        const MlpTrainResult trained = train_regressor_e2e(raw, ds, ft_plan, sched, cfg.e2e_arch,
                                                           cfg.e2e_dropout, ledger.item_reader());
        result.ft_trace_digest = trained.trace.digest();
        result.predictor_trace_digest = result.ft_trace_digest;
        result.ft_epochs = trained.trace.epochs_run;

        std::vector<std::size_t> test_items;
        for (const std::string& gid : test_groups)
            for (std::size_t i : ds.group_index().at(gid)) test_items.push_back(i);
        result.label_access.pre_eval_test_reads = ledger.reads_for_items(ds, test_items);
        ledger.begin_evaluation();
        std::vector<double> preds, actual;
        for (const std::string& gid : test_groups) {
            double sum = 0.0;
            const auto& idxs = ds.group_index().at(gid);
            for (std::size_t i : idxs) sum += trained.model.forward(raw.at(ds.item(i).item_id))[0];
            preds.push_back(sum / static_cast<double>(idxs.size()));
            actual.push_back(ledger.read_group(ds, gid));
        }
        ledger.end_evaluation();
        result.metrics = correlate(preds, actual);

        const AuditReport audit = audit_plan(ft_plan, ds, ft_groups);
        result.audit_verdict = audit.verdict;
        result.n_tainted_test_items = audit.n_tainted_test_items;
        const std::size_t n_test = ft_plan.count(Partition::test);
        result.tainted_test_fraction =
            n_test > 0 ? static_cast<double>(audit.n_tainted_test_items) /
                             static_cast<double>(n_test)
                       : 0.0;
        result.label_access.digest = ledger.digest(result.label_access.pre_eval_test_reads);
        return result;
    }

    // Stage 2: surrogate extractor.
    MlpModel extractor;
    if (cfg.ft_mode == FtMode::none) {
        extractor = make_mlp(raw.dim, cfg.arch, HeadKind::softmax5, derive_seed(ft_seed, "mlp-init"));
    } else {
        TrainSchedule sched = cfg.ft_schedule;
        sched.seed = ft_seed;
        const MlpTrainResult trained =
            train_classifier(raw, ds, ft_plan, cfg.arch, sched, ledger.item_reader());
        extractor = trained.model;
        result.ft_trace_digest = trained.trace.digest();
        result.ft_epochs = trained.trace.epochs_run;
    }
    const FeatureSet extracted = extract_activations(extractor, raw, cfg.extract_mode);

    // Stage 3: predictor and evaluation.
    if (cfg.test_mode == TestMode::independent) {
        if (cfg.predictor == PredictorKind::svr) {
            const auto pooled = pool_by_group(ds, extracted, cfg.pooling);
            const GroupSvrEval eval = eval_group_svr(ds, pooled, ft_groups, test_groups, cfg,
                                                     derive_seed(pred_seed, "svr"), ledger);
            result.metrics = eval.metrics;
            result.label_access.pre_eval_test_reads = eval.pre_eval_reads;
            const SplitPlan pred_plan = make_group_plan(ds, ft_groups, {}, test_groups,
                                                        "predictor/independent/svr", pred_seed);
            const AuditReport audit = audit_plan(pred_plan, ds, ft_groups);
            result.audit_verdict = audit.verdict;
            result.n_tainted_test_items = audit.n_tainted_test_items;
        } else {
            const GroupLstmEval eval =
                eval_group_lstm(ds, extracted, ft_groups, test_groups, cfg, pred_seed, ledger);
            result.metrics = eval.metrics;
            result.label_access.pre_eval_test_reads = eval.pre_eval_reads;
            result.predictor_trace_digest = eval.trace_digest;
            const SplitPlan pred_plan = make_group_plan(ds, ft_groups, {}, test_groups,
                                                        "predictor/independent/lstm", pred_seed);
            const AuditReport audit = audit_plan(pred_plan, ds, ft_groups);
            result.audit_verdict = audit.verdict;
            result.n_tainted_test_items = audit.n_tainted_test_items;
        }
        const std::size_t n_test_items = [&] {
            std::size_t n = 0;
            for (const auto& gid : test_groups) n += ds.group_index().at(gid).size();
            return n;
        }();
        result.tainted_test_fraction =
            n_test_items > 0 ? static_cast<double>(result.n_tainted_test_items) /
                                   static_cast<double>(n_test_items)
                             : 0.0;
    } else {
        // Tainted test sets: folds drawn over the whole dataset while the
        // extractor has already seen the non-reserved groups.
        const auto fold_plans =
            make_kfold_plans(ds, cfg.kfold_k, 1, true, derive_seed(pred_seed, "folds"));
        std::map<std::string, Vec> pooled;
        if (cfg.predictor == PredictorKind::svr) pooled = pool_by_group(ds, extracted, cfg.pooling);

        std::vector<double> fold_plcc, fold_srocc;
        std::size_t total_n = 0, total_tainted = 0, total_test_items = 0;
        bool any_undefined = false;
        AuditVerdict verdict = AuditVerdict::clean;
        std::string lstm_digest;
        for (std::size_t f = 0; f < fold_plans.size(); ++f) {
            const SplitPlan& fold = fold_plans[f];
            const auto fold_train = fold.groups_in(ds, Partition::train);
            const auto fold_test = fold.groups_in(ds, Partition::test);
            MetricSummary metrics;
            std::size_t pre_reads = 0;
            if (cfg.predictor == PredictorKind::svr) {
                const GroupSvrEval eval =
                    eval_group_svr(ds, pooled, fold_train, fold_test, cfg,
                                   derive_seed(pred_seed, "svr-fold", f), ledger);
                metrics = eval.metrics;
                pre_reads = eval.pre_eval_reads;
            } else {
                const GroupLstmEval eval =
                    eval_group_lstm(ds, extracted, fold_train, fold_test, cfg,
                                    derive_seed(pred_seed, "lstm-fold", f), ledger);
                metrics = eval.metrics;
                pre_reads = eval.pre_eval_reads;
                lstm_digest = eval.trace_digest;
            }
            fold_plcc.push_back(metrics.plcc);
            fold_srocc.push_back(metrics.srocc);
            any_undefined = any_undefined || metrics.undefined;
            total_n += metrics.n;
            result.label_access.pre_eval_test_reads += pre_reads;

            const AuditReport audit = audit_plan(fold, ds, ft_groups);
            verdict = merge_verdicts(verdict, audit.verdict);
            total_tainted += audit.n_tainted_test_items;
            total_test_items += fold.count(Partition::test);
        }
        double plcc_sum = 0.0, srocc_sum = 0.0;
        for (double v : fold_plcc) plcc_sum += v;
        for (double v : fold_srocc) srocc_sum += v;
        result.metrics.plcc = plcc_sum / static_cast<double>(fold_plcc.size());
        result.metrics.srocc = srocc_sum / static_cast<double>(fold_srocc.size());
        result.metrics.n = total_n;
        result.metrics.undefined = any_undefined;
        result.audit_verdict = verdict;
        result.n_tainted_test_items = total_tainted;
        result.tainted_test_fraction =
            total_test_items > 0
                ? static_cast<double>(total_tainted) / static_cast<double>(total_test_items)
                : 0.0;
        result.predictor_trace_digest = lstm_digest;
    }

    result.label_access.digest = ledger.digest(result.label_access.pre_eval_test_reads);
    return result;
}

RunResult run_degraded_cell(const GroupedDataset& ds, const FeatureSet& raw,
                            const ProtocolConfig& cfg, std::uint64_t seed, int replicate) {
    if (ds.structure() != DatasetStructure::degraded_variants)
        throw ProtocolError("degraded-split task requires a degraded-variants dataset");

    LabelLedger ledger;
    RunResult result;
    result.protocol_name = cfg.name;
    result.replicate = replicate;
    result.seed = seed;

    const std::uint64_t split_seed = derive_seed(seed, "split");
    const std::uint64_t ft_seed = derive_seed(seed, "ft");
    const std::uint64_t pred_seed = derive_seed(seed, "pred");

    const SplitPlan plan =
        cfg.grouped_split
            ? split_holdout_by_group(ds, cfg.test_fraction, cfg.ft_ratio, split_seed)
            : item_random_holdout(ds, cfg.test_fraction, cfg.ft_ratio, split_seed);
    result.ft_audit_verdict = audit_plan(plan, ds).verdict;

    MlpModel extractor;
    if (cfg.ft_mode == FtMode::clean) {
        TrainSchedule sched = cfg.ft_schedule;
        sched.seed = ft_seed;
        const MlpTrainResult trained = train_regressor_e2e(raw, ds, plan, sched, cfg.arch,
                                                           /*dropout_p=*/0.0, ledger.item_reader());
        extractor = trained.model;
        result.ft_trace_digest = trained.trace.digest();
        result.ft_epochs = trained.trace.epochs_run;
    } else {
        extractor =
            make_mlp(raw.dim, cfg.arch, HeadKind::regression1, derive_seed(ft_seed, "mlp-init"));
    }
    const FeatureSet extracted = extract_activations(extractor, raw, cfg.extract_mode);

    // Item-level SVR on train+validation items.
    std::vector<std::size_t> fit_items = plan.indices_in(ds, Partition::train);
    {
        const auto val_items = plan.indices_in(ds, Partition::validation);
        fit_items.insert(fit_items.end(), val_items.begin(), val_items.end());
        std::sort(fit_items.begin(), fit_items.end());
    }
    if (cfg.svr_train_cap > 0 && fit_items.size() > cfg.svr_train_cap) {
        Rng rng(derive_seed(pred_seed, "svr-cap"));
        rng.shuffle(fit_items);
        fit_items.resize(cfg.svr_train_cap);
        std::sort(fit_items.begin(), fit_items.end());
    }

    std::vector<Vec> x;
    Vec y;
    x.reserve(fit_items.size());
    for (std::size_t i : fit_items) {
        x.push_back(extracted.at(ds.item(i).item_id));
        y.push_back(ledger.read_item(ds.item(i)));
    }
    Standardizer stdz;
    stdz.fit(x);
    for (Vec& v : x) v = stdz.apply(v);

    SvrConfig svr_cfg = cfg.svr;
    svr_cfg.seed = derive_seed(pred_seed, "svr");
    const SvrModel model = train_svr(x, y, cfg.kernel, svr_cfg);

    const auto test_items = plan.indices_in(ds, Partition::test);
    result.label_access.pre_eval_test_reads = ledger.reads_for_items(ds, test_items);
    ledger.begin_evaluation();
    std::vector<double> preds, actual;
    preds.reserve(test_items.size());
    for (std::size_t i : test_items) {
        preds.push_back(predict_svr(model, stdz.apply(extracted.at(ds.item(i).item_id))));
        actual.push_back(ledger.read_item(ds.item(i)));
    }
    ledger.end_evaluation();
    result.metrics = correlate(preds, actual);

    std::optional<std::set<std::string>> ft_groups;
    if (cfg.ft_mode == FtMode::clean) {
        std::set<std::string> groups;
        for (const auto& g : plan.groups_in(ds, Partition::train)) groups.insert(g);
        for (const auto& g : plan.groups_in(ds, Partition::validation)) groups.insert(g);
        ft_groups = std::move(groups);
    }
    const AuditReport audit = audit_plan(plan, ds, ft_groups);
    result.audit_verdict = audit.verdict;
    result.n_tainted_test_items = audit.n_tainted_test_items;
    result.tainted_test_fraction =
        test_items.empty() ? 0.0
                           : static_cast<double>(audit.n_tainted_test_items) /
                                 static_cast<double>(test_items.size());
    result.label_access.digest = ledger.digest(result.label_access.pre_eval_test_reads);
    return result;
}

}  // namespace

RunResult run_protocol(const GroupedDataset& dataset, const FeatureSet& raw_features,
                       const ProtocolConfig& protocol, std::uint64_t seed, int replicate_index) {
    protocol.validate();
    raw_features.validate_against(dataset);
    if (protocol.task == TaskKind::degraded_split)
        return run_degraded_cell(dataset, raw_features, protocol, seed, replicate_index);
    return run_video_cell(dataset, raw_features, protocol, seed, replicate_index);
}

RunResult degraded_split_experiment(const GroupedDataset& dataset, const FeatureSet& raw_features,
                                    const ProtocolConfig& protocol, std::uint64_t seed,
                                    int replicate_index) {
    ProtocolConfig cfg = protocol;
    cfg.task = TaskKind::degraded_split;
    return run_protocol(dataset, raw_features, cfg, seed, replicate_index);
}

MatrixResult run_matrix(const GroupedDataset& dataset, const FeatureSet& raw_features,
                        const std::vector<ProtocolConfig>& protocols, int replicates,
                        std::uint64_t base_seed, int jobs) {
    if (protocols.empty()) throw ConfigError("run_matrix: no protocols");
    if (replicates < 1) throw ConfigError("run_matrix: replicates must be positive");
    {
        std::set<std::string> names;
        for (const auto& p : protocols) {
            p.validate();
            if (!names.insert(p.name).second)
                throw ConfigError("run_matrix: duplicate protocol name " + p.name);
        }
    }

    MatrixResult out;
    out.base_seed = base_seed;
    out.replicates = replicates;
    out.cells.resize(protocols.size());
    for (std::size_t c = 0; c < protocols.size(); ++c) {
        out.cells[c].protocol = protocols[c];
        out.cells[c].replicates.resize(static_cast<std::size_t>(replicates));
        for (int r = 0; r < replicates; ++r)
            out.cells[c].seeds.push_back(
                derive_seed(base_seed, protocols[c].name, static_cast<std::uint64_t>(r)));
    }

    struct Task {
        std::size_t cell;
        int replicate;
    };
    std::vector<Task> tasks;
    for (std::size_t c = 0; c < protocols.size(); ++c)
        for (int r = 0; r < replicates; ++r) tasks.push_back({c, r});

    std::atomic<std::size_t> cursor{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    const auto worker = [&] {
        for (;;) {
            const std::size_t t = cursor.fetch_add(1);
            if (t >= tasks.size()) return;
            {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (first_error) return;
            }
            try {
                const Task& task = tasks[t];
                out.cells[task.cell].replicates[static_cast<std::size_t>(task.replicate)] =
                    run_protocol(dataset, raw_features, protocols[task.cell],
                                 out.cells[task.cell].seeds[static_cast<std::size_t>(task.replicate)],
                                 task.replicate);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    for (auto& cell : out.cells) {
        std::vector<MetricSummary> summaries;
        summaries.reserve(cell.replicates.size());
        for (const auto& r : cell.replicates) summaries.push_back(r.metrics);
        cell.aggregate = aggregate(summaries);
    }
    return out;
}

double dominant_class_baseline(const SplitPlan& plan, const GroupedDataset& dataset) {
    const auto train_items = plan.indices_in(dataset, Partition::train);
    const auto test_items = plan.indices_in(dataset, Partition::test);
    if (train_items.empty() || test_items.empty())
        throw DataError("dominant_class_baseline: empty train or test partition");

    std::array<std::size_t, kNumQualityClasses> counts{};
    for (std::size_t i : train_items)
        ++counts[static_cast<std::size_t>(bin_mos(dataset.item(i).mos))];
    std::size_t dominant = 0;
    for (std::size_t c = 1; c < counts.size(); ++c)
        if (counts[c] > counts[dominant]) dominant = c;

    std::size_t hits = 0;
    for (std::size_t i : test_items)
        if (static_cast<std::size_t>(bin_mos(dataset.item(i).mos)) == dominant) ++hits;
    return static_cast<double>(hits) / static_cast<double>(test_items.size());
}

namespace {

nlohmann::json schedule_to_json(const TrainSchedule& s) {
    nlohmann::json j;
    j["learning_rate"] = s.learning_rate;
    j["momentum"] = s.momentum;
    j["batch_size"] = s.batch_size;
    j["max_epochs"] = s.max_epochs;
    j["validation_every_n_samples"] = s.validation_every_n_samples;
    j["patience"] = s.patience;
    j["lr_drop_factor"] = s.lr_drop_factor;
    j["head_lr_multiplier"] = s.head_lr_multiplier;
    j["epoch_lr_decay"] = s.epoch_lr_decay;
    return j;
}

TrainSchedule schedule_from_json(const nlohmann::json& j, TrainSchedule s) {
    if (j.contains("learning_rate")) s.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("momentum")) s.momentum = j.at("momentum").get<double>();
    if (j.contains("batch_size")) s.batch_size = j.at("batch_size").get<int>();
    if (j.contains("max_epochs")) s.max_epochs = j.at("max_epochs").get<int>();
    if (j.contains("validation_every_n_samples"))
        s.validation_every_n_samples = j.at("validation_every_n_samples").get<int>();
    if (j.contains("patience")) s.patience = j.at("patience").get<int>();
    if (j.contains("lr_drop_factor")) s.lr_drop_factor = j.at("lr_drop_factor").get<double>();
    if (j.contains("head_lr_multiplier"))
        s.head_lr_multiplier = j.at("head_lr_multiplier").get<double>();
    if (j.contains("epoch_lr_decay")) s.epoch_lr_decay = j.at("epoch_lr_decay").get<double>();
    return s;
}

nlohmann::json protocol_to_json_obj(const ProtocolConfig& p) {
    nlohmann::json j;
    j["name"] = p.name;
    j["task"] = to_string(p.task);
    j["ft_mode"] = to_string(p.ft_mode);
    j["test_mode"] = to_string(p.test_mode);
    j["predictor"] = to_string(p.predictor);
    nlohmann::json kernel;
    kernel["kind"] = p.kernel.kind == KernelKind::linear       ? "linear"
                     : p.kernel.kind == KernelKind::polynomial ? "polynomial"
                                                               : "gaussian";
    kernel["degree"] = p.kernel.degree;
    kernel["coef0"] = p.kernel.coef0;
    kernel["gamma"] = p.kernel.gamma;
    j["kernel"] = std::move(kernel);
    j["pooling"] = to_string(p.pooling);
    j["extract_mode"] = to_string(p.extract_mode);
    j["test_fraction"] = p.test_fraction;
    j["frame_fraction"] = p.frame_fraction;
    j["ft_ratio"] = nlohmann::json::array({p.ft_ratio.train, p.ft_ratio.val});
    j["kfold_k"] = p.kfold_k;
    j["grouped_split"] = p.grouped_split;
    j["arch"] = p.arch;
    j["ft_schedule"] = schedule_to_json(p.ft_schedule);
    j["lstm_hidden"] = p.lstm_hidden;
    j["lstm_schedule"] = schedule_to_json(p.lstm_schedule);
    j["lstm_batching"] = to_string(p.lstm_batching);
    j["e2e_arch"] = p.e2e_arch;
    j["e2e_dropout"] = p.e2e_dropout;
    j["e2e_schedule"] = schedule_to_json(p.e2e_schedule);
    nlohmann::json svr;
    svr["c"] = p.svr.c;
    svr["epsilon"] = p.svr.epsilon;
    svr["kkt_tolerance"] = p.svr.kkt_tolerance;
    svr["max_passes"] = p.svr.max_passes;
    j["svr"] = std::move(svr);
    j["svr_train_cap"] = p.svr_train_cap;
    return j;
}

ProtocolConfig protocol_from_json_obj(const nlohmann::json& j, ProtocolConfig p) {
    if (j.contains("name")) p.name = j.at("name").get<std::string>();
    if (j.contains("task")) p.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("ft_mode")) p.ft_mode = ft_mode_from_string(j.at("ft_mode").get<std::string>());
    if (j.contains("test_mode"))
        p.test_mode = test_mode_from_string(j.at("test_mode").get<std::string>());
    if (j.contains("predictor"))
        p.predictor = predictor_from_string(j.at("predictor").get<std::string>());
    if (j.contains("kernel")) {
        const auto& k = j.at("kernel");
        if (k.contains("kind")) {
            const std::string kind = k.at("kind").get<std::string>();
            if (kind == "linear")
                p.kernel.kind = KernelKind::linear;
            else if (kind == "polynomial")
                p.kernel.kind = KernelKind::polynomial;
            else if (kind == "gaussian")
                p.kernel.kind = KernelKind::gaussian;
            else
                throw ConfigError("unknown kernel kind: " + kind);
        }
        if (k.contains("degree")) p.kernel.degree = k.at("degree").get<int>();
        if (k.contains("coef0")) p.kernel.coef0 = k.at("coef0").get<double>();
        if (k.contains("gamma")) p.kernel.gamma = k.at("gamma").get<double>();
    }
    if (j.contains("pooling")) p.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    if (j.contains("extract_mode"))
        p.extract_mode = extract_mode_from_string(j.at("extract_mode").get<std::string>());
    if (j.contains("test_fraction")) p.test_fraction = j.at("test_fraction").get<double>();
    if (j.contains("frame_fraction")) p.frame_fraction = j.at("frame_fraction").get<double>();
    if (j.contains("ft_ratio")) {
        const auto& r = j.at("ft_ratio");
        if (!r.is_array() || r.size() != 2) throw ConfigError("ft_ratio must be [train, val]");
        p.ft_ratio.train = r[0].get<int>();
        p.ft_ratio.val = r[1].get<int>();
    }
    if (j.contains("kfold_k")) p.kfold_k = j.at("kfold_k").get<int>();
    if (j.contains("grouped_split")) p.grouped_split = j.at("grouped_split").get<bool>();
    if (j.contains("arch")) p.arch = j.at("arch").get<std::vector<std::size_t>>();
    if (j.contains("ft_schedule")) p.ft_schedule = schedule_from_json(j.at("ft_schedule"), p.ft_schedule);
    if (j.contains("lstm_hidden")) p.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    if (j.contains("lstm_schedule"))
        p.lstm_schedule = schedule_from_json(j.at("lstm_schedule"), p.lstm_schedule);
    if (j.contains("lstm_batching"))
        p.lstm_batching = batching_from_string(j.at("lstm_batching").get<std::string>());
    if (j.contains("e2e_arch")) p.e2e_arch = j.at("e2e_arch").get<std::vector<std::size_t>>();
    if (j.contains("e2e_dropout")) p.e2e_dropout = j.at("e2e_dropout").get<double>();
    if (j.contains("e2e_schedule"))
        p.e2e_schedule = schedule_from_json(j.at("e2e_schedule"), p.e2e_schedule);
    if (j.contains("svr")) {
        const auto& s = j.at("svr");
        if (s.contains("c")) p.svr.c = s.at("c").get<double>();
        if (s.contains("epsilon")) p.svr.epsilon = s.at("epsilon").get<double>();
        if (s.contains("kkt_tolerance")) p.svr.kkt_tolerance = s.at("kkt_tolerance").get<double>();
        if (s.contains("max_passes")) p.svr.max_passes = s.at("max_passes").get<std::size_t>();
    }
    if (j.contains("svr_train_cap")) p.svr_train_cap = j.at("svr_train_cap").get<std::size_t>();
    return p;
}

}  // namespace

std::string protocol_config_to_json(const ProtocolConfig& config) {
    return protocol_to_json_obj(config).dump(2) + "\n";
}

ProtocolConfig protocol_config_from_json(const std::string& json_text,
                                         const ProtocolConfig& defaults) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("protocol json parse error: ") + e.what());
    }
    try {
        return protocol_from_json_obj(j, defaults);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("protocol json: ") + e.what());
    }
}

std::string matrix_result_to_json(const MatrixResult& result) {
    nlohmann::json j;
    j["base_seed"] = result.base_seed;
    j["replicates"] = result.replicates;
    j["std_convention"] = "population";
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& cell : result.cells) {
        nlohmann::json c;
        c["protocol"] = protocol_to_json_obj(cell.protocol);
        c["seeds"] = cell.seeds;
        nlohmann::json reps = nlohmann::json::array();
        for (const auto& r : cell.replicates) {
            nlohmann::json e;
            e["replicate"] = r.replicate;
            e["seed"] = r.seed;
            e["plcc"] = r.metrics.plcc;
            e["srocc"] = r.metrics.srocc;
            e["n"] = r.metrics.n;
            e["metrics_undefined"] = r.metrics.undefined;
            e["audit"] = to_string(r.audit_verdict);
            e["ft_audit"] = to_string(r.ft_audit_verdict);
            e["n_tainted_test_items"] = r.n_tainted_test_items;
            e["tainted_test_fraction"] = r.tainted_test_fraction;
            e["pre_eval_test_label_reads"] = r.label_access.pre_eval_test_reads;
            e["label_access_log_digest"] = r.label_access.digest;
            e["ft_trace_digest"] = r.ft_trace_digest;
            e["predictor_trace_digest"] = r.predictor_trace_digest;
            e["ft_epochs"] = r.ft_epochs;
            reps.push_back(std::move(e));
        }
        c["per_replicate"] = std::move(reps);
        nlohmann::json s;
        s["plcc_mean"] = cell.aggregate.plcc.mean;
        s["plcc_std"] = cell.aggregate.plcc.stddev;
        s["srocc_mean"] = cell.aggregate.srocc.mean;
        s["srocc_std"] = cell.aggregate.srocc.stddev;
        s["n"] = cell.aggregate.plcc.n;
        c["summary"] = std::move(s);
        cells.push_back(std::move(c));
    }
    j["cells"] = std::move(cells);
    return j.dump(2) + "\n";
}

}  // namespace leakbench
