#include "leakbench/mlp.hpp"

#include <algorithm>
#include <cmath>

namespace leakbench {

std::string to_string(QualityClass c) {
    switch (c) {
        case QualityClass::very_poor: return "VeryPoor";
        case QualityClass::poor: return "Poor";
        case QualityClass::mediocre: return "Mediocre";
        case QualityClass::good: return "Good";
        case QualityClass::very_good: return "VeryGood";
    }
    return "VeryPoor";
}

QualityClass bin_mos(double mos) {
    if (!(mos >= 1.0 && mos <= 5.0)) throw DataError("bin_mos: MOS out of range");
    if (mos <= 1.8) return QualityClass::very_poor;
    if (mos <= 2.6) return QualityClass::poor;
    if (mos <= 3.4) return QualityClass::mediocre;
    if (mos <= 4.2) return QualityClass::good;
    return QualityClass::very_good;
}

std::string to_string(ExtractMode m) {
    return m == ExtractMode::last_layer ? "last-layer" : "all-layers";
}

ExtractMode extract_mode_from_string(const std::string& s) {
    if (s == "last-layer") return ExtractMode::last_layer;
    if (s == "all-layers") return ExtractMode::all_layers;
    throw ConfigError("unknown extract mode: " + s);
}

Vec MlpModel::forward(const Vec& input, std::vector<Vec>* hidden_acts) const {
    if (input.size() != input_dim()) throw DataError("mlp: input dimension mismatch");
    Vec act = input;
    Vec next;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        gemv(weights[l], act, biases[l], next);
        if (l + 2 < layer_sizes.size()) {
            for (double& v : next) v = v > 0.0 ? v : 0.0;
            if (hidden_acts) hidden_acts->push_back(next);
        }
        act.swap(next);
    }
    return act;
}

std::vector<double> MlpModel::flatten_params() const {
    std::vector<double> flat;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        flat.insert(flat.end(), weights[l].a.begin(), weights[l].a.end());
        flat.insert(flat.end(), biases[l].begin(), biases[l].end());
    }
    return flat;
}

void MlpModel::set_params(const std::vector<double>& flat) {
    std::size_t pos = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        std::copy(flat.begin() + pos, flat.begin() + pos + weights[l].a.size(),
                  weights[l].a.begin());
        pos += weights[l].a.size();
        std::copy(flat.begin() + pos, flat.begin() + pos + biases[l].size(), biases[l].begin());
        pos += biases[l].size();
    }
}

MlpModel make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden_sizes,
                  HeadKind head, std::uint64_t seed, double dropout_p) {
    if (input_dim == 0) throw ConfigError("mlp: input dimension must be positive");
    for (std::size_t h : hidden_sizes)
        if (h == 0) throw ConfigError("mlp: hidden sizes must be positive");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        throw ConfigError("mlp: dropout must be in [0, 1)");

    MlpModel m;
    m.head = head;
    m.layer_sizes.push_back(input_dim);
    for (std::size_t h : hidden_sizes) m.layer_sizes.push_back(h);
    m.layer_sizes.push_back(head == HeadKind::softmax5 ? kNumQualityClasses : 1);

    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
        Mat w(m.layer_sizes[l + 1], m.layer_sizes[l]);
        xavier_init(w, rng);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(m.layer_sizes[l + 1], 0.0);
    }
    m.dropout.assign(hidden_sizes.size(), dropout_p);
    return m;
}

namespace {

struct Grads {
    std::vector<Mat> w;
    std::vector<Vec> b;

    explicit Grads(const MlpModel& m) {
        for (std::size_t l = 0; l < m.weights.size(); ++l) {
            w.emplace_back(m.weights[l].rows, m.weights[l].cols);
            b.emplace_back(m.biases[l].size(), 0.0);
        }
    }
    void zero() {
        for (auto& m : w) m.zero();
        for (auto& v : b) std::fill(v.begin(), v.end(), 0.0);
    }
};

double softmax_ce(const Vec& logits, int target, Vec& probs) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    probs.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - mx);
        denom += probs[i];
    }
    for (double& p : probs) p /= denom;
    return -std::log(std::max(probs[static_cast<std::size_t>(target)], 1e-300));
}

// One sample: forward with optional dropout masks (per hidden layer), then
// backprop into `grads` scaled by `scale`. Returns the sample loss.
double sample_loss_and_grad(const MlpModel& m, const Vec& x, double target, Grads* grads,
                            double scale, const std::vector<Vec>* dropout_masks) {
    const std::size_t n_layers = m.weights.size();
    std::vector<Vec> pre(n_layers);   // z_l
    std::vector<Vec> post(n_layers);  // activation after relu (+ mask)
    const Vec* in = &x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        gemv(m.weights[l], *in, m.biases[l], pre[l]);
        if (l + 1 < n_layers) {
            post[l] = pre[l];
            for (double& v : post[l]) v = v > 0.0 ? v : 0.0;
            if (dropout_masks && !(*dropout_masks)[l].empty())
                for (std::size_t i = 0; i < post[l].size(); ++i)
                    post[l][i] *= (*dropout_masks)[l][i];
            in = &post[l];
        }
    }

    const Vec& out = pre[n_layers - 1];
    double loss = 0.0;
    Vec delta;
    if (m.head == HeadKind::softmax5) {
        Vec probs;
        loss = softmax_ce(out, static_cast<int>(target), probs);
        delta = probs;
        delta[static_cast<std::size_t>(target)] -= 1.0;
    } else {
        const double err = out[0] - target;
        loss = err * err;
        delta.assign(1, 2.0 * err);
    }
    if (!grads) return loss;

    for (double& d : delta) d *= scale;
    for (std::size_t l = n_layers; l-- > 0;) {
        const Vec& inputs = l == 0 ? x : post[l - 1];
        outer_add(grads->w[l], delta, inputs);
        for (std::size_t i = 0; i < delta.size(); ++i) grads->b[l][i] += delta[i];
        if (l == 0) break;
        Vec prev_delta(m.weights[l].cols, 0.0);
        gemv_transpose_add(m.weights[l], delta, prev_delta);
        for (std::size_t i = 0; i < prev_delta.size(); ++i) {
            if (pre[l - 1][i] <= 0.0) prev_delta[i] = 0.0;
            if (dropout_masks && !(*dropout_masks)[l - 1].empty())
                prev_delta[i] *= (*dropout_masks)[l - 1][i];
        }
        delta.swap(prev_delta);
    }
    return loss;
}

struct LabeledItems {
    std::vector<std::size_t> indices;
    std::vector<double> targets;  // class index or MOS value
};

LabeledItems collect_items(const GroupedDataset& dataset, const SplitPlan& plan, Partition part,
                           const FeatureSet& features, HeadKind head, const MosReader& mos) {
    LabeledItems out;
    out.indices = plan.indices_in(dataset, part);
    out.targets.reserve(out.indices.size());
    for (std::size_t idx : out.indices) {
        const ItemRecord& item = dataset.item(idx);
        const double m = mos(item);
        out.targets.push_back(head == HeadKind::softmax5
                                  ? static_cast<double>(static_cast<int>(bin_mos(m)))
                                  : m);
        if (features.at(item.item_id).size() != features.dim)
            throw DataError("mlp: feature dimension mismatch for " + item.item_id);
    }
    return out;
}

MlpTrainResult train_mlp(const FeatureSet& features, const GroupedDataset& dataset,
                         const SplitPlan& plan, MlpModel model, const TrainSchedule& schedule,
                         const MosReader& mos) {
    schedule.validate();
    if (features.dim != model.input_dim())
        throw DataError("mlp: feature dimension does not match network input");

    const LabeledItems train =
        collect_items(dataset, plan, Partition::train, features, model.head, mos);
    const LabeledItems val =
        collect_items(dataset, plan, Partition::validation, features, model.head, mos);
    if (train.indices.empty() || val.indices.empty())
        throw DataError("mlp: training requires non-empty train and validation partitions");

    const std::size_t n_train = train.indices.size();
    const bool per_epoch = schedule.validation_every_n_samples == 0 ||
                           static_cast<std::size_t>(schedule.validation_every_n_samples) >= n_train;

    Rng rng(schedule.seed);
    Grads grads(model);
    Grads velocity(model);
    double lr = schedule.learning_rate;
    PlateauController plateau(schedule.patience, schedule.lr_drop_factor);

    MlpModel best = model;
    TrainingTrace trace;
    std::size_t iteration = 0;
    std::size_t samples_since_val = 0;
    double train_loss_accum = 0.0;
    std::size_t train_batches_accum = 0;
    bool stop = false;

    const auto evaluate_validation = [&]() {
        double loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t i = 0; i < val.indices.size(); ++i) {
            const Vec& x = features.at(dataset.item(val.indices[i]).item_id);
            if (model.head == HeadKind::softmax5) {
                const Vec logits = model.forward(x);
                Vec probs;
                loss += softmax_ce(logits, static_cast<int>(val.targets[i]), probs);
                const auto pred = std::distance(
                    probs.begin(), std::max_element(probs.begin(), probs.end()));
                if (pred == static_cast<long>(val.targets[i])) ++correct;
            } else {
                const Vec out = model.forward(x);
                const double err = out[0] - val.targets[i];
                loss += err * err;
            }
        }
        loss /= static_cast<double>(val.indices.size());

        ValidationPoint p;
        p.iteration = iteration;
        p.train_loss =
            train_batches_accum > 0 ? train_loss_accum / static_cast<double>(train_batches_accum)
                                    : 0.0;
        p.val_loss = loss;
        if (model.head == HeadKind::softmax5)
            p.val_accuracy =
                static_cast<double>(correct) / static_cast<double>(val.indices.size());
        trace.points.push_back(p);
        train_loss_accum = 0.0;
        train_batches_accum = 0;

        switch (plateau.observe(loss)) {
            case PlateauController::Action::new_best:
                best = model;
                break;
            case PlateauController::Action::drop_lr:
                lr *= schedule.lr_drop_factor;
                break;
            case PlateauController::Action::stop:
                stop = true;
                trace.stopped_early = true;
                break;
            case PlateauController::Action::none:
                break;
        }
    };

    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

    const std::size_t batch_size = static_cast<std::size_t>(schedule.batch_size);
    std::vector<Vec> masks(model.n_hidden());
    const bool uses_dropout =
        std::any_of(model.dropout.begin(), model.dropout.end(), [](double p) { return p > 0.0; });

    for (int epoch = 0; epoch < schedule.max_epochs && !stop; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n_train && !stop; start += batch_size) {
            const std::size_t end = std::min(start + batch_size, n_train);
            const double scale = 1.0 / static_cast<double>(end - start);
            grads.zero();
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                const Vec& x = features.at(dataset.item(train.indices[i]).item_id);
                if (uses_dropout) {
                    for (std::size_t l = 0; l < model.n_hidden(); ++l) {
                        const double p = model.dropout[l];
                        if (p <= 0.0) {
                            masks[l].clear();
                            continue;
                        }
                        masks[l].assign(model.layer_sizes[l + 1], 0.0);
                        const double keep = 1.0 - p;
                        for (double& mval : masks[l])
                            mval = rng.uniform01() < keep ? 1.0 / keep : 0.0;
                    }
                }
                batch_loss += sample_loss_and_grad(model, x, train.targets[i], &grads, scale,
                                                   uses_dropout ? &masks : nullptr);
            }
            batch_loss *= scale;
            if (!std::isfinite(batch_loss))
                throw Error("mlp: training diverged (non-finite loss) at iteration " +
                            std::to_string(iteration));
            train_loss_accum += batch_loss;
            ++train_batches_accum;

            for (std::size_t l = 0; l < model.weights.size(); ++l) {
                const double layer_lr =
                    l + 1 == model.weights.size() ? lr * schedule.head_lr_multiplier : lr;
                for (std::size_t j = 0; j < model.weights[l].a.size(); ++j) {
                    velocity.w[l].a[j] =
                        schedule.momentum * velocity.w[l].a[j] - layer_lr * grads.w[l].a[j];
                    model.weights[l].a[j] += velocity.w[l].a[j];
                }
                for (std::size_t j = 0; j < model.biases[l].size(); ++j) {
                    velocity.b[l][j] =
                        schedule.momentum * velocity.b[l][j] - layer_lr * grads.b[l][j];
                    model.biases[l][j] += velocity.b[l][j];
                }
            }

            ++iteration;
            samples_since_val += end - start;
            if (!per_epoch &&
                samples_since_val >= static_cast<std::size_t>(schedule.validation_every_n_samples)) {
                samples_since_val = 0;
                evaluate_validation();
            }
        }
        if (per_epoch && !stop) evaluate_validation();
        trace.epochs_run = epoch + 1;
        lr *= schedule.epoch_lr_decay;
    }

    trace.iterations_run = iteration;
    trace.final_learning_rate = lr;
    trace.chosen_checkpoint = plateau.best_index();
    if (trace.chosen_checkpoint < 0)
        throw Error("mlp: no validation point recorded during training");

    MlpTrainResult result{std::move(best), std::move(trace)};
    return result;
}

}  // namespace

MlpTrainResult train_classifier(const FeatureSet& features, const GroupedDataset& dataset,
                                const SplitPlan& plan, const std::vector<std::size_t>& hidden_sizes,
                                const TrainSchedule& schedule, const MosReader& mos) {
    MlpModel model = make_mlp(features.dim, hidden_sizes, HeadKind::softmax5,
                              derive_seed(schedule.seed, "mlp-init"));
    return train_mlp(features, dataset, plan, std::move(model), schedule, mos);
}

MlpTrainResult train_regressor_e2e(const FeatureSet& features, const GroupedDataset& dataset,
                                   const SplitPlan& plan, const TrainSchedule& schedule,
                                   const std::vector<std::size_t>& hidden_sizes, double dropout_p,
                                   const MosReader& mos) {
    MlpModel model = make_mlp(features.dim, hidden_sizes, HeadKind::regression1,
                              derive_seed(schedule.seed, "mlp-init"), dropout_p);
    return train_mlp(features, dataset, plan, std::move(model), schedule, mos);
}

FeatureSet extract_activations(const MlpModel& model, const FeatureSet& features,
                               ExtractMode mode) {
    if (features.dim != model.input_dim())
        throw DataError("extract: feature dimension does not match network input");
    if (model.n_hidden() == 0) throw DataError("extract: model has no hidden layers");

    FeatureSet out;
    out.provenance = mode == ExtractMode::last_layer ? FeatureProvenance::last_layer
                                                     : FeatureProvenance::all_layers;
    std::size_t dim = 0;
    if (mode == ExtractMode::last_layer) {
        dim = model.layer_sizes[model.layer_sizes.size() - 2];
    } else {
        for (std::size_t l = 1; l + 1 < model.layer_sizes.size(); ++l) dim += model.layer_sizes[l];
    }
    out.dim = dim;

    for (const auto& [id, vec] : features.vectors) {
        std::vector<Vec> hidden;
        model.forward(vec, &hidden);
        Vec feat;
        feat.reserve(dim);
        if (mode == ExtractMode::last_layer) {
            feat = hidden.back();
        } else {
            for (const Vec& h : hidden) feat.insert(feat.end(), h.begin(), h.end());
        }
        out.vectors.emplace(id, std::move(feat));
    }
    return out;
}

double mlp_gradient_check(HeadKind head, const std::vector<std::size_t>& layer_sizes, double h,
                          std::uint64_t seed) {
    if (h < 1e-7 || h > 1e-3) throw ConfigError("gradient check: h must be in [1e-7, 1e-3]");
    if (layer_sizes.size() < 2) throw ConfigError("gradient check: need input and hidden sizes");

    const std::size_t input_dim = layer_sizes.front();
    const std::vector<std::size_t> hidden(layer_sizes.begin() + 1, layer_sizes.end());
    MlpModel model = make_mlp(input_dim, hidden, head, derive_seed(seed, "gradcheck-model"));

    Rng rng(derive_seed(seed, "gradcheck-data"));
    const std::size_t batch = 8;
    std::vector<Vec> xs(batch, Vec(input_dim));
    std::vector<double> targets(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        for (double& v : xs[i]) v = rng.normal();
        targets[i] = head == HeadKind::softmax5
                         ? static_cast<double>(rng.uniform_index(kNumQualityClasses))
                         : rng.uniform(1.0, 5.0);
    }

    const auto batch_loss = [&](const MlpModel& m) {
        double loss = 0.0;
        for (std::size_t i = 0; i < batch; ++i)
            loss += sample_loss_and_grad(m, xs[i], targets[i], nullptr, 1.0, nullptr);
        return loss / static_cast<double>(batch);
    };

    Grads grads(model);
    grads.zero();
    const double scale = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i)
        sample_loss_and_grad(model, xs[i], targets[i], &grads, scale, nullptr);

    std::vector<double> analytic;
    for (std::size_t l = 0; l < grads.w.size(); ++l) {
        analytic.insert(analytic.end(), grads.w[l].a.begin(), grads.w[l].a.end());
        analytic.insert(analytic.end(), grads.b[l].begin(), grads.b[l].end());
    }

    std::vector<double> flat = model.flatten_params();
    double max_rel = 0.0;
    for (std::size_t p = 0; p < flat.size(); ++p) {
        const double orig = flat[p];
        flat[p] = orig + h;
        model.set_params(flat);
        const double lp = batch_loss(model);
        flat[p] = orig - h;
        model.set_params(flat);
        const double lm = batch_loss(model);
        flat[p] = orig;
        model.set_params(flat);
        const double fd = (lp - lm) / (2.0 * h);
        const double rel =
            std::abs(fd - analytic[p]) / std::max({std::abs(fd), std::abs(analytic[p]), 1e-3});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace leakbench
