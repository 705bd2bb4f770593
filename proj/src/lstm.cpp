#include "leakbench/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace leakbench {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct StepCache {
    Vec gate_i, gate_f, gate_o, gate_g;
    Vec cell, cell_tanh;
    Vec h_prev, c_prev;
    const Vec* x = nullptr;
};

struct LstmGrads {
    Mat w_input, w_forget, w_output, w_cell;
    Mat u_input, u_forget, u_output, u_cell;
    Vec b_input, b_forget, b_output, b_cell;
    Vec head_weights;
    double head_bias = 0.0;

    explicit LstmGrads(const LstmModel& m)
        : w_input(m.hidden_dim, m.input_dim),
          w_forget(m.hidden_dim, m.input_dim),
          w_output(m.hidden_dim, m.input_dim),
          w_cell(m.hidden_dim, m.input_dim),
          u_input(m.hidden_dim, m.hidden_dim),
          u_forget(m.hidden_dim, m.hidden_dim),
          u_output(m.hidden_dim, m.hidden_dim),
          u_cell(m.hidden_dim, m.hidden_dim),
          b_input(m.hidden_dim, 0.0),
          b_forget(m.hidden_dim, 0.0),
          b_output(m.hidden_dim, 0.0),
          b_cell(m.hidden_dim, 0.0),
          head_weights(m.hidden_dim, 0.0) {}

    void zero() {
        w_input.zero();
        w_forget.zero();
        w_output.zero();
        w_cell.zero();
        u_input.zero();
        u_forget.zero();
        u_output.zero();
        u_cell.zero();
        std::fill(b_input.begin(), b_input.end(), 0.0);
        std::fill(b_forget.begin(), b_forget.end(), 0.0);
        std::fill(b_output.begin(), b_output.end(), 0.0);
        std::fill(b_cell.begin(), b_cell.end(), 0.0);
        std::fill(head_weights.begin(), head_weights.end(), 0.0);
        head_bias = 0.0;
    }
};

void gate_preactivation(const Mat& w, const Mat& u, const Vec& b, const Vec& x, const Vec& h,
                        Vec& out) {
    gemv(w, x, b, out);
    for (std::size_t r = 0; r < u.rows; ++r) {
        double s = 0.0;
        const double* row = &u.a[r * u.cols];
        for (std::size_t c = 0; c < u.cols; ++c) s += row[c] * h[c];
        out[r] += s;
    }
}

// Runs the recurrence over the first real_len steps; fills caches when
// given. Returns the final hidden state.
Vec run_sequence(const LstmModel& m, const std::vector<Vec>& seq, std::size_t real_len,
                 std::vector<StepCache>* caches) {
    Vec h(m.hidden_dim, 0.0), c(m.hidden_dim, 0.0);
    Vec zi, zf, zo, zg;
    for (std::size_t t = 0; t < real_len; ++t) {
        const Vec& x = seq[t];
        if (x.size() != m.input_dim) throw DataError("lstm: input dimension mismatch");
        gate_preactivation(m.w_input, m.u_input, m.b_input, x, h, zi);
        gate_preactivation(m.w_forget, m.u_forget, m.b_forget, x, h, zf);
        gate_preactivation(m.w_output, m.u_output, m.b_output, x, h, zo);
        gate_preactivation(m.w_cell, m.u_cell, m.b_cell, x, h, zg);

        StepCache cache;
        if (caches) {
            cache.h_prev = h;
            cache.c_prev = c;
            cache.x = &x;
        }
        for (std::size_t k = 0; k < m.hidden_dim; ++k) {
            const double gi = sigmoid(zi[k]);
            const double gf = sigmoid(zf[k]);
            const double go = sigmoid(zo[k]);
            const double gg = std::tanh(zg[k]);
            c[k] = gf * c[k] + gi * gg;
            const double ct = std::tanh(c[k]);
            h[k] = go * ct;
            if (caches) {
                cache.gate_i.push_back(gi);
                cache.gate_f.push_back(gf);
                cache.gate_o.push_back(go);
                cache.gate_g.push_back(gg);
                cache.cell.push_back(c[k]);
                cache.cell_tanh.push_back(ct);
            }
        }
        if (caches) caches->push_back(std::move(cache));
    }
    return h;
}

double head_output(const LstmModel& m, const Vec& h) {
    double y = m.head_bias;
    for (std::size_t k = 0; k < m.hidden_dim; ++k) y += m.head_weights[k] * h[k];
    return y;
}

// BPTT for one sequence; d_out is the loss gradient at the head output.
void backprop_sequence(const LstmModel& m, const std::vector<StepCache>& caches, const Vec& h_last,
                       double d_out, LstmGrads& grads) {
    Vec dh(m.hidden_dim, 0.0), dc(m.hidden_dim, 0.0);
    for (std::size_t k = 0; k < m.hidden_dim; ++k) {
        grads.head_weights[k] += d_out * h_last[k];
        dh[k] = d_out * m.head_weights[k];
    }
    grads.head_bias += d_out;

    Vec dzi(m.hidden_dim), dzf(m.hidden_dim), dzo(m.hidden_dim), dzg(m.hidden_dim);
    for (std::size_t t = caches.size(); t-- > 0;) {
        const StepCache& s = caches[t];
        for (std::size_t k = 0; k < m.hidden_dim; ++k) {
            const double go = s.gate_o[k];
            const double ct = s.cell_tanh[k];
            dc[k] += dh[k] * go * (1.0 - ct * ct);
            const double d_go = dh[k] * ct;
            dzo[k] = d_go * go * (1.0 - go);
            const double gi = s.gate_i[k];
            const double gg = s.gate_g[k];
            dzi[k] = dc[k] * gg * gi * (1.0 - gi);
            dzg[k] = dc[k] * gi * (1.0 - gg * gg);
            const double gf = s.gate_f[k];
            dzf[k] = dc[k] * s.c_prev[k] * gf * (1.0 - gf);
        }
        outer_add(grads.w_input, dzi, *s.x);
        outer_add(grads.w_forget, dzf, *s.x);
        outer_add(grads.w_output, dzo, *s.x);
        outer_add(grads.w_cell, dzg, *s.x);
        outer_add(grads.u_input, dzi, s.h_prev);
        outer_add(grads.u_forget, dzf, s.h_prev);
        outer_add(grads.u_output, dzo, s.h_prev);
        outer_add(grads.u_cell, dzg, s.h_prev);
        for (std::size_t k = 0; k < m.hidden_dim; ++k) {
            grads.b_input[k] += dzi[k];
            grads.b_forget[k] += dzf[k];
            grads.b_output[k] += dzo[k];
            grads.b_cell[k] += dzg[k];
        }

        Vec dh_prev(m.hidden_dim, 0.0);
        gemv_transpose_add(m.u_input, dzi, dh_prev);
        gemv_transpose_add(m.u_forget, dzf, dh_prev);
        gemv_transpose_add(m.u_output, dzo, dh_prev);
        gemv_transpose_add(m.u_cell, dzg, dh_prev);
        for (std::size_t k = 0; k < m.hidden_dim; ++k) {
            dc[k] *= s.gate_f[k];
            dh[k] = dh_prev[k];
        }
    }
}

}  // namespace

double LstmModel::predict(const std::vector<Vec>& sequence) const {
    return forward_with_padding(sequence, sequence.size());
}

double LstmModel::forward_with_padding(const std::vector<Vec>& padded, std::size_t real_len) const {
    if (real_len == 0 || padded.empty()) throw DataError("lstm: empty sequence");
    if (real_len > padded.size()) throw DataError("lstm: real length exceeds sequence");
    const Vec h = run_sequence(*this, padded, real_len, nullptr);
    return head_output(*this, h);
}

std::vector<double> LstmModel::flatten_params() const {
    std::vector<double> flat;
    const auto push_mat = [&](const Mat& m) { flat.insert(flat.end(), m.a.begin(), m.a.end()); };
    const auto push_vec = [&](const Vec& v) { flat.insert(flat.end(), v.begin(), v.end()); };
    push_mat(w_input);
    push_mat(w_forget);
    push_mat(w_output);
    push_mat(w_cell);
    push_mat(u_input);
    push_mat(u_forget);
    push_mat(u_output);
    push_mat(u_cell);
    push_vec(b_input);
    push_vec(b_forget);
    push_vec(b_output);
    push_vec(b_cell);
    push_vec(head_weights);
    flat.push_back(head_bias);
    return flat;
}

void LstmModel::set_params(const std::vector<double>& flat) {
    std::size_t pos = 0;
    const auto pull_mat = [&](Mat& m) {
        std::copy(flat.begin() + pos, flat.begin() + pos + m.a.size(), m.a.begin());
        pos += m.a.size();
    };
    const auto pull_vec = [&](Vec& v) {
        std::copy(flat.begin() + pos, flat.begin() + pos + v.size(), v.begin());
        pos += v.size();
    };
    pull_mat(w_input);
    pull_mat(w_forget);
    pull_mat(w_output);
    pull_mat(w_cell);
    pull_mat(u_input);
    pull_mat(u_forget);
    pull_mat(u_output);
    pull_mat(u_cell);
    pull_vec(b_input);
    pull_vec(b_forget);
    pull_vec(b_output);
    pull_vec(b_cell);
    pull_vec(head_weights);
    head_bias = flat[pos];
}

LstmModel make_lstm(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed) {
    if (input_dim == 0 || hidden_dim == 0)
        throw ConfigError("lstm: dimensions must be positive");
    LstmModel m;
    m.input_dim = input_dim;
    m.hidden_dim = hidden_dim;
    Rng rng(seed);
    const auto init_pair = [&](Mat& w, Mat& u) {
        w = Mat(hidden_dim, input_dim);
        u = Mat(hidden_dim, hidden_dim);
        xavier_init(w, rng);
        xavier_init(u, rng);
    };
    init_pair(m.w_input, m.u_input);
    init_pair(m.w_forget, m.u_forget);
    init_pair(m.w_output, m.u_output);
    init_pair(m.w_cell, m.u_cell);
    m.b_input.assign(hidden_dim, 0.0);
    m.b_forget.assign(hidden_dim, m.forget_bias_init);
    m.b_output.assign(hidden_dim, 0.0);
    m.b_cell.assign(hidden_dim, 0.0);
    m.head_weights.assign(hidden_dim, 0.0);
    const double limit = std::sqrt(6.0 / static_cast<double>(hidden_dim + 1));
    for (double& v : m.head_weights) v = rng.uniform(-limit, limit);
    m.head_bias = 0.0;
    return m;
}

namespace {

struct MomentumState {
    LstmGrads v;
    explicit MomentumState(const LstmModel& m) : v(m) {}
};

void apply_update(LstmModel& m, const LstmGrads& g, LstmGrads& vel, double lr, double head_lr,
                  double momentum) {
    const auto step_mat = [&](Mat& w, const Mat& gw, Mat& vw, double rate) {
        for (std::size_t j = 0; j < w.a.size(); ++j) {
            vw.a[j] = momentum * vw.a[j] - rate * gw.a[j];
            w.a[j] += vw.a[j];
        }
    };
    const auto step_vec = [&](Vec& b, const Vec& gb, Vec& vb, double rate) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            vb[j] = momentum * vb[j] - rate * gb[j];
            b[j] += vb[j];
        }
    };
    step_mat(m.w_input, g.w_input, vel.w_input, lr);
    step_mat(m.w_forget, g.w_forget, vel.w_forget, lr);
    step_mat(m.w_output, g.w_output, vel.w_output, lr);
    step_mat(m.w_cell, g.w_cell, vel.w_cell, lr);
    step_mat(m.u_input, g.u_input, vel.u_input, lr);
    step_mat(m.u_forget, g.u_forget, vel.u_forget, lr);
    step_mat(m.u_output, g.u_output, vel.u_output, lr);
    step_mat(m.u_cell, g.u_cell, vel.u_cell, lr);
    step_vec(m.b_input, g.b_input, vel.b_input, lr);
    step_vec(m.b_forget, g.b_forget, vel.b_forget, lr);
    step_vec(m.b_output, g.b_output, vel.b_output, lr);
    step_vec(m.b_cell, g.b_cell, vel.b_cell, lr);
    step_vec(m.head_weights, g.head_weights, vel.head_weights, head_lr);
    vel.head_bias = momentum * vel.head_bias - head_lr * g.head_bias;
    m.head_bias += vel.head_bias;
}

}  // namespace

LstmTrainResult train_lstm(const SequenceDataset& data,
                           const std::map<std::string, Partition>& group_partition,
                           const LstmConfig& config, BatchingMode batching) {
    config.schedule.validate();
    if (config.hidden_dim == 0) throw ConfigError("lstm: hidden_dim must be positive");
    if (data.group_ids.size() != data.sequences.size() ||
        data.group_ids.size() != data.labels.size())
        throw DataError("lstm: sequence dataset fields differ in length");

    std::vector<std::size_t> train_idx, val_idx;
    std::size_t input_dim = 0;
    for (std::size_t i = 0; i < data.group_ids.size(); ++i) {
        if (data.sequences[i].empty())
            throw DataError("lstm: empty sequence for group " + data.group_ids[i]);
        if (input_dim == 0) input_dim = data.sequences[i].front().size();
        auto it = group_partition.find(data.group_ids[i]);
        if (it == group_partition.end()) continue;
        if (it->second == Partition::train) train_idx.push_back(i);
        if (it->second == Partition::validation) val_idx.push_back(i);
    }
    if (train_idx.empty() || val_idx.empty())
        throw DataError("lstm: training requires non-empty train and validation partitions");

    LstmModel model =
        make_lstm(input_dim, config.hidden_dim, derive_seed(config.schedule.seed, "lstm-init"));
    LstmGrads grads(model);
    LstmGrads velocity(model);

    // Sorted by length keeps padding small; the non-random mode fixes batch
    // composition and order for the whole run.
    std::stable_sort(train_idx.begin(), train_idx.end(), [&](std::size_t a, std::size_t b) {
        if (data.sequences[a].size() != data.sequences[b].size())
            return data.sequences[a].size() < data.sequences[b].size();
        return data.group_ids[a] < data.group_ids[b];
    });

    const TrainSchedule& schedule = config.schedule;
    Rng rng(schedule.seed);
    double lr = schedule.learning_rate;
    PlateauController plateau(schedule.patience, schedule.lr_drop_factor);
    LstmModel best = model;
    TrainingTrace trace;
    std::size_t iteration = 0;
    std::size_t samples_since_val = 0;
    double train_loss_accum = 0.0;
    std::size_t train_batches_accum = 0;
    bool stop = false;

    const std::size_t n_train = train_idx.size();
    const bool per_epoch = schedule.validation_every_n_samples == 0 ||
                           static_cast<std::size_t>(schedule.validation_every_n_samples) >= n_train;

    const auto evaluate_validation = [&]() {
        double loss = 0.0;
        for (std::size_t i : val_idx) {
            const double err = model.predict(data.sequences[i]) - data.labels[i];
            loss += err * err;
        }
        loss /= static_cast<double>(val_idx.size());
        ValidationPoint p;
        p.iteration = iteration;
        p.train_loss = train_batches_accum > 0
                           ? train_loss_accum / static_cast<double>(train_batches_accum)
                           : 0.0;
        p.val_loss = loss;
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

    std::vector<std::size_t> order = train_idx;
    const std::size_t batch_size = static_cast<std::size_t>(schedule.batch_size);

    for (int epoch = 0; epoch < schedule.max_epochs && !stop; ++epoch) {
        if (batching == BatchingMode::shuffled) rng.shuffle(order);
        for (std::size_t start = 0; start < n_train && !stop; start += batch_size) {
            const std::size_t end = std::min(start + batch_size, n_train);
            const double scale = 1.0 / static_cast<double>(end - start);
            grads.zero();
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                std::vector<StepCache> caches;
                const Vec h = run_sequence(model, data.sequences[i], data.sequences[i].size(),
                                           &caches);
                const double err = head_output(model, h) - data.labels[i];
                batch_loss += err * err;
                backprop_sequence(model, caches, h, 2.0 * err * scale, grads);
            }
            batch_loss *= scale;
            if (!std::isfinite(batch_loss))
                throw Error("lstm: training diverged (non-finite loss) at iteration " +
                            std::to_string(iteration));
            train_loss_accum += batch_loss;
            ++train_batches_accum;
            apply_update(model, grads, velocity, lr, lr * schedule.head_lr_multiplier,
                         schedule.momentum);
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
        throw Error("lstm: no validation point recorded during training");

    LstmTrainResult result{std::move(best), std::move(trace)};
    return result;
}

double lstm_gradient_check(std::size_t input_dim, std::size_t hidden_dim, std::size_t seq_len,
                           double h, std::uint64_t seed) {
    if (h < 1e-7 || h > 1e-3) throw ConfigError("gradient check: h must be in [1e-7, 1e-3]");
    LstmModel model = make_lstm(input_dim, hidden_dim, derive_seed(seed, "gradcheck-model"));
    Rng rng(derive_seed(seed, "gradcheck-data"));

    // Two sequences, the second shorter and zero-padded, so the masked path
    // is part of what gets checked.
    const std::size_t short_len = std::max<std::size_t>(1, seq_len > 2 ? seq_len - 2 : 1);
    std::vector<std::vector<Vec>> seqs = {std::vector<Vec>(seq_len, Vec(input_dim)),
                                          std::vector<Vec>(seq_len, Vec(input_dim))};
    const std::vector<std::size_t> lens = {seq_len, short_len};
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t t = 0; t < lens[s]; ++t)
            for (double& v : seqs[s][t]) v = rng.normal();
    const std::vector<double> ys = {rng.uniform(1.0, 5.0), rng.uniform(1.0, 5.0)};

    const auto batch_loss = [&](const LstmModel& m) {
        double loss = 0.0;
        for (std::size_t s = 0; s < 2; ++s) {
            const double err = m.forward_with_padding(seqs[s], lens[s]) - ys[s];
            loss += err * err;
        }
        return loss / 2.0;
    };

    LstmGrads grads(model);
    grads.zero();
    for (std::size_t s = 0; s < 2; ++s) {
        std::vector<StepCache> caches;
        const Vec hid = run_sequence(model, seqs[s], lens[s], &caches);
        const double err = head_output(model, hid) - ys[s];
        backprop_sequence(model, caches, hid, 2.0 * err / 2.0, grads);
    }

    LstmModel grad_holder = model;
    grad_holder.w_input = grads.w_input;
    grad_holder.w_forget = grads.w_forget;
    grad_holder.w_output = grads.w_output;
    grad_holder.w_cell = grads.w_cell;
    grad_holder.u_input = grads.u_input;
    grad_holder.u_forget = grads.u_forget;
    grad_holder.u_output = grads.u_output;
    grad_holder.u_cell = grads.u_cell;
    grad_holder.b_input = grads.b_input;
    grad_holder.b_forget = grads.b_forget;
    grad_holder.b_output = grads.b_output;
    grad_holder.b_cell = grads.b_cell;
    grad_holder.head_weights = grads.head_weights;
    grad_holder.head_bias = grads.head_bias;
    const std::vector<double> analytic = grad_holder.flatten_params();

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
