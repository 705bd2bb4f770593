#include "leakbench/nn_core.hpp"

#include <cmath>

namespace leakbench {

void gemv(const Mat& w, const Vec& x, const Vec& b, Vec& y) {
    y.assign(w.rows, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        double s = b[r];
        const double* row = &w.a[r * w.cols];
        for (std::size_t c = 0; c < w.cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
}

void gemv_transpose_add(const Mat& w, const Vec& delta, Vec& x_grad) {
    for (std::size_t r = 0; r < w.rows; ++r) {
        const double d = delta[r];
        const double* row = &w.a[r * w.cols];
        for (std::size_t c = 0; c < w.cols; ++c) x_grad[c] += row[c] * d;
    }
}

void outer_add(Mat& w_grad, const Vec& delta, const Vec& x) {
    for (std::size_t r = 0; r < w_grad.rows; ++r) {
        const double d = delta[r];
        double* row = &w_grad.a[r * w_grad.cols];
        for (std::size_t c = 0; c < w_grad.cols; ++c) row[c] += d * x[c];
    }
}

void xavier_init(Mat& w, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    for (double& v : w.a) v = rng.uniform(-limit, limit);
}

void TrainSchedule::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("schedule: learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("schedule: momentum must be in [0, 1)");
    if (batch_size <= 0) throw ConfigError("schedule: batch_size must be positive");
    if (max_epochs <= 0) throw ConfigError("schedule: max_epochs must be positive");
    if (validation_every_n_samples < 0)
        throw ConfigError("schedule: validation_every_n_samples must be non-negative");
    if (patience <= 0) throw ConfigError("schedule: patience must be positive");
    if (lr_drop_factor <= 0.0 || lr_drop_factor > 1.0)
        throw ConfigError("schedule: lr_drop_factor must be in (0, 1]");
    if (head_lr_multiplier <= 0.0)
        throw ConfigError("schedule: head_lr_multiplier must be positive");
    if (epoch_lr_decay <= 0.0 || epoch_lr_decay > 1.0)
        throw ConfigError("schedule: epoch_lr_decay must be in (0, 1]");
}

std::string TrainingTrace::digest() const {
    std::string blob;
    blob.reserve(points.size() * 40);
    for (const auto& p : points) {
        blob += std::to_string(p.iteration);
        blob += ':';
        blob += format_double(p.train_loss);
        blob += ':';
        blob += format_double(p.val_loss);
        blob += ':';
        blob += format_double(p.val_accuracy);
        blob += ';';
    }
    blob += "chosen=" + std::to_string(chosen_checkpoint);
    return hex64(fnv1a64(blob));
}

MosReader plain_mos_reader() {
    return [](const ItemRecord& item) { return item.mos; };
}

}  // namespace leakbench
