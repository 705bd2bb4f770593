#pragma once

// Small dense-math core shared by the MLP and LSTM learners, plus the
// training schedule and trace types. Plain loops, no BLAS: results must be
// bit-identical across platforms, and the models are desk-scale.

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "leakbench/common.hpp"
#include "leakbench/dataset.hpp"

namespace leakbench {

using Vec = std::vector<double>;

struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// y = W x + b
void gemv(const Mat& w, const Vec& x, const Vec& b, Vec& y);
// x_grad += W^T delta
void gemv_transpose_add(const Mat& w, const Vec& delta, Vec& x_grad);
// W_grad += delta * x^T
void outer_add(Mat& w_grad, const Vec& delta, const Vec& x);

// Glorot/Xavier uniform: U(-limit, limit), limit = sqrt(6 / (fan_in + fan_out)).
void xavier_init(Mat& w, Rng& rng);

struct TrainSchedule {
    double learning_rate = 1e-3;
    double momentum = 0.9;      // beta
    int batch_size = 32;
    int max_epochs = 30;
    // 0 (or larger than the training set) -> validate once per epoch.
    int validation_every_n_samples = 0;
    int patience = 5;
    double lr_drop_factor = 0.1;
    double head_lr_multiplier = 1.0;
    double epoch_lr_decay = 1.0;  // multiplied in after every epoch
    std::uint64_t seed = 0;

    void validate() const;
};

struct ValidationPoint {
    std::size_t iteration = 0;   // minibatch count
    double train_loss = 0.0;     // mean over batches since the last point
    double val_loss = 0.0;
    double val_accuracy = -1.0;  // classifiers only
};

struct TrainingTrace {
    std::vector<ValidationPoint> points;
    int chosen_checkpoint = -1;  // argmin validation loss
    std::size_t iterations_run = 0;
    int epochs_run = 0;
    double final_learning_rate = 0.0;
    bool stopped_early = false;

    std::string digest() const;
};

// Plateau handling: `patience` validations without a new loss minimum drop
// the learning rate once; the next plateau stops training. A drop factor of
// 1 stops at the first plateau.
class PlateauController {
public:
    PlateauController(int patience, double drop_factor)
        : patience_(patience), drop_factor_(drop_factor) {}

    enum class Action { none, new_best, drop_lr, stop };

    Action observe(double val_loss) {
        ++observed_;
        if (val_loss < best_loss_) {
            best_loss_ = val_loss;
            best_index_ = observed_ - 1;
            since_best_ = 0;
            return Action::new_best;
        }
        if (++since_best_ >= patience_) {
            since_best_ = 0;
            ++plateaus_;
            if (plateaus_ == 1 && drop_factor_ < 1.0) return Action::drop_lr;
            return Action::stop;
        }
        return Action::none;
    }

    int best_index() const { return best_index_; }
    double best_loss() const { return best_loss_; }

private:
    int patience_;
    double drop_factor_;
    int observed_ = 0;
    int since_best_ = 0;
    int plateaus_ = 0;
    int best_index_ = -1;
    double best_loss_ = std::numeric_limits<double>::infinity();
};

// Label access funnel. Training code reads MOS only through one of these,
// so the pipeline can substitute a logging reader.
using MosReader = std::function<double(const ItemRecord&)>;
MosReader plain_mos_reader();

}  // namespace leakbench
