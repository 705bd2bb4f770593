#pragma once

// Minimal LSTM sequence regressor trained with full backpropagation through
// time. Batches follow the sorted, zero-padded, non-random discipline;
// padded steps are masked out of both the loss and the state updates.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "leakbench/nn_core.hpp"
#include "leakbench/split.hpp"

namespace leakbench {

struct LstmModel {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    Mat w_input, w_forget, w_output, w_cell;      // hidden x input
    Mat u_input, u_forget, u_output, u_cell;      // hidden x hidden
    Vec b_input, b_forget, b_output, b_cell;
    Vec head_weights;
    double head_bias = 0.0;
    double forget_bias_init = 1.0;

    // Regression output after the last real step.
    double predict(const std::vector<Vec>& sequence) const;
    // Same, but only the first `real_len` steps update state; trailing
    // padded steps are carried through unchanged.
    double forward_with_padding(const std::vector<Vec>& padded, std::size_t real_len) const;

    std::vector<double> flatten_params() const;
    void set_params(const std::vector<double>& flat);
};

LstmModel make_lstm(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed);

struct SequenceDataset {
    std::vector<std::string> group_ids;
    std::vector<std::vector<Vec>> sequences;  // parallel to group_ids
    std::vector<double> labels;               // group-level MOS
};

enum class BatchingMode { sorted_nonrandom, shuffled };

struct LstmConfig {
    std::size_t hidden_dim = 32;
    TrainSchedule schedule;  // batch_size defaults to 27 at the config site
};

struct LstmTrainResult {
    LstmModel model;
    TrainingTrace trace;
};

// Squared-error training on final-step outputs. group_partition assigns each
// group to train/validation (other partitions are ignored).
LstmTrainResult train_lstm(const SequenceDataset& data,
                           const std::map<std::string, Partition>& group_partition,
                           const LstmConfig& config,
                           BatchingMode batching = BatchingMode::sorted_nonrandom);

// Finite-difference check over all parameters on a padded two-sequence
// batch; returns max relative error.
double lstm_gradient_check(std::size_t input_dim, std::size_t hidden_dim, std::size_t seq_len,
                           double h, std::uint64_t seed);

}  // namespace leakbench
