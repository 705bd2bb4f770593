#pragma once

// MOS binning and the feedforward surrogate networks: a 5-way softmax
// classifier trained on binned MOS (the fine-tuning stand-in) and a
// regression-head network for end-to-end training. SGD with momentum,
// minibatches, seeded shuffling, plateau-driven LR drops and early stopping
// on validation loss.

#include <cstdint>
#include <vector>

#include "leakbench/dataset.hpp"
#include "leakbench/nn_core.hpp"
#include "leakbench/split.hpp"

namespace leakbench {

enum class QualityClass { very_poor = 0, poor = 1, mediocre = 2, good = 3, very_good = 4 };

constexpr int kNumQualityClasses = 5;

std::string to_string(QualityClass c);

// MOS bins with upper-inclusive boundaries at 1.8 / 2.6 / 3.4 / 4.2; the
// lowest bin also includes 1.0. Out-of-range MOS throws.
QualityClass bin_mos(double mos);

enum class HeadKind { softmax5, regression1 };

struct MlpModel {
    std::vector<std::size_t> layer_sizes;  // input, hidden..., output
    std::vector<Mat> weights;              // weights[l]: sizes[l+1] x sizes[l]
    std::vector<Vec> biases;
    HeadKind head = HeadKind::softmax5;
    std::vector<double> dropout;  // per hidden layer; empty or 0 = off

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t n_hidden() const { return layer_sizes.size() - 2; }

    // Deterministic forward pass (dropout off). Returns output layer
    // pre-activation; hidden activations optionally collected.
    Vec forward(const Vec& input, std::vector<Vec>* hidden_acts = nullptr) const;

    std::vector<double> flatten_params() const;
    void set_params(const std::vector<double>& flat);
};

MlpModel make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden_sizes,
                  HeadKind head, std::uint64_t seed, double dropout_p = 0.0);

struct MlpTrainResult {
    MlpModel model;  // checkpoint with minimal validation loss
    TrainingTrace trace;
};

// Cross-entropy training of the 5-way classifier on bin_mos targets over
// the plan's train partition; validation loss/accuracy drive LR drops and
// early stopping.
MlpTrainResult train_classifier(const FeatureSet& features, const GroupedDataset& dataset,
                                const SplitPlan& plan, const std::vector<std::size_t>& hidden_sizes,
                                const TrainSchedule& schedule,
                                const MosReader& mos = plain_mos_reader());

// Squared-error training of the regression head. Defaults follow the
// end-to-end baseline: 64/32/8 hidden, 0.25 dropout, head at 10x LR and a
// per-epoch LR decay supplied by the schedule.
MlpTrainResult train_regressor_e2e(const FeatureSet& features, const GroupedDataset& dataset,
                                   const SplitPlan& plan, const TrainSchedule& schedule,
                                   const std::vector<std::size_t>& hidden_sizes = {64, 32, 8},
                                   double dropout_p = 0.25,
                                   const MosReader& mos = plain_mos_reader());

enum class ExtractMode { last_layer, all_layers };

std::string to_string(ExtractMode m);
ExtractMode extract_mode_from_string(const std::string& s);

// Hidden-activation features for every item: the penultimate activation
// vector (last_layer) or the concatenation of all hidden activations
// (all_layers). Dropout is never applied here.
FeatureSet extract_activations(const MlpModel& model, const FeatureSet& features,
                               ExtractMode mode);

// Central finite differences over every parameter against the analytic
// gradient on a random batch; returns the maximum relative error.
double mlp_gradient_check(HeadKind head, const std::vector<std::size_t>& layer_sizes, double h,
                          std::uint64_t seed);

}  // namespace leakbench
