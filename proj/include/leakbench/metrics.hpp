#pragma once

// Correlation and classification metrics. plcc/srocc throw DataError when
// a correlation is undefined (constant input) instead of returning NaN.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace leakbench {

struct MetricSummary {
    double plcc = 0.0;
    double srocc = 0.0;
    std::size_t n = 0;
    bool undefined = false;  // a constant input made the correlations undefined
};

struct AggregateStats {
    double mean = 0.0;
    double stddev = 0.0;  // population convention (N divisor)
    std::size_t n = 0;
};

struct MetricAggregate {
    AggregateStats plcc;
    AggregateStats srocc;
    std::string std_convention = "population";
};

// Pearson product-moment correlation.
double plcc(std::span<const double> x, std::span<const double> y);

// Average ranks, 1-based; ties share the mean of their rank run.
std::vector<double> average_ranks(std::span<const double> x);

// Spearman rank-order correlation: Pearson on average-rank vectors.
double srocc(std::span<const double> x, std::span<const double> y);

double accuracy(std::span<const int> pred_classes, std::span<const int> true_classes);

// Fraction of samples per class label, keyed by class value.
std::vector<std::pair<int, double>> class_distribution(std::span<const int> classes);

AggregateStats aggregate_values(std::span<const double> values);
MetricAggregate aggregate(std::span<const MetricSummary> replicates);

}  // namespace leakbench
