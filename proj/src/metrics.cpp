#include "leakbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "leakbench/common.hpp"

namespace leakbench {

namespace {
void check_pair(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DataError("correlation: length mismatch");
    if (x.size() < 2) throw DataError("correlation: need at least 2 samples");
    for (double v : x)
        if (!std::isfinite(v)) throw DataError("correlation: non-finite entry in x");
    for (double v : y)
        if (!std::isfinite(v)) throw DataError("correlation: non-finite entry in y");
}
}  // namespace

double plcc(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw DataError("correlation undefined: constant input");
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        // Ranks i+1 .. j+1 (1-based) share their average.
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double srocc(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    return plcc(rx, ry);
}

double accuracy(std::span<const int> pred_classes, std::span<const int> true_classes) {
    if (pred_classes.size() != true_classes.size()) throw DataError("accuracy: length mismatch");
    if (pred_classes.empty()) throw DataError("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred_classes.size(); ++i)
        if (pred_classes[i] == true_classes[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred_classes.size());
}

std::vector<std::pair<int, double>> class_distribution(std::span<const int> classes) {
    if (classes.empty()) throw DataError("class_distribution: empty input");
    std::vector<std::pair<int, std::size_t>> counts;
    for (int c : classes) {
        auto it = std::find_if(counts.begin(), counts.end(),
                               [&](const auto& p) { return p.first == c; });
        if (it == counts.end())
            counts.emplace_back(c, 1);
        else
            ++it->second;
    }
    std::sort(counts.begin(), counts.end());
    std::vector<std::pair<int, double>> out;
    out.reserve(counts.size());
    for (const auto& [c, k] : counts)
        out.emplace_back(c, static_cast<double>(k) / static_cast<double>(classes.size()));
    return out;
}

AggregateStats aggregate_values(std::span<const double> values) {
    if (values.empty()) throw DataError("aggregate: empty input");
    AggregateStats s;
    s.n = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.n);
    double sq = 0.0;
    for (double v : values) {
        const double d = v - s.mean;
        sq += d * d;
    }
    s.stddev = std::sqrt(sq / static_cast<double>(s.n));
    return s;
}

MetricAggregate aggregate(std::span<const MetricSummary> replicates) {
    if (replicates.empty()) throw DataError("aggregate: no replicates");
    std::vector<double> p, s;
    p.reserve(replicates.size());
    s.reserve(replicates.size());
    for (const auto& r : replicates) {
        p.push_back(r.plcc);
        s.push_back(r.srocc);
    }
    MetricAggregate agg;
    agg.plcc = aggregate_values(p);
    agg.srocc = aggregate_values(s);
    return agg;
}

}  // namespace leakbench
