#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "leakbench/common.hpp"
#include "leakbench/metrics.hpp"
#include "oracles.hpp"

using namespace leakbench;

TEST_CASE("plcc on exact examples") {
    const std::vector<double> x{1, 2, 3};
    CHECK(plcc(x, x) == doctest::Approx(1.0).epsilon(1e-15));
    const std::vector<double> rev{3, 2, 1};
    CHECK(plcc(x, rev) == doctest::Approx(-1.0).epsilon(1e-15));

    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{1, 3, 2, 4};
    const double expected = oracles::pearson_double_loop(a, b);
    CHECK(expected == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(plcc(a, b) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("plcc rejects degenerate input") {
    const std::vector<double> x{1, 2, 3};
    const std::vector<double> flat{2, 2, 2};
    CHECK_THROWS_AS(plcc(x, flat), DataError);
    CHECK_THROWS_AS(plcc(flat, x), DataError);
    CHECK_THROWS_AS(plcc(std::vector<double>{1}, std::vector<double>{2}), DataError);
    CHECK_THROWS_AS(plcc(x, std::vector<double>{1, 2}), DataError);
    const std::vector<double> with_nan{1, std::nan(""), 3};
    CHECK_THROWS_AS(plcc(x, with_nan), DataError);
}

TEST_CASE("srocc matches monotone invariance and hand examples") {
    const std::vector<double> x{0.3, 1.2, 5.0, 9.1};
    std::vector<double> y;
    for (double v : x) y.push_back(std::exp(v));  // strictly monotone
    CHECK(srocc(x, y) == doctest::Approx(1.0).epsilon(1e-15));

    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{1, 3, 2, 4};
    CHECK(srocc(a, b) == doctest::Approx(0.8).epsilon(1e-12));

    // Tie case: ranks of x are (1, 2.5, 2.5, 4).
    const std::vector<double> tx{1, 2, 2, 3};
    const std::vector<double> ty{1, 2, 3, 4};
    const auto ranks = average_ranks(tx);
    CHECK(ranks == std::vector<double>{1.0, 2.5, 2.5, 4.0});
    const double expected = oracles::spearman_brute(tx, ty);
    CHECK(srocc(tx, ty) == doctest::Approx(expected).epsilon(1e-14));
    CHECK_THROWS_AS(srocc(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), DataError);
}

TEST_CASE("plcc and srocc agree with double-loop oracles on random vectors") {
    Rng rng(20240517);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(99);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = rng.normal();
            // quantized values force ties in roughly half the trials
            y[i] = trial % 2 == 0 ? std::round(rng.normal() * 2.0) / 2.0 : rng.normal();
        }
        bool degenerate = true;
        for (std::size_t i = 1; i < n; ++i)
            if (x[i] != x[0] || y[i] != y[0]) degenerate = false;
        if (degenerate) continue;
        bool flat_y = true;
        for (std::size_t i = 1; i < n; ++i)
            if (y[i] != y[0]) flat_y = false;
        if (flat_y) continue;
        CHECK(std::abs(plcc(x, y) - oracles::pearson_double_loop(x, y)) < 1e-12);
        CHECK(std::abs(srocc(x, y) - oracles::spearman_brute(x, y)) < 1e-12);
    }
}

TEST_CASE("affine invariance of plcc, monotone invariance of srocc") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 5 + rng.uniform_index(40);
        std::vector<double> x(n), y(n), ax(n), mx(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = rng.normal();
            y[i] = rng.normal();
        }
        const double a = 0.1 + rng.uniform01() * 5.0;
        const double b = rng.normal() * 10.0;
        for (std::size_t i = 0; i < n; ++i) {
            ax[i] = a * x[i] + b;
            mx[i] = std::atan(x[i]) * 3.0 + 1.0;  // strictly monotone transform
        }
        CHECK(std::abs(plcc(ax, y) - plcc(x, y)) <= 1e-12);
        CHECK(std::abs(srocc(mx, y) - srocc(x, y)) <= 1e-14);
        CHECK(plcc(x, y) == doctest::Approx(plcc(y, x)).epsilon(1e-15));
    }
}

TEST_CASE("accuracy and class distribution") {
    const std::vector<int> a{0, 1, 2, 3, 4};
    CHECK(accuracy(a, a) == 1.0);
    const std::vector<int> b{1, 2, 3, 4, 0};
    CHECK(accuracy(a, b) == 0.0);
    CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), DataError);

    const std::vector<int> classes{2, 2, 1, 0, 2};
    const auto dist = class_distribution(classes);
    double total = 0.0;
    for (const auto& [c, f] : dist) total += f;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(dist[2].first == 2);
    CHECK(dist[2].second == doctest::Approx(0.6));

    // A constant predictor scores exactly the dominant-class frequency.
    const std::vector<int> constant_pred(classes.size(), 2);
    CHECK(accuracy(constant_pred, classes) == doctest::Approx(0.6));
}

TEST_CASE("aggregate uses the population std convention") {
    std::vector<MetricSummary> one(1);
    one[0].plcc = 0.5;
    one[0].srocc = 0.4;
    const auto single = aggregate(one);
    CHECK(single.plcc.stddev == 0.0);
    CHECK(single.std_convention == "population");

    std::vector<MetricSummary> two(2);
    two[0].srocc = 0.6;
    two[1].srocc = 0.8;
    const auto pair = aggregate(two);
    CHECK(pair.srocc.mean == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(pair.srocc.stddev == doctest::Approx(0.1).epsilon(1e-12));

    // Independent recomputation at high precision for five replicates.
    const std::vector<double> vals{0.61, 0.72, 0.55, 0.68, 0.64};
    long double mean = 0.0L;
    for (double v : vals) mean += static_cast<long double>(v);
    mean /= static_cast<long double>(vals.size());
    long double var = 0.0L;
    for (double v : vals) {
        const long double d = static_cast<long double>(v) - mean;
        var += d * d;
    }
    var /= static_cast<long double>(vals.size());
    const auto stats = aggregate_values(vals);
    CHECK(std::abs(stats.mean - static_cast<double>(mean)) < 1e-12);
    CHECK(std::abs(stats.stddev - static_cast<double>(std::sqrt((double)var))) < 1e-12);
}
