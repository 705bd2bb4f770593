#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "leakbench/checkpoint.hpp"
#include "leakbench/svr.hpp"
#include "oracles.hpp"

using namespace leakbench;

namespace {

std::vector<Vec> random_points(Rng& rng, std::size_t n, std::size_t dim) {
    std::vector<Vec> x(n, Vec(dim));
    for (auto& v : x)
        for (double& e : v) e = rng.normal();
    return x;
}

KernelSpec gaussian(double gamma = 0.5) {
    KernelSpec k;
    k.kind = KernelKind::gaussian;
    k.gamma = gamma;
    return k;
}

KernelSpec linear() {
    KernelSpec k;
    k.kind = KernelKind::linear;
    return k;
}

}  // namespace

TEST_CASE("pooling examples") {
    const std::vector<Vec> vs{{1, 4}, {3, 2}};
    CHECK(pool_features(vs, PoolingMethod::mean) == Vec{2, 3});
    CHECK(pool_features(vs, PoolingMethod::max) == Vec{3, 4});
    CHECK(pool_features(vs, PoolingMethod::min) == Vec{1, 2});
    CHECK(pool_features(vs, PoolingMethod::median) == Vec{2, 3});

    const std::vector<Vec> single{{7, 8, 9}};
    for (auto m : {PoolingMethod::mean, PoolingMethod::median, PoolingMethod::min,
                   PoolingMethod::max})
        CHECK(pool_features(single, m) == Vec{7, 8, 9});

    const std::vector<Vec> odd{{1, 0}, {5, 2}, {2, 9}};
    CHECK(pool_features(odd, PoolingMethod::median) == Vec{2, 2});
    CHECK_THROWS_AS(pool_features(std::vector<Vec>{}, PoolingMethod::mean), DataError);
}

TEST_CASE("constant targets give a bias-only model") {
    Rng rng(5);
    const auto x = random_points(rng, 8, 3);
    const Vec y(8, 2.75);
    SvrConfig cfg;
    const auto model = train_svr(x, y, gaussian(), cfg);
    CHECK(model.support_vectors.empty());
    CHECK(model.bias == doctest::Approx(2.75).epsilon(1e-12));
    CHECK(predict_svr(model, x[0]) == doctest::Approx(2.75).epsilon(1e-12));
}

TEST_CASE("a single sample is fit within epsilon") {
    const std::vector<Vec> x{{0.4, -1.0}};
    const Vec y{3.3};
    SvrConfig cfg;
    cfg.epsilon = 0.1;
    const auto model = train_svr(x, y, gaussian(), cfg);
    CHECK(std::abs(predict_svr(model, x[0]) - y[0]) <= cfg.epsilon + 1e-12);
}

TEST_CASE("predict matches hand arithmetic") {
    SvrModel model;
    model.kernel = linear();
    model.support_vectors = {{1.0, 2.0}, {-1.0, 0.5}};
    model.dual_coefficients = {0.5, -0.25};
    model.bias = 0.125;
    const Vec x{2.0, -1.0};
    // 0.5*(1*2 + 2*-1) + -0.25*(-1*2 + 0.5*-1) + 0.125
    const double expected = 0.5 * 0.0 - 0.25 * (-2.5) + 0.125;
    CHECK(predict_svr(model, x) == doctest::Approx(expected).epsilon(1e-15));

    SvrModel empty;
    empty.kernel = linear();
    empty.bias = -1.5;
    CHECK(predict_svr(empty, x) == doctest::Approx(-1.5));
}

TEST_CASE("gaussian kernel at a support vector evaluates to one") {
    SvrModel model;
    model.kernel = gaussian(0.7);
    model.support_vectors = {{0.3, 0.4}};
    model.dual_coefficients = {0.9};
    model.bias = 0.05;
    CHECK(predict_svr(model, model.support_vectors[0]) ==
          doctest::Approx(0.95).epsilon(1e-15));
}

TEST_CASE("SMO agrees with the proximal-gradient dual oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(8);
        const std::size_t dim = 1 + rng.uniform_index(3);
        const auto x = random_points(rng, n, dim);
        Vec y(n);
        for (double& v : y) v = rng.uniform(1.0, 5.0);

        KernelSpec kernel;
        SvrConfig cfg;
        switch (trial % 3) {
            case 0:
                kernel = gaussian(rng.uniform(0.2, 1.5));
                break;
            case 1:
                kernel = linear();
                break;
            default:
                kernel.kind = KernelKind::polynomial;
                kernel.degree = 2;
                kernel.coef0 = 1.0;
                break;
        }
        cfg.c = rng.uniform(0.5, 4.0);
        cfg.epsilon = rng.uniform(0.0, 0.3);
        cfg.kkt_tolerance = 1e-9;
        cfg.seed = trial;

        const auto model = train_svr(x, y, kernel, cfg);
        CHECK(model.converged);
        const auto oracle = oracles::solve_svr_dual_brute(x, y, model.kernel, cfg.c, cfg.epsilon);
        CHECK(std::abs(model.dual_objective - oracle.dual_objective) < 1e-6);
        CHECK(svr_primal_objective(model, x, y) <= oracle.primal_objective + 1e-6);
    }
}

TEST_CASE("five-point linear instance against the oracle") {
    const std::vector<Vec> x{{0.0}, {1.0}, {2.0}, {3.0}, {4.0}};
    const Vec y{1.1, 1.9, 3.2, 3.8, 5.0};
    SvrConfig cfg;
    cfg.c = 2.0;
    cfg.epsilon = 0.1;
    cfg.kkt_tolerance = 1e-10;
    const auto model = train_svr(x, y, linear(), cfg);
    const auto oracle = oracles::solve_svr_dual_brute(x, y, model.kernel, cfg.c, cfg.epsilon);
    CHECK(std::abs(model.dual_objective - oracle.dual_objective) < 1e-6);
    // near-linear data: predictions close to the targets
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(std::abs(predict_svr(model, x[i]) - y[i]) < 0.35);
}

TEST_CASE("dual coefficients respect the box everywhere") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 3 + rng.uniform_index(20);
        const auto x = random_points(rng, n, 2);
        Vec y(n);
        for (double& v : y) v = rng.uniform(1.0, 5.0);
        SvrConfig cfg;
        cfg.c = rng.uniform(0.2, 3.0);
        cfg.seed = trial;
        const auto model = train_svr(x, y, gaussian(1.0), cfg);
        for (double b : model.dual_coefficients) {
            CHECK(b >= -cfg.c - 1e-12);
            CHECK(b <= cfg.c + 1e-12);
            CHECK(b != 0.0);  // only support vectors are stored
        }
        CHECK(model.kkt_residual <= cfg.kkt_tolerance);
    }
}

TEST_CASE("gram matrices are numerically positive semidefinite") {
    // power iteration on (sigma*I - G) estimates the smallest eigenvalue
    Rng rng(123);
    for (const auto& kernel : {gaussian(0.8), linear()}) {
        const auto x = random_points(rng, 16, 3);
        std::vector<Vec> gram(16, Vec(16));
        double sigma = 0.0;
        for (std::size_t i = 0; i < 16; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < 16; ++j) {
                gram[i][j] = kernel_eval(kernel, x[i], x[j]);
                row += std::abs(gram[i][j]);
            }
            sigma = std::max(sigma, row);
        }
        Vec v(16);
        for (double& e : v) e = rng.normal();
        for (int it = 0; it < 600; ++it) {
            Vec next(16, 0.0);
            for (std::size_t i = 0; i < 16; ++i) {
                next[i] = sigma * v[i];
                for (std::size_t j = 0; j < 16; ++j) next[i] -= gram[i][j] * v[j];
            }
            double norm = 0.0;
            for (double e : next) norm += e * e;
            norm = std::sqrt(norm);
            for (std::size_t i = 0; i < 16; ++i) v[i] = next[i] / norm;
        }
        double rayleigh = 0.0;
        for (std::size_t i = 0; i < 16; ++i) {
            double gv = 0.0;
            for (std::size_t j = 0; j < 16; ++j) gv += gram[i][j] * v[j];
            rayleigh += v[i] * gv;
        }
        CHECK(rayleigh >= -1e-8);  // min eigenvalue of G
        for (std::size_t i = 0; i < 16; ++i)
            for (std::size_t j = 0; j < i; ++j)
                CHECK(gram[i][j] == doctest::Approx(gram[j][i]).epsilon(1e-15));
    }
}

TEST_CASE("training is invariant to sample order") {
    // The gaussian-kernel dual is strictly convex on distinct points, so
    // both orderings converge to one optimum; prediction agreement is
    // limited by the KKT tolerance, not by the data order.
    Rng rng(9);
    const std::size_t n = 14;
    auto x = random_points(rng, n, 3);
    Vec y(n);
    for (double& v : y) v = rng.uniform(1.0, 5.0);
    SvrConfig cfg;
    cfg.kkt_tolerance = 1e-10;
    cfg.seed = 5;
    const auto base = train_svr(x, y, gaussian(0.6), cfg);

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng shuffler(17);
    shuffler.shuffle(perm);
    std::vector<Vec> xs(n);
    Vec ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = x[perm[i]];
        ys[i] = y[perm[i]];
    }
    const auto shuffled = train_svr(xs, ys, gaussian(0.6), cfg);

    const auto probe = random_points(rng, 10, 3);
    for (const auto& p : probe)
        CHECK(std::abs(predict_svr(base, p) - predict_svr(shuffled, p)) <= 1e-7);
}

TEST_CASE("non-convergence is reported but still yields a model") {
    Rng rng(2);
    const auto x = random_points(rng, 20, 2);
    Vec y(20);
    for (double& v : y) v = rng.uniform(1.0, 5.0);
    SvrConfig cfg;
    cfg.max_passes = 3;
    cfg.kkt_tolerance = 1e-12;
    const auto model = train_svr(x, y, gaussian(1.0), cfg);
    CHECK_FALSE(model.converged);
    CHECK(model.kkt_residual > cfg.kkt_tolerance);
}

TEST_CASE("input validation") {
    SvrConfig cfg;
    CHECK_THROWS_AS(train_svr({}, {}, linear(), cfg), DataError);
    CHECK_THROWS_AS(train_svr({{1.0}}, {1.0, 2.0}, linear(), cfg), DataError);
    CHECK_THROWS_AS(train_svr({{1.0}, {std::nan("")}}, {1.0, 2.0}, linear(), cfg), DataError);
    SvrConfig bad = cfg;
    bad.c = 0.0;
    CHECK_THROWS_AS(train_svr({{1.0}}, {1.0}, linear(), bad), ConfigError);

    SvrModel model;
    model.kernel = linear();
    model.support_vectors = {{1.0, 2.0}};
    model.dual_coefficients = {1.0};
    CHECK_THROWS_AS(predict_svr(model, Vec{1.0}), DataError);
}

TEST_CASE("svr checkpoint round-trip") {
    Rng rng(4);
    const auto x = random_points(rng, 10, 3);
    Vec y(10);
    for (double& v : y) v = rng.uniform(1.0, 5.0);
    SvrConfig cfg;
    cfg.seed = 1;
    const auto model = train_svr(x, y, gaussian(0.4), cfg);

    const auto path = "/tmp/leakbench_svr_checkpoint.bin";
    save_svr_checkpoint(model, path, {{"stage", "unit-test"}});
    CheckpointMeta meta;
    const auto loaded = load_svr_checkpoint(path, &meta);
    CHECK(meta.at("stage") == "unit-test");
    CHECK(loaded.bias == model.bias);
    CHECK(loaded.dual_coefficients == model.dual_coefficients);
    for (const auto& p : random_points(rng, 5, 3))
        CHECK(predict_svr(loaded, p) == predict_svr(model, p));
}
