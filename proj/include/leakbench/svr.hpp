#pragma once

// Epsilon-SVR trained by sequential minimal optimization.
//
// Dual, in coefficient form (beta_i is the weight of sample i in the
// decision function f(x) = sum_i beta_i K(x_i, x) + b):
//   maximize  -1/2 b'Kb - eps*||b||_1 + y'b
//   subject to sum(b) = 0, |b_i| <= C.
// The solver works on the split variables (alpha+, alpha-), selects the
// maximal KKT-violating pair each iteration and stops when the violation
// drops below kkt_tolerance.

#include <cstdint>
#include <span>
#include <vector>

#include "leakbench/common.hpp"
#include "leakbench/nn_core.hpp"

namespace leakbench {

enum class KernelKind { linear, polynomial, gaussian };

struct KernelSpec {
    KernelKind kind = KernelKind::gaussian;
    int degree = 3;        // polynomial
    double coef0 = 0.0;    // polynomial
    double gamma = 0.0;    // gaussian; <= 0 resolves to 1/dim at training time

    void validate() const;
};

std::string to_string(const KernelSpec& k);

double kernel_eval(const KernelSpec& kernel, std::span<const double> a, std::span<const double> b);

enum class PoolingMethod { mean, median, min, max };

std::string to_string(PoolingMethod m);
PoolingMethod pooling_from_string(const std::string& s);

// Elementwise aggregation of item vectors into one group-level vector.
Vec pool_features(std::span<const Vec> vectors, PoolingMethod method);

struct SvrConfig {
    double c = 1.0;
    double epsilon = 0.1;
    double kkt_tolerance = 1e-3;
    std::size_t max_passes = 2000000;  // SMO iteration cap
    std::uint64_t seed = 0;

    void validate() const;
};

struct SvrModel {
    std::vector<Vec> support_vectors;
    Vec dual_coefficients;  // beta per support vector, in [-c, c]
    double bias = 0.0;
    KernelSpec kernel;
    double c = 1.0;
    double epsilon = 0.1;
    double kkt_residual = 0.0;  // final max violation
    bool converged = true;
    double dual_objective = 0.0;
    std::size_t iterations = 0;
};

SvrModel train_svr(const std::vector<Vec>& x, const Vec& y, KernelSpec kernel,
                   const SvrConfig& config);

double predict_svr(const SvrModel& model, std::span<const double> x);

// Primal objective (0.5*b'Kb + C * eps-insensitive loss) of a trained model
// evaluated on its own training data.
double svr_primal_objective(const SvrModel& model, const std::vector<Vec>& x, const Vec& y);

}  // namespace leakbench
