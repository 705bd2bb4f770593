#include "leakbench/svr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace leakbench {

void KernelSpec::validate() const {
    if (kind == KernelKind::polynomial && degree < 1)
        throw ConfigError("kernel: polynomial degree must be >= 1");
}

std::string to_string(const KernelSpec& k) {
    switch (k.kind) {
        case KernelKind::linear: return "linear";
        case KernelKind::polynomial:
            return "polynomial(d=" + std::to_string(k.degree) + ",c0=" + format_double(k.coef0) +
                   ")";
        case KernelKind::gaussian: return "gaussian(gamma=" + format_double(k.gamma) + ")";
    }
    return "linear";
}

double kernel_eval(const KernelSpec& kernel, std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("kernel: dimension mismatch");
    switch (kernel.kind) {
        case KernelKind::linear: {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
            return s;
        }
        case KernelKind::polynomial: {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
            return std::pow(s + kernel.coef0, kernel.degree);
        }
        case KernelKind::gaussian: {
            double d2 = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = a[i] - b[i];
                d2 += d * d;
            }
            const double gamma =
                kernel.gamma > 0.0 ? kernel.gamma : 1.0 / static_cast<double>(a.size());
            return std::exp(-gamma * d2);
        }
    }
    return 0.0;
}

std::string to_string(PoolingMethod m) {
    switch (m) {
        case PoolingMethod::mean: return "mean";
        case PoolingMethod::median: return "median";
        case PoolingMethod::min: return "min";
        case PoolingMethod::max: return "max";
    }
    return "mean";
}

PoolingMethod pooling_from_string(const std::string& s) {
    if (s == "mean" || s == "avg" || s == "average") return PoolingMethod::mean;
    if (s == "median") return PoolingMethod::median;
    if (s == "min") return PoolingMethod::min;
    if (s == "max") return PoolingMethod::max;
    throw ConfigError("unknown pooling method: " + s);
}

Vec pool_features(std::span<const Vec> vectors, PoolingMethod method) {
    if (vectors.empty()) throw DataError("pool: empty group");
    const std::size_t dim = vectors.front().size();
    for (const Vec& v : vectors)
        if (v.size() != dim) throw DataError("pool: inconsistent dimensions");

    Vec out(dim, 0.0);
    switch (method) {
        case PoolingMethod::mean:
            for (const Vec& v : vectors)
                for (std::size_t d = 0; d < dim; ++d) out[d] += v[d];
            for (double& o : out) o /= static_cast<double>(vectors.size());
            break;
        case PoolingMethod::median: {
            Vec column(vectors.size());
            for (std::size_t d = 0; d < dim; ++d) {
                for (std::size_t i = 0; i < vectors.size(); ++i) column[i] = vectors[i][d];
                std::sort(column.begin(), column.end());
                const std::size_t mid = column.size() / 2;
                out[d] = column.size() % 2 == 1 ? column[mid]
                                                : 0.5 * (column[mid - 1] + column[mid]);
            }
            break;
        }
        case PoolingMethod::min:
            out = vectors.front();
            for (const Vec& v : vectors)
                for (std::size_t d = 0; d < dim; ++d) out[d] = std::min(out[d], v[d]);
            break;
        case PoolingMethod::max:
            out = vectors.front();
            for (const Vec& v : vectors)
                for (std::size_t d = 0; d < dim; ++d) out[d] = std::max(out[d], v[d]);
            break;
    }
    return out;
}

void SvrConfig::validate() const {
    if (c <= 0.0) throw ConfigError("svr: C must be positive");
    if (epsilon < 0.0) throw ConfigError("svr: epsilon must be non-negative");
    if (kkt_tolerance <= 0.0) throw ConfigError("svr: kkt_tolerance must be positive");
    if (max_passes == 0) throw ConfigError("svr: max_passes must be positive");
}

namespace {

// Kernel-row cache with a crude flush when over capacity; selection reuses
// a small active set so hit rates stay high.
class KernelCache {
public:
    KernelCache(const std::vector<Vec>& x, const KernelSpec& kernel, std::size_t max_rows)
        : x_(x), kernel_(kernel), max_rows_(std::max<std::size_t>(max_rows, 8)) {}

    const Vec& row(std::size_t i) {
        auto it = rows_.find(i);
        if (it != rows_.end()) return it->second;
        if (rows_.size() >= max_rows_) rows_.clear();
        Vec r(x_.size());
        for (std::size_t j = 0; j < x_.size(); ++j) r[j] = kernel_eval(kernel_, x_[i], x_[j]);
        return rows_.emplace(i, std::move(r)).first->second;
    }

private:
    const std::vector<Vec>& x_;
    const KernelSpec& kernel_;
    std::size_t max_rows_;
    std::unordered_map<std::size_t, Vec> rows_;
};

}  // namespace

SvrModel train_svr(const std::vector<Vec>& x, const Vec& y, KernelSpec kernel,
                   const SvrConfig& config) {
    config.validate();
    kernel.validate();
    if (x.empty() || x.size() != y.size()) throw DataError("svr: empty or mismatched inputs");
    const std::size_t n = x.size();
    const std::size_t dim = x.front().size();
    for (const Vec& v : x) {
        if (v.size() != dim) throw DataError("svr: inconsistent feature dimensions");
        for (double e : v)
            if (!std::isfinite(e)) throw DataError("svr: non-finite feature");
    }
    for (double v : y)
        if (!std::isfinite(v)) throw DataError("svr: non-finite target");
    if (kernel.kind == KernelKind::gaussian && kernel.gamma <= 0.0)
        kernel.gamma = 1.0 / static_cast<double>(dim);

    const double c = config.c;
    const double eps = config.epsilon;

    // Split variables: p < n is the positive part of beta_i, p >= n the
    // negative part; sign(p) = +1 / -1.
    std::vector<double> lambda(2 * n, 0.0);
    std::vector<double> u(n, 0.0);  // (K beta)_i, maintained incrementally
    const auto sign_of = [n](std::size_t p) { return p < n ? 1.0 : -1.0; };
    const auto idx_of = [n](std::size_t p) { return p < n ? p : p - n; };
    const auto gradient = [&](std::size_t p) {
        const double s = sign_of(p);
        return s * u[idx_of(p)] + eps - s * y[idx_of(p)];
    };

    KernelCache cache(x, kernel, 256ull * 1024 * 1024 / (8 * std::max<std::size_t>(n, 1)));
    Rng rng(config.seed);

    SvrModel model;
    model.kernel = kernel;
    model.c = c;
    model.epsilon = eps;

    double m_up = 0.0, m_low = 0.0;
    std::size_t iterations = 0;
    bool converged = false;

    while (iterations < config.max_passes) {
        // Max violating pair over the split variables.
        m_up = -std::numeric_limits<double>::infinity();
        m_low = std::numeric_limits<double>::infinity();
        std::size_t p_up = 2 * n, p_low = 2 * n;
        std::size_t ties_up = 0, ties_low = 0;
        for (std::size_t p = 0; p < 2 * n; ++p) {
            const double s = sign_of(p);
            const double v = -s * gradient(p);
            const bool in_up = (s > 0.0 && lambda[p] < c) || (s < 0.0 && lambda[p] > 0.0);
            const bool in_low = (s > 0.0 && lambda[p] > 0.0) || (s < 0.0 && lambda[p] < c);
            if (in_up) {
                if (v > m_up + 1e-12) {
                    m_up = v;
                    p_up = p;
                    ties_up = 1;
                } else if (v > m_up - 1e-12) {
                    // seeded tie-break via reservoir choice
                    ++ties_up;
                    if (rng.uniform_index(ties_up) == 0) p_up = p;
                    m_up = std::max(m_up, v);
                }
            }
            if (in_low) {
                if (v < m_low - 1e-12) {
                    m_low = v;
                    p_low = p;
                    ties_low = 1;
                } else if (v < m_low + 1e-12) {
                    ++ties_low;
                    if (rng.uniform_index(ties_low) == 0) p_low = p;
                    m_low = std::min(m_low, v);
                }
            }
        }
        if (p_up >= 2 * n || p_low >= 2 * n || m_up - m_low <= config.kkt_tolerance) {
            converged = true;
            break;
        }

        const std::size_t i = idx_of(p_up);
        const std::size_t j = idx_of(p_low);
        const double si = sign_of(p_up);
        const double sj = sign_of(p_low);
        const Vec& row_i = cache.row(i);
        const double kii = row_i[i];
        const double kjj = cache.row(j)[j];
        const double kij = row_i[j];
        const double eta = kii + kjj - 2.0 * kij;

        // Feasible direction: lambda[p_up] += t, lambda[p_low] -= si*sj*t.
        const double d_lin = gradient(p_up) - si * sj * gradient(p_low);
        double t_lo = -lambda[p_up];
        double t_hi = c - lambda[p_up];
        if (si * sj > 0.0) {
            t_lo = std::max(t_lo, lambda[p_low] - c);
            t_hi = std::min(t_hi, lambda[p_low]);
        } else {
            t_lo = std::max(t_lo, -lambda[p_low]);
            t_hi = std::min(t_hi, c - lambda[p_low]);
        }
        double t;
        if (eta > 1e-12) {
            t = std::clamp(-d_lin / eta, t_lo, t_hi);
        } else {
            t = d_lin < 0.0 ? t_hi : t_lo;
        }
        if (t == 0.0) {
            converged = false;
            break;  // numerically stuck; residual reported below
        }

        lambda[p_up] += t;
        lambda[p_low] -= si * sj * t;
        // Box invariant after every update.
        lambda[p_up] = std::clamp(lambda[p_up], 0.0, c);
        lambda[p_low] = std::clamp(lambda[p_low], 0.0, c);

        const double d_beta_i = si * t;
        const double d_beta_j = -si * t;
        const Vec& row_j = cache.row(j);
        for (std::size_t r = 0; r < n; ++r) u[r] += d_beta_i * row_i[r] + d_beta_j * row_j[r];
        ++iterations;
    }

    model.iterations = iterations;
    model.kkt_residual = std::max(0.0, m_up - m_low);
    model.converged = converged && model.kkt_residual <= config.kkt_tolerance;
    if (!model.converged)
        log_info("svr: stopped after " + std::to_string(iterations) +
                 " iterations with KKT residual " + format_double(model.kkt_residual));

    // Bias from free variables, midpoint of the violation bracket otherwise.
    double bias_sum = 0.0;
    std::size_t bias_n = 0;
    for (std::size_t p = 0; p < 2 * n; ++p) {
        if (lambda[p] > 0.0 && lambda[p] < c) {
            bias_sum += -sign_of(p) * gradient(p);
            ++bias_n;
        }
    }
    if (bias_n > 0)
        model.bias = bias_sum / static_cast<double>(bias_n);
    else if (std::isfinite(m_up) && std::isfinite(m_low))
        model.bias = 0.5 * (m_up + m_low);
    else
        model.bias = 0.0;

    // Dual objective in beta form: -1/2 b'Kb - eps*sum(a+a*) + y'b.
    std::vector<double> beta(n);
    for (std::size_t i = 0; i < n; ++i) beta[i] = lambda[i] - lambda[n + i];
    double quad = 0.0, lin = 0.0, slack = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        quad += beta[i] * u[i];
        lin += y[i] * beta[i];
        slack += lambda[i] + lambda[n + i];
    }
    model.dual_objective = -0.5 * quad - eps * slack + lin;

    for (std::size_t i = 0; i < n; ++i) {
        if (beta[i] != 0.0) {
            model.support_vectors.push_back(x[i]);
            model.dual_coefficients.push_back(beta[i]);
        }
    }
    return model;
}

double predict_svr(const SvrModel& model, std::span<const double> x) {
    if (!model.support_vectors.empty() && x.size() != model.support_vectors.front().size())
        throw DataError("svr: prediction dimension mismatch");
    double f = model.bias;
    for (std::size_t i = 0; i < model.support_vectors.size(); ++i)
        f += model.dual_coefficients[i] * kernel_eval(model.kernel, model.support_vectors[i], x);
    return f;
}

double svr_primal_objective(const SvrModel& model, const std::vector<Vec>& x, const Vec& y) {
    double quad = 0.0;
    for (std::size_t i = 0; i < model.support_vectors.size(); ++i)
        for (std::size_t j = 0; j < model.support_vectors.size(); ++j)
            quad += model.dual_coefficients[i] * model.dual_coefficients[j] *
                    kernel_eval(model.kernel, model.support_vectors[i], model.support_vectors[j]);
    double hinge = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double err = std::abs(predict_svr(model, x[i]) - y[i]);
        hinge += std::max(0.0, err - model.epsilon);
    }
    return 0.5 * quad + model.c * hinge;
}

}  // namespace leakbench
