#pragma once

// Shared plumbing: error types, logging, hashing, seed derivation and a
// portable RNG. All randomness in the project flows through Rng so that
// identical seeds reproduce identical results across platforms (the
// standard library engines are pinned by the standard, its distributions
// are not).

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace leakbench {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration or parameters. CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or inconsistent data files. CLI exit code 3.
struct DataError : Error {
    using Error::Error;
};

// Violation of a protocol invariant (e.g. tainted test mode without
// fine-tuning). CLI exit code 4.
struct ProtocolError : Error {
    using Error::Error;
};

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level();
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::string hex64(std::uint64_t v);

// SplitMix64 finalizer; decorrelates nearby integers.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stable per-(tag, index) seed stream from one base seed. Changing the tag
// or index gives an unrelated stream; results keyed by (tag, index) stay
// untouched when other cells change.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0) {
    return mix64(mix64(base ^ fnv1a64(tag)) ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
}

// mt19937_64 engine with hand-rolled distributions. Box-Muller for
// normals, bitmask rejection for bounded integers, Fisher-Yates shuffle.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n). Bitmask rejection keeps it exact.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw ConfigError("uniform_index: empty range");
        if (n == 1) return 0;
        std::uint64_t mask = n - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        for (;;) {
            const std::uint64_t v = eng_() & mask;
            if (v < n) return v;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

// Shortest round-trip decimal text for a double (locale-free).
std::string format_double(double v);
double parse_double(std::string_view s, bool& ok);

}  // namespace leakbench
