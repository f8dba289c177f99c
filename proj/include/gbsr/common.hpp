#ifndef GBSR_COMMON_HPP
#define GBSR_COMMON_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace gbsr {

/// Row-major dense matrix; row r of an embedding matrix is one node.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

/// Invalid configuration or arguments. CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or missing input data. CLI exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values, corrupt checkpoints. CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline double logistic(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
    if (x > 0) {
        return x + std::log1p(std::exp(-x));
    }
    return std::log1p(std::exp(x));
}

/// Worker count from GBSR_THREADS, else hardware concurrency.
inline std::size_t thread_count() {
    if (const char* env = std::getenv("GBSR_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) {
                return static_cast<std::size_t>(v);
            }
        } catch (const std::exception&) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(begin, end) over contiguous slices of [0, n). Callers must only
/// write to per-index outputs so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_grain = 256) {
    const std::size_t workers = std::min(thread_count(), std::max<std::size_t>(1, n / min_grain));
    if (workers <= 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b < e) {
            pool.emplace_back([&fn, b, e] { fn(b, e); });
        }
    }
    fn(std::size_t{0}, std::min(n, chunk));
    for (auto& t : pool) {
        t.join();
    }
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

} // namespace gbsr

#endif
