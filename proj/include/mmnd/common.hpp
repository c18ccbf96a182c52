#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mmnd {

using Vec = std::vector<double>;

enum class ErrorCode {
    Io,
    Format,
    Config,
    DimMismatch,
    ZeroVector,
    EmptyPool,
    MissingAnchor,
    BothEmpty,
    BadTemperature,
    BatchMismatch,
    BatchTooSmall,
    SupportMismatch,
    AllMissing,
    NoAnchor,
    NonFinite,
    TeacherMutated,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, ErrorCode code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

// Dense row-major matrix, the only 2-D container used across the library.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    Vec row_vec(std::size_t i) const { return Vec(row(i), row(i) + cols); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Matrix& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline bool is_zero(const Vec& a) {
    for (double x : a)
        if (x != 0.0) return false;
    return true;
}

inline bool all_finite(const Vec& a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void axpy(double alpha, const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// y = M x  (M: r x c, x: c, y: r)
inline Vec matvec(const Matrix& m, const Vec& x) {
    Vec y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) s += r[j] * x[j];
        y[i] = s;
    }
    return y;
}

// y = M^T x  (M: r x c, x: r, y: c)
inline Vec matvec_t(const Matrix& m, const Vec& x) {
    Vec y(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += r[j] * x[i];
    }
    return y;
}

// C = A B  (n x m, m x p)
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            double* crow = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    return c;
}

// C = A^T B  (A: m x n, B: m x p -> n x p)
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k)
        for (std::size_t i = 0; i < a.cols; ++i) {
            double aki = a(k, i);
            if (aki == 0.0) continue;
            const double* brow = b.row(k);
            double* crow = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    return c;
}

// C = A B^T  (A: n x m, B: p x m -> n x p)
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* arow = a.row(i);
            const double* brow = b.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c(i, j) = s;
        }
    return c;
}

// ---- deterministic randomness -------------------------------------------
//
// All randomness in the library flows from one root seed. Stages derive
// independent streams via seed_for(root, tag, a, b) so any stage can be
// re-run in isolation with identical results.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const char* s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (; *s; ++s) {
        h ^= static_cast<unsigned char>(*s);
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t seed_for(std::uint64_t root, const char* stage, std::uint64_t a = 0,
                              std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(root ^ fnv1a64(stage));
    h = splitmix64(h ^ (a * 0x9e3779b97f4a7c15ULL + 1));
    h = splitmix64(h ^ (b * 0xd1b54a32d192ed03ULL + 1));
    return h;
}

// Deterministic generator with pinned uniform/normal transforms (the std::
// distributions are implementation-defined, which would break bit-exact
// reproducibility claims across toolchains).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x853c49e6748fea9bULL) {}

    std::uint64_t next() {
        state_ = splitmix64(state_);
        return state_;
    }

    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller, two draws per call; no cached spare so the stream position
    // is a pure function of call count.
    double normal() {
        double u1 = uniform01();
        while (u1 == 0.0) u1 = uniform01();
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    std::size_t index(std::size_t n) {
        // rejection sampling keeps the bound unbiased
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % static_cast<std::uint64_t>(n);
        std::uint64_t x = next();
        while (x >= limit) x = next();
        return static_cast<std::size_t>(x % n);
    }

    Vec normal_vec(std::size_t n, double scale = 1.0) {
        Vec v(n);
        for (auto& x : v) x = normal() * scale;
        return v;
    }

    // first k slots of a seeded Fisher-Yates pass: k distinct indices in [0,n)
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
            std::size_t j = i + index(n - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

private:
    std::uint64_t state_;
};

// ---- worker cap -----------------------------------------------------------

inline std::atomic<unsigned>& thread_cap() {
    static std::atomic<unsigned> cap{0};  // 0 = use hardware_concurrency
    return cap;
}

inline void set_thread_cap(unsigned n) { thread_cap().store(n); }

inline unsigned effective_threads(std::size_t work_items) {
    unsigned cap = thread_cap().load();
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    unsigned n = cap == 0 ? hw : std::min(cap, hw);
    return static_cast<unsigned>(std::min<std::size_t>(n, work_items));
}

// Each task writes only its own slot, so results are identical for any
// worker count; exceptions are rethrown on the calling thread.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    unsigned workers = effective_threads(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> cursor{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = cursor.fetch_add(1); i < n; i = cursor.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace mmnd
