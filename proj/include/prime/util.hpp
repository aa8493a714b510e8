#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prime {

// Error categories map one-to-one onto C API status codes and CLI exit codes.
enum class ErrorKind { Usage, Data, Numeric, Io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    std::size_t size() const noexcept { return data.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const {
        return {data.data() + i * cols, cols};
    }

    void set_zero() { std::fill(data.begin(), data.end(), 0.0); }
    bool same_shape(const Matrix& o) const noexcept {
        return rows == o.rows && cols == o.cols;
    }
    bool all_finite() const noexcept;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
/// Divides in place by the L2 norm and returns the norm (0 leaves the input untouched).
double normalize_inplace(std::span<double> a);

/// Pairwise (cascade) summation; order-stable for a given input sequence.
double pairwise_sum(std::span<const double> values);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t seed = 14695981039346656037ULL);
std::string hex64(std::uint64_t v);

std::uint64_t splitmix64(std::uint64_t x);
/// Derives an independent stream seed from a base seed and a tag sequence.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Deterministic generator: mt19937_64 is fully specified by the standard, and
/// the distributions below avoid the implementation-defined std:: ones.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    std::uint64_t next();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n); n > 0.
    std::uint64_t below(std::uint64_t n);
    /// Standard normal (Box-Muller, one value per call).
    double normal();

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// Runs fn(i) for i in [0, n) over up to `threads` workers with static
/// contiguous chunking. Callers must keep per-index work independent.
void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)>& fn);

/// Reads a whole file; throws Io with the path on failure.
std::string read_file(const std::string& path);
/// Writes via a temporary sibling and renames into place.
void write_file_atomic(const std::string& path, std::string_view content);

/// Formats a double in the C locale.
std::string format_double(double v, int precision, bool fixed = true);

}  // namespace prime
