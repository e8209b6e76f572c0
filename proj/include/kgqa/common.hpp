#pragma once
// Shared plumbing: error taxonomy, deterministic RNG, seeded hashing,
// tokenization and small filesystem helpers used across the pipeline.

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kgqa {

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto its exit-code contract:
//   ConfigError / usage problems -> 2, everything else thrown -> 1.
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Broken caller contract (out-of-range id, shape mismatch).
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

// Remote provider / network failure.
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values surfacing in training.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic randomness. mt19937_64's bit stream is pinned by the
// standard; the distributions below are hand-rolled because the standard
// library's are implementation-defined.
// ---------------------------------------------------------------------------

class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Unbiased integer in [0, n) via rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ContractViolation("RandomSource::below(0)");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // In-place Fisher-Yates; std::shuffle's draw pattern is not portable.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// Seeded 64-bit string hash (FNV-1a core, splitmix finalizer). Stable across
// platforms and runs; used by the hash encoder and cache keys.
// ---------------------------------------------------------------------------

inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash64(std::string_view bytes, std::uint64_t seed = 0) {
    std::uint64_t h = 0xCBF29CE484222325ULL ^ mix64(seed);
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return mix64(h);
}

// ---------------------------------------------------------------------------
// Tokenization helpers.
// ---------------------------------------------------------------------------

// Split on runs of ASCII whitespace, nothing else.
std::vector<std::string> whitespace_tokens(std::string_view text);

std::size_t whitespace_token_count(std::string_view text);

// ---------------------------------------------------------------------------
// File helpers.
// ---------------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path);

std::vector<std::string> read_lines(const std::filesystem::path& path);

// Write-temp-then-rename so cache readers never observe partial files.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

std::string to_hex(std::uint64_t value);

}  // namespace kgqa
