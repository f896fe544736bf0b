#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace steerlab {

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard and
// the derived draws below avoid std::*_distribution, whose algorithms differ
// across standard libraries. Same seed -> same stream everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1): 53 mantissa bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection-free modulo is fine here: n is
    // tiny relative to 2^64, bias is < 2^-50.
    uint64_t uniform_int(uint64_t n) { return gen_() % n; }

    int range_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(uniform_int(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Box-Muller; deterministic across platforms unlike std::normal_distribution.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used for parameter checksums and config hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string to_hex(uint64_t v);

// Base64 of raw little-endian doubles: the bit-exact tensor wire format.
std::string base64_encode(const void* data, size_t n);
std::vector<unsigned char> base64_decode(const std::string& s);
std::string doubles_to_base64(const std::vector<double>& v);
std::vector<double> base64_to_doubles(const std::string& s);

// Shortest round-trip decimal for a double ("%.17g" trimmed).
std::string format_double(double v);

// Write via temp file + rename so readers never observe partial artifacts.
void atomic_write_file(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

// FNV-1a of a file's bytes, for manifests and artifact cross-checks.
uint64_t file_checksum(const std::filesystem::path& path);

// Runs fn(i) for i in [0, n). Cells must be independent; results land in
// caller-owned slots so the outcome does not depend on scheduling. Thread
// count: STEERLAB_THREADS env var, else hardware_concurrency.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace steerlab
