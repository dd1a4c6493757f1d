#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace tubedet {

// Stable 64-bit mixing (splitmix64 finalizer). All seeded randomness in the
// pipeline is derived from hash chains built with these helpers, so results
// do not depend on evaluation order across work items.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) { return mix64(h ^ mix64(v)); }

inline std::uint64_t hash_combine(std::uint64_t h, std::int64_t v) {
    return hash_combine(h, static_cast<std::uint64_t>(v));
}

inline std::uint64_t hash_combine(std::uint64_t h, int v) {
    return hash_combine(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
}

inline std::uint64_t hash_combine(std::uint64_t h, double v) {
    return hash_combine(h, std::bit_cast<std::uint64_t>(v));
}

inline std::uint64_t hash_combine(std::uint64_t h, std::string_view s) {
    std::uint64_t f = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : s) f = (f ^ c) * 1099511628211ULL;
    return hash_combine(h, f);
}

template <typename T, typename... Rest>
std::uint64_t hash_key(std::uint64_t seed, const T& v, const Rest&... rest) {
    std::uint64_t h = hash_combine(seed, v);
    ((h = hash_combine(h, rest)), ...);
    return h;
}

/// Deterministic random stream. The engine sequence is pinned by the
/// standard and the distributions are implemented here, so a given seed
/// yields identical draws on every platform and standard library.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform on [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (no state carried between calls).
    double gaussian() {
        const double u1 = 1.0 - uniform();  // (0,1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Index in [0,n). Modulo bias is below 2^-53 for any realistic n.
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

  private:
    std::mt19937_64 eng_;
};

}  // namespace tubedet
