#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rirl {

constexpr double NEG_INF = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Error taxonomy. Callers are expected to catch by category: configuration
// problems (bad inputs, dimension mismatches), validation failures (broken
// invariants such as non-stochastic rows), capacity limits (problem too large
// for an exact method), numeric singularities, solver divergence, and
// evidence that assigns zero mass to every hypothesis.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct CapacityError : Error {
    using Error::Error;
};

struct SingularityError : Error {
    using Error::Error;
};

struct DivergenceError : Error {
    DivergenceError(const std::string& msg, std::vector<double> last)
        : Error(msg), last_stable_iterate(std::move(last)) {}
    std::vector<double> last_stable_iterate;
};

struct DegenerateEvidenceError : Error {
    DegenerateEvidenceError(const std::string& msg, int index)
        : Error(msg), sequence_index(index) {}
    int sequence_index;
};

// ---------------------------------------------------------------------------
// 2-d geometry
// ---------------------------------------------------------------------------

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm2(Vec2 a) { return dot(a, a); }
inline double norm(Vec2 a) { return std::sqrt(norm2(a)); }

// ---------------------------------------------------------------------------
// Log-space arithmetic
// ---------------------------------------------------------------------------

inline double log_add(double la, double lb) {
    if (la == NEG_INF) return lb;
    if (lb == NEG_INF) return la;
    if (la < lb) std::swap(la, lb);
    return la + std::log1p(std::exp(lb - la));
}

inline double logsumexp(std::span<const double> xs) {
    double m = NEG_INF;
    for (double x : xs)
        if (x > m) m = x;
    if (m == NEG_INF) return NEG_INF;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

// Exponentiate log weights into a normalized distribution in place.
// Returns false when every weight is -inf (no mass anywhere).
inline bool normalize_log_weights(std::span<double> lw) {
    double lz = logsumexp(lw);
    if (lz == NEG_INF) return false;
    for (double& w : lw) w = std::exp(w - lz);
    return true;
}

inline double linf_diff(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

inline double linf_norm(std::span<const double> a) {
    double d = 0.0;
    for (double x : a) d = std::max(d, std::abs(x));
    return d;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 is bit-identical everywhere by definition;
// the transforms below avoid std::*_distribution, whose output is
// implementation-defined and would break byte-for-byte reproducibility of
// result rows across standard libraries.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derive an independent stream id from a base seed and a tag. Tags keep the
// expert rollout, noise draws, sampler chains etc. from sharing a stream.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
    return splitmix64(seed ^ splitmix64(tag));
}

inline uint64_t hash_tag(const char* s) {
    uint64_t h = 14695981039346656037ull; // FNV-1a
    for (; *s; ++s) h = (h ^ (uint64_t)(unsigned char)*s) * 1099511628211ull;
    return h;
}

inline uint64_t derive_seed(uint64_t seed, const char* tag, uint64_t n = 0) {
    return splitmix64(seed ^ splitmix64(hash_tag(tag) + 0x9e3779b97f4a7c15ull * n));
}

class Rng {
  public:
    explicit Rng(uint64_t seed) : s0_(splitmix64(seed)), s1_(splitmix64(seed + 1)) {
        if (s0_ == 0 && s1_ == 0) s1_ = 1;
    }

    uint64_t next_u64() { // xoroshiro128+
        uint64_t a = s0_, b = s1_;
        uint64_t r = a + b;
        b ^= a;
        s0_ = ((a << 24) | (a >> 40)) ^ b ^ (b << 16);
        s1_ = (b << 37) | (b >> 27);
        return r;
    }

    double uniform01() { // in [0,1)
        return (double)(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // unbiased enough for n << 2^64; avoids modulo artifacts via 128-bit mix
    int uniform_int(int n) {
        return (int)(((unsigned __int128)next_u64() * (unsigned __int128)n) >> 64);
    }

    double gaussian() { // Box-Muller, fixed draw count per call pair
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01(), u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    // sample index from unnormalized log weights; -inf entries are excluded.
    // Returns -1 when all weights are -inf.
    int sample_log_weights(std::span<const double> lw) {
        double m = NEG_INF;
        for (double w : lw)
            if (w > m) m = w;
        if (m == NEG_INF) return -1;
        double total = 0.0;
        for (double w : lw) total += std::exp(w - m);
        double u = uniform01() * total;
        double acc = 0.0;
        for (size_t i = 0; i < lw.size(); ++i) {
            acc += std::exp(lw[i] - m);
            if (u < acc) return (int)i;
        }
        for (int i = (int)lw.size() - 1; i >= 0; --i)
            if (lw[i] > NEG_INF) return i;
        return -1;
    }

  private:
    uint64_t s0_, s1_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over a byte string; used for config fingerprints in output headers.
inline uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 14695981039346656037ull;
    for (char c : bytes) h = (h ^ (uint64_t)(unsigned char)c) * 1099511628211ull;
    return h;
}

} // namespace rirl
