#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "rirl/common.hpp"

namespace rirl {

inline double mean(std::span<const double> xs) {
    if (xs.empty()) throw ValidationError("mean of an empty sample");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Ranks 1..n with ties sharing their average rank.
inline std::vector<double> ranks(std::span<const double> xs) {
    const size_t n = xs.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) { return xs[i] < xs[j]; });
    std::vector<double> r(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

// Spearman rank correlation. Returns 0 when either side is constant (no
// monotone association is measurable).
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ValidationError("spearman: length mismatch");
    if (x.size() < 2) throw ValidationError("spearman: need at least two pairs");
    std::vector<double> rx = ranks(x), ry = ranks(y);
    double mx = mean(rx), my = mean(ry);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        double dx = rx[i] - mx, dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// Exact two-sided paired permutation test: enumerate all 2^n sign flips of
// the paired differences and count the assignments whose |mean| reaches the
// observed one. Exactness caps n; beyond that a caller should subsample.
inline double paired_permutation_pvalue(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ValidationError("permutation test: length mismatch");
    const size_t n = x.size();
    if (n == 0) throw ValidationError("permutation test: empty sample");
    if (n > 25) throw CapacityError("permutation test: exact enumeration capped at n = 25");
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = x[i] - y[i];
    double observed = std::fabs(std::accumulate(d.begin(), d.end(), 0.0));
    uint64_t total = uint64_t{1} << n;
    uint64_t hits = 0;
    for (uint64_t mask = 0; mask < total; ++mask) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) s += (mask >> i) & 1 ? -d[i] : d[i];
        if (std::fabs(s) >= observed - 1e-12) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

} // namespace rirl
