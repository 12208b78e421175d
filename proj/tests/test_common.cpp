#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rirl/common.hpp"

#include <cmath>
#include <vector>

using namespace rirl;

TEST_CASE("log_add agrees with naive arithmetic") {
    CHECK(log_add(std::log(2.0), std::log(3.0)) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(log_add(NEG_INF, std::log(3.0)) == doctest::Approx(std::log(3.0)));
    CHECK(log_add(std::log(3.0), NEG_INF) == doctest::Approx(std::log(3.0)));
    CHECK(log_add(NEG_INF, NEG_INF) == NEG_INF);
    // huge magnitude difference must not overflow
    CHECK(log_add(0.0, -800.0) == doctest::Approx(0.0));
    CHECK(log_add(-1000.0, -1000.0) == doctest::Approx(-1000.0 + std::log(2.0)));
}

TEST_CASE("logsumexp matches direct summation and survives extremes") {
    std::vector<double> xs = {-1.0, 0.5, 2.0, -3.0};
    double direct = 0.0;
    for (double x : xs) direct += std::exp(x);
    CHECK(logsumexp(xs) == doctest::Approx(std::log(direct)).epsilon(1e-12));

    std::vector<double> empty;
    CHECK(logsumexp(empty) == NEG_INF);
    std::vector<double> all_neg = {NEG_INF, NEG_INF};
    CHECK(logsumexp(all_neg) == NEG_INF);
    std::vector<double> big = {-1e308, -1e308};
    CHECK(std::isfinite(logsumexp(big)));
}

TEST_CASE("normalize_log_weights produces a distribution") {
    std::vector<double> lw = {std::log(1.0), std::log(2.0), std::log(5.0), NEG_INF};
    REQUIRE(normalize_log_weights(lw));
    CHECK(lw[0] == doctest::Approx(1.0 / 8.0));
    CHECK(lw[1] == doctest::Approx(2.0 / 8.0));
    CHECK(lw[2] == doctest::Approx(5.0 / 8.0));
    CHECK(lw[3] == 0.0);

    std::vector<double> dead = {NEG_INF, NEG_INF};
    CHECK_FALSE(normalize_log_weights(dead));
}

TEST_CASE("linf helpers") {
    std::vector<double> a = {1.0, -2.0, 3.0}, b = {1.5, -2.0, 1.0};
    CHECK(linf_diff(a, b) == doctest::Approx(2.0));
    CHECK(linf_norm(a) == doctest::Approx(3.0));
}

TEST_CASE("splitmix64 reproduces the reference sequence") {
    // successive outputs of the reference generator started at state 0
    CHECK(splitmix64(0) == 0xe220a8397b1dcdafull);
    CHECK(splitmix64(0x9e3779b97f4a7c15ull) == 0x6e789e6aa1b965f4ull);
}

TEST_CASE("fnv1a64 reproduces the reference vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("generator emits the sum of its seeded state first") {
    // the first draw is s0 + s1 before any state update
    Rng r(7);
    CHECK(r.next_u64() == splitmix64(7) + splitmix64(8));
}

TEST_CASE("identical seeds give identical streams, different seeds differ") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t va = a.next_u64();
        all_equal = all_equal && va == b.next_u64();
        any_diff = any_diff || va != c.next_u64();
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform01 stays in [0,1) with sane mean") {
    Rng r(1);
    double acc = 0.0;
    for (int i = 0; i < 20000; ++i) {
        double u = r.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        acc += u;
    }
    CHECK(acc / 20000 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("uniform_int covers its range and nothing else") {
    Rng r(2);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 14000; ++i) {
        int v = r.uniform_int(7);
        REQUIRE(v >= 0);
        REQUIRE(v < 7);
        ++hits[(size_t)v];
    }
    for (int h : hits) CHECK(h > 1500); // ~2000 expected each
}

TEST_CASE("gaussian moments") {
    Rng r(3);
    double s = 0.0, s2 = 0.0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
        double g = r.gaussian();
        s += g;
        s2 += g * g;
    }
    double m = s / n;
    CHECK(m == doctest::Approx(0.0).epsilon(1).scale(0.02));
    CHECK(s2 / n - m * m == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("sample_log_weights respects mass and excludes dead entries") {
    Rng r(4);
    std::vector<double> lw = {std::log(0.2), NEG_INF, std::log(0.8)};
    int c0 = 0, c2 = 0;
    for (int i = 0; i < 10000; ++i) {
        int k = r.sample_log_weights(lw);
        REQUIRE(k != 1);
        REQUIRE(k >= 0);
        (k == 0 ? c0 : c2)++;
    }
    CHECK(c0 / 10000.0 == doctest::Approx(0.2).epsilon(0.1));
    CHECK(c2 / 10000.0 == doctest::Approx(0.8).epsilon(0.05));

    std::vector<double> dead = {NEG_INF, NEG_INF};
    CHECK(r.sample_log_weights(dead) == -1);
}

TEST_CASE("derive_seed separates streams by tag and index") {
    CHECK(derive_seed(5, "walk") != derive_seed(5, "record"));
    CHECK(derive_seed(5, "episode", 0) != derive_seed(5, "episode", 1));
    CHECK(derive_seed(5, "episode", 3) == derive_seed(5, "episode", 3));
    CHECK(derive_seed(5, "walk") != derive_seed(6, "walk"));
}
