#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "knolling/encode.hpp"
#include "knolling/rng.hpp"

using namespace knolling;

TEST_SUITE_BEGIN("encode");

TEST_CASE("lift of zero is the trivial block") {
    double v = 0.0;
    auto out = sinusoidal_lift(std::span<const double>(&v, 1));
    REQUIRE(out.size() == 11);
    double expected[11] = {0, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    for (int i = 0; i < 11; ++i) CHECK(out[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("lift of one hits the trig identities") {
    double v = 1.0;
    auto out = sinusoidal_lift(std::span<const double>(&v, 1));
    // sin(2^k pi) = 0 for all k; cos(pi) = -1, cos(2^k pi) = 1 for k >= 1
    double expected[11] = {1, 0, -1, 0, 1, 0, 1, 0, 1, 0, 1};
    for (int i = 0; i < 11; ++i) {
        CHECK(std::abs(out[i] - expected[i]) < 1e-12);
    }
}

TEST_CASE("a (w, l) pair lifts to 22 dims with blocks in input order") {
    double v[2] = {0.02, 0.03};
    auto out = sinusoidal_lift(std::span<const double>(v, 2));
    REQUIRE(out.size() == 22);
    CHECK(out[0] == 0.02);
    CHECK(out[11] == 0.03);
    CHECK(lift_dim(2) == 22);
}

TEST_CASE("lift components stay in [-1, 1] except the pass-through") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        double v[2] = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
        auto out = sinusoidal_lift(std::span<const double>(v, 2));
        for (size_t i = 0; i < out.size(); ++i) {
            if (i % 11 == 0) continue;
            CHECK(std::abs(out[i]) <= 1.0 + 1e-15);
        }
    }
}

TEST_CASE("lift is injective on the size range") {
    Rng rng(11);
    for (int trial = 0; trial < 10000; ++trial) {
        double a = rng.uniform(0.0, 0.05);
        double b = rng.uniform(0.0, 0.05);
        if (a == b) continue;
        auto la = sinusoidal_lift(std::span<const double>(&a, 1));
        auto lb = sinusoidal_lift(std::span<const double>(&b, 1));
        CHECK(la != lb);
    }
}

TEST_CASE("lift rejects non-finite input") {
    double v = std::nan("");
    CHECK_THROWS_AS(sinusoidal_lift(std::span<const double>(&v, 1)), std::invalid_argument);
}

TEST_CASE("lift is a pure function") {
    double v[2] = {0.037, 0.012};
    auto a = sinusoidal_lift(std::span<const double>(v, 2));
    auto b = sinusoidal_lift(std::span<const double>(v, 2));
    CHECK(a == b);
}

TEST_CASE("index encoding of slot 0 alternates zeros and ones") {
    auto out = index_encoding(0, 32);
    for (int i = 0; i < 32; i += 2) {
        CHECK(out[i] == 0.0);
        CHECK(out[i + 1] == 1.0);
    }
}

TEST_CASE("index encoding components stay in [-1, 1]") {
    for (int slot = 0; slot < 10; ++slot) {
        for (int d : {8, 20, 32}) {
            for (double v : index_encoding(slot, d)) {
                CHECK(std::abs(v) <= 1.0);
            }
        }
    }
}

TEST_CASE("the ten slots give well-separated vectors") {
    const int d = 32;
    std::vector<std::vector<double>> enc;
    for (int slot = 0; slot < 10; ++slot) enc.push_back(index_encoding(slot, d));
    for (int i = 0; i < 10; ++i) {
        for (int j = i + 1; j < 10; ++j) {
            double dist = 0.0;
            for (int c = 0; c < d; ++c)
                dist += (enc[i][c] - enc[j][c]) * (enc[i][c] - enc[j][c]);
            CHECK(std::sqrt(dist) > 0.1);
        }
    }
}

TEST_CASE("index encoding rejects out-of-range slots") {
    CHECK_THROWS_AS(index_encoding(-1, 32), std::invalid_argument);
    CHECK_THROWS_AS(index_encoding(10, 32), std::invalid_argument);
}

TEST_SUITE_END();
