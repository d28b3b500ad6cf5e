#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "knolling/laygen.hpp"
#include "knolling/rng.hpp"

using namespace knolling;

TEST_SUITE_BEGIN("laygen");

TEST_CASE("pack_rows puts a single object in the origin corner") {
    auto layout = pack_rows({{0.02, 0.03}});
    REQUIRE(layout.size() == 1);
    CHECK(layout[0].pose.x == doctest::Approx(0.010).epsilon(1e-12));
    CHECK(layout[0].pose.y == doctest::Approx(0.015).epsilon(1e-12));
}

TEST_CASE("pack_rows places a second object after the gap") {
    auto layout = pack_rows({{0.02, 0.02}, {0.02, 0.02}});
    REQUIRE(layout.size() == 2);
    CHECK(layout[0].pose.x == doctest::Approx(0.010));
    CHECK(layout[0].pose.y == doctest::Approx(0.010));
    CHECK(layout[1].pose.x == doctest::Approx(0.035));
    CHECK(layout[1].pose.y == doctest::Approx(0.010));
}

TEST_CASE("pack_rows breaks the row when the width runs out") {
    PackConfig cfg;
    cfg.max_row_width = 0.03;
    auto layout = pack_rows({{0.02, 0.02}, {0.02, 0.02}}, cfg);
    CHECK(layout[0].pose.x == doctest::Approx(0.010));
    CHECK(layout[0].pose.y == doctest::Approx(0.010));
    CHECK(layout[1].pose.x == doctest::Approx(0.010));
    CHECK(layout[1].pose.y == doctest::Approx(0.035));
}

TEST_CASE("pack_rows rejects an object wider than the row") {
    PackConfig cfg;
    cfg.max_row_width = 0.03;
    CHECK_THROWS_AS(pack_rows({{0.04, 0.02}}, cfg), UnpackableError);
}

TEST_CASE("pack_rows keeps slot i for input i") {
    Rng rng(5);
    std::vector<ObjectSpec> objects;
    for (int i = 0; i < 8; ++i)
        objects.push_back({rng.uniform(0.01, 0.05), rng.uniform(0.01, 0.05)});
    auto layout = pack_rows(objects);
    for (size_t i = 0; i < objects.size(); ++i) CHECK(layout[i].spec == objects[i]);
}

TEST_CASE("pack_rows on equal squares is permutation-equivariant") {
    std::vector<ObjectSpec> objects(6, ObjectSpec{0.02, 0.02});
    auto base = pack_rows(objects);
    auto swapped = pack_rows(objects);  // identical multiset => identical slots
    for (size_t i = 0; i < objects.size(); ++i) {
        CHECK(base[i].pose.x == swapped[i].pose.x);
        CHECK(base[i].pose.y == swapped[i].pose.y);
    }
}

TEST_CASE("bounding square area of a single rectangle") {
    Layout layout{{{0.02, 0.03}, {0.17, 0.21, 0.0}}};
    CHECK(bounding_square_area(layout) == doctest::Approx(0.0009).epsilon(1e-12));
}

TEST_CASE("bounding square area of the two-object row") {
    auto layout = pack_rows({{0.02, 0.02}, {0.02, 0.02}});
    // x extent 0.045, y extent 0.02
    CHECK(bounding_square_area(layout) == doctest::Approx(0.002025).epsilon(1e-12));
}

TEST_CASE("bounding square area of a 2x2 grid") {
    Layout layout;
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
            layout.push_back({{0.02, 0.02},
                              {0.01 + c * 0.025, 0.01 + r * 0.025, 0.0}});
    CHECK(bounding_square_area(layout) == doctest::Approx(0.002025).epsilon(1e-12));
}

TEST_CASE("bounding square area rejects an empty layout") {
    CHECK_THROWS_AS(bounding_square_area({}), std::invalid_argument);
}

// every composition of n into rows, packed tight: the exhaustive optimum
static double enumerate_best_area(const std::vector<ObjectSpec>& objects, double gap) {
    const int n = static_cast<int>(objects.size());
    double best = 1e300;
    for (int mask = 0; mask < (1 << (n - 1)); ++mask) {
        double width = 0, height = 0, row_w = 0, row_h = 0;
        for (int i = 0; i < n; ++i) {
            bool breaks = i > 0 && (mask >> (i - 1)) & 1;
            if (breaks) {
                width = std::max(width, row_w);
                height += row_h + gap;
                row_w = 0;
                row_h = 0;
            }
            row_w += (row_w > 0 ? gap : 0) + objects[i].width;
            row_h = std::max(row_h, objects[i].length);
        }
        width = std::max(width, row_w);
        height += row_h;
        double side = std::max(width, height);
        best = std::min(best, side * side);
    }
    return best;
}

TEST_CASE("two equal squares cannot beat the packed row") {
    std::vector<ObjectSpec> objects(2, ObjectSpec{0.02, 0.02});
    AnnealConfig anneal;
    anneal.seed = 3;
    auto layout = optimize_layout(objects, anneal);
    auto packed = pack_rows(objects);
    CHECK(bounding_square_area(layout) ==
          doctest::Approx(bounding_square_area(packed)).epsilon(1e-12));
}

TEST_CASE("four equal squares anneal into the 2x2 grid") {
    std::vector<ObjectSpec> objects(4, ObjectSpec{0.02, 0.02});
    AnnealConfig anneal;
    anneal.seed = 9;
    auto layout = optimize_layout(objects, anneal);
    CHECK(bounding_square_area(layout) == doctest::Approx(0.002025).epsilon(1e-9));
    // strictly better than the single-row start
    CHECK(bounding_square_area(layout) <
          bounding_square_area(pack_rows(objects)) - 1e-6);
}

TEST_CASE("one iteration returns the greedy packing") {
    Rng rng(77);
    std::vector<ObjectSpec> objects;
    for (int i = 0; i < 6; ++i)
        objects.push_back({rng.uniform(0.01, 0.05), rng.uniform(0.01, 0.05)});
    AnnealConfig anneal;
    anneal.iterations = 1;
    auto layout = optimize_layout(objects, anneal);
    auto packed = pack_rows(objects);
    REQUIRE(layout.size() == packed.size());
    for (size_t i = 0; i < layout.size(); ++i) {
        CHECK(layout[i].spec == packed[i].spec);
        CHECK(layout[i].pose.x == packed[i].pose.x);
        CHECK(layout[i].pose.y == packed[i].pose.y);
    }
}

TEST_CASE("best-so-far objective never increases") {
    Rng rng(123);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<ObjectSpec> objects;
        int n = rng.uniform_int(2, 10);
        for (int i = 0; i < n; ++i)
            objects.push_back({rng.uniform(0.01, 0.05), rng.uniform(0.01, 0.05)});
        AnnealConfig anneal;
        anneal.iterations = 2000;
        anneal.seed = rng.next_u64();
        double last = 1e300;
        optimize_layout(objects, anneal, {}, [&](int, double best) {
            CHECK(best <= last + 1e-15);
            last = best;
        });
    }
}

TEST_CASE("small equal-square instances reach the enumerated optimum") {
    for (int n = 2; n <= 4; ++n) {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            std::vector<ObjectSpec> objects(n, ObjectSpec{0.03, 0.03});
            AnnealConfig anneal;
            anneal.seed = seed;
            auto layout = optimize_layout(objects, anneal);
            CHECK(bounding_square_area(layout) ==
                  doctest::Approx(enumerate_best_area(objects, 0.005)).epsilon(1e-9));
        }
    }
}

TEST_CASE("annealed layouts respect all hard constraints") {
    Rng rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ObjectSpec> objects;
        int n = rng.uniform_int(2, 10);
        for (int i = 0; i < n; ++i)
            objects.push_back({rng.uniform(0.01, 0.05), rng.uniform(0.01, 0.05)});
        AnnealConfig anneal;
        anneal.iterations = 3000;
        anneal.seed = rng.next_u64();
        auto layout = optimize_layout(objects, anneal);
        auto record = record_from_layout(layout);
        CHECK(validate_scenario(record).ok());
        CHECK(gaps_respected(layout, 0.005));
    }
}

TEST_CASE("area-descending ordering sorts the larger object first") {
    auto out = apply_ordering({{0.02, 0.02}, {0.04, 0.04}}, OrderingRule::AreaDescending);
    CHECK(out.objects[0] == ObjectSpec{0.04, 0.04});
    CHECK(out.objects[1] == ObjectSpec{0.02, 0.02});
    CHECK(out.permutation == std::vector<int>{1, 0});
}

TEST_CASE("identical objects keep their original relative order") {
    std::vector<ObjectSpec> objects(4, ObjectSpec{0.02, 0.03});
    auto out = apply_ordering(objects, OrderingRule::AreaDescending);
    CHECK(out.permutation == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("aspect-ratio ordering ranks the elongated object first") {
    auto out = apply_ordering({{0.01, 0.04}, {0.02, 0.02}},
                              OrderingRule::AspectRatioDescending);
    CHECK(out.objects[0] == ObjectSpec{0.01, 0.04});  // ratio 4 then 1
    CHECK(out.objects[1] == ObjectSpec{0.02, 0.02});
}

TEST_CASE("equal-size grouping pulls duplicates together") {
    ObjectSpec a{0.02, 0.03}, b{0.04, 0.01};
    auto grouped = group_equal_adjacent({a, b, a, b, a});
    CHECK(grouped == std::vector<ObjectSpec>{a, a, a, b, b});
}

TEST_CASE("generation is deterministic in the seed") {
    GenConfig cfg;
    cfg.count = 3;
    cfg.seed = 99;
    cfg.anneal.iterations = 500;
    auto a = generate_dataset(cfg);
    auto b = generate_dataset(cfg);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(encode_record(a[i]) == encode_record(b[i]));
}

TEST_CASE("a collapsed n range fixes the object count") {
    GenConfig cfg;
    cfg.count = 10;
    cfg.n_min = 2;
    cfg.n_max = 2;
    cfg.anneal.iterations = 200;
    for (const auto& r : generate_dataset(cfg)) CHECK(r.objects.size() == 2);
}

TEST_CASE("generated scenarios validate and keep the minimum gap") {
    GenConfig cfg;
    cfg.count = 200;
    cfg.seed = 31337;
    cfg.anneal.iterations = 1000;
    for (const auto& r : generate_dataset(cfg)) {
        CHECK(validate_scenario(r).ok());
        CHECK(gaps_respected(layout_from_record(r), cfg.pack.gap));
    }
}

TEST_CASE("records roundtrip exactly through the text encoding") {
    Rng rng(8);
    for (int trial = 0; trial < 1000; ++trial) {
        ScenarioRecord r;
        int n = rng.uniform_int(1, kMaxObjects);
        for (int i = 0; i < n; ++i) {
            r.objects.push_back({rng.uniform(0.01, 0.05), rng.uniform(0.01, 0.05)});
            r.targets.push_back({rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)});
        }
        ScenarioRecord back = decode_record(encode_record(r));
        REQUIRE(back.objects.size() == r.objects.size());
        for (int i = 0; i < n; ++i) {
            CHECK(back.objects[i] == r.objects[i]);
            CHECK(back.targets[i] == r.targets[i]);
        }
    }
}

TEST_CASE("mismatched lengths fail to parse with the line number") {
    std::string line = R"({"n":3,"objects":[[0.02,0.02],[0.02,0.02],[0.02,0.02]],"targets":[[0.1,0.1],[0.2,0.2]]})";
    CHECK_THROWS_WITH_AS(decode_record(line, 17), doctest::Contains("line 17"), ParseError);
}

TEST_CASE("garbage lines fail to parse") {
    CHECK_THROWS_AS(decode_record("not json", 1), ParseError);
    CHECK_THROWS_AS(decode_record(R"({"n":1})", 2), ParseError);
}

TEST_SUITE_END();
