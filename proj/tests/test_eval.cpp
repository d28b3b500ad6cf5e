#include <doctest.h>

#include <cmath>

#include "knolling/eval.hpp"
#include "knolling/laygen.hpp"

using namespace knolling;

namespace {

// prediction oracle: replays the deterministic greedy packer, which is the
// exact generator function for packer-made test sets
class PackerOracle : public ModelBase {
public:
    PackerOracle() { params_.add("unused", 1, 1); }
    ModelKind kind() const override { return ModelKind::Mlp; }
    std::string id() const override { return "packer-oracle"; }
    LossOut teacher_loss(ad::Graph&, const std::vector<const ScenarioRecord*>&,
                         const std::vector<int>&) const override {
        throw std::logic_error("oracle is inference-only");
    }
    std::vector<std::vector<Vec2>> predict_batch(
        const std::vector<std::vector<ObjectSpec>>& objects, double, uint64_t) const override {
        std::vector<std::vector<Vec2>> out;
        for (const auto& objs : objects) {
            std::vector<Vec2> targets;
            for (const auto& item : pack_rows(objs)) targets.push_back({item.pose.x, item.pose.y});
            out.push_back(std::move(targets));
        }
        return out;
    }

protected:
    std::vector<int32_t> config_ints() const override { return {}; }
};

class ConstantModel : public ModelBase {
public:
    explicit ConstantModel(Vec2 value) : value_(value) { params_.add("unused", 1, 1); }
    ModelKind kind() const override { return ModelKind::Mlp; }
    std::string id() const override { return "constant"; }
    LossOut teacher_loss(ad::Graph&, const std::vector<const ScenarioRecord*>&,
                         const std::vector<int>&) const override {
        throw std::logic_error("inference-only");
    }
    std::vector<std::vector<Vec2>> predict_batch(
        const std::vector<std::vector<ObjectSpec>>& objects, double, uint64_t) const override {
        std::vector<std::vector<Vec2>> out;
        for (const auto& objs : objects) out.emplace_back(objs.size(), value_);
        return out;
    }

protected:
    std::vector<int32_t> config_ints() const override { return {}; }

private:
    Vec2 value_;
};

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("identical sequences have zero error") {
    std::vector<Vec2> a = {{0.1, 0.2}, {0.3, 0.4}};
    CHECK(l1_error(a, a) == 0.0);
}

TEST_CASE("a uniform x shift averages over both coordinates") {
    std::vector<Vec2> truth = {{0.1, 0.2}, {0.3, 0.4}, {0.2, 0.1}};
    std::vector<Vec2> pred = truth;
    for (auto& p : pred) p.x += 0.01;
    CHECK(l1_error(pred, truth) == doctest::Approx(0.005).epsilon(1e-12));
}

TEST_CASE("l1 matches an elementwise summation oracle") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Vec2> a, b;
        for (int i = 0; i < 10; ++i) {
            a.push_back({rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)});
            b.push_back({rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)});
        }
        double direct = 0.0;
        for (int i = 0; i < 10; ++i)
            direct += std::abs(a[i].x - b[i].x) + std::abs(a[i].y - b[i].y);
        direct /= 20.0;
        CHECK(std::abs(l1_error(a, b) - direct) <= 1e-15);
    }
}

TEST_CASE("l1 rejects mismatched lengths") {
    CHECK_THROWS_AS(l1_error({{0, 0}}, {{0, 0}, {1, 1}}), std::invalid_argument);
}

TEST_CASE("l1 is symmetric and satisfies the triangle inequality") {
    Rng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<Vec2> a, b, c;
        int n = rng.uniform_int(1, 10);
        for (int i = 0; i < n; ++i) {
            a.push_back({rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)});
            b.push_back({rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)});
            c.push_back({rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)});
        }
        CHECK(l1_error(a, b) == l1_error(b, a));
        CHECK(l1_error(a, c) <= l1_error(a, b) + l1_error(b, c) + 1e-15);
    }
}

TEST_CASE("a perfect oracle scores zero everywhere") {
    Rng rng(3);
    std::map<int, std::vector<ScenarioRecord>> tests;
    for (int n : {2, 4}) {
        for (int i = 0; i < 50; ++i) {
            std::vector<ObjectSpec> objects;
            for (int j = 0; j < n; ++j)
                objects.push_back({rng.uniform(0.01, 0.05), rng.uniform(0.01, 0.05)});
            tests[n].push_back(record_from_layout(pack_rows(objects)));
        }
    }
    PackerOracle oracle;
    EvalReport report = evaluate_suite(oracle, tests);
    for (const auto& row : report.rows) {
        CHECK(row.stats.mean == 0.0);
        CHECK(row.stats.max == 0.0);
    }
    CHECK(report.overall_mean == 0.0);
}

TEST_CASE("a constant predictor matches the analytic expectation") {
    // targets drawn uniformly over the workspace; the constant center
    // predictor has E|u - 0.15| = 0.075 per coordinate
    Rng rng(4);
    std::map<int, std::vector<ScenarioRecord>> tests;
    for (int i = 0; i < 2000; ++i) {
        ScenarioRecord r;
        for (int j = 0; j < 4; ++j) {
            r.objects.push_back({0.02, 0.02});
            r.targets.push_back({rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)});
        }
        tests[4].push_back(std::move(r));
    }
    ConstantModel model({0.15, 0.15});
    EvalReport report = evaluate_suite(model, tests);
    CHECK(report.overall_mean == doctest::Approx(0.075).epsilon(0.03));
}

TEST_CASE("evaluation at temperature zero is repeatable") {
    Rng rng(5);
    std::map<int, std::vector<ScenarioRecord>> tests;
    for (int i = 0; i < 20; ++i) {
        std::vector<ObjectSpec> objects;
        for (int j = 0; j < 3; ++j)
            objects.push_back({rng.uniform(0.01, 0.05), rng.uniform(0.01, 0.05)});
        tests[3].push_back(record_from_layout(pack_rows(objects)));
    }
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.feedforward_dim = 16;
    KnollingTransformer model(cfg, 6);
    EvalReport a = evaluate_suite(model, tests);
    EvalReport b = evaluate_suite(model, tests);
    REQUIRE(a.rows.size() == b.rows.size());
    CHECK(a.rows[0].stats.mean == b.rows[0].stats.mean);
    CHECK(a.rows[0].stats.max == b.rows[0].stats.max);
}

TEST_CASE("report statistics recompute from the per-scenario dump") {
    Rng rng(7);
    std::map<int, std::vector<ScenarioRecord>> tests;
    for (int i = 0; i < 64; ++i) {
        ScenarioRecord r;
        for (int j = 0; j < 2; ++j) {
            r.objects.push_back({0.02, 0.02});
            r.targets.push_back({rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)});
        }
        tests[2].push_back(std::move(r));
    }
    ConstantModel model({0.1, 0.1});
    EvalReport report = evaluate_suite(model, tests);
    REQUIRE(report.per_scenario.size() == 1);
    ErrorStats redo = compute_stats(report.per_scenario[0]);
    CHECK(std::abs(redo.mean - report.rows[0].stats.mean) <= 1e-12);
    CHECK(std::abs(redo.std_dev - report.rows[0].stats.std_dev) <= 1e-12);
    CHECK(redo.min == report.rows[0].stats.min);
    CHECK(redo.max == report.rows[0].stats.max);
}

TEST_CASE("empty test sets are rejected") {
    ConstantModel model({0, 0});
    std::map<int, std::vector<ScenarioRecord>> tests;
    CHECK_THROWS_AS(evaluate_suite(model, tests), std::invalid_argument);
    tests[4] = {};
    CHECK_THROWS_AS(evaluate_suite(model, tests), std::invalid_argument);
}

TEST_CASE("reports render as CSV and an aligned table") {
    EvalReport report;
    report.model_id = "demo";
    report.rows.push_back({2, {1e-3, 1e-4, 0.0, 5e-3, 100}});
    report.rows.push_back({4, {2e-3, 2e-4, 1e-6, 8e-3, 100}});
    std::string csv = report_csv(report);
    CHECK(csv.find("model,n,count,mean,std,min,max") == 0);
    CHECK(csv.find("demo,2,100,") != std::string::npos);
    std::string table = report_table({report});
    CHECK(table.find("MEAN") != std::string::npos);
    CHECK(table.find("n=4") != std::string::npos);
}

TEST_SUITE_END();
