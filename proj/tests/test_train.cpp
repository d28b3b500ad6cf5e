#include <doctest.h>

#include <cmath>
#include <fstream>

#include "knolling/eval.hpp"
#include "knolling/laygen.hpp"
#include "knolling/net.hpp"
#include "knolling/train.hpp"

using namespace knolling;

namespace {

ScenarioRecord random_record(Rng& rng, int n) {
    ScenarioRecord r;
    for (int i = 0; i < n; ++i) {
        r.objects.push_back({rng.uniform(0.01, 0.05), rng.uniform(0.01, 0.05)});
        r.targets.push_back({rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)});
    }
    return r;
}

// loss of a teacher-forced pass over a tiny batch, for finite differencing
double model_loss(const ModelBase& model, const std::vector<const ScenarioRecord*>& batch,
                  const std::vector<int>& prefixes) {
    ad::Graph g;
    LossOut lo = model.teacher_loss(g, batch, prefixes);
    return g.val(lo.loss_sum)(0, 0);
}

double max_model_grad_error(ModelBase& model,
                            const std::vector<const ScenarioRecord*>& batch,
                            const std::vector<int>& prefixes, double step = 1e-5) {
    ad::Graph g;
    LossOut lo = model.teacher_loss(g, batch, prefixes);
    g.backward(lo.loss_sum);
    std::vector<ad::Mat> analytic(model.params().size());
    for (size_t i = 0; i < analytic.size(); ++i) {
        const auto& t = model.params().at(i);
        analytic[i] = ad::Mat::Zero(t.value.rows(), t.value.cols());
    }
    for (auto [pid, grad] : g.param_grads()) analytic[pid] += *grad;

    double worst = 0.0;
    for (size_t t = 0; t < model.params().size(); ++t) {
        ad::Mat& value = model.params().at(t).value;
        for (Eigen::Index c = 0; c < value.cols(); ++c) {
            for (Eigen::Index r = 0; r < value.rows(); ++r) {
                double saved = value(r, c);
                value(r, c) = saved + step;
                double up = model_loss(model, batch, prefixes);
                value(r, c) = saved - step;
                double down = model_loss(model, batch, prefixes);
                value(r, c) = saved;
                double fd = (up - down) / (2 * step);
                double a = analytic[t](r, c);
                // 1e-5 floor: central differences carry ~1e-10 cancellation
                // noise, and softmax shift-invariance makes key-bias
                // gradients exactly zero
                double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-5});
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("mixture NLL is zero at the unit-density peak") {
    GmmParams p;
    double sigma = 1.0 / std::sqrt(2.0 * kPi);
    p.means = {{0.3, 0.4}, {0, 0}, {0, 0}, {0, 0}, {0, 0}};
    p.stds.assign(5, Vec2{sigma, sigma});
    p.weights = {1, 0, 0, 0, 0};
    CHECK(std::abs(gmm_nll(p, {0.3, 0.4})) < 1e-12);
}

TEST_CASE("mixture NLL stays finite very far from every mode") {
    GmmParams p;
    p.means.assign(5, Vec2{0.0, 0.0});
    p.stds.assign(5, Vec2{0.01, 0.01});
    p.weights.assign(5, 0.2);
    double loss = gmm_nll(p, {1.0, 1.0});  // 100 sigma away
    CHECK(std::isfinite(loss));
    CHECK(loss > 100.0);
}

TEST_CASE("mixture NLL matches a long-double direct summation oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        GmmParams p;
        long double acc = 0.0L;
        double wsum = 0.0;
        std::vector<double> raw(5);
        for (int k = 0; k < 5; ++k) {
            raw[k] = rng.uniform(0.05, 1.0);
            wsum += raw[k];
        }
        for (int k = 0; k < 5; ++k) {
            p.weights.push_back(raw[k] / wsum);
            p.means.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
            p.stds.push_back({rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)});
        }
        Vec2 target{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
        for (int k = 0; k < 5; ++k) {
            long double zx = (target.x - p.means[k].x) / p.stds[k].x;
            long double zy = (target.y - p.means[k].y) / p.stds[k].y;
            acc += static_cast<long double>(p.weights[k]) *
                   expl(-0.5L * (zx * zx + zy * zy)) /
                   (2.0L * 3.14159265358979323846L * p.stds[k].x * p.stds[k].y);
        }
        double direct = static_cast<double>(-logl(acc));
        CHECK(std::abs(gmm_nll(p, target) - direct) < 1e-10);
    }
}

TEST_CASE("adam leaves parameters alone on a zero gradient") {
    Eigen::ArrayXd params(3);
    params << 1.0, -2.0, 0.5;
    Eigen::ArrayXd before = params;
    AdamMoments state;
    adam_step(params, Eigen::ArrayXd::Zero(3), state, 0.1);
    CHECK((params == before).all());
    CHECK((state.m == 0.0).all());
    CHECK((state.v == 0.0).all());
}

TEST_CASE("adam update magnitude approaches the learning rate on a constant gradient") {
    Eigen::ArrayXd params = Eigen::ArrayXd::Zero(2);
    Eigen::ArrayXd grad(2);
    grad << 3.7, -0.04;
    AdamMoments state;
    double lr = 0.01;
    Eigen::ArrayXd prev = params;
    for (int i = 0; i < 200; ++i) {
        prev = params;
        adam_step(params, grad, state, lr);
    }
    Eigen::ArrayXd update = (params - prev).abs();
    CHECK(update(0) == doctest::Approx(lr).epsilon(1e-3));
    CHECK(update(1) == doctest::Approx(lr).epsilon(1e-3));
}

TEST_CASE("one adam step matches the hand-computed update") {
    Eigen::ArrayXd params(2);
    params << 1.0, 2.0;
    Eigen::ArrayXd grad(2);
    grad << 0.5, -1.0;
    AdamMoments state;
    adam_step(params, grad, state, 0.1);
    // with bias correction the first step is lr * g / (|g| + eps)
    CHECK(params(0) == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(params(1) == doctest::Approx(2.0 + 0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam rejects non-finite gradients") {
    Eigen::ArrayXd params = Eigen::ArrayXd::Zero(2);
    Eigen::ArrayXd grad(2);
    grad << 1.0, std::nan("");
    AdamMoments state;
    CHECK_THROWS_AS(adam_step(params, grad, state, 0.1), std::runtime_error);
}

TEST_CASE("analytic gradients match central differences for the transformer") {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.feedforward_dim = 16;
    KnollingTransformer model(cfg, 99);
    Rng rng(100);
    ScenarioRecord a = random_record(rng, 3), b = random_record(rng, 3),
                   c = random_record(rng, 3);
    // prefixes exercise the pre-knolled loss masking too
    CHECK(max_model_grad_error(model, {&a, &b, &c}, {0, 1, 2}) < 1e-4);
}

TEST_CASE("analytic gradients match central differences for the LSTM") {
    LstmBaseline model(LstmConfig{2 * lift_dim(2), 10, 5, 10}, 101);
    Rng rng(102);
    ScenarioRecord a = random_record(rng, 4), b = random_record(rng, 4);
    CHECK(max_model_grad_error(model, {&a, &b}, {0, 2}) < 1e-4);
}

TEST_CASE("analytic gradients match central differences for the MLP") {
    MlpBaseline model(MlpConfig{10, lift_dim(2), 8, 8, 5}, 103);
    Rng rng(104);
    ScenarioRecord a = random_record(rng, 3), b = random_record(rng, 5);
    CHECK(max_model_grad_error(model, {&a, &a}, {0, 1}) < 1e-4);
    CHECK(max_model_grad_error(model, {&b, &b}, {0, 0}) < 1e-4);
}

TEST_CASE("a zero learning rate leaves the parameters untouched") {
    GenConfig gen;
    gen.count = 8;
    gen.seed = 5;
    gen.anneal.iterations = 200;
    auto data = generate_dataset(gen);
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.feedforward_dim = 16;
    KnollingTransformer model(cfg, 7);
    auto before = model.params().snapshot_values();
    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.max_epochs = 1;
    tc.batch_size = 8;
    tc.val_fraction = 0.0;
    train_phase(model, data, tc);
    auto after = model.params().snapshot_values();
    for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("training is reproducible and lowers the held-out loss") {
    GenConfig gen;
    gen.count = 300;
    gen.seed = 21;
    gen.n_min = 2;
    gen.n_max = 4;
    gen.anneal.iterations = 300;
    auto data = generate_dataset(gen);

    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.num_heads = 2;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.feedforward_dim = 32;

    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.max_epochs = 10;
    tc.batch_size = 64;
    tc.seed = 3;

    KnollingTransformer m1(cfg, 11);
    auto r1 = train_phase(m1, data, tc);
    KnollingTransformer m2(cfg, 11);
    auto r2 = train_phase(m2, data, tc);

    REQUIRE(r1.history.size() == r2.history.size());
    for (size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_nll == r2.history[i].train_nll);
        CHECK(r1.history[i].val_nll == r2.history[i].val_nll);
    }
    for (size_t i = 0; i < m1.params().size(); ++i)
        CHECK(m1.params().at(i).value == m2.params().at(i).value);

    CHECK(r1.history.back().val_nll < r1.history.front().val_nll);
}

TEST_CASE("teacher forcing and rollout agree on a memorized dataset") {
    GenConfig gen;
    gen.count = 10;
    gen.seed = 77;
    gen.n_min = 3;
    gen.n_max = 3;
    gen.anneal.iterations = 300;
    auto data = generate_dataset(gen);

    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.num_heads = 2;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.feedforward_dim = 32;
    KnollingTransformer model(cfg, 5);

    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.max_epochs = 2000;
    tc.early_stop_patience = 2000;
    tc.batch_size = 10;
    tc.val_fraction = 0.0;
    tc.seed = 1;
    train_phase(model, data, tc);
    tc.learning_rate = 3e-4;
    train_phase(model, data, tc);

    double fit_sum = 0.0;
    int slots = 0;
    for (const auto& record : data) {
        auto rollout = model.predict_layout(record.objects, SamplerConfig{0.0, 0});
        auto memory = model.forward_encoder(record.objects);
        std::vector<std::optional<Vec2>> placed(record.objects.size());
        double record_fit = 0.0, record_gap = 0.0;
        for (size_t t = 0; t < record.objects.size(); ++t) {
            GmmParams p = model.decode_step(record.objects, memory, placed, static_cast<int>(t));
            Rng unused(0);
            Vec2 teacher = gmm_sample(p, 0.0, unused);
            double gap = std::max(std::abs(teacher.x - rollout[t].x),
                                  std::abs(teacher.y - rollout[t].y));
            if (t == 0) {
                // identical all-mask context: the two paths must coincide
                CHECK(gap == 0.0);
            }
            record_gap = std::max(record_gap, gap);
            double err = std::max(std::abs(rollout[t].x - record.targets[t].x),
                                  std::abs(rollout[t].y - record.targets[t].y));
            record_fit = std::max(record_fit, err);
            fit_sum += err;
            ++slots;
            placed[t] = record.targets[t];
        }
        // divergence between rollout and teacher forcing is driven purely by
        // how far the rollout positions drift from the ground truth they
        // replace, so it vanishes with the fit
        CHECK(record_gap <= 2.5 * record_fit + 1e-3);
    }
    CHECK(fit_sum / slots < 0.02);
}

TEST_CASE("training rejects an empty dataset") {
    KnollingTransformer model(ModelConfig{}, 1);
    std::vector<ScenarioRecord> empty;
    CHECK_THROWS_AS(train_phase(model, empty, TrainConfig{}), std::invalid_argument);
}

TEST_CASE("the epoch log is written as CSV") {
    GenConfig gen;
    gen.count = 12;
    gen.seed = 9;
    gen.anneal.iterations = 200;
    auto data = generate_dataset(gen);
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.feedforward_dim = 16;
    KnollingTransformer model(cfg, 2);
    TrainConfig tc;
    tc.max_epochs = 2;
    tc.batch_size = 8;
    tc.log_path = "test_train_log.csv";
    train_phase(model, data, tc);
    std::ifstream log(tc.log_path);
    REQUIRE(log.good());
    std::string header;
    std::getline(log, header);
    CHECK(header == "epoch,train_nll,val_nll,lr,wall_seconds");
    int rows = 0;
    std::string line;
    while (std::getline(log, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    std::remove(tc.log_path.c_str());
}

TEST_SUITE_END();
