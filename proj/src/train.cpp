#include "knolling/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <thread>

#include "knolling/parallel.hpp"
#include "knolling/rng.hpp"

namespace knolling {

double gmm_nll(const GmmParams& params, const Vec2& target) {
    const size_t k = params.weights.size();
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> comps(k, -std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < k; ++i) {
        if (params.weights[i] <= 0.0) continue;
        double zx = (target.x - params.means[i].x) / params.stds[i].x;
        double zy = (target.y - params.means[i].y) / params.stds[i].y;
        comps[i] = std::log(params.weights[i]) - 0.5 * (zx * zx + zy * zy) -
                   std::log(2.0 * kPi * params.stds[i].x * params.stds[i].y);
        best = std::max(best, comps[i]);
    }
    double sum = 0.0;
    for (size_t i = 0; i < k; ++i) sum += std::exp(comps[i] - best);
    return -(best + std::log(sum));
}

void adam_step(Eigen::ArrayXd& params, const Eigen::ArrayXd& grad, AdamMoments& state,
               double lr, const AdamConfig& cfg) {
    if (params.size() != grad.size()) throw std::invalid_argument("adam_step: shape mismatch");
    if (!grad.isFinite().all()) throw std::runtime_error("adam_step: non-finite gradient");
    if (state.m.size() == 0) {
        state.m = Eigen::ArrayXd::Zero(params.size());
        state.v = Eigen::ArrayXd::Zero(params.size());
    }
    ++state.t;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.square();
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    params -= lr * (state.m / bc1) / ((state.v / bc2).sqrt() + cfg.eps);
}

namespace {

// registry-wide Adam, moments live on the tensors
void apply_adam(ad::ParamRegistry& reg, long t, double lr, const AdamConfig& cfg) {
    for (size_t i = 0; i < reg.size(); ++i) {
        ad::Tensor& p = reg.at(i);
        if (!p.grad.allFinite())
            throw std::runtime_error("non-finite gradient in parameter " + p.name);
        p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * p.grad;
        p.v.array() = cfg.beta2 * p.v.array() + (1.0 - cfg.beta2) * p.grad.array().square();
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        p.value.array() -=
            lr * (p.m.array() / bc1) / ((p.v.array() / bc2).sqrt() + cfg.eps);
    }
}

struct MiniBatch {
    std::vector<const ScenarioRecord*> records;
    std::vector<int> score_from;
};

// forward (and optionally backward) a batch over fixed shards, reducing
// loss and gradients in shard order
struct BatchResult {
    double loss_sum = 0.0;
    double scored = 0.0;
};

BatchResult run_batch(ModelBase& model, const MiniBatch& batch, int shards, int threads,
                      bool with_grad) {
    const int count = static_cast<int>(batch.records.size());
    const int used_shards = std::max(1, std::min(shards, count));
    std::vector<ad::Graph> graphs(used_shards);
    std::vector<double> losses(used_shards, 0.0);
    std::vector<double> scoreds(used_shards, 0.0);
    std::vector<ad::Var> roots(used_shards);
    auto run_shard = [&](size_t i) {
        int lo = static_cast<int>(i) * count / used_shards;
        int hi = static_cast<int>(i + 1) * count / used_shards;
        if (lo == hi) return;
        std::vector<const ScenarioRecord*> recs(batch.records.begin() + lo,
                                                batch.records.begin() + hi);
        std::vector<int> pre(batch.score_from.begin() + lo, batch.score_from.begin() + hi);
        LossOut lo_out = model.teacher_loss(graphs[i], recs, pre);
        losses[i] = graphs[i].val(lo_out.loss_sum)(0, 0);
        scoreds[i] = lo_out.scored;
        roots[i] = lo_out.loss_sum;
        if (with_grad) graphs[i].backward(lo_out.loss_sum);
    };
    parallel_for(used_shards, std::min(threads, used_shards), run_shard);

    BatchResult out;
    for (int i = 0; i < used_shards; ++i) {
        out.loss_sum += losses[i];
        out.scored += scoreds[i];
    }
    if (with_grad) {
        ad::ParamRegistry& reg = model.params();
        for (int i = 0; i < used_shards; ++i) {
            for (auto [pid, gmat] : graphs[i].param_grads()) reg.at(pid).grad += *gmat;
        }
    }
    return out;
}

}  // namespace

TrainResult train_phase(ModelBase& model, const std::vector<ScenarioRecord>& data,
                        const TrainConfig& cfg, const CurriculumSpec& curriculum) {
    std::vector<const ScenarioRecord*> pool;
    for (const auto& r : data) {
        int n = static_cast<int>(r.objects.size());
        if (n >= curriculum.n_min && n <= curriculum.n_max) pool.push_back(&r);
    }
    if (pool.empty()) throw std::invalid_argument("train_phase: empty dataset");

    Rng split_rng(Rng::derive(cfg.seed, 0xA11CEull));
    for (size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[split_rng.below(i)]);
    size_t n_val = pool.size() >= 2
                       ? std::min(pool.size() - 1,
                                  std::max<size_t>(1, static_cast<size_t>(
                                                          cfg.val_fraction * pool.size())))
                       : 0;
    std::vector<const ScenarioRecord*> val_set(pool.begin(), pool.begin() + n_val);
    std::vector<const ScenarioRecord*> train_set(pool.begin() + n_val, pool.end());
    if (val_set.empty()) val_set = train_set;

    const int threads = cfg.threads > 0 ? cfg.threads : env_threads();
    auto make_batches = [&](const std::vector<const ScenarioRecord*>& recs,
                            const std::vector<int>& prefixes) {
        std::map<int, std::vector<size_t>> buckets;
        for (size_t i = 0; i < recs.size(); ++i)
            buckets[static_cast<int>(recs[i]->objects.size())].push_back(i);
        std::vector<MiniBatch> batches;
        for (auto& [n, idxs] : buckets) {
            for (size_t start = 0; start < idxs.size();
                 start += static_cast<size_t>(cfg.batch_size)) {
                MiniBatch b;
                size_t end = std::min(idxs.size(), start + cfg.batch_size);
                for (size_t i = start; i < end; ++i) {
                    b.records.push_back(recs[idxs[i]]);
                    b.score_from.push_back(prefixes.empty() ? 0 : prefixes[idxs[i]]);
                }
                batches.push_back(std::move(b));
            }
        }
        return batches;
    };

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<ad::Mat> best_params = model.params().snapshot_values();
    int patience_left = cfg.early_stop_patience;
    long adam_t = 0;
    const AdamConfig adam_cfg;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        auto tic = std::chrono::steady_clock::now();
        Rng erng(Rng::derive(cfg.seed, 0xE700ull + static_cast<uint64_t>(epoch)));

        // curriculum draws, in a fixed order for determinism
        std::deque<ScenarioRecord> truncated;
        std::vector<const ScenarioRecord*> eff(train_set.size());
        std::vector<int> prefixes(train_set.size(), 0);
        for (size_t i = 0; i < train_set.size(); ++i) {
            const ScenarioRecord* rec = train_set[i];
            int n = static_cast<int>(rec->objects.size());
            if (curriculum.phase == Phase::Pretrain && curriculum.teacher_prefix) {
                prefixes[i] = erng.uniform_int(0, n - 1);
            }
            if (curriculum.phase == Phase::Finetune && curriculum.encoder_mask_prob > 0 &&
                n > 2 && erng.uniform() < curriculum.encoder_mask_prob) {
                int m = erng.uniform_int(2, n - 1);
                ScenarioRecord cut;
                cut.objects.assign(rec->objects.begin(), rec->objects.begin() + m);
                cut.targets.assign(rec->targets.begin(), rec->targets.begin() + m);
                truncated.push_back(std::move(cut));
                rec = &truncated.back();
            }
            eff[i] = rec;
        }
        auto batches = make_batches(eff, prefixes);
        for (size_t i = batches.size(); i > 1; --i)
            std::swap(batches[i - 1], batches[erng.below(i)]);

        double loss_acc = 0.0, scored_acc = 0.0;
        for (auto& batch : batches) {
            model.params().zero_grad();
            BatchResult br = run_batch(model, batch, cfg.grad_shards, threads, true);
            if (br.scored > 0) {
                for (size_t i = 0; i < model.params().size(); ++i)
                    model.params().at(i).grad /= br.scored;
                ++adam_t;
                apply_adam(model.params(), adam_t, cfg.learning_rate, adam_cfg);
            }
            loss_acc += br.loss_sum;
            scored_acc += br.scored;
        }

        // plain teacher-forced validation loss (no curriculum transforms)
        auto val_batches = make_batches(val_set, {});
        double val_loss = 0.0, val_scored = 0.0;
        for (auto& batch : val_batches) {
            BatchResult br = run_batch(model, batch, cfg.grad_shards, threads, false);
            val_loss += br.loss_sum;
            val_scored += br.scored;
        }
        double train_nll = scored_acc > 0 ? loss_acc / scored_acc : 0.0;
        double val_nll = val_scored > 0 ? val_loss / val_scored : 0.0;
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - tic)
                          .count();
        result.history.push_back({epoch, train_nll, val_nll, cfg.learning_rate, secs});

        if (val_nll < best_val - 1e-12) {
            best_val = val_nll;
            best_params = model.params().snapshot_values();
            result.best_epoch = epoch;
            patience_left = cfg.early_stop_patience;
        } else if (--patience_left <= 0) {
            break;
        }
    }
    model.params().restore_values(best_params);
    result.best_val = best_val;

    if (!cfg.log_path.empty()) {
        std::ofstream log(cfg.log_path);
        if (!log) throw std::runtime_error("cannot open log: " + cfg.log_path);
        log << "epoch,train_nll,val_nll,lr,wall_seconds\n";
        for (const auto& row : result.history) {
            log << row.epoch << ',' << row.train_nll << ',' << row.val_nll << ','
                << row.lr << ',' << row.wall_seconds << '\n';
        }
    }
    return result;
}

}  // namespace knolling
