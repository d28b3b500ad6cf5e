#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "knolling/core.hpp"
#include "knolling/net.hpp"

namespace knolling {

// Mixture negative log likelihood, log-sum-exp stabilized. Units must
// match between params and target.
double gmm_nll(const GmmParams& params, const Vec2& target);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamMoments {
    Eigen::ArrayXd m, v;
    long t = 0;
};

// Standard Adam update on a flat parameter vector. Throws on non-finite
// gradients.
void adam_step(Eigen::ArrayXd& params, const Eigen::ArrayXd& grad, AdamMoments& state,
               double lr, const AdamConfig& cfg = {});

enum class Phase { Pretrain, Finetune };

struct CurriculumSpec {
    Phase phase = Phase::Finetune;
    int n_min = 2;
    int n_max = kMaxObjects;
    // pretrain: number of ground-truth positions pre-filled per scenario is
    // drawn uniformly in [0, n-1]; those slots give context but no loss
    bool teacher_prefix = false;
    // finetune: probability of truncating a scenario to a smaller object
    // count, standing in for scenes with fewer objects on the table
    double encoder_mask_prob = 0.0;
};

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 512;
    int max_epochs = 30;
    int early_stop_patience = 10;
    uint64_t seed = 0;
    double val_fraction = 0.02;
    // gradients are reduced over this many fixed batch shards in index
    // order, so results are bit-identical for any worker count
    int grad_shards = 4;
    int threads = 0;  // 0: KNOLL_THREADS or hardware
    std::string log_path;
};

struct EpochStats {
    int epoch = 0;
    double train_nll = 0.0;
    double val_nll = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_val = 0.0;
    int best_epoch = -1;
};

// Teacher-forced training with early stopping on a seed-fixed validation
// split; the model keeps its best-validation parameters on return.
TrainResult train_phase(ModelBase& model, const std::vector<ScenarioRecord>& data,
                        const TrainConfig& cfg, const CurriculumSpec& curriculum = {});

}  // namespace knolling
