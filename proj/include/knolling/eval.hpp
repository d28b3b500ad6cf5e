#pragma once

#include <map>
#include <string>
#include <vector>

#include "knolling/core.hpp"
#include "knolling/net.hpp"
#include "knolling/train.hpp"

namespace knolling {

// Mean absolute difference over all objects and both coordinates, so
// values are comparable across object counts.
double l1_error(const std::vector<Vec2>& predicted, const std::vector<Vec2>& truth);

struct ErrorStats {
    double mean = 0.0;
    double std_dev = 0.0;
    double min = 0.0;
    double max = 0.0;
    size_t count = 0;
};

ErrorStats compute_stats(const std::vector<double>& values);

struct EvalReport {
    std::string model_id;
    struct PerN {
        int n = 0;
        ErrorStats stats;
    };
    std::vector<PerN> rows;
    // per-scenario errors aligned with rows, for recomputation checks
    std::vector<std::vector<double>> per_scenario;
    double overall_mean = 0.0;  // pooled over every test scenario
};

// Deterministic per-n evaluation at the given temperature (0 by default).
EvalReport evaluate_suite(const ModelBase& model,
                          const std::map<int, std::vector<ScenarioRecord>>& test_sets,
                          double temperature = 0.0, uint64_t seed = 0, int threads = 0);

std::string report_csv(const EvalReport& report);
// aligned text table in the paper's rows-per-model layout
std::string report_table(const std::vector<EvalReport>& reports);

// Common training protocol for the ablation experiments.
struct TrainProtocol {
    ModelConfig model;
    TrainConfig direct;           // single-phase training, lr 1e-4
    TrainConfig pretrain;         // curriculum phase 1, lr 1e-4
    TrainConfig finetune;         // curriculum phase 2, lr 1e-5
    CurriculumSpec direct_cur{Phase::Finetune, 2, kMaxObjects, false, 0.0};
    CurriculumSpec pretrain_cur{Phase::Pretrain, 2, 5, true, 0.0};
    CurriculumSpec finetune_cur{Phase::Finetune, 2, kMaxObjects, false, 0.2};

    TrainProtocol() {
        direct.learning_rate = 1e-4;
        pretrain.learning_rate = 1e-4;
        finetune.learning_rate = 1e-5;
    }
};

// Trains (or loads from cache_dir) one transformer per nested subset size
// and evaluates all of them on the same test sets.
std::vector<std::pair<size_t, EvalReport>> ablation_dataset_size(
    const std::vector<ScenarioRecord>& train_data, const std::vector<size_t>& sizes,
    const TrainProtocol& proto, const std::map<int, std::vector<ScenarioRecord>>& tests,
    const std::string& cache_dir = "");

struct PretrainAblation {
    std::vector<EvalReport> direct_reports;
    std::vector<EvalReport> finetuned_reports;
    double direct_mean = 0.0;     // averaged over seeds
    double finetuned_mean = 0.0;
};

// Paired direct-vs-curriculum comparison at matched seeds and budgets.
PretrainAblation ablation_pretraining(const std::vector<ScenarioRecord>& train_data,
                                      const TrainProtocol& proto,
                                      const std::vector<uint64_t>& seeds,
                                      const std::map<int, std::vector<ScenarioRecord>>& tests,
                                      const std::string& cache_dir = "");

// Shared by the ablations and the acceptance suite: train a transformer on
// the first `size` records (two-phase when `pretrained`), reusing a cached
// model file when one matches.
std::unique_ptr<ModelBase> train_or_load_transformer(
    const std::vector<ScenarioRecord>& train_data, size_t size, uint64_t seed,
    bool pretrained, const TrainProtocol& proto, const std::string& cache_dir);

}  // namespace knolling
