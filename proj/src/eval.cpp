#include "knolling/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "knolling/parallel.hpp"
#include "knolling/rng.hpp"

namespace knolling {

double l1_error(const std::vector<Vec2>& predicted, const std::vector<Vec2>& truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("l1_error: length mismatch");
    if (predicted.empty()) throw std::invalid_argument("l1_error: empty sequences");
    double acc = 0.0;
    for (size_t i = 0; i < predicted.size(); ++i) {
        acc += std::abs(predicted[i].x - truth[i].x);
        acc += std::abs(predicted[i].y - truth[i].y);
    }
    return acc / (2.0 * static_cast<double>(predicted.size()));
}

ErrorStats compute_stats(const std::vector<double>& values) {
    ErrorStats stats;
    stats.count = values.size();
    if (values.empty()) return stats;
    double sum = 0.0;
    stats.min = values[0];
    stats.max = values[0];
    for (double v : values) {
        sum += v;
        stats.min = std::min(stats.min, v);
        stats.max = std::max(stats.max, v);
    }
    stats.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - stats.mean) * (v - stats.mean);
    stats.std_dev = values.size() > 1
                        ? std::sqrt(sq / static_cast<double>(values.size() - 1))
                        : 0.0;
    return stats;
}

EvalReport evaluate_suite(const ModelBase& model,
                          const std::map<int, std::vector<ScenarioRecord>>& test_sets,
                          double temperature, uint64_t seed, int threads) {
    if (test_sets.empty()) throw std::invalid_argument("evaluate_suite: no test sets");
    for (const auto& [n, set] : test_sets) {
        if (set.empty())
            throw std::invalid_argument("evaluate_suite: empty test set for n=" +
                                        std::to_string(n));
    }
    EvalReport report;
    report.model_id = model.id();
    const int workers = threads > 0 ? threads : env_threads();
    const size_t chunk_size = 512;
    double pooled_sum = 0.0;
    size_t pooled_count = 0;
    for (const auto& [n, set] : test_sets) {
        std::vector<double> errors(set.size());
        size_t chunks = (set.size() + chunk_size - 1) / chunk_size;
        parallel_for(chunks, workers, [&](size_t c) {
            size_t lo = c * chunk_size;
            size_t hi = std::min(set.size(), lo + chunk_size);
            std::vector<std::vector<ObjectSpec>> objects;
            objects.reserve(hi - lo);
            for (size_t i = lo; i < hi; ++i) objects.push_back(set[i].objects);
            auto predictions =
                model.predict_batch(objects, temperature, Rng::derive(seed, c));
            for (size_t i = lo; i < hi; ++i)
                errors[i] = l1_error(predictions[i - lo], set[i].targets);
        });
        report.rows.push_back({n, compute_stats(errors)});
        for (double e : errors) pooled_sum += e;
        pooled_count += errors.size();
        report.per_scenario.push_back(std::move(errors));
    }
    report.overall_mean = pooled_count ? pooled_sum / static_cast<double>(pooled_count) : 0.0;
    return report;
}

std::string report_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "model,n,count,mean,std,min,max\n";
    os.precision(10);
    for (const auto& row : report.rows) {
        os << report.model_id << ',' << row.n << ',' << row.stats.count << ','
           << row.stats.mean << ',' << row.stats.std_dev << ',' << row.stats.min << ','
           << row.stats.max << '\n';
    }
    return os.str();
}

std::string report_table(const std::vector<EvalReport>& reports) {
    std::ostringstream os;
    os << std::left << std::setw(14) << "model" << std::setw(6) << "stat";
    if (!reports.empty()) {
        for (const auto& row : reports[0].rows) os << std::setw(12) << ("n=" + std::to_string(row.n));
    }
    os << '\n';
    auto sci = [](double v) {
        std::ostringstream s;
        s << std::scientific << std::setprecision(2) << v;
        return s.str();
    };
    for (const auto& report : reports) {
        const char* stat_names[4] = {"MEAN", "STD", "MIN", "MAX"};
        for (int s = 0; s < 4; ++s) {
            os << std::left << std::setw(14) << (s == 0 ? report.model_id : "")
               << std::setw(6) << stat_names[s];
            for (const auto& row : report.rows) {
                double v = s == 0   ? row.stats.mean
                           : s == 1 ? row.stats.std_dev
                           : s == 2 ? row.stats.min
                                    : row.stats.max;
                os << std::setw(12) << sci(v);
            }
            os << '\n';
        }
    }
    return os.str();
}

std::unique_ptr<ModelBase> train_or_load_transformer(
    const std::vector<ScenarioRecord>& train_data, size_t size, uint64_t seed,
    bool pretrained, const TrainProtocol& proto, const std::string& cache_dir) {
    if (size > train_data.size())
        throw std::invalid_argument("train_or_load_transformer: subset larger than data");
    std::string cache_path;
    if (!cache_dir.empty()) {
        std::ostringstream name;
        name << "tf-" << (pretrained ? "fine" : "direct") << "-n" << size << "-s" << seed
             << "-e" << proto.direct.max_epochs << "-b" << proto.direct.batch_size
             << ".knlmodel";
        cache_path = (std::filesystem::path(cache_dir) / name.str()).string();
        if (std::filesystem::exists(cache_path)) return ModelBase::load(cache_path);
    }
    std::vector<ScenarioRecord> subset(train_data.begin(), train_data.begin() + size);
    auto model = std::make_unique<KnollingTransformer>(proto.model, Rng::derive(seed, 7));
    if (pretrained) {
        TrainConfig pre = proto.pretrain;
        pre.seed = seed;
        train_phase(*model, subset, pre, proto.pretrain_cur);
        TrainConfig fin = proto.finetune;
        fin.seed = Rng::derive(seed, 11);
        train_phase(*model, subset, fin, proto.finetune_cur);
    } else {
        TrainConfig cfg = proto.direct;
        cfg.seed = seed;
        train_phase(*model, subset, cfg, proto.direct_cur);
    }
    if (!cache_path.empty()) {
        std::filesystem::create_directories(cache_dir);
        model->save(cache_path);
    }
    return model;
}

std::vector<std::pair<size_t, EvalReport>> ablation_dataset_size(
    const std::vector<ScenarioRecord>& train_data, const std::vector<size_t>& sizes,
    const TrainProtocol& proto, const std::map<int, std::vector<ScenarioRecord>>& tests,
    const std::string& cache_dir) {
    std::vector<std::pair<size_t, EvalReport>> out;
    for (size_t size : sizes) {
        auto model = train_or_load_transformer(train_data, size, proto.direct.seed, false,
                                               proto, cache_dir);
        EvalReport report = evaluate_suite(*model, tests);
        report.model_id = "transformer-" + std::to_string(size);
        out.emplace_back(size, std::move(report));
    }
    return out;
}

PretrainAblation ablation_pretraining(const std::vector<ScenarioRecord>& train_data,
                                      const TrainProtocol& proto,
                                      const std::vector<uint64_t>& seeds,
                                      const std::map<int, std::vector<ScenarioRecord>>& tests,
                                      const std::string& cache_dir) {
    PretrainAblation out;
    double direct_acc = 0.0, fine_acc = 0.0;
    for (uint64_t seed : seeds) {
        auto direct = train_or_load_transformer(train_data, train_data.size(), seed, false,
                                                proto, cache_dir);
        auto fine = train_or_load_transformer(train_data, train_data.size(), seed, true,
                                              proto, cache_dir);
        if (direct->count_params() != fine->count_params())
            throw std::logic_error("ablation arms must share the parameter budget");
        EvalReport dr = evaluate_suite(*direct, tests);
        dr.model_id = "direct-s" + std::to_string(seed);
        EvalReport fr = evaluate_suite(*fine, tests);
        fr.model_id = "pretrain+finetune-s" + std::to_string(seed);
        direct_acc += dr.overall_mean;
        fine_acc += fr.overall_mean;
        out.direct_reports.push_back(std::move(dr));
        out.finetuned_reports.push_back(std::move(fr));
    }
    out.direct_mean = direct_acc / static_cast<double>(seeds.size());
    out.finetuned_mean = fine_acc / static_cast<double>(seeds.size());
    return out;
}

}  // namespace knolling
