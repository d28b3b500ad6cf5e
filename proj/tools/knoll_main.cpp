#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "knolling/eval.hpp"
#include "knolling/laygen.hpp"
#include "knolling/net.hpp"
#include "knolling/parallel.hpp"
#include "knolling/pipeline.hpp"
#include "knolling/plan.hpp"
#include "knolling/svg.hpp"
#include "knolling/train.hpp"

namespace fs = std::filesystem;
using namespace knolling;

namespace {

int cmd_gen(const GenConfig& cfg, const std::string& out_path) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open for writing: " + out_path);
    generate_dataset(cfg, [&](size_t, const ScenarioRecord& r) {
        out << encode_record(r) << '\n';
    });
    std::cout << "wrote " << cfg.count << " scenarios to " << out_path << "\n";
    return 0;
}

std::map<int, std::vector<ScenarioRecord>> group_by_n(
    const std::vector<ScenarioRecord>& records) {
    std::map<int, std::vector<ScenarioRecord>> out;
    for (const auto& r : records) out[static_cast<int>(r.objects.size())].push_back(r);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knolling pipeline: data generation, training, evaluation and planning"};
    app.require_subcommand(1);

    // ---- gen
    auto* gen = app.add_subcommand("gen", "generate a tidy-layout dataset");
    GenConfig gen_cfg;
    std::string gen_out = "dataset.jsonl";
    gen->add_option("--count", gen_cfg.count, "number of scenarios");
    gen->add_option("--n-min", gen_cfg.n_min, "min objects per scenario");
    gen->add_option("--n-max", gen_cfg.n_max, "max objects per scenario");
    gen->add_option("--seed", gen_cfg.seed, "master seed");
    gen->add_option("--gap", gen_cfg.pack.gap, "spacing between neighbors (m)");
    gen->add_option("--iters", gen_cfg.anneal.iterations, "annealing iterations");
    gen->add_option("--out", gen_out, "output JSONL path");

    // ---- train
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    std::string train_data, train_out = "model.knlmodel", train_log, train_kind = "transformer";
    TrainConfig train_cfg;
    bool train_pretrain = false;
    train->add_option("--data", train_data, "training dataset (JSONL)")->required();
    train->add_option("--kind", train_kind, "transformer | lstm | mlp");
    train->add_option("--out", train_out, "model output path");
    train->add_option("--log", train_log, "epoch CSV log path");
    train->add_option("--epochs", train_cfg.max_epochs, "max epochs");
    train->add_option("--batch", train_cfg.batch_size, "batch size");
    train->add_option("--lr", train_cfg.learning_rate, "learning rate");
    train->add_option("--seed", train_cfg.seed, "seed");
    train->add_option("--patience", train_cfg.early_stop_patience, "early-stop patience");
    train->add_flag("--pretrain", train_pretrain,
                    "two-phase curriculum: pretrain (n<=5, prefixes) then finetune at 1e-5");

    // ---- eval
    auto* eval = app.add_subcommand("eval", "evaluate a model, or run an ablation");
    std::string eval_model, eval_report, eval_table, eval_ablation, eval_train_data,
        eval_cache;
    std::vector<std::string> eval_tests;
    std::vector<size_t> eval_sizes = {12500, 25000, 50000, 100000};
    std::vector<uint64_t> eval_seeds = {1, 2, 3};
    double eval_temperature = 0.0;
    uint64_t eval_seed = 0;
    int eval_epochs = 0;
    eval->add_option("--model", eval_model, "model file");
    eval->add_option("--test", eval_tests, "test dataset(s), JSONL")->required();
    eval->add_option("--report", eval_report, "CSV report path");
    eval->add_option("--table", eval_table, "aligned text table path");
    eval->add_option("--temperature", eval_temperature, "sampling temperature");
    eval->add_option("--seed", eval_seed, "sampling seed (temperature > 0)");
    eval->add_option("--ablation", eval_ablation, "size | pretrain");
    eval->add_option("--train-data", eval_train_data, "training data for ablations");
    eval->add_option("--sizes", eval_sizes, "nested subset sizes for --ablation size");
    eval->add_option("--seeds", eval_seeds, "seeds for --ablation pretrain");
    eval->add_option("--epochs", eval_epochs, "override ablation training epochs");
    eval->add_option("--cache", eval_cache, "cache dir for ablation models");

    // ---- knoll
    auto* knoll = app.add_subcommand("knoll", "tidy a scene with a trained model");
    std::string knoll_scene_path, knoll_model, knoll_order = "as-given",
                knoll_out_dir = "knoll_out";
    double knoll_temperature = 0.0;
    uint64_t knoll_seed = 0;
    bool knoll_no_snap = false;
    knoll->add_option("--scene", knoll_scene_path, "scene JSONL")->required();
    knoll->add_option("--model", knoll_model, "model file")->required();
    knoll->add_option("--order", knoll_order,
                      "as-given | area-desc | area-asc | aspect-desc");
    knoll->add_option("--temperature", knoll_temperature, "sampling temperature");
    knoll->add_option("--seed", knoll_seed, "sampling seed");
    knoll->add_option("--out-dir", knoll_out_dir, "output directory");
    knoll->add_flag("--no-snap", knoll_no_snap, "emit raw model targets without snapping");

    // ---- render
    auto* render = app.add_subcommand("render", "render a dataset record as SVG");
    std::string render_record, render_out = "layout.svg";
    size_t render_index = 0;
    render->add_option("--record", render_record, "dataset JSONL path")->required();
    render->add_option("--index", render_index, "record index");
    render->add_option("--out", render_out, "SVG output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_cfg, gen_out);

        if (train->parsed()) {
            auto data = read_dataset(train_data);
            std::unique_ptr<ModelBase> model;
            if (train_kind == "transformer") {
                model = std::make_unique<KnollingTransformer>(
                    ModelConfig{}, Rng::derive(train_cfg.seed, 7));
            } else if (train_kind == "lstm") {
                model = std::make_unique<LstmBaseline>(LstmConfig{},
                                                       Rng::derive(train_cfg.seed, 7));
            } else if (train_kind == "mlp") {
                model = std::make_unique<MlpBaseline>(MlpConfig{},
                                                      Rng::derive(train_cfg.seed, 7));
            } else {
                throw std::invalid_argument("unknown model kind: " + train_kind);
            }
            if (train_pretrain) {
                TrainConfig pre = train_cfg;
                pre.log_path = train_log.empty() ? "" : train_log + ".pretrain";
                train_phase(*model, data, pre, CurriculumSpec{Phase::Pretrain, 2, 5, true, 0.0});
                TrainConfig fin = train_cfg;
                fin.learning_rate = 1e-5;
                fin.seed = Rng::derive(train_cfg.seed, 11);
                fin.log_path = train_log;
                train_phase(*model, data, fin,
                            CurriculumSpec{Phase::Finetune, 2, kMaxObjects, false, 0.2});
            } else {
                TrainConfig cfg = train_cfg;
                cfg.log_path = train_log;
                train_phase(*model, data, cfg, CurriculumSpec{});
            }
            model->save(train_out);
            std::cout << "trained " << model->id() << " (" << model->count_params()
                      << " parameters) -> " << train_out << "\n";
            return 0;
        }

        if (eval->parsed()) {
            std::vector<ScenarioRecord> merged;
            for (const auto& path : eval_tests) {
                auto part = read_dataset(path);
                merged.insert(merged.end(), part.begin(), part.end());
            }
            auto tests = group_by_n(merged);
            if (!eval_ablation.empty()) {
                if (eval_train_data.empty())
                    throw std::invalid_argument("--ablation requires --train-data");
                auto data = read_dataset(eval_train_data);
                TrainProtocol proto;
                if (eval_epochs > 0) {
                    proto.direct.max_epochs = eval_epochs;
                    proto.pretrain.max_epochs = (eval_epochs + 1) / 2;
                    proto.finetune.max_epochs = (eval_epochs + 1) / 2;
                }
                std::vector<EvalReport> reports;
                if (eval_ablation == "size") {
                    auto rows = ablation_dataset_size(data, eval_sizes, proto, tests,
                                                      eval_cache);
                    for (auto& [size, report] : rows) {
                        std::cout << "size " << size << ": overall mean "
                                  << report.overall_mean << "\n";
                        reports.push_back(std::move(report));
                    }
                } else if (eval_ablation == "pretrain") {
                    auto out = ablation_pretraining(data, proto, eval_seeds, tests,
                                                    eval_cache);
                    std::cout << "direct mean " << out.direct_mean
                              << ", pretrain+finetune mean " << out.finetuned_mean << "\n";
                    reports = out.direct_reports;
                    reports.insert(reports.end(), out.finetuned_reports.begin(),
                                   out.finetuned_reports.end());
                } else {
                    throw std::invalid_argument("unknown ablation: " + eval_ablation);
                }
                std::cout << report_table(reports);
                return 0;
            }
            if (eval_model.empty()) throw std::invalid_argument("--model is required");
            auto model = ModelBase::load(eval_model);
            EvalReport report = evaluate_suite(*model, tests, eval_temperature, eval_seed);
            std::cout << report_table({report});
            if (!eval_report.empty()) {
                std::ofstream out(eval_report);
                out << report_csv(report);
            }
            if (!eval_table.empty()) {
                std::ofstream out(eval_table);
                out << report_table({report});
            }
            return 0;
        }

        if (knoll->parsed()) {
            auto rule = ordering_rule_from_name(knoll_order);
            if (!rule) throw std::invalid_argument("unknown ordering: " + knoll_order);
            Scene scene = read_scene(knoll_scene_path);
            auto model = ModelBase::load(knoll_model);
            KnollResult result = knoll_scene(scene, *model, *rule, knoll_temperature,
                                             knoll_seed, !knoll_no_snap);
            fs::create_directories(knoll_out_dir);
            {
                std::ofstream out(fs::path(knoll_out_dir) / "targets.jsonl");
                out << encode_record({result.ordered_objects, result.targets}) << '\n';
            }
            {
                std::ofstream out(fs::path(knoll_out_dir) / "plan.txt");
                out << plan_to_text(result.plan);
            }
            write_svg((fs::path(knoll_out_dir) / "before.svg").string(),
                      result.current_slots, {}, "before");
            write_svg((fs::path(knoll_out_dir) / "after.svg").string(), result.final_layout,
                      {}, "after");
            std::cout << "plan: " << result.plan.size() << " actions, collisions: "
                      << result.collision_count << ", outputs in " << knoll_out_dir << "\n";
            return 0;
        }

        if (render->parsed()) {
            auto records = read_dataset(render_record);
            if (render_index >= records.size())
                throw std::invalid_argument("record index out of range");
            write_svg(render_out, layout_from_record(records[render_index]));
            std::cout << "wrote " << render_out << "\n";
            return 0;
        }
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UnpackableError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
