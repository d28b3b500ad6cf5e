#include "knolling/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "knolling/percept.hpp"

namespace knolling {

Scene read_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    Scene scene;
    std::string line;
    size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("line " + std::to_string(line_number) + ": " + e.what());
        }
        try {
            if (j.contains("keypoints")) {
                const auto& kp = j.at("keypoints");
                if (kp.size() != 4)
                    throw ParseError("line " + std::to_string(line_number) +
                                     ": keypoints must have 4 points");
                KeypointQuad quad;
                for (int i = 0; i < 4; ++i)
                    quad[i] = {kp.at(i).at(0).get<double>(), kp.at(i).at(1).get<double>()};
                RectEstimate est = pose_from_keypoints(quad);
                scene.push_back({est.spec, est.pose});
            } else if (j.contains("object") && j.contains("pose")) {
                const auto& o = j.at("object");
                const auto& p = j.at("pose");
                scene.push_back({{o.at(0).get<double>(), o.at(1).get<double>()},
                                 {p.at(0).get<double>(), p.at(1).get<double>(),
                                  p.size() > 2 ? p.at(2).get<double>() : 0.0}});
            } else {
                throw ParseError("line " + std::to_string(line_number) +
                                 ": expected object/pose or keypoints");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("line " + std::to_string(line_number) + ": " + e.what());
        }
    }
    if (scene.empty()) throw ParseError("scene file is empty: " + path);
    return scene;
}

std::string encode_scene_line(const SceneObject& object) {
    nlohmann::json j;
    j["object"] = {object.spec.width, object.spec.length};
    j["pose"] = {object.pose.x, object.pose.y, object.pose.yaw};
    return j.dump();
}

void write_scene(const std::string& path, const Scene& scene) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& object : scene) out << encode_scene_line(object) << '\n';
}

std::vector<Vec2> snap_to_rows(const std::vector<ObjectSpec>& objects,
                               const std::vector<Vec2>& predicted, const PackConfig& pack,
                               const Workspace& ws) {
    const size_t n = objects.size();
    if (predicted.size() != n) throw std::invalid_argument("snap_to_rows: size mismatch");
    if (n == 0) return {};
    // row breaks where the predicted x resets or the row would overflow
    std::vector<Vec2> out(n);
    double y_base = 0.0, x_cursor = 0.0, row_height = 0.0;
    for (size_t i = 0; i < n; ++i) {
        bool breaks = false;
        if (i > 0) {
            breaks = predicted[i].x <= predicted[i - 1].x ||
                     x_cursor + pack.gap + objects[i].width > pack.max_row_width + 1e-12;
        }
        if (breaks) {
            y_base += row_height + pack.gap;
            x_cursor = 0.0;
            row_height = 0.0;
        } else if (i > 0) {
            x_cursor += pack.gap;
        }
        if (objects[i].width > pack.max_row_width + 1e-12)
            throw UnpackableError("snap_to_rows: object wider than the row");
        out[i] = {x_cursor + objects[i].width / 2, y_base + objects[i].length / 2};
        x_cursor += objects[i].width;
        row_height = std::max(row_height, objects[i].length);
    }
    if (y_base + row_height > ws.height + 1e-12)
        throw UnpackableError("snap_to_rows: layout exceeds the workspace");
    return out;
}

KnollResult knoll_scene(const Scene& scene, const ModelBase& model, OrderingRule rule,
                        double temperature, uint64_t seed, bool snap,
                        const PlanConfig& plan_cfg, const PackConfig& pack) {
    if (scene.empty()) throw std::invalid_argument("knoll_scene: empty scene");
    if (scene.size() > kMaxObjects)
        throw std::invalid_argument("knoll_scene: more than 10 objects");
    std::vector<ObjectSpec> specs;
    specs.reserve(scene.size());
    for (const auto& object : scene) specs.push_back(object.spec);

    KnollResult result;
    OrderingResult ordered = apply_ordering(specs, rule);
    result.permutation = ordered.permutation;
    result.ordered_objects = ordered.objects;
    result.raw_targets =
        model.predict_layout(ordered.objects, SamplerConfig{temperature, seed});
    result.targets =
        snap ? snap_to_rows(ordered.objects, result.raw_targets, pack) : result.raw_targets;

    ScenarioRecord record{result.ordered_objects, result.targets};
    auto report = validate_scenario(record);
    if (!report.ok())
        throw std::invalid_argument("knoll_scene: predicted layout invalid: " +
                                    report.to_string());

    result.current_slots.reserve(scene.size());
    for (int scene_idx : ordered.permutation)
        result.current_slots.push_back({scene[scene_idx].spec, scene[scene_idx].pose});

    result.plan = plan_actions(result.current_slots, result.targets, plan_cfg);
    ExecResult exec = simulate_execution(result.current_slots, result.plan);
    result.final_layout = exec.final_layout;
    result.collision_count = exec.collisions.size();
    return result;
}

}  // namespace knolling
