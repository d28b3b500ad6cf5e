#pragma once

#include <string>
#include <vector>

#include "knolling/core.hpp"
#include "knolling/laygen.hpp"
#include "knolling/net.hpp"
#include "knolling/plan.hpp"

namespace knolling {

// One object observed in a scene. Scene files carry one JSON object per
// line, either {"object":[w,l],"pose":[x,y,yaw]} or
// {"keypoints":[[x,y],[x,y],[x,y],[x,y]]}; keypoint lines go through the
// perception geometry.
struct SceneObject {
    ObjectSpec spec;
    Pose2D pose;
};

using Scene = std::vector<SceneObject>;

Scene read_scene(const std::string& path);
std::string encode_scene_line(const SceneObject& object);
void write_scene(const std::string& path, const Scene& scene);

// Snap raw model predictions to an exactly valid row layout. Row breaks
// and in-row order come from the predicted centers, spacing and alignment
// from the pack config, so hard constraints hold while the model keeps
// control of the arrangement.
std::vector<Vec2> snap_to_rows(const std::vector<ObjectSpec>& objects,
                               const std::vector<Vec2>& predicted, const PackConfig& pack = {},
                               const Workspace& ws = {});

struct KnollResult {
    std::vector<int> permutation;            // slot -> scene index
    std::vector<ObjectSpec> ordered_objects; // model input order
    std::vector<Vec2> raw_targets;           // model output before snapping
    std::vector<Vec2> targets;               // emitted targets (valid layout)
    Layout current_slots;                    // scene poses in slot order
    ActionPlan plan;                         // actions over slot indices
    Layout final_layout;
    size_t collision_count = 0;
};

// Order the scene, predict targets, snap/validate, plan and verify by
// simulated execution.
KnollResult knoll_scene(const Scene& scene, const ModelBase& model, OrderingRule rule,
                        double temperature, uint64_t seed, bool snap = true,
                        const PlanConfig& plan_cfg = {}, const PackConfig& pack = {});

}  // namespace knolling
