#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "knolling/core.hpp"

namespace knolling {

enum class ActionKind { Move, PickPlace, Sweep, Separate };

struct Action {
    ActionKind kind = ActionKind::Move;
    int object = -1;
    Pose2D source;
    Pose2D destination;
};

using ActionPlan = std::vector<Action>;

struct PlanConfig {
    double separation_threshold = 0.01;  // min clearance to grasp
    double buffer_depth = 0.09;          // strip along the far (high-y) edge
    double clearance_epsilon = 1e-6;
};

struct ObbResult {
    bool overlap = false;
    double clearance = 0.0;  // min distance when disjoint, 0 otherwise
};

std::array<Vec2, 4> rect_corners(const Pose2D& pose, const ObjectSpec& spec);

// Separating-axis test for oriented rectangles plus the exact minimum
// distance between them when disjoint.
ObbResult obb_overlap(const Pose2D& pose_a, const ObjectSpec& spec_a, const Pose2D& pose_b,
                      const ObjectSpec& spec_b);

// Orders pick/place actions that transform `current` into the axis-aligned
// `targets`, sweeping blockers of occupied target footprints to the buffer
// strip and nudging too-close neighbors before a grasp. Plan length is at
// most 3n.
ActionPlan plan_actions(const Layout& current, const std::vector<Vec2>& targets,
                        const PlanConfig& cfg = {}, const Workspace& ws = {});

struct CollisionEvent {
    size_t action_index = 0;
    int moving = -1;
    int standing = -1;
};

struct ExecResult {
    Layout final_layout;
    std::vector<CollisionEvent> collisions;
};

// Kinematics-free executor: applies actions in order and logs any
// placement whose footprint overlaps a standing object.
ExecResult simulate_execution(const Layout& current, const ActionPlan& plan);

std::string action_to_line(const Action& action);
Action action_from_line(const std::string& line);
std::string plan_to_text(const ActionPlan& plan);
ActionPlan plan_from_text(const std::string& text);

}  // namespace knolling
