#include "knolling/plan.hpp"

#include "knolling/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace knolling {

namespace {

double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }

// closest distance between segments a0-a1 and b0-b1 (Ericson 5.1.9)
double segment_distance(const Vec2& a0, const Vec2& a1, const Vec2& b0, const Vec2& b1) {
    Vec2 d1{a1.x - a0.x, a1.y - a0.y};
    Vec2 d2{b1.x - b0.x, b1.y - b0.y};
    Vec2 r{a0.x - b0.x, a0.y - b0.y};
    double a = dot(d1, d1), e = dot(d2, d2), f = dot(d2, r);
    double s = 0.0, t = 0.0;
    constexpr double eps = 1e-15;
    if (a <= eps && e <= eps) {
        // both degenerate
    } else if (a <= eps) {
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        double c = dot(d1, r);
        if (e <= eps) {
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            double b = dot(d1, d2);
            double denom = a * e - b * b;
            if (denom > eps) s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
            t = (b * s + f) / e;
            if (t < 0.0) {
                t = 0.0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1.0) {
                t = 1.0;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    Vec2 p{a0.x + s * d1.x, a0.y + s * d1.y};
    Vec2 q{b0.x + t * d2.x, b0.y + t * d2.y};
    return std::hypot(p.x - q.x, p.y - q.y);
}

bool in_workspace(const Pose2D& pose, const ObjectSpec& spec, const Workspace& ws) {
    for (const auto& c : rect_corners(pose, spec)) {
        if (c.x < -kOverlapTol || c.y < -kOverlapTol || c.x > ws.width + kOverlapTol ||
            c.y > ws.height + kOverlapTol)
            return false;
    }
    return true;
}

const char* kind_name(ActionKind kind) {
    switch (kind) {
        case ActionKind::Move: return "move";
        case ActionKind::PickPlace: return "pick_place";
        case ActionKind::Sweep: return "sweep";
        case ActionKind::Separate: return "separate";
    }
    return "?";
}

ActionKind kind_from_name(const std::string& name) {
    if (name == "move") return ActionKind::Move;
    if (name == "pick_place") return ActionKind::PickPlace;
    if (name == "sweep") return ActionKind::Sweep;
    if (name == "separate") return ActionKind::Separate;
    throw std::invalid_argument("unknown action kind: " + name);
}

}  // namespace

std::array<Vec2, 4> rect_corners(const Pose2D& pose, const ObjectSpec& spec) {
    const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
    const double hw = spec.width / 2, hl = spec.length / 2;
    const double bx[4] = {-hw, hw, hw, -hw};
    const double by[4] = {-hl, -hl, hl, hl};
    std::array<Vec2, 4> out;
    for (int i = 0; i < 4; ++i) {
        out[i] = {pose.x + c * bx[i] - s * by[i], pose.y + s * bx[i] + c * by[i]};
    }
    return out;
}

ObbResult obb_overlap(const Pose2D& pose_a, const ObjectSpec& spec_a, const Pose2D& pose_b,
                      const ObjectSpec& spec_b) {
    auto ca = rect_corners(pose_a, spec_a);
    auto cb = rect_corners(pose_b, spec_b);
    const Vec2 axes[4] = {
        {std::cos(pose_a.yaw), std::sin(pose_a.yaw)},
        {-std::sin(pose_a.yaw), std::cos(pose_a.yaw)},
        {std::cos(pose_b.yaw), std::sin(pose_b.yaw)},
        {-std::sin(pose_b.yaw), std::cos(pose_b.yaw)},
    };
    bool overlap = true;
    for (const auto& axis : axes) {
        double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
        for (int i = 0; i < 4; ++i) {
            double pa = dot(axis, ca[i]);
            double pb = dot(axis, cb[i]);
            amin = std::min(amin, pa);
            amax = std::max(amax, pa);
            bmin = std::min(bmin, pb);
            bmax = std::max(bmax, pb);
        }
        if (std::min(amax, bmax) - std::max(amin, bmin) <= kOverlapTol) {
            overlap = false;
            break;
        }
    }
    if (overlap) return {true, 0.0};
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            best = std::min(best, segment_distance(ca[i], ca[(i + 1) % 4], cb[j],
                                                   cb[(j + 1) % 4]));
        }
    }
    return {false, best};
}

namespace {

struct PlanState {
    const Layout* current;
    std::vector<Pose2D> poses;
    std::vector<bool> placed;
    const std::vector<Vec2>* targets;
    PlanConfig cfg;
    Workspace ws;

    const ObjectSpec& spec(int i) const { return (*current)[i].spec; }
    Pose2D target_pose(int i) const { return {(*targets)[i].x, (*targets)[i].y, 0.0}; }

    bool collides_standing(const Pose2D& pose, const ObjectSpec& s, int exclude) const {
        for (size_t k = 0; k < poses.size(); ++k) {
            if (static_cast<int>(k) == exclude) continue;
            if (obb_overlap(pose, s, poses[k], spec(static_cast<int>(k))).overlap)
                return true;
        }
        return false;
    }

    bool collides_open_target(const Pose2D& pose, const ObjectSpec& s) const {
        for (size_t k = 0; k < poses.size(); ++k) {
            if (placed[k]) continue;
            auto r = obb_overlap(pose, s, target_pose(static_cast<int>(k)),
                                 spec(static_cast<int>(k)));
            if (r.overlap || r.clearance < cfg.clearance_epsilon) return true;
        }
        return false;
    }

    double min_clearance(const Pose2D& pose, const ObjectSpec& s, int exclude) const {
        double best = std::numeric_limits<double>::infinity();
        for (size_t k = 0; k < poses.size(); ++k) {
            if (static_cast<int>(k) == exclude) continue;
            auto r = obb_overlap(pose, s, poses[k], spec(static_cast<int>(k)));
            best = std::min(best, r.overlap ? 0.0 : r.clearance);
        }
        return best;
    }
};

// first-fit scan of the buffer strip (two bands), falling back to a
// whole-workspace scan if the strip is saturated
Pose2D find_parking_pose(const PlanState& st, const ObjectSpec& spec, int moving) {
    const double margin = 0.002;
    std::vector<double> band_y;
    double top = st.ws.height - spec.length / 2 - margin;
    band_y.push_back(top);
    double second = top - (kMaxObjectSide + 0.006);
    if (second - spec.length / 2 >= st.ws.height - st.cfg.buffer_depth) band_y.push_back(second);
    for (double y = st.ws.height - st.cfg.buffer_depth - spec.length / 2 - margin;
         y >= spec.length / 2 + margin; y -= 0.01) {
        band_y.push_back(y);  // fallback rows below the strip
    }
    for (double y : band_y) {
        for (double x = spec.width / 2 + margin; x <= st.ws.width - spec.width / 2 - margin;
             x += 0.0025) {
            Pose2D pose{x, y, 0.0};
            if (!in_workspace(pose, spec, st.ws)) continue;
            if (st.collides_standing(pose, spec, moving)) continue;
            // keep parked objects grasp-clear so a sweep never forces a
            // separation later
            bool near = false;
            for (size_t k = 0; k < st.poses.size(); ++k) {
                if (static_cast<int>(k) == moving) continue;
                auto r = obb_overlap(pose, spec, st.poses[k], st.spec(static_cast<int>(k)));
                if (!r.overlap && r.clearance < st.cfg.separation_threshold) near = true;
            }
            if (near) continue;
            if (st.collides_open_target(pose, spec)) continue;
            return pose;
        }
    }
    throw std::runtime_error("plan_actions: no free parking pose for sweep");
}

}  // namespace

ActionPlan plan_actions(const Layout& current, const std::vector<Vec2>& targets,
                        const PlanConfig& cfg, const Workspace& ws) {
    const int n = static_cast<int>(current.size());
    if (static_cast<int>(targets.size()) != n)
        throw std::invalid_argument("plan_actions: current/target size mismatch");
    if (n == 0) return {};
    {
        ScenarioRecord record;
        for (const auto& item : current) record.objects.push_back(item.spec);
        record.targets = targets;
        auto report = validate_scenario(record, ws);
        if (!report.ok())
            throw std::invalid_argument("plan_actions: invalid target layout: " +
                                        report.to_string());
    }

    PlanState st;
    st.current = &current;
    st.targets = &targets;
    st.cfg = cfg;
    st.ws = ws;
    st.poses.reserve(n);
    for (const auto& item : current) st.poses.push_back(item.pose);
    st.placed.assign(n, false);
    std::vector<bool> separated(n, false);

    ActionPlan plan;
    auto at_target = [&](int i) {
        const Pose2D& p = st.poses[i];
        Pose2D t = st.target_pose(i);
        return std::abs(p.x - t.x) <= 1e-9 && std::abs(p.y - t.y) <= 1e-9 &&
               std::abs(normalize_yaw_half(p.yaw)) <= 1e-9;
    };

    for (int i = 0; i < n; ++i) {
        if (at_target(i)) {
            st.placed[i] = true;
            continue;
        }
        // separation: clear sub-threshold neighbors before grasping i
        for (int j = 0; j < n; ++j) {
            if (j == i || st.placed[j] || separated[j]) continue;
            auto r = obb_overlap(st.poses[i], st.spec(i), st.poses[j], st.spec(j));
            if (r.overlap || r.clearance >= cfg.separation_threshold) continue;
            Pose2D best_pose;
            double best_score = -1.0;
            for (int dir = 0; dir < 16; ++dir) {
                double ang = dir * (2 * kPi / 16);
                Pose2D cand = st.poses[j];
                cand.x += cfg.separation_threshold * std::cos(ang);
                cand.y += cfg.separation_threshold * std::sin(ang);
                if (!in_workspace(cand, st.spec(j), ws)) continue;
                if (st.collides_standing(cand, st.spec(j), j)) continue;
                if (st.collides_open_target(cand, st.spec(j))) continue;
                double score = st.min_clearance(cand, st.spec(j), j);
                if (score > best_score) {
                    best_score = score;
                    best_pose = cand;
                }
            }
            if (best_score >= 0.0) {
                plan.push_back({ActionKind::Separate, j, st.poses[j], best_pose});
                st.poses[j] = best_pose;
                separated[j] = true;
            }
        }
        // sweep anything parked on i's target footprint
        Pose2D tgt = st.target_pose(i);
        for (int j = 0; j < n; ++j) {
            if (j == i || st.placed[j]) continue;
            if (!obb_overlap(st.poses[j], st.spec(j), tgt, st.spec(i)).overlap) continue;
            Pose2D parking = find_parking_pose(st, st.spec(j), j);
            plan.push_back({ActionKind::Sweep, j, st.poses[j], parking});
            st.poses[j] = parking;
        }
        plan.push_back({ActionKind::PickPlace, i, st.poses[i], tgt});
        st.poses[i] = tgt;
        st.placed[i] = true;
    }
    return plan;
}

ExecResult simulate_execution(const Layout& current, const ActionPlan& plan) {
    ExecResult out;
    out.final_layout = current;
    for (size_t a = 0; a < plan.size(); ++a) {
        const Action& action = plan[a];
        if (action.kind == ActionKind::Move) continue;
        if (action.object < 0 || action.object >= static_cast<int>(current.size()))
            throw std::invalid_argument("simulate_execution: action references object " +
                                        std::to_string(action.object));
        const ObjectSpec& spec = out.final_layout[action.object].spec;
        for (size_t k = 0; k < out.final_layout.size(); ++k) {
            if (static_cast<int>(k) == action.object) continue;
            if (obb_overlap(action.destination, spec, out.final_layout[k].pose,
                            out.final_layout[k].spec)
                    .overlap) {
                out.collisions.push_back({a, action.object, static_cast<int>(k)});
            }
        }
        out.final_layout[action.object].pose = action.destination;
    }
    return out;
}

std::string action_to_line(const Action& action) {
    std::ostringstream os;
    os.precision(17);
    os << kind_name(action.kind) << ", " << action.object << ", " << action.source.x
       << ", " << action.source.y << ", " << action.source.yaw << ", "
       << action.destination.x << ", " << action.destination.y << ", "
       << action.destination.yaw;
    return os.str();
}

Action action_from_line(const std::string& line) {
    std::istringstream is(line);
    std::string kind;
    if (!std::getline(is, kind, ',')) throw std::invalid_argument("empty action line");
    kind.erase(std::remove_if(kind.begin(), kind.end(), ::isspace), kind.end());
    Action action;
    action.kind = kind_from_name(kind);
    char comma;
    if (!(is >> action.object >> comma >> action.source.x >> comma >> action.source.y >>
          comma >> action.source.yaw >> comma >> action.destination.x >> comma >>
          action.destination.y >> comma >> action.destination.yaw)) {
        throw std::invalid_argument("malformed action line: " + line);
    }
    return action;
}

std::string plan_to_text(const ActionPlan& plan) {
    std::string out;
    for (const auto& action : plan) {
        out += action_to_line(action);
        out += '\n';
    }
    return out;
}

ActionPlan plan_from_text(const std::string& text) {
    ActionPlan plan;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        plan.push_back(action_from_line(line));
    }
    return plan;
}

}  // namespace knolling
