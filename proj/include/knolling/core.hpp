#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace knolling {

inline constexpr double kMinObjectSide = 0.01;   // meters
inline constexpr double kMaxObjectSide = 0.05;   // meters
inline constexpr double kOverlapTol = 1e-9;      // interpenetration below this is contact, not overlap
inline constexpr int kMaxObjects = 10;
inline constexpr double kWorkspaceSide = 0.30;   // meters

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline bool operator==(const Vec2& a, const Vec2& b) { return a.x == b.x && a.y == b.y; }

// A rectangle's footprint: width is the extent along x, length along y
// (at yaw zero).
struct ObjectSpec {
    double width = 0.0;
    double length = 0.0;

    double area() const { return width * length; }
    double aspect_ratio() const {
        return std::max(width, length) / std::min(width, length);
    }
};

inline bool operator==(const ObjectSpec& a, const ObjectSpec& b) {
    return a.width == b.width && a.length == b.length;
}

struct Pose2D {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;  // radians, canonical range (-pi/2, pi/2]
};

struct Workspace {
    double width = kWorkspaceSide;
    double height = kWorkspaceSide;
};

struct PlacedItem {
    ObjectSpec spec;
    Pose2D pose;
};

using Layout = std::vector<PlacedItem>;

// One training pair: objects listed in canonical slot order, targets are
// axis-aligned center positions for the matching slots.
struct ScenarioRecord {
    std::vector<ObjectSpec> objects;
    std::vector<Vec2> targets;
};

// fold into (-pi/2, pi/2] (a rectangle is symmetric under half turns)
double normalize_yaw_half(double yaw);

struct Aabb {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
};

Aabb footprint(const ObjectSpec& spec, const Vec2& center);
bool aabb_overlap(const Aabb& a, const Aabb& b, double tol = kOverlapTol);

struct ValidityReport {
    bool length_mismatch = false;
    std::vector<int> bad_values;                    // non-finite or out-of-range fields
    std::vector<std::pair<int, int>> overlap_pairs;
    std::vector<int> out_of_bounds;

    bool ok() const {
        return !length_mismatch && bad_values.empty() && overlap_pairs.empty() &&
               out_of_bounds.empty();
    }
    std::string to_string() const;
};

ValidityReport validate_scenario(const ScenarioRecord& record, const Workspace& ws = {});

Layout layout_from_record(const ScenarioRecord& record);
ScenarioRecord record_from_layout(const Layout& layout);

}  // namespace knolling
