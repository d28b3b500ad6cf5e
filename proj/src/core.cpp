#include "knolling/core.hpp"

#include <cmath>
#include <sstream>

#include "knolling/rng.hpp"

namespace knolling {

double normalize_yaw_half(double yaw) {
    while (yaw > kPi / 2) yaw -= kPi;
    while (yaw <= -kPi / 2) yaw += kPi;
    return yaw;
}

Aabb footprint(const ObjectSpec& spec, const Vec2& center) {
    return {center.x - spec.width / 2, center.y - spec.length / 2,
            center.x + spec.width / 2, center.y + spec.length / 2};
}

bool aabb_overlap(const Aabb& a, const Aabb& b, double tol) {
    double px = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    double py = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    return px > tol && py > tol;
}

ValidityReport validate_scenario(const ScenarioRecord& record, const Workspace& ws) {
    ValidityReport report;
    if (record.objects.size() != record.targets.size()) {
        report.length_mismatch = true;
        return report;
    }
    const int n = static_cast<int>(record.objects.size());
    for (int i = 0; i < n; ++i) {
        const auto& o = record.objects[i];
        const auto& t = record.targets[i];
        if (!std::isfinite(o.width) || !std::isfinite(o.length) || o.width <= 0 ||
            o.length <= 0 || !std::isfinite(t.x) || !std::isfinite(t.y)) {
            report.bad_values.push_back(i);
        }
    }
    if (!report.bad_values.empty()) return report;

    std::vector<Aabb> boxes(n);
    for (int i = 0; i < n; ++i) boxes[i] = footprint(record.objects[i], record.targets[i]);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (aabb_overlap(boxes[i], boxes[j])) report.overlap_pairs.emplace_back(i, j);
        }
    }
    for (int i = 0; i < n; ++i) {
        const auto& b = boxes[i];
        if (b.x0 < -kOverlapTol || b.y0 < -kOverlapTol || b.x1 > ws.width + kOverlapTol ||
            b.y1 > ws.height + kOverlapTol) {
            report.out_of_bounds.push_back(i);
        }
    }
    return report;
}

std::string ValidityReport::to_string() const {
    if (ok()) return "OK";
    std::ostringstream os;
    if (length_mismatch) os << "length mismatch; ";
    if (!bad_values.empty()) {
        os << "bad values at";
        for (int i : bad_values) os << ' ' << i;
        os << "; ";
    }
    if (!overlap_pairs.empty()) {
        os << "overlaps";
        for (auto [i, j] : overlap_pairs) os << " (" << i << ',' << j << ')';
        os << "; ";
    }
    if (!out_of_bounds.empty()) {
        os << "out of bounds at";
        for (int i : out_of_bounds) os << ' ' << i;
    }
    return os.str();
}

Layout layout_from_record(const ScenarioRecord& record) {
    Layout layout;
    layout.reserve(record.objects.size());
    for (size_t i = 0; i < record.objects.size(); ++i) {
        layout.push_back({record.objects[i],
                          Pose2D{record.targets[i].x, record.targets[i].y, 0.0}});
    }
    return layout;
}

ScenarioRecord record_from_layout(const Layout& layout) {
    ScenarioRecord record;
    record.objects.reserve(layout.size());
    record.targets.reserve(layout.size());
    for (const auto& item : layout) {
        record.objects.push_back(item.spec);
        record.targets.push_back({item.pose.x, item.pose.y});
    }
    return record;
}

}  // namespace knolling
