#include "knolling/percept.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "knolling/rng.hpp"

namespace knolling {

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew monotone chain; returns CCW hull starting from the
// lexicographically smallest point, so the result is independent of the
// input permutation.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
    std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Vec2& a, const Vec2& b) { return a == b; }),
              pts.end());
    const size_t n = pts.size();
    if (n < 3) return pts;
    std::vector<Vec2> hull(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (size_t i = n - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

double fold_quarter(double yaw) {
    while (yaw > kPi / 4) yaw -= kPi / 2;
    while (yaw <= -kPi / 4) yaw += kPi / 2;
    return yaw;
}

}  // namespace

RectEstimate pose_from_keypoints(const KeypointQuad& quad) {
    for (const auto& p : quad) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw std::invalid_argument("pose_from_keypoints: non-finite keypoint");
    }
    auto hull = convex_hull({quad.begin(), quad.end()});
    if (hull.size() != 4)
        throw std::invalid_argument(
            "pose_from_keypoints: degenerate quad (collinear or coincident points)");

    Vec2 e[4];
    double len[4];
    for (int i = 0; i < 4; ++i) {
        const Vec2& a = hull[i];
        const Vec2& b = hull[(i + 1) % 4];
        e[i] = {b.x - a.x, b.y - a.y};
        len[i] = std::hypot(e[i].x, e[i].y);
        if (len[i] < 1e-12)
            throw std::invalid_argument("pose_from_keypoints: zero-length edge");
    }
    for (int pair = 0; pair < 2; ++pair) {
        double mismatch = std::abs(len[pair] - len[pair + 2]) /
                          ((len[pair] + len[pair + 2]) / 2);
        if (mismatch >= 0.20) {
            std::ostringstream os;
            os << "pose_from_keypoints: not rectangular, opposite-edge mismatch "
               << mismatch;
            throw std::runtime_error(os.str());
        }
    }

    Vec2 center{(hull[0].x + hull[1].x + hull[2].x + hull[3].x) / 4,
                (hull[0].y + hull[1].y + hull[2].y + hull[3].y) / 4};
    // averaged directions of the two opposite-edge pairs
    auto pair_dir = [&](int i) {
        Vec2 d{e[i].x / len[i] - e[i + 2].x / len[i + 2],
               e[i].y / len[i] - e[i + 2].y / len[i + 2]};
        double norm = std::hypot(d.x, d.y);
        return Vec2{d.x / norm, d.y / norm};
    };
    Vec2 dir_a = pair_dir(0);
    Vec2 dir_b = pair_dir(1);
    double side_a = (len[0] + len[2]) / 2;  // extent along dir_a
    double side_b = (len[1] + len[3]) / 2;

    double yaw;
    double width, length;
    if (side_a >= side_b) {
        yaw = std::atan2(dir_a.y, dir_a.x);
        width = side_a;
        length = side_b;
    } else {
        yaw = std::atan2(dir_b.y, dir_b.x);
        width = side_b;
        length = side_a;
    }
    yaw = normalize_yaw_half(yaw);
    if (std::abs(width - length) <= 1e-9 * std::max(width, length)) yaw = fold_quarter(yaw);
    return {Pose2D{center.x, center.y, yaw}, ObjectSpec{width, length}};
}

KeypointQuad keypoints_from_pose(const Pose2D& pose, const ObjectSpec& spec,
                                 double noise_std, uint64_t seed) {
    const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
    const double hw = spec.width / 2, hl = spec.length / 2;
    const double bx[4] = {-hw, hw, hw, -hw};
    const double by[4] = {-hl, -hl, hl, hl};
    KeypointQuad quad;
    Rng rng(seed);
    for (int i = 0; i < 4; ++i) {
        quad[i] = {pose.x + c * bx[i] - s * by[i], pose.y + s * bx[i] + c * by[i]};
        if (noise_std > 0) {
            quad[i].x += noise_std * rng.normal();
            quad[i].y += noise_std * rng.normal();
        }
    }
    return quad;
}

RectEstimate canonical_rect(const Pose2D& pose, const ObjectSpec& spec) {
    RectEstimate out{pose, spec};
    if (spec.length > spec.width) {
        out.spec = {spec.length, spec.width};
        out.pose.yaw = pose.yaw + kPi / 2;
    }
    out.pose.yaw = normalize_yaw_half(out.pose.yaw);
    if (std::abs(out.spec.width - out.spec.length) <=
        1e-9 * std::max(out.spec.width, out.spec.length)) {
        out.pose.yaw = fold_quarter(out.pose.yaw);
    }
    return out;
}

}  // namespace knolling
