#pragma once

#include <array>
#include <utility>

#include "knolling/core.hpp"

namespace knolling {

// Four detected corner points in the workspace frame, any order.
using KeypointQuad = std::array<Vec2, 4>;

struct RectEstimate {
    Pose2D pose;
    ObjectSpec spec;
};

// Center, orientation and dimensions from corner keypoints. The result is
// canonical: width >= length, yaw in (-pi/2, pi/2] (squares folded into
// (-pi/4, pi/4]). Throws std::invalid_argument on degenerate quads and
// std::runtime_error when opposite edges mismatch by 20% or more.
RectEstimate pose_from_keypoints(const KeypointQuad& quad);

// Exact corners plus isotropic Gaussian noise; noise_std = 0 inverts
// pose_from_keypoints up to the canonical representation.
KeypointQuad keypoints_from_pose(const Pose2D& pose, const ObjectSpec& spec,
                                 double noise_std = 0.0, uint64_t seed = 0);

// The unique representative of a physical rectangle under 180-degree
// symmetry and width/length relabeling.
RectEstimate canonical_rect(const Pose2D& pose, const ObjectSpec& spec);

}  // namespace knolling
