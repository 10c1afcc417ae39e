// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/image.hpp"
#include "arbigs/math.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace arbigs {

/// One splat. Parameters live in their optimizer-friendly spaces:
///   rotation      raw quaternion (w, x, y, z), normalized on every read
///   log_scale     log of the per-axis standard deviations, world units
///   opacity_logit alpha = sigmoid(opacity_logit)
///   color         RGB in [0, 1]
/// max_rate caches the maximum sampling rate at unit scale (1/world length);
/// it is meaningful only while max_rate_valid is set.
/// Optimizable scalars per Gaussian: position 3, rotation 4, log_scale 3,
/// opacity 1, color 3.
inline constexpr int kParamsPerGaussian = 14;

struct Gaussian3D {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Constant(0.5);
    double max_rate = 0.0;
    bool max_rate_valid = false;

    Vec4 unit_rotation() const { return rotation / rotation.norm(); }
    Mat3 rotation_matrix() const { return quaternion_to_matrix(unit_rotation()); }
    Vec3 scale() const { return log_scale.array().exp(); }
    double opacity() const { return sigmoid(opacity_logit); }
    /// R S S^T R^T.
    Mat3 covariance() const;

    bool operator==(const Gaussian3D&) const = default;
};

/// Pinhole camera, OpenCV convention (x right, y down, z forward).
/// focal and principal are expressed in pixels at base resolution; the
/// world-to-camera transform maps p to rotation * p + translation.
struct Camera {
    double focal = 1.0;
    Vec2 principal = Vec2::Zero();
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    int width = 1;
    int height = 1;
    double scale_factor = 1.0;
    bool is_orthogonal = false;

    /// Throws ConfigError when focal <= 0, s < 1, dims < 1 or the rotation
    /// is not orthonormal to 1e-6.
    void validate() const;

    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    /// Camera-space z of a world point, clamped below at kNearPlane.
    double depth_of(const Vec3& world) const;
    /// Unit viewing direction in world space.
    Vec3 optical_axis() const { return rotation.transpose() * Vec3(0, 0, 1); }
    Vec3 center() const { return -rotation.transpose() * translation; }

    /// round(base * s) per axis, at least 1.
    std::pair<int, int> output_size(double s) const;
    std::pair<int, int> output_size() const { return output_size(scale_factor); }

    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
                          int height);

    bool operator==(const Camera&) const = default;
};

inline constexpr double kNearPlane = 1e-6;

struct Scene {
    std::vector<Gaussian3D> gaussians;
    std::vector<Camera> cameras;
    /// Per-camera LR reference images (empty optional = no image).
    std::vector<std::optional<Image>> reference_images;
    Vec3 background = Vec3::Zero();

    /// Checks camera validity and that every reference image matches its
    /// camera's output resolution at the stored scale factor.
    void validate() const;
};

/// Greedy selection of mutually well-separated views: camera 0 first, then
/// every camera whose optical axis is at least min_angle_deg away from all
/// previously selected axes. Sets is_orthogonal on the cameras and returns
/// the selected indices in ascending order.
std::vector<std::size_t> select_orthogonal_views(std::vector<Camera>& cameras, double min_angle_deg = 60.0);

} // namespace arbigs
