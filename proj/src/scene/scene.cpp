// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/scene.hpp"

#include "arbigs/errors.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace arbigs {

Mat3 Gaussian3D::covariance() const {
    const Mat3 m = rotation_matrix() * scale().asDiagonal();
    return m * m.transpose();
}

void Camera::validate() const {
    if (!(focal > 0.0) || !std::isfinite(focal)) {
        throw ConfigError("camera focal must be positive, got " + std::to_string(focal));
    }
    if (!(scale_factor >= 1.0) || !std::isfinite(scale_factor)) {
        throw ConfigError("camera scale factor must be >= 1, got " + std::to_string(scale_factor));
    }
    if (width < 1 || height < 1) {
        throw ConfigError("camera base resolution must be at least 1x1");
    }
    const double err = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(err <= 1e-6)) {
        throw ConfigError("camera rotation is not orthonormal (error " + std::to_string(err) + ")");
    }
}

double Camera::depth_of(const Vec3& world) const {
    return std::max(to_camera(world).z(), kNearPlane);
}

std::pair<int, int> Camera::output_size(double s) const {
    const int w = std::max(1, static_cast<int>(std::lround(width * s)));
    const int h = std::max(1, static_cast<int>(std::lround(height * s)));
    return {w, h};
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
                       int height) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-9) {
        // Looking along up; pick any perpendicular.
        right = forward.unitOrthogonal();
    }
    right.normalize();
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    cam.focal = focal;
    cam.width = width;
    cam.height = height;
    cam.principal = Vec2(width / 2.0, height / 2.0);
    return cam;
}

void Scene::validate() const {
    for (const auto& cam : cameras) {
        cam.validate();
    }
    if (!reference_images.empty() && reference_images.size() != cameras.size()) {
        throw DimensionError("scene has " + std::to_string(reference_images.size()) + " reference slots for " +
                             std::to_string(cameras.size()) + " cameras");
    }
    for (std::size_t i = 0; i < reference_images.size(); ++i) {
        if (!reference_images[i]) continue;
        const auto [w, h] = cameras[i].output_size();
        if (reference_images[i]->width != w || reference_images[i]->height != h) {
            throw DimensionError("reference image " + std::to_string(i) + " is " +
                                 std::to_string(reference_images[i]->width) + "x" +
                                 std::to_string(reference_images[i]->height) + ", camera expects " +
                                 std::to_string(w) + "x" + std::to_string(h));
        }
    }
}

std::vector<std::size_t> select_orthogonal_views(std::vector<Camera>& cameras, double min_angle_deg) {
    std::vector<std::size_t> selected;
    if (cameras.empty()) return selected;
    const double min_angle = min_angle_deg * std::numbers::pi / 180.0;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        const Vec3 axis = cameras[i].optical_axis();
        const bool far_from_all = std::all_of(selected.begin(), selected.end(), [&](std::size_t j) {
            const double c = std::clamp(axis.dot(cameras[j].optical_axis()), -1.0, 1.0);
            return std::acos(c) >= min_angle;
        });
        if (far_from_all) selected.push_back(i);
    }
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        cameras[i].is_orthogonal = std::find(selected.begin(), selected.end(), i) != selected.end();
    }
    return selected;
}

} // namespace arbigs
