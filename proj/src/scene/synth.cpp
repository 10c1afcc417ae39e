// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/synth.hpp"

#include "arbigs/errors.hpp"
#include "arbigs/losses.hpp"
#include "arbigs/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace arbigs {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double normal(Rng& rng) {
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

Vec4 random_rotation(Rng& rng) {
    Vec4 q(normal(rng), normal(rng), normal(rng), normal(rng));
    return q / q.norm();
}

std::vector<Gaussian3D> make_grid(int n, Rng& rng) {
    std::vector<Gaussian3D> out;
    const int side = std::max(1, static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n)))));
    const double spacing = side > 1 ? 2.0 / (side - 1) : 1.0;
    for (int i = 0; i < n; ++i) {
        const int ix = i % side, iy = (i / side) % side, iz = i / (side * side);
        Gaussian3D g;
        g.position = side > 1 ? Vec3(-1 + ix * spacing, -1 + iy * spacing, -1 + iz * spacing) : Vec3::Zero();
        g.rotation = random_rotation(rng);
        g.log_scale = Vec3::Constant(std::log(0.2 * spacing)) + Vec3(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3),
                                                                     uniform(rng, -0.3, 0.3));
        g.opacity_logit = logit(0.8);
        g.color = (g.position.array() * 0.4 + 0.5).matrix();
        out.push_back(g);
    }
    return out;
}

std::vector<Gaussian3D> make_checker_wall(int n) {
    std::vector<Gaussian3D> out;
    if (n <= 0) return out;
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    const double cell = 2.0 / side;
    for (int i = 0; i < n; ++i) {
        const int ix = i % side, iy = i / side;
        Gaussian3D g;
        g.position = Vec3(-1 + (ix + 0.5) * cell, -1 + (iy + 0.5) * cell, 0.0);
        g.log_scale = Vec3(std::log(0.45 * cell), std::log(0.45 * cell), std::log(0.2 * cell));
        g.opacity_logit = logit(0.95);
        const bool dark = (ix + iy) % 2 == 0;
        g.color = dark ? Vec3(0.1, 0.12, 0.15) : Vec3(0.95, 0.9, 0.8);
        out.push_back(g);
    }
    return out;
}

std::vector<Gaussian3D> make_random(int n, Rng& rng) {
    std::vector<Gaussian3D> out;
    for (int i = 0; i < n; ++i) {
        Gaussian3D g;
        g.position = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
        g.rotation = random_rotation(rng);
        g.log_scale = Vec3(uniform(rng, -3.0, -1.5), uniform(rng, -3.0, -1.5), uniform(rng, -3.0, -1.5));
        g.opacity_logit = uniform(rng, -1.0, 3.0);
        g.color = Vec3(uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1));
        out.push_back(g);
    }
    return out;
}

} // namespace

Scene synth_scene(const SynthSpec& spec) {
    if (spec.gaussian_count < 0) throw ConfigError("Gaussian count must be non-negative");
    if (spec.camera_count < 1) throw ConfigError("synthetic scenes need at least one camera");
    if (!(spec.reference_scale >= 1.0)) throw ConfigError("reference scale must be at least 1");
    Rng rng(spec.seed);
    Scene scene;
    scene.background = spec.background;
    double elevation = spec.elevation_deg;
    if (spec.preset == "grid") {
        scene.gaussians = make_grid(spec.gaussian_count, rng);
        if (elevation < 0) elevation = 0.0;
    } else if (spec.preset == "checker-wall") {
        scene.gaussians = make_checker_wall(spec.gaussian_count);
        if (elevation < 0) elevation = 55.0;
    } else if (spec.preset == "random") {
        scene.gaussians = make_random(spec.gaussian_count, rng);
        if (elevation < 0) elevation = 0.0;
    } else {
        throw ConfigError("unknown synthetic preset '" + spec.preset + "'");
    }

    const double focal = spec.focal > 0 ? spec.focal : 1.2 * spec.width;
    const double el = elevation * std::numbers::pi / 180.0;
    for (int k = 0; k < spec.camera_count; ++k) {
        const double az = 2.0 * std::numbers::pi * k / spec.camera_count;
        const Vec3 eye(spec.radius * std::cos(el) * std::cos(az), spec.radius * std::cos(el) * std::sin(az),
                       spec.radius * std::sin(el));
        scene.cameras.push_back(Camera::look_at(eye, Vec3::Zero(), Vec3(0, 0, 1), focal, spec.width, spec.height));
    }
    if (!scene.gaussians.empty()) update_max_rates(scene.gaussians, scene.cameras);
    for (std::size_t k = 0; k < scene.cameras.size(); ++k) {
        if (spec.reference_scale == 1.0) {
            scene.reference_images.emplace_back(render_ground_truth(scene, k, 1.0));
        } else {
            scene.reference_images.emplace_back(
                resize_bicubic(render_ground_truth(scene, k, spec.reference_scale), spec.width, spec.height));
        }
    }
    return scene;
}

Image render_ground_truth(const Scene& truth, std::size_t camera, double s, const FilterConfig& filter) {
    RenderRequest req;
    req.camera = truth.cameras.at(camera);
    req.scale_factor = s;
    req.filter = filter;
    req.background = truth.background;
    return render_oracle(truth.gaussians, req).image;
}

std::vector<Gaussian3D> perturb_gaussians(const std::vector<Gaussian3D>& gaussians, std::uint64_t seed,
                                          double magnitude) {
    Rng rng(seed);
    std::vector<Gaussian3D> out = gaussians;
    for (auto& g : out) {
        for (int i = 0; i < 3; ++i) g.position[i] += magnitude * 0.1 * normal(rng);
        for (int i = 0; i < 4; ++i) g.rotation[i] += magnitude * 0.1 * normal(rng);
        for (int i = 0; i < 3; ++i) g.log_scale[i] += magnitude * 0.3 * normal(rng);
        g.opacity_logit += magnitude * 0.5 * normal(rng);
        for (int i = 0; i < 3; ++i) g.color[i] = std::clamp(g.color[i] + magnitude * 0.2 * normal(rng), 0.0, 1.0);
        g.max_rate_valid = false;
    }
    return out;
}

} // namespace arbigs
