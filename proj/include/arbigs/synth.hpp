// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/filters.hpp"
#include "arbigs/scene.hpp"

#include <cstdint>
#include <string>

namespace arbigs {

/// Parameters of a procedurally generated scene.
///
/// Presets:
///   grid          Gaussians on a regular lattice in [-1, 1]^3
///   checker-wall  flat tiles on the z = 0 plane with alternating colors
///   random        uniformly scattered anisotropic Gaussians
/// Cameras sit on a ring of the given radius around the z axis, raised by
/// elevation_deg, all looking at the origin. focal <= 0 selects 1.2 * width.
struct SynthSpec {
    std::string preset = "grid";
    std::uint64_t seed = 0;
    int gaussian_count = 16;
    int camera_count = 8;
    double radius = 4.0;
    double elevation_deg = -1.0; ///< negative: preset default
    int width = 64;
    int height = 64;
    double focal = 0.0;
    /// LR references are the oracle render at this scale, bicubic-downsampled
    /// to the base size. 1 renders them directly.
    double reference_scale = 1.0;
    Vec3 background = Vec3::Zero();
};

/// Deterministic for a fixed spec. The returned scene holds the
/// ground-truth Gaussians (with unit-scale rate caches), the camera ring and
/// one LR reference image per camera (see reference_scale). Throws
/// ConfigError for an unknown preset or a reference_scale below 1.
Scene synth_scene(const SynthSpec& spec);

/// Analytic ground truth of a synthetic scene at scale s: the oracle
/// compositor over the ground-truth Gaussians.
Image render_ground_truth(const Scene& truth, std::size_t camera, double s, const FilterConfig& filter = {});

/// Copy of the Gaussians with seeded noise on every parameter, used as a
/// starting point for reconstruction runs.
std::vector<Gaussian3D> perturb_gaussians(const std::vector<Gaussian3D>& gaussians, std::uint64_t seed,
                                          double magnitude);

} // namespace arbigs
