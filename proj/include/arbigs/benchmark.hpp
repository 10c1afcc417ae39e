// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/rasterizer.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace arbigs {

struct BenchmarkRow {
    int width = 0;
    int height = 0;
    std::string config; ///< "vanilla" or "scale-aware"
    double median_ms = 0.0;
    double fps = 0.0;
    /// Max abs pixel difference between the two configs at this resolution.
    double pixel_diff = 0.0;
    int repetitions = 0;
};

/// Forward-render timings per resolution for the vanilla and scale-aware
/// filter configs at s = 1. The camera is re-targeted to each resolution
/// keeping its pose and field of view. At least 3 untimed warm-up frames
/// run before the timed ones.
std::vector<BenchmarkRow> run_benchmark(std::span<const Gaussian3D> gaussians, const Camera& camera,
                                        const std::vector<std::pair<int, int>>& resolutions, int repetitions,
                                        const Vec3& background = Vec3::Zero(), int warmup = 3);

std::string benchmark_json(std::span<const BenchmarkRow> rows, std::size_t gaussian_count);

/// Same pose and horizontal field of view at a new base resolution.
Camera retarget_camera(const Camera& camera, int width, int height);

} // namespace arbigs
