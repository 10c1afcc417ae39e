// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/benchmark.hpp"

#include "arbigs/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace arbigs {

Camera retarget_camera(const Camera& camera, int width, int height) {
    if (width < 1 || height < 1) throw ConfigError("benchmark resolution must be at least 1x1");
    Camera c = camera;
    const double k = static_cast<double>(width) / camera.width;
    c.focal = camera.focal * k;
    c.principal = Vec2(camera.principal[0] * k, camera.principal[1] * height / camera.height);
    c.width = width;
    c.height = height;
    c.scale_factor = 1.0;
    return c;
}

std::vector<BenchmarkRow> run_benchmark(std::span<const Gaussian3D> gaussians, const Camera& camera,
                                        const std::vector<std::pair<int, int>>& resolutions, int repetitions,
                                        const Vec3& background, int warmup) {
    if (repetitions < 1) throw ConfigError("benchmark needs at least one repetition");
    warmup = std::max(warmup, 3);
    std::vector<BenchmarkRow> rows;
    for (const auto& [w, h] : resolutions) {
        RenderRequest req;
        req.camera = retarget_camera(camera, w, h);
        req.background = background;
        Image images[2];
        BenchmarkRow pair[2];
        const FilterConfig configs[2] = {FilterConfig::vanilla(), FilterConfig{}};
        const char* names[2] = {"vanilla", "scale-aware"};
        for (int c = 0; c < 2; ++c) {
            req.filter = configs[c];
            for (int i = 0; i < warmup; ++i) images[c] = render_forward(gaussians, req).image;
            std::vector<double> ms;
            for (int i = 0; i < repetitions; ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                images[c] = render_forward(gaussians, req).image;
                ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
            }
            std::sort(ms.begin(), ms.end());
            const double median = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
            pair[c] = {w, h, names[c], median, median > 0.0 ? 1000.0 / median : 0.0, 0.0, repetitions};
        }
        double diff = 0.0;
        for (std::size_t i = 0; i < images[0].size(); ++i) {
            diff = std::max(diff, std::abs(images[0].pixels[i] - images[1].pixels[i]));
        }
        for (auto& r : pair) {
            r.pixel_diff = diff;
            rows.push_back(r);
        }
    }
    return rows;
}

std::string benchmark_json(std::span<const BenchmarkRow> rows, std::size_t gaussian_count) {
    nlohmann::json j;
    j["gaussians"] = gaussian_count;
    j["scale_factor"] = 1.0;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        j["rows"].push_back({{"width", r.width},
                             {"height", r.height},
                             {"config", r.config},
                             {"median_ms", r.median_ms},
                             {"fps", r.fps},
                             {"pixel_diff", r.pixel_diff},
                             {"repetitions", r.repetitions}});
    }
    return j.dump(2) + "\n";
}

} // namespace arbigs
