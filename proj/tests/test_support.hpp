// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared fixtures for the unit and acceptance suites.

#include "arbigs/rasterizer.hpp"
#include "arbigs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace arbigs::testing {

inline Image random_image(int w, int h, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Image img(w, h);
    for (double& v : img.pixels) v = dist(rng);
    return img;
}

inline double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
    return m;
}

/// Small random scene in front of a camera at distance 4 on the -z side.
inline std::vector<Gaussian3D> random_gaussians(int n, std::uint64_t seed, double opacity_lo = -1.0,
                                                double opacity_hi = 3.0, double log_scale_lo = -2.5,
                                                double log_scale_hi = -1.2) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> nrm(0.0, 1.0);
    std::vector<Gaussian3D> out(n);
    for (auto& g : out) {
        g.position = Vec3(0.8 * u(rng), 0.8 * u(rng), 0.8 * u(rng));
        Vec4 q(nrm(rng), nrm(rng), nrm(rng), nrm(rng));
        g.rotation = q / q.norm();
        for (int j = 0; j < 3; ++j) {
            g.log_scale[j] = log_scale_lo + (log_scale_hi - log_scale_lo) * 0.5 * (u(rng) + 1.0);
        }
        g.opacity_logit = opacity_lo + (opacity_hi - opacity_lo) * 0.5 * (u(rng) + 1.0);
        g.color = Vec3(0.5 * (u(rng) + 1), 0.5 * (u(rng) + 1), 0.5 * (u(rng) + 1));
    }
    return out;
}

inline Camera front_camera(int w, int h, double focal = 0.0) {
    return Camera::look_at(Vec3(0.3, -0.2, -4.0), Vec3::Zero(), Vec3(0, -1, 0), focal > 0 ? focal : 1.1 * w, w, h);
}

/// Flat parameter access for finite-difference sweeps.
inline double& param_ref(Gaussian3D& g, int k) {
    if (k < 3) return g.position[k];
    if (k < 7) return g.rotation[k - 3];
    if (k < 10) return g.log_scale[k - 7];
    if (k == 10) return g.opacity_logit;
    return g.color[k - 11];
}

inline double grad_ref(const GaussianGrad& g, int k) {
    if (k < 3) return g.position[k];
    if (k < 7) return g.rotation[k - 3];
    if (k < 10) return g.log_scale[k - 7];
    if (k == 10) return g.opacity_logit;
    return g.color[k - 11];
}

inline const char* param_class(int k) {
    if (k < 3) return "position";
    if (k < 7) return "rotation";
    if (k < 10) return "log_scale";
    if (k == 10) return "opacity";
    return "color";
}

inline double weighted_sum(const Image& img, const Image& weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) s += img.pixels[i] * weights.pixels[i];
    return s;
}

struct FdReport {
    double worst_relative = 0.0;
    int checked = 0;
    std::string worst_where;
    /// Worst relative error per parameter class index (0..4).
    double per_class[5] = {0, 0, 0, 0, 0};
};

inline int class_index(int k) {
    if (k < 3) return 0;
    if (k < 7) return 1;
    if (k < 10) return 2;
    if (k == 10) return 3;
    return 4;
}

/// Central differences of L = sum(weights * render) against render_backward.
inline FdReport check_render_gradients(std::vector<Gaussian3D> gaussians, const RenderRequest& req,
                                       const Image& weights, double h = 1e-4, double min_magnitude = 1e-6) {
    ForwardState state;
    render_forward(gaussians, req, &state);
    const auto grads = render_backward(gaussians, req, state, weights);
    FdReport report;
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        for (int k = 0; k < kParamsPerGaussian; ++k) {
            double& p = param_ref(gaussians[i], k);
            const double saved = p;
            p = saved + h;
            const double up = weighted_sum(render_forward(gaussians, req).image, weights);
            p = saved - h;
            const double down = weighted_sum(render_forward(gaussians, req).image, weights);
            p = saved;
            const double fd = (up - down) / (2 * h);
            const double an = grad_ref(grads[i], k);
            if (std::abs(an) <= min_magnitude) continue;
            const double rel = std::abs(an - fd) / std::max(std::abs(an), std::abs(fd));
            ++report.checked;
            report.per_class[class_index(k)] = std::max(report.per_class[class_index(k)], rel);
            if (rel > report.worst_relative) {
                report.worst_relative = rel;
                report.worst_where = "gaussian " + std::to_string(i) + " " + param_class(k) + "[" +
                                     std::to_string(k) + "] analytic=" + std::to_string(an) +
                                     " fd=" + std::to_string(fd);
            }
        }
    }
    return report;
}

} // namespace arbigs::testing
