// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/filters.hpp"

#include "arbigs/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

namespace arbigs {

void FilterConfig::validate() const {
    if (!(gamma > 0.0)) throw ConfigError("filter gamma must be positive");
    if (!(epsilon > 0.0)) throw ConfigError("filter epsilon must be positive");
}

double compute_max_rate(const Gaussian3D& gaussian, std::span<const Camera> cameras, bool scale_aware) {
    if (cameras.empty()) throw ConfigError("compute_max_rate needs at least one camera");
    double visible_max = 0.0;
    double any_max = 0.0;
    bool seen = false;
    for (const Camera& cam : cameras) {
        const Vec3 p = cam.to_camera(gaussian.position);
        const double depth = std::max(p.z(), kNearPlane);
        const double s = scale_aware ? cam.scale_factor : 1.0;
        const double rate = cam.focal * s / depth;
        any_max = std::max(any_max, rate);
        if (p.z() <= kNearPlane) continue;
        const double u = cam.focal * p.x() / p.z() + cam.principal.x();
        const double v = cam.focal * p.y() / p.z() + cam.principal.y();
        const double half_w = 0.5 * cam.width * kVisibilityMargin;
        const double half_h = 0.5 * cam.height * kVisibilityMargin;
        if (std::abs(u - 0.5 * cam.width) <= half_w && std::abs(v - 0.5 * cam.height) <= half_h) {
            visible_max = std::max(visible_max, rate);
            seen = true;
        }
    }
    return seen ? visible_max : any_max;
}

void update_max_rates(std::span<Gaussian3D> gaussians, std::span<const Camera> cameras) {
    for (auto& g : gaussians) {
        g.max_rate = compute_max_rate(g, cameras, /*scale_aware=*/false);
        g.max_rate_valid = true;
    }
}

Smoothed3D smooth_3d(const Mat3& cov, double rate, const FilterConfig& cfg) {
    const double variance = cfg.gamma / rate;
    const Mat3 dilated = cov + variance * Mat3::Identity();
    const double ratio = std::max(cov.determinant(), 0.0) / dilated.determinant();
    return {dilated, std::sqrt(ratio)};
}

Smoothed3D smooth_3d(const Mat3& rotation, const Vec3& scale, double rate, const FilterConfig& cfg) {
    const double variance = cfg.gamma / rate;
    const Vec3 dilated = scale.array().square() + variance;
    double coeff = 1.0;
    for (int j = 0; j < 3; ++j) coeff *= scale[j] / std::sqrt(dilated[j]);
    return {rotation * dilated.asDiagonal() * rotation.transpose(), coeff};
}

double mip_variance(double s, const FilterConfig& cfg) {
    return cfg.scale_aware_2d ? cfg.epsilon / s : cfg.epsilon;
}

Filtered2DGaussian mip_2d(const Vec2& mean, const Mat2& cov, double s, const FilterConfig& cfg) {
    const double eps = mip_variance(s, cfg);
    Filtered2DGaussian out;
    out.mean = mean;
    out.cov = cov + eps * Mat2::Identity();
    const double det_raw = std::max(cov.determinant(), 0.0);
    out.coeff = std::sqrt(det_raw / out.cov.determinant());
    return out;
}

namespace {

double simpson(double fa, double fm, double fb, double a, double b) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_step(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                     double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = simpson(fa, flm, fm, a, m);
    const double right = simpson(fm, frm, fb, m, b);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    return adaptive_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
           adaptive_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

} // namespace

double integrate_adaptive(const std::function<double(double)>& f, double a, double b, double abs_tol) {
    const double fa = f(a);
    const double fb = f(b);
    const double fm = f(0.5 * (a + b));
    return adaptive_step(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), abs_tol, 50);
}

std::vector<ApproxErrorRow> approx_error_curve(std::span<const double> windows, double sigma_g,
                                               const FilterConfig& cfg) {
    if (!(sigma_g > 0.0)) throw ConfigError("signal standard deviation must be positive");
    const double var_g = sigma_g * sigma_g;
    const auto signal = [var_g](double x) { return std::exp(-x * x / (2.0 * var_g)); };
    const auto model = [var_g](double w, double var_f) { return w * std::sqrt(var_g / (var_g + var_f)); };
    std::vector<ApproxErrorRow> rows;
    rows.reserve(windows.size());
    for (double w : windows) {
        if (!(w > 0.0)) throw ConfigError("window sizes must be positive");
        const double truth = integrate_adaptive(signal, -0.5 * w, 0.5 * w, 1e-10);
        const double fixed = std::abs(truth - model(w, cfg.epsilon)) / truth;
        const double adaptive = std::abs(truth - model(w, cfg.epsilon * w * w)) / truth;
        rows.push_back({w, fixed, adaptive});
    }
    return rows;
}

std::string approx_error_csv(std::span<const ApproxErrorRow> rows) {
    std::string out = "w,err_fixed,err_scale_aware\n";
    char line[128];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%.12e,%.12e,%.12e\n", r.window, r.err_fixed, r.err_scale_aware);
        out += line;
    }
    return out;
}

} // namespace arbigs
