// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/math.hpp"
#include "arbigs/scene.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace arbigs {

/// Anti-aliasing filter parameters.
///
/// gamma scales the 3D smoothing variance gamma / r; epsilon is the 2D
/// filter variance in target-resolution pixel^2. Turning off either
/// scale-aware switch falls back to the fixed-scale behaviour: the 3D
/// filter uses the unit-scale sampling rate, the 2D filter uses epsilon
/// regardless of s.
struct FilterConfig {
    double gamma = 0.01;
    double epsilon = 0.1;
    bool scale_aware_3d = true;
    bool scale_aware_2d = true;

    void validate() const;
    static FilterConfig vanilla() { return {0.01, 0.1, false, false}; }
};

/// Projected splat after the 2D filter, in target-resolution pixels.
struct Filtered2DGaussian {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    double coeff = 1.0;
    double depth = 0.0;
};

/// Margin applied to the image rectangle when testing camera visibility.
inline constexpr double kVisibilityMargin = 1.15;

/// Maximum sampling rate over cameras that see the Gaussian: max_k f_k s_k / d_k.
/// With scale_aware false every s_k is taken as 1. When no camera sees the
/// Gaussian the visibility mask is dropped. Throws ConfigError on an empty
/// camera list.
double compute_max_rate(const Gaussian3D& gaussian, std::span<const Camera> cameras, bool scale_aware = true);

/// Refreshes the unit-scale rate cache of every Gaussian.
void update_max_rates(std::span<Gaussian3D> gaussians, std::span<const Camera> cameras);

struct Smoothed3D {
    Mat3 cov;
    double coeff;
};

/// Dilates Sigma by (gamma / rate) * I and returns the amplitude
/// compensation sqrt(|Sigma| / |Sigma + (gamma / rate) I|).
Smoothed3D smooth_3d(const Mat3& cov, double rate, const FilterConfig& cfg);
/// Same filter for Sigma = R diag(scale^2) R^T; the coefficient is computed
/// per axis as prod_j scale_j / sqrt(scale_j^2 + gamma / rate), which stays
/// accurate for nearly flat Gaussians.
Smoothed3D smooth_3d(const Mat3& rotation, const Vec3& scale, double rate, const FilterConfig& cfg);

/// Variance of the 2D filter at output scale s.
double mip_variance(double s, const FilterConfig& cfg);

/// Adds the 2D filter to a projected covariance. Degenerate (PSD) input is
/// allowed; its determinant is clamped at zero, giving coeff 0.
Filtered2DGaussian mip_2d(const Vec2& mean, const Mat2& cov, double s, const FilterConfig& cfg);

struct ApproxErrorRow {
    double window;
    double err_fixed;
    double err_scale_aware;
};

/// Relative 1D error of approximating box integration of a Gaussian signal
/// (std sigma_g) over a window of width w by the filtered-amplitude model
/// w * sqrt(sigma_g^2 / (sigma_g^2 + sigma_f^2)). The fixed variant uses
/// sigma_f^2 = epsilon, the scale-aware one epsilon * w^2. Box integrals come
/// from adaptive Simpson quadrature (absolute tolerance 1e-10).
std::vector<ApproxErrorRow> approx_error_curve(std::span<const double> windows, double sigma_g,
                                               const FilterConfig& cfg);

/// CSV with header "w,err_fixed,err_scale_aware" and %.12e fields.
std::string approx_error_csv(std::span<const ApproxErrorRow> rows);

/// Adaptive Simpson integration of f over [a, b].
double integrate_adaptive(const std::function<double(double)>& f, double a, double b, double abs_tol);

} // namespace arbigs
