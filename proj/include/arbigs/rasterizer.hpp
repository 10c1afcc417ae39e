// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/filters.hpp"
#include "arbigs/image.hpp"
#include "arbigs/scene.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace arbigs {

// Compositing constants (front-to-back, 3DGS conventions).
inline constexpr double kMaxSplatWeight = 0.99;
inline constexpr double kMinTransmittance = 1e-4;
/// Per-pixel splat weights below this are skipped. It also bounds the
/// binning footprint, so tiles never drop a weight the oracle would keep.
inline constexpr double kMinSplatWeight = 1e-10;
/// Frustum expansion used for culling projected means.
inline constexpr double kCullFrustum = 1.3;

struct RenderRequest {
    Camera camera;
    double scale_factor = 1.0;
    FilterConfig filter;
    Vec3 background = Vec3::Zero();
    int tile_size = 16;

    std::pair<int, int> output_size() const { return camera.output_size(scale_factor); }
};

struct RenderOutput {
    Image image;
    std::vector<double> alpha;
    std::vector<std::uint32_t> contributors;
    double milliseconds = 0.0;
};

/// A splat after projection and both filters, target-resolution pixels.
struct ProjectedSplat {
    std::uint32_t index = 0;
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    Mat2 conic = Mat2::Identity();
    /// opacity * coeff3d * coeff2d.
    double amplitude = 0.0;
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    /// Mahalanobis radius of the support, and its pixel bounding box.
    double support = 0.0;
    int x_min = 0, x_max = -1, y_min = 0, y_max = -1;
};

/// Sampling rate used by the 3D filter for this request: the cached unit-scale
/// rate (or, when the cache is invalid, f / d of the request camera), times s
/// when the 3D filter is scale-aware.
double effective_rate(const Gaussian3D& gaussian, const RenderRequest& request);

/// Projects one Gaussian through the 3D smoothing filter, the pinhole model
/// with focal f*s and the 2D filter. Returns nullopt when the Gaussian is
/// culled (behind the near plane or centred outside the expanded frustum).
std::optional<ProjectedSplat> project(const Gaussian3D& gaussian, std::uint32_t index, const RenderRequest& request);

/// Projected covariance J W Sigma W^T J^T before any filtering.
Mat2 projected_covariance(const Mat3& cov_world, const Camera& camera, const Vec3& world_mean, double s);

/// Retained forward state needed by render_backward.
struct ForwardState {
    int width = 0;
    int height = 0;
    int tile_size = 16;
    int tiles_x = 0;
    int tiles_y = 0;
    std::size_t gaussian_count = 0;
    std::vector<ProjectedSplat> splats;
    /// Per tile, indices into splats sorted front to back.
    std::vector<std::vector<std::uint32_t>> tile_lists;
    std::vector<double> final_transmittance;
    /// Per pixel, number of tile-list entries walked before stopping.
    std::vector<std::uint32_t> last_entry;
};

/// Tiled front-to-back compositing. Deterministic for any thread count.
RenderOutput render_forward(std::span<const Gaussian3D> gaussians, const RenderRequest& request,
                            ForwardState* state = nullptr);

/// Reference compositor: every Gaussian at every pixel after one global
/// (depth, index) sort, no tiles and no weight cutoff. Uses the same
/// per-splat clamp and transmittance stopping rule as render_forward.
RenderOutput render_oracle(std::span<const Gaussian3D> gaussians, const RenderRequest& request);

struct GaussianGrad {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4::Zero();
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Zero();
};

/// Analytic gradients of sum(dL/dImage * image) w.r.t. every Gaussian
/// parameter. The cached sampling rate is treated as a constant. Throws
/// DimensionError if state or dL/dImage do not match the request.
std::vector<GaussianGrad> render_backward(std::span<const Gaussian3D> gaussians, const RenderRequest& request,
                                          const ForwardState& state, const Image& grad_image);

} // namespace arbigs
