// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/rasterizer.hpp"

#include "arbigs/errors.hpp"
#include "arbigs/parallel.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace arbigs {

namespace {

struct ProjectionFrame {
    Vec3 cam_point;
    double fs;
    double cx;
    double cy;
};

ProjectionFrame frame_of(const Camera& cam, const Vec3& world, double s) {
    return {cam.to_camera(world), cam.focal * s, cam.principal.x() * s, cam.principal.y() * s};
}

Mat23 projection_jacobian(const Vec3& t, double fs) {
    const double inv_z = 1.0 / t.z();
    Mat23 j;
    j << fs * inv_z, 0.0, -fs * t.x() * inv_z * inv_z, 0.0, fs * inv_z, -fs * t.y() * inv_z * inv_z;
    return j;
}

bool depth_less(const ProjectedSplat& a, const ProjectedSplat& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
}

/// Un-clamped weight of a splat at a pixel centre, with its Gaussian factor.
struct PixelWeight {
    double gauss;
    double raw;
    Vec2 offset;
};

inline PixelWeight weight_at(const ProjectedSplat& sp, double px, double py) {
    const Vec2 d(px - sp.mean.x(), py - sp.mean.y());
    const double power =
        -0.5 * (sp.conic(0, 0) * d.x() * d.x() + 2.0 * sp.conic(0, 1) * d.x() * d.y() + sp.conic(1, 1) * d.y() * d.y());
    const double g = std::exp(power);
    return {g, sp.amplitude * g, d};
}

struct PixelResult {
    Vec3 color;
    double transmittance;
    std::uint32_t walked;
    std::uint32_t used;
};

/// Front-to-back compositing over an ordered splat list.
template <typename Order>
PixelResult composite(const Order& order, std::size_t count, const std::vector<ProjectedSplat>& splats, double px,
                      double py, double cutoff) {
    Vec3 color = Vec3::Zero();
    double t = 1.0;
    std::uint32_t used = 0;
    std::size_t k = 0;
    for (; k < count; ++k) {
        const ProjectedSplat& sp = splats[order[k]];
        const PixelWeight pw = weight_at(sp, px, py);
        if (pw.raw < cutoff) continue;
        const double w = std::min(pw.raw, kMaxSplatWeight);
        const double next_t = t * (1.0 - w);
        if (next_t < kMinTransmittance) break;
        color += sp.color * (w * t);
        t = next_t;
        ++used;
    }
    return {color, t, static_cast<std::uint32_t>(k), used};
}

std::vector<ProjectedSplat> project_all(std::span<const Gaussian3D> gaussians, const RenderRequest& request) {
    std::vector<std::optional<ProjectedSplat>> slots(gaussians.size());
    parallel_for(gaussians.size(), [&](std::size_t i) {
        slots[i] = project(gaussians[i], static_cast<std::uint32_t>(i), request);
    });
    std::vector<ProjectedSplat> out;
    out.reserve(gaussians.size());
    for (auto& s : slots) {
        if (s) out.push_back(*s);
    }
    return out;
}

void check_request(const RenderRequest& request) {
    request.camera.validate();
    request.filter.validate();
    if (!(request.scale_factor >= 1.0)) throw ConfigError("render scale factor must be >= 1");
    if (request.tile_size < 1) throw ConfigError("tile size must be positive");
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

} // namespace

double effective_rate(const Gaussian3D& gaussian, const RenderRequest& request) {
    const double base = gaussian.max_rate_valid && gaussian.max_rate > 0.0
                            ? gaussian.max_rate
                            : request.camera.focal / request.camera.depth_of(gaussian.position);
    return request.filter.scale_aware_3d ? base * request.scale_factor : base;
}

Mat2 projected_covariance(const Mat3& cov_world, const Camera& camera, const Vec3& world_mean, double s) {
    const ProjectionFrame f = frame_of(camera, world_mean, s);
    const Mat23 j = projection_jacobian(f.cam_point, f.fs);
    const Mat23 jw = j * camera.rotation;
    return jw * cov_world * jw.transpose();
}

std::optional<ProjectedSplat> project(const Gaussian3D& g, std::uint32_t index, const RenderRequest& request) {
    const Camera& cam = request.camera;
    const double s = request.scale_factor;
    const ProjectionFrame f = frame_of(cam, g.position, s);
    const Vec3& t = f.cam_point;
    if (t.z() <= kNearPlane) return std::nullopt;

    const auto [width, height] = request.output_size();
    const Vec2 mean(f.fs * t.x() / t.z() + f.cx, f.fs * t.y() / t.z() + f.cy);
    if (std::abs(mean.x() - 0.5 * width) > kCullFrustum * 0.5 * width ||
        std::abs(mean.y() - 0.5 * height) > kCullFrustum * 0.5 * height) {
        return std::nullopt;
    }

    const Smoothed3D smoothed = smooth_3d(g.rotation_matrix(), g.scale(), effective_rate(g, request), request.filter);
    const Mat23 jw = projection_jacobian(t, f.fs) * cam.rotation;
    const Mat2 cov2d = jw * smoothed.cov * jw.transpose();
    const Filtered2DGaussian filtered = mip_2d(mean, cov2d, s, request.filter);

    ProjectedSplat sp;
    sp.index = index;
    sp.mean = mean;
    sp.cov = filtered.cov;
    sp.conic = filtered.cov.inverse();
    sp.amplitude = g.opacity() * smoothed.coeff * filtered.coeff;
    sp.depth = t.z();
    sp.color = g.color;
    if (sp.amplitude >= kMinSplatWeight) {
        sp.support = std::sqrt(2.0 * std::log(sp.amplitude / kMinSplatWeight));
        // Pixel centres sit at integer + 0.5; slack keeps the box conservative.
        const double ext_x = sp.support * std::sqrt(sp.cov(0, 0)) * (1.0 + 1e-9) + 1e-9;
        const double ext_y = sp.support * std::sqrt(sp.cov(1, 1)) * (1.0 + 1e-9) + 1e-9;
        sp.x_min = std::max(0, static_cast<int>(std::ceil(mean.x() - ext_x - 0.5)));
        sp.x_max = std::min(width - 1, static_cast<int>(std::floor(mean.x() + ext_x - 0.5)));
        sp.y_min = std::max(0, static_cast<int>(std::ceil(mean.y() - ext_y - 0.5)));
        sp.y_max = std::min(height - 1, static_cast<int>(std::floor(mean.y() + ext_y - 0.5)));
    }
    return sp;
}

RenderOutput render_forward(std::span<const Gaussian3D> gaussians, const RenderRequest& request,
                            ForwardState* state) {
    const auto start = std::chrono::steady_clock::now();
    check_request(request);
    const auto [width, height] = request.output_size();
    const int ts = request.tile_size;

    ForwardState local;
    ForwardState& st = state ? *state : local;
    st = ForwardState{};
    st.width = width;
    st.height = height;
    st.tile_size = ts;
    st.tiles_x = (width + ts - 1) / ts;
    st.tiles_y = (height + ts - 1) / ts;
    st.gaussian_count = gaussians.size();
    st.splats = project_all(gaussians, request);
    st.tile_lists.assign(static_cast<std::size_t>(st.tiles_x) * st.tiles_y, {});

    for (std::uint32_t k = 0; k < st.splats.size(); ++k) {
        const ProjectedSplat& sp = st.splats[k];
        if (sp.x_max < sp.x_min || sp.y_max < sp.y_min) continue;
        for (int ty = sp.y_min / ts; ty <= sp.y_max / ts; ++ty)
            for (int tx = sp.x_min / ts; tx <= sp.x_max / ts; ++tx)
                st.tile_lists[static_cast<std::size_t>(ty) * st.tiles_x + tx].push_back(k);
    }

    RenderOutput out;
    out.image = Image(width, height);
    const std::size_t pixel_count = static_cast<std::size_t>(width) * height;
    out.alpha.assign(pixel_count, 0.0);
    out.contributors.assign(pixel_count, 0);
    st.final_transmittance.assign(pixel_count, 1.0);
    st.last_entry.assign(pixel_count, 0);

    parallel_for(st.tile_lists.size(), [&](std::size_t tile) {
        auto& list = st.tile_lists[tile];
        std::sort(list.begin(), list.end(),
                  [&](std::uint32_t a, std::uint32_t b) { return depth_less(st.splats[a], st.splats[b]); });
        const int tx = static_cast<int>(tile % st.tiles_x);
        const int ty = static_cast<int>(tile / st.tiles_x);
        for (int y = ty * ts; y < std::min(height, (ty + 1) * ts); ++y) {
            for (int x = tx * ts; x < std::min(width, (tx + 1) * ts); ++x) {
                const PixelResult r = composite(list, list.size(), st.splats, x + 0.5, y + 0.5, kMinSplatWeight);
                const std::size_t p = static_cast<std::size_t>(y) * width + x;
                const Vec3 c = r.color + r.transmittance * request.background;
                for (int ch = 0; ch < 3; ++ch) out.image.at(x, y, ch) = c[ch];
                out.alpha[p] = 1.0 - r.transmittance;
                out.contributors[p] = r.used;
                st.final_transmittance[p] = r.transmittance;
                st.last_entry[p] = r.walked;
            }
        }
    });
    out.milliseconds = elapsed_ms(start);
    return out;
}

RenderOutput render_oracle(std::span<const Gaussian3D> gaussians, const RenderRequest& request) {
    const auto start = std::chrono::steady_clock::now();
    check_request(request);
    const auto [width, height] = request.output_size();
    std::vector<ProjectedSplat> splats;
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        if (auto sp = project(gaussians[i], static_cast<std::uint32_t>(i), request)) splats.push_back(*sp);
    }
    std::sort(splats.begin(), splats.end(), depth_less);
    std::vector<std::uint32_t> order(splats.size());
    std::iota(order.begin(), order.end(), 0u);

    RenderOutput out;
    out.image = Image(width, height);
    out.alpha.assign(static_cast<std::size_t>(width) * height, 0.0);
    out.contributors.assign(out.alpha.size(), 0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const PixelResult r = composite(order, order.size(), splats, x + 0.5, y + 0.5, 0.0);
            const Vec3 c = r.color + r.transmittance * request.background;
            for (int ch = 0; ch < 3; ++ch) out.image.at(x, y, ch) = c[ch];
            const std::size_t p = static_cast<std::size_t>(y) * width + x;
            out.alpha[p] = 1.0 - r.transmittance;
            out.contributors[p] = r.used;
        }
    }
    out.milliseconds = elapsed_ms(start);
    return out;
}

namespace {

/// Gradients w.r.t. the projected splat quantities.
struct SplatGrad2D {
    double amplitude = 0.0;
    Vec2 mean = Vec2::Zero();
    Mat2 conic = Mat2::Zero();
    Vec3 color = Vec3::Zero();

    SplatGrad2D& operator+=(const SplatGrad2D& o) {
        amplitude += o.amplitude;
        mean += o.mean;
        conic += o.conic;
        color += o.color;
        return *this;
    }
};

GaussianGrad backprop_gaussian(const Gaussian3D& g, const RenderRequest& request, const SplatGrad2D& d) {
    const Camera& cam = request.camera;
    const double s = request.scale_factor;
    const ProjectionFrame f = frame_of(cam, g.position, s);
    const Vec3& t = f.cam_point;
    const double fs = f.fs;

    const Vec4 q_unit = g.unit_rotation();
    const Mat3 rot = quaternion_to_matrix(q_unit);
    const Vec3 scale = g.scale();
    const double var3 = request.filter.gamma / effective_rate(g, request);
    const Vec3 diag = scale.array().square() + var3;
    double coeff3 = 1.0;
    for (int j = 0; j < 3; ++j) coeff3 *= scale[j] / std::sqrt(diag[j]);
    const Mat3 cov3 = rot * diag.asDiagonal() * rot.transpose();

    const Mat23 jac = projection_jacobian(t, fs);
    const Mat3 cov_cam = cam.rotation * cov3 * cam.rotation.transpose();
    const Mat2 cov2d = jac * cov_cam * jac.transpose();
    const double eps = mip_variance(s, request.filter);
    const Mat2 cov = cov2d + eps * Mat2::Identity();
    const Mat2 conic = cov.inverse();
    const double det2d = cov2d.determinant();
    const double coeff2 = std::sqrt(std::max(det2d, 0.0) / cov.determinant());
    const double alpha = g.opacity();

    GaussianGrad out;
    out.color = d.color;

    // amplitude = alpha * coeff3 * coeff2
    const double d_alpha = d.amplitude * coeff3 * coeff2;
    const double d_coeff3 = d.amplitude * alpha * coeff2;
    const double d_coeff2 = d.amplitude * alpha * coeff3;
    out.opacity_logit = d_alpha * alpha * (1.0 - alpha);

    // conic = cov^-1, cov = cov2d + eps I
    Mat2 d_cov2d = -conic * d.conic * conic;
    if (det2d > 0.0) {
        Mat2 adj;
        adj << cov2d(1, 1), -cov2d(0, 1), -cov2d(1, 0), cov2d(0, 0);
        d_cov2d += d_coeff2 * 0.5 * coeff2 * (adj / det2d - conic);
    }

    // cov2d = J M J^T with M = W cov3 W^T
    const Mat3 d_cov_cam = jac.transpose() * d_cov2d * jac;
    const Mat23 d_jac = 2.0 * d_cov2d * jac * cov_cam;
    const Mat3 d_cov3 = cam.rotation.transpose() * d_cov_cam * cam.rotation;

    // cov3 = R diag R^T
    const Mat3 d_rot = 2.0 * d_cov3 * rot * diag.asDiagonal();
    const Mat3 rt_g_r = rot.transpose() * d_cov3 * rot;
    for (int j = 0; j < 3; ++j) {
        const double s2 = scale[j] * scale[j];
        out.log_scale[j] = 2.0 * s2 * rt_g_r(j, j) + d_coeff3 * coeff3 * var3 / diag[j];
    }
    const Vec4 d_q_unit = quaternion_matrix_vjp(q_unit, d_rot);
    out.rotation = (d_q_unit - q_unit * q_unit.dot(d_q_unit)) / g.rotation.norm();

    // mean and Jacobian both depend on the camera-space position t
    const double inv_z = 1.0 / t.z();
    const double inv_z2 = inv_z * inv_z;
    Vec3 d_t = Vec3::Zero();
    d_t.x() += d.mean.x() * fs * inv_z;
    d_t.y() += d.mean.y() * fs * inv_z;
    d_t.z() += -(d.mean.x() * fs * t.x() + d.mean.y() * fs * t.y()) * inv_z2;
    d_t.x() += d_jac(0, 2) * (-fs * inv_z2);
    d_t.y() += d_jac(1, 2) * (-fs * inv_z2);
    d_t.z() += (d_jac(0, 0) + d_jac(1, 1)) * (-fs * inv_z2) + d_jac(0, 2) * (2.0 * fs * t.x() * inv_z2 * inv_z) +
               d_jac(1, 2) * (2.0 * fs * t.y() * inv_z2 * inv_z);
    out.position = cam.rotation.transpose() * d_t;
    return out;
}

} // namespace

std::vector<GaussianGrad> render_backward(std::span<const Gaussian3D> gaussians, const RenderRequest& request,
                                          const ForwardState& st, const Image& grad_image) {
    const auto [width, height] = request.output_size();
    if (st.width != width || st.height != height || st.gaussian_count != gaussians.size() ||
        st.tile_size != request.tile_size) {
        throw DimensionError("forward state does not match the backward request");
    }
    if (grad_image.width != width || grad_image.height != height) {
        throw DimensionError("dL/dImage is " + std::to_string(grad_image.width) + "x" +
                             std::to_string(grad_image.height) + ", render is " + std::to_string(width) + "x" +
                             std::to_string(height));
    }
    const int ts = st.tile_size;
    std::vector<std::vector<SplatGrad2D>> tile_grads(st.tile_lists.size());

    parallel_for(st.tile_lists.size(), [&](std::size_t tile) {
        const auto& list = st.tile_lists[tile];
        auto& acc = tile_grads[tile];
        acc.assign(list.size(), SplatGrad2D{});
        const int tx = static_cast<int>(tile % st.tiles_x);
        const int ty = static_cast<int>(tile / st.tiles_x);
        for (int y = ty * ts; y < std::min(height, (ty + 1) * ts); ++y) {
            for (int x = tx * ts; x < std::min(width, (tx + 1) * ts); ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * width + x;
                const Vec3 d_pix(grad_image.at(x, y, 0), grad_image.at(x, y, 1), grad_image.at(x, y, 2));
                if (d_pix.isZero(0.0)) continue;
                double t = st.final_transmittance[p];
                Vec3 behind = t * request.background;
                for (std::size_t k = st.last_entry[p]; k-- > 0;) {
                    const ProjectedSplat& sp = st.splats[list[k]];
                    const PixelWeight pw = weight_at(sp, x + 0.5, y + 0.5);
                    if (pw.raw < kMinSplatWeight) continue;
                    const bool clamped = pw.raw > kMaxSplatWeight;
                    const double w = clamped ? kMaxSplatWeight : pw.raw;
                    const double t_before = t / (1.0 - w);
                    SplatGrad2D& a = acc[k];
                    a.color += d_pix * (w * t_before);
                    const double d_w = d_pix.dot(sp.color * t_before - behind / (1.0 - w));
                    behind += sp.color * (w * t_before);
                    t = t_before;
                    if (clamped) continue;
                    a.amplitude += d_w * pw.gauss;
                    const double d_power = d_w * pw.raw;
                    a.mean += d_power * (sp.conic * pw.offset);
                    a.conic += (-0.5 * d_power) * (pw.offset * pw.offset.transpose());
                }
            }
        }
    });

    // Fixed tile order keeps the reduction independent of the thread count.
    std::vector<SplatGrad2D> splat_grads(st.splats.size());
    for (std::size_t tile = 0; tile < st.tile_lists.size(); ++tile) {
        const auto& list = st.tile_lists[tile];
        for (std::size_t k = 0; k < list.size(); ++k) splat_grads[list[k]] += tile_grads[tile][k];
    }

    std::vector<GaussianGrad> grads(gaussians.size());
    parallel_for(st.splats.size(), [&](std::size_t k) {
        const ProjectedSplat& sp = st.splats[k];
        grads[sp.index] = backprop_gaussian(gaussians[sp.index], request, splat_grads[k]);
    });
    return grads;
}

} // namespace arbigs
