// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/errors.hpp"
#include "arbigs/parallel.hpp"
#include "arbigs/rasterizer.hpp"
#include "arbigs/synth.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace arbigs;
using namespace arbigs::testing;

namespace {

RenderRequest make_request(int w, int h, double s = 1.0) {
    RenderRequest req;
    req.camera = front_camera(w, h);
    req.scale_factor = s;
    return req;
}

Gaussian3D isotropic(const Vec3& pos, double sigma, double alpha, const Vec3& color) {
    Gaussian3D g;
    g.position = pos;
    g.log_scale = Vec3::Constant(std::log(sigma));
    g.opacity_logit = logit(alpha);
    g.color = color;
    return g;
}

} // namespace

TEST(Project, IsotropicOnAxisMatchesClosedFormAndNumericJacobian) {
    Camera cam = Camera::look_at(Vec3(0, 0, -5), Vec3::Zero(), Vec3(0, -1, 0), 80.0, 64, 64);
    const double sigma = 0.3, depth = 5.0, s = 1.5;
    const Mat3 cov = sigma * sigma * Mat3::Identity();
    const Mat2 projected = projected_covariance(cov, cam, Vec3::Zero(), s);
    const double expected = std::pow(80.0 * s * sigma / depth, 2);
    EXPECT_NEAR(projected(0, 0), expected, 1e-12);
    EXPECT_NEAR(projected(1, 1), expected, 1e-12);
    EXPECT_NEAR(projected(0, 1), 0.0, 1e-12);

    // Numerical Jacobian of the world -> pixel map at an off-axis point.
    const Vec3 p(0.4, -0.3, 0.2);
    const auto pixel = [&](const Vec3& x) {
        const Vec3 t = cam.to_camera(x);
        return Vec2(cam.focal * s * t.x() / t.z(), cam.focal * s * t.y() / t.z());
    };
    Mat23 numeric;
    for (int j = 0; j < 3; ++j) {
        Vec3 e = Vec3::Zero();
        e[j] = 1e-6;
        numeric.col(j) = (pixel(p + e) - pixel(p - e)) / 2e-6;
    }
    const Mat3 aniso = Vec3(0.1, 0.2, 0.05).asDiagonal();
    const Mat2 want = numeric * aniso * numeric.transpose();
    const Mat2 got = projected_covariance(aniso, cam, p, s);
    EXPECT_LT((want - got).cwiseAbs().maxCoeff(), 1e-6 * want.cwiseAbs().maxCoeff());
}

TEST(Project, BehindCameraIsCulled) {
    RenderRequest req = make_request(32, 32);
    Gaussian3D g = isotropic(req.camera.center() - 1.0 * req.camera.optical_axis(), 0.1, 0.5, Vec3::Ones());
    EXPECT_FALSE(project(g, 0, req).has_value());
}

TEST(Project, DoublingScaleDoublesMeanAndQuadruplesCovariance) {
    RenderRequest req = make_request(32, 32, 1.0);
    Gaussian3D g = isotropic(Vec3(0.2, 0.1, 0.3), 0.1, 0.5, Vec3::Ones());
    g.rotation = Vec4(0.9, 0.1, -0.3, 0.2);
    const Mat3 cov = g.covariance();
    const Vec2 pp = req.camera.principal;
    RenderRequest req2 = req;
    req2.scale_factor = 2.0;
    const auto a = project(g, 0, req);
    const auto b = project(g, 0, req2);
    ASSERT_TRUE(a && b);
    EXPECT_LT(((b->mean - 2.0 * pp) - 2.0 * (a->mean - pp)).norm(), 1e-12);
    const Mat2 c1 = projected_covariance(cov, req.camera, g.position, 1.0);
    const Mat2 c2 = projected_covariance(cov, req.camera, g.position, 2.0);
    EXPECT_LT((c2 - 4.0 * c1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RenderForward, EmptySceneIsBackground) {
    RenderRequest req = make_request(20, 12, 1.5);
    req.background = Vec3(0.2, 0.4, 0.6);
    const RenderOutput out = render_forward({}, req);
    EXPECT_EQ(out.image.width, 30);
    EXPECT_EQ(out.image.height, 18);
    for (int y = 0; y < out.image.height; ++y)
        for (int x = 0; x < out.image.width; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.image.at(x, y, c), req.background[c]);
    for (double a : out.alpha) EXPECT_EQ(a, 0.0);
}

TEST(RenderForward, SingleOnAxisSplatMatchesHandEvaluation) {
    // Odd width puts the principal point on a pixel centre.
    const double f = 50.0, d = 4.0, sigma = 0.15, alpha = 0.7;
    RenderRequest req;
    req.camera = Camera::look_at(Vec3(0, 0, -d), Vec3::Zero(), Vec3(0, -1, 0), f, 33, 33);
    req.filter = FilterConfig{};
    std::vector<Gaussian3D> gs = {isotropic(Vec3::Zero(), sigma, alpha, Vec3::Ones())};
    update_max_rates(gs, std::vector<Camera>{req.camera});
    EXPECT_DOUBLE_EQ(gs[0].max_rate, f / d);

    const double var3 = req.filter.gamma / (f / d);
    const double coeff3 = std::pow(sigma * sigma / (sigma * sigma + var3), 1.5);
    const double pv = (f / d) * (f / d) * (sigma * sigma + var3);
    const double coeff2 = pv / (pv + req.filter.epsilon);
    const double expected = std::min(alpha * coeff3 * coeff2, kMaxSplatWeight);

    const RenderOutput out = render_forward(gs, req);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.image.at(16, 16, c), expected, 1e-12);
    EXPECT_NEAR(out.alpha[16 * 33 + 16], expected, 1e-12);
}

TEST(RenderForward, MatchesOracleOnRandomScenes) {
    std::mt19937_64 rng(11);
    const double scales[] = {1.0, 1.5, 2.0, 3.5};
    for (int trial = 0; trial < 8; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 100);
        auto gs = random_gaussians(n, rng());
        RenderRequest req = make_request(16 + static_cast<int>(rng() % 48), 16 + static_cast<int>(rng() % 48),
                                         scales[trial % 4]);
        req.background = Vec3(0.1, 0.3, 0.2);
        if (trial % 2 == 0) update_max_rates(gs, std::vector<Camera>{req.camera});
        const RenderOutput tiled = render_forward(gs, req);
        const RenderOutput oracle = render_oracle(gs, req);
        EXPECT_LE(max_abs_diff(tiled.image, oracle.image), 1e-5) << "trial " << trial;
    }
}

TEST(RenderOracle, InvariantToInputPermutation) {
    auto gs = random_gaussians(40, 5);
    RenderRequest req = make_request(24, 24, 1.5);
    const Image base = render_oracle(gs, req).image;
    std::mt19937_64 rng(3);
    std::shuffle(gs.begin(), gs.end(), rng);
    EXPECT_LE(max_abs_diff(base, render_oracle(gs, req).image), 1e-12);
}

TEST(RenderForward, AlphaAndColorsStayInRange) {
    auto gs = random_gaussians(80, 9, 2.0, 6.0);
    RenderRequest req = make_request(40, 40, 2.0);
    req.background = Vec3(1, 1, 1);
    const RenderOutput out = render_forward(gs, req);
    for (double a : out.alpha) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
    for (double v : out.image.pixels) {
        EXPECT_GE(v, -1e-12);
        EXPECT_LE(v, 1.0 + 1e-12);
    }
}

TEST(RenderForward, DeterministicAcrossThreadCounts) {
    auto gs = random_gaussians(60, 21);
    RenderRequest req = make_request(48, 40, 1.5);
    const Image weights = random_image(72, 60, 4, -1, 1);
    set_num_threads(1);
    ForwardState s1;
    const Image a = render_forward(gs, req, &s1).image;
    const auto ga = render_backward(gs, req, s1, weights);
    set_num_threads(4);
    ForwardState s4;
    const Image b = render_forward(gs, req, &s4).image;
    const auto gb = render_backward(gs, req, s4, weights);
    set_num_threads(0);
    EXPECT_EQ(a, b);
    for (std::size_t i = 0; i < gs.size(); ++i) {
        EXPECT_EQ(ga[i].position, gb[i].position);
        EXPECT_EQ(ga[i].rotation, gb[i].rotation);
        EXPECT_EQ(ga[i].log_scale, gb[i].log_scale);
        EXPECT_EQ(ga[i].opacity_logit, gb[i].opacity_logit);
        EXPECT_EQ(ga[i].color, gb[i].color);
    }
}

TEST(RenderBackward, ZeroUpstreamGivesZeroGradients) {
    auto gs = random_gaussians(10, 2);
    RenderRequest req = make_request(32, 32);
    ForwardState st;
    render_forward(gs, req, &st);
    const auto grads = render_backward(gs, req, st, Image(32, 32));
    for (const auto& g : grads) {
        EXPECT_TRUE(g.position.isZero(0));
        EXPECT_TRUE(g.rotation.isZero(0));
        EXPECT_TRUE(g.log_scale.isZero(0));
        EXPECT_EQ(g.opacity_logit, 0.0);
        EXPECT_TRUE(g.color.isZero(0));
    }
}

TEST(RenderBackward, MatchesCentralFiniteDifferences) {
    for (double s : {1.0, 2.5}) {
        auto gs = random_gaussians(5, 17, -1.0, 0.5, -2.0, -1.3);
        RenderRequest req = make_request(32, 32, s);
        req.background = Vec3(0.2, 0.1, 0.3);
        update_max_rates(gs, std::vector<Camera>{req.camera});
        const auto [w, h] = req.output_size();
        const Image weights = random_image(w, h, 99, -1, 1);
        const FdReport r = check_render_gradients(gs, req, weights);
        EXPECT_GT(r.checked, 60);
        EXPECT_LE(r.worst_relative, 1e-3) << r.worst_where;
    }
}

TEST(RenderBackward, CulledGaussianHasZeroGradient) {
    auto gs = random_gaussians(3, 8);
    RenderRequest req = make_request(32, 32);
    gs[1].position = req.camera.center() - 2.0 * req.camera.optical_axis();
    ForwardState st;
    render_forward(gs, req, &st);
    const auto grads = render_backward(gs, req, st, random_image(32, 32, 1, -1, 1));
    EXPECT_TRUE(grads[1].position.isZero(0));
    EXPECT_TRUE(grads[1].color.isZero(0));
}

TEST(RenderBackward, RigidTranslationLeavesColorGradientUnchanged) {
    auto gs = random_gaussians(6, 31, -1.0, 1.0);
    RenderRequest req = make_request(32, 32, 1.5);
    update_max_rates(gs, std::vector<Camera>{req.camera});
    const Image weights = random_image(48, 48, 12, -1, 1);
    ForwardState st;
    const Image before = render_forward(gs, req, &st).image;
    const auto g0 = render_backward(gs, req, st, weights);

    const Vec3 shift(0.7, -1.2, 2.5);
    auto moved = gs;
    for (auto& g : moved) g.position += shift;
    RenderRequest req2 = req;
    req2.camera.translation -= req2.camera.rotation * shift;
    ForwardState st2;
    const Image after = render_forward(moved, req2, &st2).image;
    const auto g1 = render_backward(moved, req2, st2, weights);
    EXPECT_LE(max_abs_diff(before, after), 1e-9);
    for (std::size_t i = 0; i < gs.size(); ++i) EXPECT_LE((g0[i].color - g1[i].color).norm(), 1e-9);
}

TEST(RenderBackward, MismatchedStateThrows) {
    auto gs = random_gaussians(3, 1);
    RenderRequest req = make_request(16, 16);
    ForwardState st;
    render_forward(gs, req, &st);
    EXPECT_THROW(render_backward(gs, req, st, Image(8, 8)), DimensionError);
    RenderRequest other = req;
    other.scale_factor = 2.0;
    EXPECT_THROW(render_backward(gs, other, st, Image(32, 32)), DimensionError);
}
