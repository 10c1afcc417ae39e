// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/errors.hpp"
#include "arbigs/image_io.hpp"
#include "arbigs/ply.hpp"
#include "arbigs/rasterizer.hpp"
#include "arbigs/synth.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <Eigen/Cholesky>
#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace arbigs;
using namespace arbigs::testing;

namespace {

std::string ply_header(int n, const std::vector<std::string>& props) {
    std::string h = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(n) + "\n";
    for (const auto& p : props) h += "property float " + p + "\n";
    return h + "end_header\n";
}

const std::vector<std::string> kProps = {"x",       "y",       "z",       "f_dc_0", "f_dc_1",
                                         "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2",
                                         "rot_0",   "rot_1",   "rot_2",   "rot_3"};

void append_floats(std::string& out, const std::vector<float>& values) {
    const std::size_t at = out.size();
    out.resize(at + values.size() * 4);
    std::memcpy(out.data() + at, values.data(), values.size() * 4);
}

Camera axis_camera(const Vec3& eye) {
    return Camera::look_at(eye, Vec3::Zero(), std::abs(eye.normalized().z()) > 0.9 ? Vec3(0, 1, 0) : Vec3(0, 0, 1),
                           100.0, 64, 64);
}

} // namespace

TEST(Gaussian, CovarianceIsPositiveDefinite) {
    auto gs = random_gaussians(1000, 4, -1, 3, -6.0, 1.0);
    for (const auto& g : gs) {
        Eigen::LLT<Mat3> llt(g.covariance());
        EXPECT_EQ(llt.info(), Eigen::Success);
    }
}

TEST(Camera, ValidateRejectsBadIntrinsics) {
    Camera cam = front_camera(16, 16);
    EXPECT_NO_THROW(cam.validate());
    Camera bad = cam;
    bad.focal = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cam;
    bad.scale_factor = 0.5;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cam;
    bad.rotation(0, 0) += 1e-3;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Camera, OutputSizeRounds) {
    Camera cam = front_camera(30, 17);
    EXPECT_EQ(cam.output_size(1.0), std::make_pair(30, 17));
    EXPECT_EQ(cam.output_size(1.5), std::make_pair(45, 26));
    EXPECT_EQ(cam.output_size(3.5), std::make_pair(105, 60));
}

TEST(Camera, LookAtPlacesTargetOnAxis) {
    Camera cam = Camera::look_at(Vec3(1, 2, 3), Vec3(-1, 0, 0.5), Vec3(0, 0, 1), 50, 40, 30);
    const Vec3 t = cam.to_camera(Vec3(-1, 0, 0.5));
    EXPECT_NEAR(t.x(), 0.0, 1e-12);
    EXPECT_NEAR(t.y(), 0.0, 1e-12);
    EXPECT_GT(t.z(), 0.0);
    EXPECT_LT((cam.center() - Vec3(1, 2, 3)).norm(), 1e-12);
    EXPECT_NEAR(cam.depth_of(cam.center() - cam.optical_axis()), kNearPlane, 0.0);
}

TEST(Ply, ZeroCoefficientsGiveMidGrayAndQuaternionIsNormalized) {
    std::string bytes = ply_header(1, kProps);
    append_floats(bytes, {0, 0, 0, 0, 0, 0, 0.3f, -1, -2, -3, 2, 0, 0, 0});
    const auto gs = parse_ply(bytes);
    ASSERT_EQ(gs.size(), 1u);
    EXPECT_EQ(gs[0].color, Vec3::Constant(0.5));
    EXPECT_EQ(gs[0].rotation, Vec4(1, 0, 0, 0));
    EXPECT_DOUBLE_EQ(gs[0].opacity_logit, static_cast<double>(0.3f));
    EXPECT_DOUBLE_EQ(gs[0].log_scale[2], -3.0);
}

TEST(Ply, RoundTripWithinTolerance) {
    const auto gs = random_gaussians(100, 77);
    const auto path = std::filesystem::temp_directory_path() / "arbigs_roundtrip.ply";
    save_ply(gs, path);
    const auto back = load_ply(path);
    std::filesystem::remove(path);
    ASSERT_EQ(back.size(), gs.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < gs.size(); ++i) {
        Gaussian3D a = gs[i], b = back[i];
        for (int k = 0; k < kParamsPerGaussian; ++k) worst = std::max(worst, std::abs(param_ref(a, k) - param_ref(b, k)));
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(Ply, Float64RoundTripIsExact) {
    auto gs = random_gaussians(10, 5);
    for (auto& g : gs) g.rotation /= g.rotation.norm();
    const auto back = parse_ply(serialize_ply(gs, PlyPrecision::Float64));
    for (std::size_t i = 0; i < gs.size(); ++i) {
        EXPECT_LT((back[i].color - gs[i].color).norm(), 1e-15);
        EXPECT_EQ(back[i].position, gs[i].position);
    }
}

TEST(Ply, RecordSizes) {
    const std::string empty = serialize_ply({});
    EXPECT_TRUE(parse_ply(empty).empty());
    const std::string one = serialize_ply(random_gaussians(1, 1));
    EXPECT_EQ(one.size() - empty.size(), 56u);
}

TEST(Ply, MissingPropertyIsNamed) {
    std::vector<std::string> props = kProps;
    props.erase(props.begin() + 6);
    std::string bytes = ply_header(1, props);
    append_floats(bytes, std::vector<float>(13, 0.0f));
    try {
        parse_ply(bytes);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("opacity"), std::string::npos);
    }
}

TEST(Ply, NonFiniteValueNamesElement) {
    std::string bytes = ply_header(3, kProps);
    for (int i = 0; i < 3; ++i) {
        std::vector<float> v = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0};
        if (i == 2) v[4] = std::numeric_limits<float>::quiet_NaN();
        append_floats(bytes, v);
    }
    try {
        parse_ply(bytes);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
    }
}

TEST(Ply, RejectsAsciiAndTruncation) {
    EXPECT_THROW(parse_ply("ply\nformat ascii 1.0\nelement vertex 0\nend_header\n"), FormatError);
    std::string bytes = ply_header(2, kProps);
    append_floats(bytes, std::vector<float>(14, 0.0f));
    EXPECT_THROW(parse_ply(bytes), FormatError);
}

TEST(ImageIo, PngAndPpmRoundTripAt8Bits) {
    Image img = random_image(7, 5, 3);
    for (double& v : img.pixels) v = std::round(v * 255.0) / 255.0;
    const auto dir = std::filesystem::temp_directory_path();
    write_png(img, dir / "arbigs_io.png");
    write_ppm(img, dir / "arbigs_io.ppm");
    EXPECT_LE(max_abs_diff(read_png(dir / "arbigs_io.png"), img), 1e-12);
    EXPECT_LE(max_abs_diff(read_ppm(dir / "arbigs_io.ppm"), img), 1e-12);
    std::filesystem::remove(dir / "arbigs_io.png");
    std::filesystem::remove(dir / "arbigs_io.ppm");
    EXPECT_THROW(read_png(dir / "arbigs_missing.png"), IoError);
}

TEST(Scene, ValidateChecksReferenceDimensions) {
    Scene scene;
    scene.cameras.push_back(front_camera(8, 6));
    scene.reference_images.emplace_back(Image(8, 6));
    EXPECT_NO_THROW(scene.validate());
    scene.reference_images[0] = Image(6, 8);
    EXPECT_THROW(scene.validate(), DimensionError);
}

TEST(Synth, DeterministicForFixedSeed) {
    SynthSpec spec;
    spec.preset = "grid";
    spec.seed = 7;
    spec.gaussian_count = 16;
    spec.width = spec.height = 24;
    const Scene a = synth_scene(spec);
    const Scene b = synth_scene(spec);
    EXPECT_EQ(a.gaussians, b.gaussians);
    EXPECT_EQ(a.cameras, b.cameras);
    ASSERT_EQ(a.reference_images.size(), b.reference_images.size());
    for (std::size_t i = 0; i < a.reference_images.size(); ++i) EXPECT_EQ(*a.reference_images[i], *b.reference_images[i]);
}

TEST(Synth, EmptyCheckerWallRendersBackground) {
    SynthSpec spec;
    spec.preset = "checker-wall";
    spec.gaussian_count = 0;
    spec.width = spec.height = 16;
    spec.background = Vec3(0.25, 0.5, 0.75);
    const Scene scene = synth_scene(spec);
    EXPECT_TRUE(scene.gaussians.empty());
    const Image img = render_ground_truth(scene, 0, 2.0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_EQ(img.at(x, y, c), spec.background[c]);
}

TEST(Synth, RandomPresetOracleMatchesTiledRenderer) {
    SynthSpec spec;
    spec.preset = "random";
    spec.seed = 3;
    spec.gaussian_count = 100;
    spec.width = spec.height = 64;
    const Scene scene = synth_scene(spec);
    RenderRequest req;
    req.camera = scene.cameras[0];
    EXPECT_LE(max_abs_diff(render_forward(scene.gaussians, req).image, render_ground_truth(scene, 0, 1.0)), 1e-5);
}

TEST(Synth, ReferencesAreDownsampledHighScaleRenders) {
    SynthSpec spec;
    spec.preset = "checker-wall";
    spec.gaussian_count = 16;
    spec.camera_count = 2;
    spec.width = spec.height = 12;
    const Scene direct = synth_scene(spec);
    EXPECT_EQ(*direct.reference_images[1], render_ground_truth(direct, 1, 1.0));
    spec.reference_scale = 4.0;
    const Scene degraded = synth_scene(spec);
    EXPECT_EQ(degraded.gaussians, direct.gaussians);
    EXPECT_LE(max_abs_diff(*degraded.reference_images[1], dense_resample(render_ground_truth(direct, 1, 4.0), 12, 12)),
              1e-12);
    spec.reference_scale = 0.5;
    EXPECT_THROW(synth_scene(spec), ConfigError);
}

TEST(Synth, UnknownPresetThrows) {
    SynthSpec spec;
    spec.preset = "teapot";
    EXPECT_THROW(synth_scene(spec), ConfigError);
}

TEST(OrthogonalViews, PerpendicularPairBothSelected) {
    std::vector<Camera> cams = {axis_camera(Vec3(4, 0, 0)), axis_camera(Vec3(0, 4, 0))};
    EXPECT_EQ(select_orthogonal_views(cams), (std::vector<std::size_t>{0, 1}));
    EXPECT_TRUE(cams[0].is_orthogonal && cams[1].is_orthogonal);
}

TEST(OrthogonalViews, IdenticalAxesKeepFirst) {
    std::vector<Camera> cams = {axis_camera(Vec3(4, 0, 0)), axis_camera(Vec3(8, 0, 0))};
    EXPECT_EQ(select_orthogonal_views(cams), (std::vector<std::size_t>{0}));
    EXPECT_FALSE(cams[1].is_orthogonal);
}

TEST(OrthogonalViews, RingOfEightSelectsEveryOther) {
    std::vector<Camera> cams;
    for (int k = 0; k < 8; ++k) {
        const double a = k * std::numbers::pi / 4;
        cams.push_back(axis_camera(Vec3(4 * std::cos(a), 4 * std::sin(a), 0)));
    }
    const auto first = select_orthogonal_views(cams, 60.0);
    EXPECT_EQ(first, (std::vector<std::size_t>{0, 2, 4, 6}));
    EXPECT_EQ(select_orthogonal_views(cams, 60.0), first);
    for (std::size_t i : first)
        for (std::size_t j : first) {
            if (i == j) continue;
            const double c = cams[i].optical_axis().dot(cams[j].optical_axis());
            EXPECT_GE(std::acos(std::clamp(c, -1.0, 1.0)) * 180 / std::numbers::pi, 60.0 - 1e-9);
        }
}

TEST(OrthogonalViews, SingleCamera) {
    std::vector<Camera> cams = {axis_camera(Vec3(0, 0, 4))};
    EXPECT_EQ(select_orthogonal_views(cams), (std::vector<std::size_t>{0}));
}
