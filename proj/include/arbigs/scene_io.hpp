// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/scene.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace arbigs {

inline constexpr int kSceneFormatVersion = 1;

/// A scene file plus the optional ground-truth Gaussians synthetic scenes
/// carry for metrics.
struct SceneFile {
    Scene scene;
    std::optional<std::vector<Gaussian3D>> ground_truth;
};

/// Reads a scene JSON. Relative PLY and image paths resolve against the
/// JSON file's directory; images may be PNG or PPM (by extension).
/// Throws FormatError on schema problems, IoError on missing files.
SceneFile load_scene(const std::filesystem::path& path);

/// Writes `<dir>/<stem>.json`, `<dir>/<stem>.ply`, an optional
/// `<dir>/<stem>_truth.ply` and `<dir>/images/view_###.png` for every
/// reference image. PLYs are written at double precision.
std::filesystem::path save_scene(const SceneFile& file, const std::filesystem::path& dir,
                                 const std::string& stem = "scene");

} // namespace arbigs
