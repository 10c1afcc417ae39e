// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/scene.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace arbigs {

/// Zeroth-order spherical-harmonic basis constant used by the community
/// PLY layout: color = 0.5 + kShC0 * f_dc.
inline constexpr double kShC0 = 0.28209479177387814;

enum class PlyPrecision { Float32, Float64 };

/// Reads a binary little-endian splat PLY. Required vertex properties:
/// x y z f_dc_0 f_dc_1 f_dc_2 opacity scale_0 scale_1 scale_2 rot_0..rot_3,
/// stored as float or double. Other vertex properties are skipped.
std::vector<Gaussian3D> load_ply(const std::filesystem::path& path);
std::vector<Gaussian3D> parse_ply(const std::string& bytes);

/// Writes the 14 required properties in the order above; 56 bytes per vertex
/// at Float32, 112 at Float64.
void save_ply(const std::vector<Gaussian3D>& gaussians, const std::filesystem::path& path,
              PlyPrecision precision = PlyPrecision::Float32);
std::string serialize_ply(const std::vector<Gaussian3D>& gaussians, PlyPrecision precision = PlyPrecision::Float32);

} // namespace arbigs
