// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/image.hpp"

#include <filesystem>

namespace arbigs {

/// 8-bit RGB PNG. Samples are clamped to [0,1] and rounded on write.
void write_png(const Image& image, const std::filesystem::path& path);
/// Reads 8-bit gray/RGB/RGBA PNGs (alpha dropped) into [0,1] samples.
Image read_png(const std::filesystem::path& path);

/// ASCII P3 with maxval 255, for debugging.
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

} // namespace arbigs
