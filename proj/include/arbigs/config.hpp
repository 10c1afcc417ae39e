// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace arbigs {

/// Everything a `train` run needs besides the scene data. Defaults are
/// listed in docs/formats.md.
struct RunConfig {
    std::string scene;          ///< scene JSON path
    std::string output_dir = "out";
    std::string provider_cmd;   ///< empty: built-in mock provider
    bool use_prior = true;      ///< false: null provider (no LDS, no texture)
    double provider_timeout_s = 120.0;
    int checkpoint_interval = 500; ///< 0: only at stage ends
    std::vector<double> eval_scales = {1.0, 2.0, 3.5, 4.0, 5.7};
    TrainConfig train;

    /// Throws ConfigError.
    void validate() const;
};

/// Parses a JSON config. Every key is optional; unknown keys at any level
/// are rejected with ConfigError naming the dotted key path.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Full config with every field spelled out.
std::string run_config_to_json(const RunConfig& cfg);

} // namespace arbigs
