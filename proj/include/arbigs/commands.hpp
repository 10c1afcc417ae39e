// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Library side of the `arbigs` command-line tool. Each command writes its
// outputs under a directory and returns what it wrote.

#include "arbigs/benchmark.hpp"
#include "arbigs/config.hpp"
#include "arbigs/scene_io.hpp"
#include "arbigs/synth.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace arbigs {

/// Default approximation-error sweep: w = 0.5, 0.55, ..., 4.0.
std::vector<double> default_filter_windows();

/// Gaussians from a PLY or a training checkpoint (detected by magic).
std::vector<Gaussian3D> load_model(const std::filesystem::path& path);

/// Synthetic scene: scene.json, scene.ply (perturbed start), scene_truth.ply
/// and per-view LR PNGs. `perturb` is the start-point noise magnitude.
std::filesystem::path cmd_synth(const SynthSpec& spec, const std::filesystem::path& out, double perturb = 0.05);

struct TrainSummary {
    std::vector<StageMetrics> metrics;
    std::filesystem::path checkpoint;
    std::filesystem::path model;
};

/// Trains per config. Writes config.json (echo), checkpoints, metrics.csv,
/// per-stage renders of the held-out view, model.ply and eval.csv/json for
/// the held-out view at the configured eval scales. Progress goes to
/// `log`. `resume` continues from a checkpoint written by the same config.
TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log, const std::filesystem::path& resume = {});

/// One view at scale s as a PNG.
Image cmd_render(const std::vector<Gaussian3D>& gaussians, const Scene& scene, std::size_t camera, double s,
                 const FilterConfig& filter, const std::filesystem::path& out_png);

struct EvalRow {
    std::size_t camera = 0;
    double scale = 1.0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::string reference; ///< "oracle" or "image"
};

/// Metrics per (camera, scale) against the ground-truth oracle when the
/// scene has truth Gaussians, else against the reference image downsampled
/// from the render (s = 1 only compares directly).
std::vector<EvalRow> cmd_eval(const std::vector<Gaussian3D>& gaussians, const SceneFile& scene,
                              const std::vector<std::size_t>& cameras, const std::vector<double>& scales,
                              const FilterConfig& filter);
void write_eval(const std::vector<EvalRow>& rows, const std::filesystem::path& dir);

/// Approximation-error table as CSV text.
std::string cmd_analyze_filter(const std::vector<double>& windows, double epsilon, double sigma_g);

std::string cmd_bench(const std::vector<Gaussian3D>& gaussians, const Scene& scene,
                      const std::vector<std::pair<int, int>>& resolutions, int repetitions);

} // namespace arbigs
