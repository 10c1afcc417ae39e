// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/filters.hpp"
#include "arbigs/losses.hpp"
#include "arbigs/prior.hpp"
#include "arbigs/rasterizer.hpp"
#include "arbigs/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace arbigs {

struct StageSpec {
    double max_scale = 2.0;
    int iterations = 2000;
    bool operator==(const StageSpec&) const = default;
};

struct ProgressiveSchedule {
    std::vector<StageSpec> stages = {{2.0, 2000}, {4.0, 2000}, {8.0, 2000}};

    /// Throws ConfigError unless max scales strictly increase from >= 1 and
    /// iteration counts are non-negative.
    void validate() const;
    /// {s^1, ..., s^t} for 0-based stage t.
    std::vector<double> pool(std::size_t stage) const;
    int total_iterations() const;
};

struct LearningRates {
    double position = 1.6e-4;
    /// Position rate at the end of training, relative to the start.
    double position_final_factor = 0.01;
    double rotation = 1e-3;
    double scale = 5e-3;
    double opacity = 5e-2;
    double color = 2.5e-3;
};

/// Adam over the flattened per-Gaussian parameters
/// (position 3, rotation 4, log_scale 3, opacity 1, color 3).
struct AdamState {
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-15;

    std::uint64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    void resize(std::size_t gaussian_count);
    /// One update with the given per-group rates. Gradients are laid out
    /// like the parameters.
    void apply(std::vector<Gaussian3D>& gaussians, const std::vector<GaussianGrad>& grads, const LearningRates& lr,
               double position_rate);
    bool operator==(const AdamState&) const = default;
};

/// Learning rate of the position group at a global iteration.
double position_rate(const LearningRates& lr, int iteration, int total);

struct DensifyConfig {
    bool enabled = false;
    int interval = 100;
    /// Mean positional gradient norm above which a Gaussian is densified.
    double grad_threshold = 2e-4;
    /// Largest scale at or below which a densified Gaussian is cloned rather
    /// than split.
    double clone_max_scale = 0.05;
    double prune_opacity = 0.005;
};

inline constexpr double kSplitScaleDivisor = 1.6;

/// Clone small high-gradient Gaussians, split large ones into two children
/// with scales divided by 1.6 and positions drawn inside the parent's 3-sigma
/// ellipsoid, and drop those with opacity below prune_opacity. `origin`
/// receives, per output Gaussian, its source index (-1 for split children).
std::vector<Gaussian3D> densify_prune(const std::vector<Gaussian3D>& gaussians, const std::vector<double>& mean_grad,
                                      const DensifyConfig& cfg, std::mt19937_64& rng,
                                      std::vector<int>* origin = nullptr);

struct TrainConfig {
    ProgressiveSchedule schedule;
    LossWeights weights;
    FilterConfig filter;
    PriorConfig prior;
    LearningRates lr;
    DensifyConfig densify;
    /// LR fitting iterations at s = 1 before stage 1.
    int warmup_iterations = 500;
    /// Rate caches are refreshed at stage starts and every this many iterations.
    int rate_refresh_interval = 100;
    /// Render the structure-loss target from the current Gaussians instead of
    /// the frozen previous-stage snapshot.
    bool literal_previous_render = false;
    double orthogonal_min_angle = 60.0;
    /// Camera left out of training for metrics; -1 picks the last one.
    int heldout_camera = -1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct StageMetrics {
    int stage = 0;
    double scale = 1.0;
    double psnr = 0.0;
    double ssim = 0.0;
    bool operator==(const StageMetrics&) const = default;
};

struct IterationLog {
    int stage = -1; ///< -1 during warm-up
    int iteration = 0;
    std::size_t camera = 0;
    double scale = 1.0;
    double loss_lds = 0.0;
    double loss_tex = 0.0;
    double loss_str = 0.0;
    double total = 0.0;
};

/// Analytic ground truth for metrics: image of a camera at a scale.
using GroundTruthFn = std::function<Image(std::size_t camera, double scale)>;

/// Progressive super-resolution optimizer.
///
/// The scene must carry LR references at s = 1 for its training cameras.
/// A null provider disables the LDS and texture terms.
class Trainer {
public:
    Trainer(Scene scene, TrainConfig cfg, PriorProvider* provider = nullptr, GroundTruthFn ground_truth = {});

    bool done() const;
    /// One warm-up or stage iteration. Throws TrainingError on a non-finite
    /// loss or parameter.
    IterationLog step();
    /// Runs to completion; `on_iteration` sees every log entry.
    void run(const std::function<void(const IterationLog&)>& on_iteration = {});
    /// Runs at most `count` iterations.
    void run_for(int count);

    const Scene& scene() const { return scene_; }
    const std::vector<Gaussian3D>& gaussians() const { return scene_.gaussians; }
    const std::vector<StageMetrics>& metrics() const { return metrics_; }
    const TrainConfig& config() const { return cfg_; }
    std::size_t heldout_camera() const { return heldout_; }
    const std::vector<std::size_t>& training_cameras() const { return train_views_; }
    const AdamState& adam() const { return adam_; }
    int global_iteration() const { return global_iter_; }
    /// Current stage (0-based; -1 during warm-up) and iteration inside it.
    int stage() const { return stage_; }
    int stage_iteration() const { return stage_iter_; }
    /// Provider invocations for texture references.
    std::size_t references_generated() const { return refs_.generated(); }

    /// Renders the current Gaussians.
    Image render(std::size_t camera, double scale) const;
    /// Metrics of the current Gaussians on the held-out camera at every scale
    /// of the given stage pool. Empty without a ground-truth callback.
    std::vector<StageMetrics> evaluate(int stage) const;

    void save_checkpoint(const std::filesystem::path& path) const;
    std::string serialize_checkpoint() const;
    /// Restores optimizer state, Gaussians and cursor into a trainer built
    /// with the same scene cameras and config. Throws CheckpointError.
    void load_checkpoint(const std::filesystem::path& path);
    void restore_checkpoint(const std::string& bytes);

private:
    IterationLog warmup_step();
    IterationLog stage_step();
    void begin_stage_if_needed();
    void refresh_rates();
    void finish_stage();
    void apply_gradients(const std::vector<GaussianGrad>& grads, const IterationLog& log);
    void maybe_densify(const std::vector<GaussianGrad>& grads);
    RenderRequest request(std::size_t camera, double scale) const;
    std::uint64_t reference_seed(std::size_t camera, int stage, int width, int height) const;

    Scene scene_;
    TrainConfig cfg_;
    PriorProvider* provider_;
    GroundTruthFn ground_truth_;
    std::vector<std::size_t> train_views_;
    std::size_t heldout_ = 0;

    AdamState adam_;
    std::mt19937_64 rng_;
    int global_iter_ = 0;
    int stage_ = -1;
    int stage_iter_ = 0;
    bool stage_started_ = false;
    std::vector<Gaussian3D> snapshot_;
    std::vector<StageMetrics> metrics_;
    std::vector<double> grad_accum_;
    std::vector<int> grad_count_;
    ReferenceCache refs_;
};

/// Checkpoint file magic.
inline constexpr char kCheckpointMagic[5] = {'A', 'S', 'G', 'S', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Gaussians stored in checkpoint bytes, without a trainer. Verifies the
/// magic, version and checksum; throws CheckpointError.
std::vector<Gaussian3D> checkpoint_gaussians(const std::string& bytes);

} // namespace arbigs
