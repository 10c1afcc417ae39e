// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/trainer.hpp"

#include "arbigs/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace arbigs {

void ProgressiveSchedule::validate() const {
    if (stages.empty()) throw ConfigError("schedule needs at least one stage");
    double prev = 1.0;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const StageSpec& s = stages[i];
        if (!(s.max_scale >= 1.0) || !std::isfinite(s.max_scale)) {
            throw ConfigError("stage " + std::to_string(i + 1) + " max scale must be >= 1");
        }
        if (i > 0 && !(s.max_scale > prev)) {
            throw ConfigError("stage max scales must strictly increase (stage " + std::to_string(i + 1) + ")");
        }
        if (s.iterations < 0) throw ConfigError("stage " + std::to_string(i + 1) + " has negative iterations");
        prev = s.max_scale;
    }
}

std::vector<double> ProgressiveSchedule::pool(std::size_t stage) const {
    std::vector<double> out;
    for (std::size_t i = 0; i <= stage && i < stages.size(); ++i) out.push_back(stages[i].max_scale);
    return out;
}

int ProgressiveSchedule::total_iterations() const {
    int n = 0;
    for (const auto& s : stages) n += s.iterations;
    return n;
}

void TrainConfig::validate() const {
    schedule.validate();
    weights.validate();
    filter.validate();
    prior.validate();
    if (warmup_iterations < 0) throw ConfigError("warm-up iterations must be non-negative");
    if (rate_refresh_interval < 1) throw ConfigError("rate refresh interval must be positive");
    if (densify.enabled && densify.interval < 1) throw ConfigError("densify interval must be positive");
    if (!(orthogonal_min_angle > 0.0 && orthogonal_min_angle <= 180.0)) {
        throw ConfigError("orthogonal min angle must lie in (0, 180]");
    }
}

double position_rate(const LearningRates& lr, int iteration, int total) {
    if (total <= 1) return lr.position;
    const double t = std::clamp(static_cast<double>(iteration) / (total - 1), 0.0, 1.0);
    return lr.position * std::pow(lr.position_final_factor, t);
}

void AdamState::resize(std::size_t gaussian_count) {
    m.assign(gaussian_count * kParamsPerGaussian, 0.0);
    v.assign(gaussian_count * kParamsPerGaussian, 0.0);
}

void AdamState::apply(std::vector<Gaussian3D>& gaussians, const std::vector<GaussianGrad>& grads,
                      const LearningRates& lr, double pos_rate) {
    if (grads.size() != gaussians.size() || m.size() != gaussians.size() * kParamsPerGaussian) {
        throw DimensionError("Adam state does not match the Gaussian count");
    }
    ++step;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        Gaussian3D& g = gaussians[i];
        const GaussianGrad& d = grads[i];
        double* params[kParamsPerGaussian] = {&g.position[0],  &g.position[1],  &g.position[2],  &g.rotation[0],
                                              &g.rotation[1],  &g.rotation[2],  &g.rotation[3],  &g.log_scale[0],
                                              &g.log_scale[1], &g.log_scale[2], &g.opacity_logit, &g.color[0],
                                              &g.color[1],     &g.color[2]};
        const double grad[kParamsPerGaussian] = {d.position[0],  d.position[1],  d.position[2],  d.rotation[0],
                                                 d.rotation[1],  d.rotation[2],  d.rotation[3],  d.log_scale[0],
                                                 d.log_scale[1], d.log_scale[2], d.opacity_logit, d.color[0],
                                                 d.color[1],     d.color[2]};
        for (int k = 0; k < kParamsPerGaussian; ++k) {
            const double rate = k < 3 ? pos_rate : k < 7 ? lr.rotation : k < 10 ? lr.scale : k == 10 ? lr.opacity : lr.color;
            const std::size_t at = i * kParamsPerGaussian + k;
            m[at] = kBeta1 * m[at] + (1.0 - kBeta1) * grad[k];
            v[at] = kBeta2 * v[at] + (1.0 - kBeta2) * grad[k] * grad[k];
            *params[k] -= rate * (m[at] / c1) / (std::sqrt(v[at] / c2) + kEps);
        }
    }
}

namespace {

bool finite(const Gaussian3D& g) {
    return g.position.allFinite() && g.rotation.allFinite() && g.log_scale.allFinite() &&
           std::isfinite(g.opacity_logit) && g.color.allFinite();
}

bool finite(const GaussianGrad& g) {
    return g.position.allFinite() && g.rotation.allFinite() && g.log_scale.allFinite() &&
           std::isfinite(g.opacity_logit) && g.color.allFinite();
}

void add_scaled(Image& into, const Image& g, double k) {
    for (std::size_t i = 0; i < into.size(); ++i) into.pixels[i] += k * g.pixels[i];
}

std::string where(const IterationLog& log) {
    std::ostringstream os;
    os << (log.stage < 0 ? std::string("warm-up") : "stage " + std::to_string(log.stage + 1)) << " iteration "
       << log.iteration << " (camera " << log.camera << ", scale " << log.scale << ")";
    return os.str();
}

} // namespace

Trainer::Trainer(Scene scene, TrainConfig cfg, PriorProvider* provider, GroundTruthFn ground_truth)
    : scene_(std::move(scene)), cfg_(std::move(cfg)), provider_(provider), ground_truth_(std::move(ground_truth)),
      rng_(cfg_.seed) {
    cfg_.validate();
    scene_.validate();
    if (scene_.cameras.empty()) throw ConfigError("training needs at least one camera");
    if (cfg_.heldout_camera >= static_cast<int>(scene_.cameras.size())) {
        throw ConfigError("held-out camera index " + std::to_string(cfg_.heldout_camera) + " is out of range");
    }
    heldout_ = cfg_.heldout_camera >= 0 ? static_cast<std::size_t>(cfg_.heldout_camera)
               : scene_.cameras.size() > 1 ? scene_.cameras.size() - 1
                                           : scene_.cameras.size();
    for (std::size_t k = 0; k < scene_.cameras.size(); ++k) {
        if (k == heldout_) continue;
        if (k < scene_.reference_images.size() && scene_.reference_images[k]) train_views_.push_back(k);
    }
    if (train_views_.empty()) throw ConfigError("no training camera has an LR reference image");

    std::vector<Camera> train_cams;
    for (std::size_t k : train_views_) train_cams.push_back(scene_.cameras[k]);
    select_orthogonal_views(train_cams, cfg_.orthogonal_min_angle);
    for (auto& cam : scene_.cameras) cam.is_orthogonal = false;
    for (std::size_t i = 0; i < train_views_.size(); ++i) {
        scene_.cameras[train_views_[i]].is_orthogonal = train_cams[i].is_orthogonal;
    }

    adam_.resize(scene_.gaussians.size());
    grad_accum_.assign(scene_.gaussians.size(), 0.0);
    grad_count_.assign(scene_.gaussians.size(), 0);
    stage_ = cfg_.warmup_iterations > 0 ? -1 : 0;
    snapshot_ = scene_.gaussians;
}

bool Trainer::done() const {
    if (stage_ < 0) return false;
    const auto& stages = cfg_.schedule.stages;
    for (std::size_t t = static_cast<std::size_t>(stage_); t < stages.size(); ++t) {
        const int left = stages[t].iterations - (t == static_cast<std::size_t>(stage_) ? stage_iter_ : 0);
        if (left > 0) return false;
    }
    return true;
}

RenderRequest Trainer::request(std::size_t camera, double scale) const {
    RenderRequest req;
    req.camera = scene_.cameras.at(camera);
    req.scale_factor = scale;
    req.filter = cfg_.filter;
    req.background = scene_.background;
    return req;
}

Image Trainer::render(std::size_t camera, double scale) const {
    return render_forward(scene_.gaussians, request(camera, scale)).image;
}

std::vector<StageMetrics> Trainer::evaluate(int stage) const {
    std::vector<StageMetrics> out;
    if (!ground_truth_ || heldout_ >= scene_.cameras.size()) return out;
    for (double s : cfg_.schedule.pool(static_cast<std::size_t>(std::max(stage, 0)))) {
        const Image img = render(heldout_, s);
        const Image gt = ground_truth_(heldout_, s);
        out.push_back({stage, s, psnr_report(img, gt), ssim(img, gt)});
    }
    return out;
}

void Trainer::refresh_rates() {
    std::vector<Camera> cams;
    for (std::size_t k : train_views_) cams.push_back(scene_.cameras[k]);
    if (!scene_.gaussians.empty()) update_max_rates(scene_.gaussians, cams);
    if (!snapshot_.empty()) update_max_rates(snapshot_, cams);
}

void Trainer::begin_stage_if_needed() {
    if (stage_started_) return;
    stage_started_ = true;
    snapshot_ = scene_.gaussians;
    refresh_rates();
}

void Trainer::finish_stage() {
    for (const auto& m : evaluate(stage_)) metrics_.push_back(m);
    ++stage_;
    stage_iter_ = 0;
    stage_started_ = false;
}

IterationLog Trainer::step() {
    if (done()) throw TrainingError("training is already complete");
    // Skip empty stages so the cursor always points at real work.
    while (stage_ >= 0 && cfg_.schedule.stages[static_cast<std::size_t>(stage_)].iterations == stage_iter_) {
        finish_stage();
    }
    if (global_iter_ % cfg_.rate_refresh_interval == 0) refresh_rates();
    IterationLog log;
    if (stage_ < 0) {
        log = warmup_step();
        if (++stage_iter_ == cfg_.warmup_iterations) {
            stage_ = 0;
            stage_iter_ = 0;
            stage_started_ = false;
        }
    } else {
        log = stage_step();
        if (++stage_iter_ == cfg_.schedule.stages[static_cast<std::size_t>(stage_)].iterations) finish_stage();
    }
    ++global_iter_;
    return log;
}

void Trainer::run(const std::function<void(const IterationLog&)>& on_iteration) {
    while (!done()) {
        const IterationLog log = step();
        if (on_iteration) on_iteration(log);
    }
}

void Trainer::run_for(int count) {
    for (int i = 0; i < count && !done(); ++i) step();
}

IterationLog Trainer::warmup_step() {
    IterationLog log;
    log.stage = -1;
    log.iteration = stage_iter_;
    log.camera = train_views_[std::uniform_int_distribution<std::size_t>(0, train_views_.size() - 1)(rng_)];
    log.scale = 1.0;
    const RenderRequest req = request(log.camera, 1.0);
    ForwardState state;
    const Image img = render_forward(scene_.gaussians, req, &state).image;
    const Image& ref = *scene_.reference_images[log.camera];
    const double lambda = cfg_.weights.lambda;
    LossResult m = mse_loss(img, ref);
    Image grad = m.grad;
    for (double& g : grad.pixels) g *= 1.0 - lambda;
    log.total = (1.0 - lambda) * m.value;
    if (lambda != 0.0) {
        const LossResult d = dssim_loss(img, ref);
        log.total += lambda * d.value;
        add_scaled(grad, d.grad, lambda);
    }
    log.loss_str = log.total;
    const auto grads = render_backward(scene_.gaussians, req, state, grad);
    apply_gradients(grads, log);
    return log;
}

std::uint64_t Trainer::reference_seed(std::size_t camera, int stage, int width, int height) const {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                      static_cast<std::uint32_t>(camera), static_cast<std::uint32_t>(stage),
                      static_cast<std::uint32_t>(width), static_cast<std::uint32_t>(height)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

IterationLog Trainer::stage_step() {
    begin_stage_if_needed();
    const auto pool = cfg_.schedule.pool(static_cast<std::size_t>(stage_));
    IterationLog log;
    log.stage = stage_;
    log.iteration = stage_iter_;
    log.camera = train_views_[std::uniform_int_distribution<std::size_t>(0, train_views_.size() - 1)(rng_)];
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng_);
    log.scale = pool[j];

    const RenderRequest req = request(log.camera, log.scale);
    ForwardState state;
    const Image sr = render_forward(scene_.gaussians, req, &state).image;
    const Image& lr = *scene_.reference_images[log.camera];
    Image grad(sr.width, sr.height);
    const LossWeights& w = cfg_.weights;

    if (provider_ && w.lds > 0.0) {
        const LdsResult lds = lds_gradient(*provider_, sr, lr, cfg_.prior, rng_);
        double sq = 0.0;
        for (double d : lds.discrepancy.data) sq += d * d;
        log.loss_lds = lds.weight * sq / static_cast<double>(std::max<std::size_t>(1, lds.discrepancy.size()));
        add_scaled(grad, lds.grad, w.lds / static_cast<double>(sr.size()));
    }
    if (provider_ && w.tex > 0.0 && scene_.cameras[log.camera].is_orthogonal) {
        const int stage = stage_;
        const std::size_t cam = log.camera;
        const Image& ref = refs_.get(static_cast<int>(cam), stage, sr.width, sr.height, [&] {
            std::mt19937_64 ref_rng(reference_seed(cam, stage, sr.width, sr.height));
            return make_reference(*provider_, lr, sr.width, sr.height, cfg_.prior, ref_rng);
        });
        const LossResult tex = texture_loss(sr, ref, true);
        log.loss_tex = tex.value;
        add_scaled(grad, tex.grad, w.tex);
    }
    if (w.str > 0.0) {
        Image previous;
        double s_prev = 1.0;
        if (j == 0) {
            previous = lr;
        } else {
            s_prev = pool[j - 1];
            const auto& source = cfg_.literal_previous_render ? scene_.gaussians : snapshot_;
            previous = render_forward(source, request(log.camera, s_prev)).image;
        }
        const LossResult str = structure_loss(sr, previous, log.scale, s_prev, w.lambda);
        log.loss_str = str.value;
        add_scaled(grad, str.grad, w.str);
    }
    log.total = w.lds * log.loss_lds + w.tex * log.loss_tex + w.str * log.loss_str;
    const auto grads = render_backward(scene_.gaussians, req, state, grad);
    apply_gradients(grads, log);
    maybe_densify(grads);
    return log;
}

void Trainer::apply_gradients(const std::vector<GaussianGrad>& grads, const IterationLog& log) {
    if (!std::isfinite(log.total)) throw TrainingError("non-finite loss at " + where(log));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!finite(grads[i])) {
            throw TrainingError("non-finite gradient for Gaussian " + std::to_string(i) + " at " + where(log));
        }
    }
    const int total = cfg_.warmup_iterations + cfg_.schedule.total_iterations();
    adam_.apply(scene_.gaussians, grads, cfg_.lr, position_rate(cfg_.lr, global_iter_, total));
    for (std::size_t i = 0; i < scene_.gaussians.size(); ++i) {
        if (!finite(scene_.gaussians[i])) {
            throw TrainingError("Gaussian " + std::to_string(i) + " became non-finite at " + where(log));
        }
    }
}

void Trainer::maybe_densify(const std::vector<GaussianGrad>& grads) {
    if (!cfg_.densify.enabled) return;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const double n = grads[i].position.norm();
        if (n > 0.0) {
            grad_accum_[i] += n;
            ++grad_count_[i];
        }
    }
    if ((stage_iter_ + 1) % cfg_.densify.interval != 0) return;
    std::vector<double> mean(grads.size(), 0.0);
    for (std::size_t i = 0; i < mean.size(); ++i) {
        if (grad_count_[i] > 0) mean[i] = grad_accum_[i] / grad_count_[i];
    }
    std::vector<int> origin;
    auto next = densify_prune(scene_.gaussians, mean, cfg_.densify, rng_, &origin);
    AdamState adam;
    adam.step = adam_.step;
    adam.resize(next.size());
    for (std::size_t i = 0; i < next.size(); ++i) {
        if (origin[i] < 0) continue;
        for (int k = 0; k < kParamsPerGaussian; ++k) {
            adam.m[i * kParamsPerGaussian + k] = adam_.m[origin[i] * kParamsPerGaussian + k];
            adam.v[i * kParamsPerGaussian + k] = adam_.v[origin[i] * kParamsPerGaussian + k];
        }
    }
    scene_.gaussians = std::move(next);
    adam_ = std::move(adam);
    grad_accum_.assign(scene_.gaussians.size(), 0.0);
    grad_count_.assign(scene_.gaussians.size(), 0);
    refresh_rates();
}

std::vector<Gaussian3D> densify_prune(const std::vector<Gaussian3D>& gaussians, const std::vector<double>& mean_grad,
                                      const DensifyConfig& cfg, std::mt19937_64& rng, std::vector<int>* origin) {
    if (mean_grad.size() != gaussians.size()) throw DimensionError("gradient statistics do not match the Gaussians");
    std::vector<Gaussian3D> out;
    std::vector<int> src;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const Gaussian3D& g = gaussians[i];
        if (g.opacity() < cfg.prune_opacity) continue;
        if (!(mean_grad[i] > cfg.grad_threshold)) {
            out.push_back(g);
            src.push_back(static_cast<int>(i));
            continue;
        }
        if (g.scale().maxCoeff() <= cfg.clone_max_scale) {
            out.push_back(g);
            out.push_back(g);
            src.push_back(static_cast<int>(i));
            src.push_back(static_cast<int>(i));
            continue;
        }
        const Mat3 r = g.rotation_matrix();
        const Vec3 s = g.scale();
        for (int c = 0; c < 2; ++c) {
            Vec3 u(normal(rng), normal(rng), normal(rng));
            if (u.norm() > 3.0) u *= 3.0 / u.norm();
            Gaussian3D child = g;
            child.position = g.position + r * s.cwiseProduct(u);
            child.log_scale = g.log_scale - Vec3::Constant(std::log(kSplitScaleDivisor));
            child.max_rate_valid = false;
            out.push_back(child);
            src.push_back(-1);
        }
    }
    if (origin) *origin = std::move(src);
    return out;
}

} // namespace arbigs
