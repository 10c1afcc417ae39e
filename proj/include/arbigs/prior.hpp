// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/image.hpp"
#include "arbigs/math.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <tuple>

namespace arbigs {

struct LatentDims {
    int channels = 0;
    int height = 0;
    int width = 0;
    bool operator==(const LatentDims&) const = default;
};

/// A diffusion backbone seen through the operations the optimizer needs.
///
/// Latents are planar tensors. Timesteps index the provider's noise
/// schedule, 0 being clean. Implementations must satisfy
/// denoise(x, t, t, c) == x and return predict_noise output with the
/// latent's dims.
class PriorProvider {
public:
    virtual ~PriorProvider() = default;

    virtual LatentDims latent_dims(int height, int width) = 0;
    /// Noisy latent at timestep t built from the image and a noise sample of
    /// latent dims.
    virtual Tensor encode(const Image& image, const Tensor& noise, int t) = 0;
    virtual Tensor predict_noise(const Tensor& latent, const Image& condition, int t) = 0;
    virtual Tensor denoise(const Tensor& latent, int from, int to, const Image& condition) = 0;
    virtual Image decode(const Tensor& latent) = 0;
    /// Pulls a latent-space gradient back to image space through the encoder
    /// at the given image.
    virtual Image image_gradient(const Image& image, const Tensor& latent_grad) = 0;

    virtual int schedule_length() = 0;
    /// Timestep at which images are first noised when the config leaves it open.
    virtual int default_start_timestep() = 0;
};

enum class WeightSchedule { Constant, SigmaRatio };

WeightSchedule parse_weight_schedule(const std::string& name);
std::string to_string(WeightSchedule schedule);

struct PriorConfig {
    int n = 200;
    /// Start timestep m; 0 picks the provider default.
    int start_timestep = 0;
    WeightSchedule weighting = WeightSchedule::Constant;
    double weight_scale = 1.0;

    void validate() const;
};

/// w(t) of the given schedule times weight_scale. SigmaRatio is
/// sqrt((1 - abar_t) / abar_t) on a linear beta schedule from 1e-4 to 0.02
/// over 1000 steps.
double timestep_weight(const PriorConfig& cfg, int t);

struct LdsResult {
    /// Gradient with respect to the SR image.
    Image grad;
    /// Latent noise discrepancy before weighting.
    Tensor discrepancy;
    double weight = 0.0;
    int n_hat = 0;
    int start_timestep = 0;
    Tensor noise;
    Tensor latent_sr;
    Tensor latent_lr;
};

/// Latent distillation gradient for one SR render against its LR view.
/// The LR image is bicubically upsampled to SR dims so both branches share
/// latent dims and the one noise sample. n_hat is uniform in [0, n).
LdsResult lds_gradient(PriorProvider& provider, const Image& sr, const Image& lr, const PriorConfig& cfg,
                       std::mt19937_64& rng);

/// decode(denoise(z_LR^n, n, 0)) at the requested SR dims.
Image make_reference(PriorProvider& provider, const Image& lr, int width, int height, const PriorConfig& cfg,
                     std::mt19937_64& rng);

/// References keyed by (view, stage, width, height), generated on first use.
class ReferenceCache {
public:
    const Image& get(int view, int stage, int width, int height, const std::function<Image()>& make);
    bool contains(int view, int stage, int width, int height) const;
    std::size_t size() const { return entries_.size(); }
    std::size_t generated() const { return generated_; }
    void clear() { entries_.clear(); }

private:
    std::map<std::tuple<int, int, int, int>, Image> entries_;
    std::size_t generated_ = 0;
};

/// Closed-form provider for tests and desk-scale runs.
///
/// Latents share the image dims with 3 channels. With sigma_t =
/// sigma_max * t / schedule_length:
///   encode(I, z, t)       = I + sigma_t z
///   denoise(x, t, t', c)  = c + (sigma_t' / sigma_t)(x - c), x when sigma_t = 0
///   predict_noise(x, c, t) = A x + B c   (per-pixel channel mixing)
///   decode(x)             = x
///   image_gradient(I, g)  = g
class MockProvider : public PriorProvider {
public:
    MockProvider();
    MockProvider(const Mat3& a, const Mat3& b, double sigma_max = 1.0, int schedule_length = 1000,
                 int start_timestep = 400);

    LatentDims latent_dims(int height, int width) override;
    Tensor encode(const Image& image, const Tensor& noise, int t) override;
    Tensor predict_noise(const Tensor& latent, const Image& condition, int t) override;
    Tensor denoise(const Tensor& latent, int from, int to, const Image& condition) override;
    Image decode(const Tensor& latent) override;
    Image image_gradient(const Image& image, const Tensor& latent_grad) override;
    int schedule_length() override { return length_; }
    int default_start_timestep() override { return start_; }

    double sigma(int t) const;
    const Mat3& a() const { return a_; }
    const Mat3& b() const { return b_; }
    std::size_t calls() const { return calls_; }

private:
    Mat3 a_;
    Mat3 b_;
    double sigma_max_;
    int length_;
    int start_;
    std::size_t calls_ = 0;
};

} // namespace arbigs
