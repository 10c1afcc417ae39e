// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/prior.hpp"

#include "arbigs/errors.hpp"
#include "arbigs/losses.hpp"

#include <cmath>
#include <vector>

namespace arbigs {

WeightSchedule parse_weight_schedule(const std::string& name) {
    if (name == "constant") return WeightSchedule::Constant;
    if (name == "sigma-ratio") return WeightSchedule::SigmaRatio;
    throw ConfigError("unknown weight schedule '" + name + "' (expected constant or sigma-ratio)");
}

std::string to_string(WeightSchedule schedule) {
    return schedule == WeightSchedule::Constant ? "constant" : "sigma-ratio";
}

void PriorConfig::validate() const {
    if (n < 1) throw ConfigError("prior n must be at least 1");
    if (start_timestep != 0 && start_timestep < n) {
        throw ConfigError("prior start timestep m = " + std::to_string(start_timestep) + " is below n = " +
                          std::to_string(n));
    }
    if (!std::isfinite(weight_scale)) throw ConfigError("prior weight scale must be finite");
}

namespace {

constexpr int kDdpmSteps = 1000;

const std::vector<double>& alpha_bar() {
    static const std::vector<double> table = [] {
        std::vector<double> out(kDdpmSteps);
        double prod = 1.0;
        for (int i = 0; i < kDdpmSteps; ++i) {
            const double beta = 1e-4 + (0.02 - 1e-4) * i / (kDdpmSteps - 1);
            prod *= 1.0 - beta;
            out[i] = prod;
        }
        return out;
    }();
    return table;
}

Tensor gaussian_noise(const LatentDims& dims, std::mt19937_64& rng) {
    Tensor z(dims.channels, dims.height, dims.width);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : z.data) v = normal(rng);
    return z;
}

void check_tensor(const Tensor& t, const LatentDims& dims, const char* what) {
    if (t.channels != dims.channels || t.height != dims.height || t.width != dims.width) {
        throw DimensionError(std::string(what) + " returned a " + std::to_string(t.channels) + "x" +
                             std::to_string(t.height) + "x" + std::to_string(t.width) + " tensor, expected " +
                             std::to_string(dims.channels) + "x" + std::to_string(dims.height) + "x" +
                             std::to_string(dims.width));
    }
}

int resolve_start(PriorProvider& provider, const PriorConfig& cfg) {
    const int m = cfg.start_timestep > 0 ? cfg.start_timestep : provider.default_start_timestep();
    const int len = provider.schedule_length();
    if (!(cfg.n <= m && m <= len)) {
        throw ConfigError("prior timesteps need n <= m <= schedule length, got n = " + std::to_string(cfg.n) +
                          ", m = " + std::to_string(m) + ", length = " + std::to_string(len));
    }
    return m;
}

} // namespace

double timestep_weight(const PriorConfig& cfg, int t) {
    if (cfg.weighting == WeightSchedule::Constant) return cfg.weight_scale;
    const auto& ab = alpha_bar();
    const double a = ab.at(std::clamp(t, 0, kDdpmSteps - 1));
    return cfg.weight_scale * std::sqrt((1.0 - a) / a);
}

LdsResult lds_gradient(PriorProvider& provider, const Image& sr, const Image& lr, const PriorConfig& cfg,
                       std::mt19937_64& rng) {
    cfg.validate();
    if (sr.width < lr.width || sr.height < lr.height) {
        throw DimensionError("SR image " + std::to_string(sr.width) + "x" + std::to_string(sr.height) +
                             " is smaller than its LR view " + std::to_string(lr.width) + "x" +
                             std::to_string(lr.height));
    }
    LdsResult out;
    out.start_timestep = resolve_start(provider, cfg);
    const LatentDims dims = provider.latent_dims(sr.height, sr.width);
    const Image lr_up = resize_bicubic(lr, sr.width, sr.height);

    out.n_hat = std::uniform_int_distribution<int>(0, cfg.n - 1)(rng);
    out.noise = gaussian_noise(dims, rng);
    const int m = out.start_timestep;

    const Tensor sr_m = provider.encode(sr, out.noise, m);
    check_tensor(sr_m, dims, "encode");
    out.latent_sr = provider.denoise(sr_m, m, out.n_hat, sr);
    const Tensor lr_m = provider.encode(lr_up, out.noise, m);
    check_tensor(lr_m, dims, "encode");
    out.latent_lr = provider.denoise(lr_m, m, cfg.n, lr_up);

    const Tensor eps_sr = provider.predict_noise(out.latent_sr, sr, out.n_hat);
    const Tensor eps_lr = provider.predict_noise(out.latent_lr, lr_up, cfg.n);
    check_tensor(eps_sr, dims, "predict_noise");
    check_tensor(eps_lr, dims, "predict_noise");

    out.weight = timestep_weight(cfg, out.n_hat);
    out.discrepancy = Tensor(dims.channels, dims.height, dims.width);
    Tensor weighted = out.discrepancy;
    for (std::size_t i = 0; i < eps_sr.size(); ++i) {
        out.discrepancy.data[i] = eps_sr.data[i] - eps_lr.data[i];
        weighted.data[i] = out.weight * out.discrepancy.data[i];
    }
    out.grad = provider.image_gradient(sr, weighted);
    if (!out.grad.same_dims(sr)) throw DimensionError("image_gradient returned the wrong dims");
    return out;
}

Image make_reference(PriorProvider& provider, const Image& lr, int width, int height, const PriorConfig& cfg,
                     std::mt19937_64& rng) {
    cfg.validate();
    const int m = resolve_start(provider, cfg);
    const LatentDims dims = provider.latent_dims(height, width);
    const Image lr_up = resize_bicubic(lr, width, height);
    const Tensor noise = gaussian_noise(dims, rng);
    const Tensor z_m = provider.encode(lr_up, noise, m);
    const Tensor z_n = provider.denoise(z_m, m, cfg.n, lr_up);
    const Tensor z_0 = provider.denoise(z_n, cfg.n, 0, lr_up);
    Image ref = provider.decode(z_0);
    if (ref.width != width || ref.height != height) {
        throw DimensionError("decode returned " + std::to_string(ref.width) + "x" + std::to_string(ref.height) +
                             ", expected " + std::to_string(width) + "x" + std::to_string(height));
    }
    return ref;
}

const Image& ReferenceCache::get(int view, int stage, int width, int height, const std::function<Image()>& make) {
    const auto key = std::make_tuple(view, stage, width, height);
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second;
    ++generated_;
    return entries_.emplace(key, make()).first->second;
}

bool ReferenceCache::contains(int view, int stage, int width, int height) const {
    return entries_.contains(std::make_tuple(view, stage, width, height));
}

MockProvider::MockProvider() : MockProvider(0.5 * Mat3::Identity(), 0.5 * Mat3::Identity()) {}

MockProvider::MockProvider(const Mat3& a, const Mat3& b, double sigma_max, int schedule_length, int start_timestep)
    : a_(a), b_(b), sigma_max_(sigma_max), length_(schedule_length), start_(start_timestep) {
    if (length_ < 1 || start_ < 0 || start_ > length_) throw ConfigError("mock provider schedule is inconsistent");
}

double MockProvider::sigma(int t) const {
    return sigma_max_ * static_cast<double>(t) / length_;
}

LatentDims MockProvider::latent_dims(int height, int width) {
    return {3, height, width};
}

Tensor MockProvider::encode(const Image& image, const Tensor& noise, int t) {
    ++calls_;
    Tensor x = image_to_tensor(image);
    if (!x.same_dims(noise)) throw DimensionError("mock encode: noise dims differ from the image");
    const double s = sigma(t);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += s * noise.data[i];
    return x;
}

Tensor MockProvider::predict_noise(const Tensor& latent, const Image& condition, int) {
    ++calls_;
    const Tensor c = image_to_tensor(condition);
    if (!c.same_dims(latent)) throw DimensionError("mock predict_noise: condition dims differ from the latent");
    Tensor out(latent.channels, latent.height, latent.width);
    for (int y = 0; y < latent.height; ++y)
        for (int x = 0; x < latent.width; ++x) {
            const Vec3 z(latent.at(0, y, x), latent.at(1, y, x), latent.at(2, y, x));
            const Vec3 i(c.at(0, y, x), c.at(1, y, x), c.at(2, y, x));
            const Vec3 e = a_ * z + b_ * i;
            for (int k = 0; k < 3; ++k) out.at(k, y, x) = e[k];
        }
    return out;
}

Tensor MockProvider::denoise(const Tensor& latent, int from, int to, const Image& condition) {
    ++calls_;
    if (from == to) return latent;
    const double s_from = sigma(from);
    if (s_from == 0.0) return latent;
    const double ratio = sigma(to) / s_from;
    const Tensor c = image_to_tensor(condition);
    if (!c.same_dims(latent)) throw DimensionError("mock denoise: condition dims differ from the latent");
    Tensor out = latent;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = c.data[i] + ratio * (latent.data[i] - c.data[i]);
    return out;
}

Image MockProvider::decode(const Tensor& latent) {
    ++calls_;
    return tensor_to_image(latent);
}

Image MockProvider::image_gradient(const Image& image, const Tensor& latent_grad) {
    ++calls_;
    Image g = tensor_to_image(latent_grad);
    if (!g.same_dims(image)) throw DimensionError("mock image_gradient: gradient dims differ from the image");
    return g;
}

} // namespace arbigs
