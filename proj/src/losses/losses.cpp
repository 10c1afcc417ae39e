// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/losses.hpp"

#include "arbigs/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace arbigs {

void LossWeights::validate() const {
    if (!(lds >= 0.0) || !(tex >= 0.0) || !(str >= 0.0)) throw ConfigError("loss weights must be non-negative");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("structure lambda must lie in [0, 1]");
}

namespace {

void require_same_dims(const Image& a, const Image& b, const char* what) {
    if (!a.same_dims(b)) {
        throw DimensionError(std::string(what) + ": image dims differ (" + std::to_string(a.width) + "x" +
                             std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                             std::to_string(b.height) + ")");
    }
}

double catmull_rom(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

// Taps per output sample along one axis. Upsampling uses the plain 4-tap
// kernel; downsampling stretches it by the ratio and renormalizes the taps.
struct Taps {
    std::vector<std::vector<int>> index;
    std::vector<std::vector<double>> weight;
};

Taps make_taps(int in, int out) {
    Taps t;
    t.index.resize(out);
    t.weight.resize(out);
    const double ratio = static_cast<double>(in) / out;
    const double stretch = std::max(ratio, 1.0);
    for (int o = 0; o < out; ++o) {
        const double src = (o + 0.5) * ratio - 0.5;
        const int lo = static_cast<int>(std::floor(src - 2.0 * stretch)) + 1;
        const int hi = static_cast<int>(std::ceil(src + 2.0 * stretch)) - 1;
        double sum = 0.0;
        for (int i = lo; i <= hi; ++i) {
            const double w = catmull_rom((src - i) / stretch);
            if (w == 0.0) continue;
            t.index[o].push_back(std::clamp(i, 0, in - 1));
            t.weight[o].push_back(w);
            sum += w;
        }
        if (stretch > 1.0) {
            for (double& w : t.weight[o]) w /= sum;
        }
    }
    return t;
}

// Unclipped separable resample: rows first, then columns.
Image resample_raw(const Image& img, int out_w, int out_h) {
    const Taps tx = make_taps(img.width, out_w);
    const Taps ty = make_taps(img.height, out_h);
    Image rows(out_w, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                for (std::size_t k = 0; k < tx.index[x].size(); ++k) v += tx.weight[x][k] * img.at(tx.index[x][k], y, c);
                rows.at(x, y, c) = v;
            }
    Image out(out_w, out_h);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                for (std::size_t k = 0; k < ty.index[y].size(); ++k) v += ty.weight[y][k] * rows.at(x, ty.index[y][k], c);
                out.at(x, y, c) = v;
            }
    return out;
}

void check_resample_dims(int w, int h) {
    if (w < 1 || h < 1) {
        throw DimensionError("resample target " + std::to_string(w) + "x" + std::to_string(h) + " is degenerate");
    }
}

// SSIM plumbing on single-channel planes.
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<double> v;
    Plane(int w, int h) : width(w), height(h), v(static_cast<std::size_t>(w) * h, 0.0) {}
    double& at(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
};

std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> g{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[i];
    }
    for (double& x : g) x /= sum;
    return g;
}

Plane channel_plane(const Image& img, int c) {
    Plane p(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) p.at(x, y) = img.at(x, y, c);
    return p;
}

// Valid-mode separable Gaussian filter.
Plane filter_valid(const Plane& p) {
    static const auto g = ssim_kernel();
    const int ow = p.width - kSsimWindow + 1, oh = p.height - kSsimWindow + 1;
    Plane rows(ow, p.height);
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[k] * p.at(x + k, y);
            rows.at(x, y) = s;
        }
    Plane out(ow, oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[k] * rows.at(x, y + k);
            out.at(x, y) = s;
        }
    return out;
}

// Transpose of filter_valid.
Plane filter_valid_adjoint(const Plane& q, int width, int height) {
    static const auto g = ssim_kernel();
    Plane rows(q.width, height);
    for (int y = 0; y < q.height; ++y)
        for (int x = 0; x < q.width; ++x)
            for (int k = 0; k < kSsimWindow; ++k) rows.at(x, y + k) += g[k] * q.at(x, y);
    Plane out(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < q.width; ++x)
            for (int k = 0; k < kSsimWindow; ++k) out.at(x + k, y) += g[k] * rows.at(x, y);
    return out;
}

Plane product(const Plane& a, const Plane& b) {
    Plane out(a.width, a.height);
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

// Mean SSIM over all channels; optionally the gradient of that mean w.r.t. a.
double ssim_impl(const Image& a, const Image& b, Image* grad) {
    require_same_dims(a, b, "ssim");
    if (a.width < kSsimWindow || a.height < kSsimWindow) {
        throw DimensionError("ssim needs images of at least 11x11, got " + std::to_string(a.width) + "x" +
                             std::to_string(a.height));
    }
    const int vw = a.width - kSsimWindow + 1, vh = a.height - kSsimWindow + 1;
    const double norm = 1.0 / (3.0 * vw * vh);
    double total = 0.0;
    if (grad) *grad = Image(a.width, a.height);
    for (int c = 0; c < 3; ++c) {
        const Plane pa = channel_plane(a, c);
        const Plane pb = channel_plane(b, c);
        const Plane ma = filter_valid(pa);
        const Plane mb = filter_valid(pb);
        const Plane eaa = filter_valid(product(pa, pa));
        const Plane ebb = filter_valid(product(pb, pb));
        const Plane eab = filter_valid(product(pa, pb));
        Plane d_ma(vw, vh), d_eaa(vw, vh), d_eab(vw, vh);
        for (std::size_t i = 0; i < ma.v.size(); ++i) {
            const double mua = ma.v[i], mub = mb.v[i];
            const double a1 = 2.0 * mua * mub + kC1;
            const double a2 = 2.0 * (eab.v[i] - mua * mub) + kC2;
            const double b1 = mua * mua + mub * mub + kC1;
            const double b2 = (eaa.v[i] - mua * mua) + (ebb.v[i] - mub * mub) + kC2;
            const double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (grad) {
                d_ma.v[i] = norm * s * (2.0 * mub / a1 - 2.0 * mub / a2 - 2.0 * mua / b1 + 2.0 * mua / b2);
                d_eaa.v[i] = -norm * s / b2;
                d_eab.v[i] = norm * 2.0 * s / a2;
            }
        }
        if (grad) {
            const Plane g_ma = filter_valid_adjoint(d_ma, a.width, a.height);
            const Plane g_eaa = filter_valid_adjoint(d_eaa, a.width, a.height);
            const Plane g_eab = filter_valid_adjoint(d_eab, a.width, a.height);
            for (int y = 0; y < a.height; ++y)
                for (int x = 0; x < a.width; ++x) {
                    grad->at(x, y, c) =
                        g_ma.at(x, y) + 2.0 * pa.at(x, y) * g_eaa.at(x, y) + pb.at(x, y) * g_eab.at(x, y);
                }
        }
    }
    return total * norm;
}

} // namespace

Image resize_bicubic(const Image& image, int out_width, int out_height) {
    check_resample_dims(out_width, out_height);
    if (image.empty()) throw DimensionError("cannot resample an empty image");
    Image out = resample_raw(image, out_width, out_height);
    for (double& v : out.pixels) v = std::clamp(v, 0.0, 1.0);
    return out;
}

Image resize_bicubic_backward(const Image& input, const Image& grad_output) {
    const int out_w = grad_output.width, out_h = grad_output.height;
    check_resample_dims(out_w, out_h);
    const Image raw = resample_raw(input, out_w, out_h);
    const Taps tx = make_taps(input.width, out_w);
    const Taps ty = make_taps(input.height, out_h);
    Image rows(out_w, input.height);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double r = raw.at(x, y, c);
                if (r < 0.0 || r > 1.0) continue;
                const double g = grad_output.at(x, y, c);
                for (std::size_t k = 0; k < ty.index[y].size(); ++k) rows.at(x, ty.index[y][k], c) += ty.weight[y][k] * g;
            }
    Image out(input.width, input.height);
    for (int y = 0; y < input.height; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double g = rows.at(x, y, c);
                for (std::size_t k = 0; k < tx.index[x].size(); ++k) out.at(tx.index[x][k], y, c) += tx.weight[x][k] * g;
            }
    return out;
}

Image downsample(const Image& image, double ratio) {
    if (!(ratio >= 1.0) || !std::isfinite(ratio)) {
        throw ConfigError("downsample ratio must be >= 1, got " + std::to_string(ratio));
    }
    const int w = static_cast<int>(std::lround(image.width / ratio));
    const int h = static_cast<int>(std::lround(image.height / ratio));
    return resize_bicubic(image, w, h);
}

double mse(const Image& a, const Image& b) {
    require_same_dims(a, b, "mse");
    if (a.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

LossResult mse_loss(const Image& a, const Image& b) {
    LossResult r;
    r.value = mse(a, b);
    r.grad = Image(a.width, a.height);
    const double scale = a.empty() ? 0.0 : 2.0 / static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r.grad.pixels[i] = scale * (a.pixels[i] - b.pixels[i]);
    return r;
}

double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

double psnr_report(const Image& a, const Image& b) {
    return std::min(psnr(a, b), kPsnrCap);
}

double ssim(const Image& a, const Image& b) {
    return ssim_impl(a, b, nullptr);
}

double dssim(const Image& a, const Image& b) {
    return 0.5 * (1.0 - ssim(a, b));
}

LossResult dssim_loss(const Image& a, const Image& b) {
    LossResult r;
    r.value = 0.5 * (1.0 - ssim_impl(a, b, &r.grad));
    for (double& g : r.grad.pixels) g *= -0.5;
    return r;
}

LossResult structure_loss(const Image& current, const Image& previous, double s_i, double s_prev, double lambda) {
    if (!(s_prev > 0.0) || !(s_i >= s_prev)) {
        throw ConfigError("structure loss needs s_i >= s_prev > 0, got " + std::to_string(s_i) + " and " +
                          std::to_string(s_prev));
    }
    const Image down = resize_bicubic(current, previous.width, previous.height);
    LossResult m = mse_loss(down, previous);
    LossResult r;
    r.value = (1.0 - lambda) * m.value;
    Image g_down = m.grad;
    for (double& g : g_down.pixels) g *= 1.0 - lambda;
    if (lambda != 0.0) {
        const LossResult d = dssim_loss(down, previous);
        r.value += lambda * d.value;
        for (std::size_t i = 0; i < g_down.size(); ++i) g_down.pixels[i] += lambda * d.grad.pixels[i];
    }
    r.grad = resize_bicubic_backward(current, g_down);
    return r;
}

LossResult texture_loss(const Image& rendered, const Image& reference, bool is_orthogonal) {
    if (!is_orthogonal) return {0.0, Image(rendered.width, rendered.height)};
    return mse_loss(rendered, reference);
}

} // namespace arbigs
