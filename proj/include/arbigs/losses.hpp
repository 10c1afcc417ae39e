// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "arbigs/image.hpp"

namespace arbigs {

/// Weights of the combined objective. lds, tex and str scale the three
/// terms; lambda balances MSE against D-SSIM inside the structure term.
struct LossWeights {
    double lds = 1.0;
    double tex = 1.0;
    double str = 1.0;
    double lambda = 0.5;

    void validate() const;
};

/// A scalar loss together with its gradient with respect to the first image.
struct LossResult {
    double value = 0.0;
    Image grad;
};

inline constexpr double kPsnrCap = 99.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Separable Catmull-Rom resampling to exact output dims. The per-axis ratio
/// is in/out and source coordinates are (dst + 0.5) * ratio - 0.5, edge
/// clamped. When shrinking an axis the kernel is stretched by the ratio and
/// its taps are normalized to sum to one (antialiased, as in common image
/// libraries). Output is clipped to [0, 1].
Image resize_bicubic(const Image& image, int out_width, int out_height);

/// Adjoint of resize_bicubic: maps an output-space gradient back to the
/// input. Entries where the forward output was clipped get zero gradient.
Image resize_bicubic_backward(const Image& input, const Image& grad_output);

/// Bicubic downsampling by ratio >= 1 to round(dims / ratio).
/// Throws DimensionError for a degenerate output, ConfigError for ratio < 1.
Image downsample(const Image& image, double ratio);

/// Mean over all pixels and channels. Throws DimensionError on mismatch.
double mse(const Image& a, const Image& b);
LossResult mse_loss(const Image& a, const Image& b);

/// 10 log10(1 / mse) with peak 1; +inf for identical images.
double psnr(const Image& a, const Image& b);
/// psnr capped at kPsnrCap for reports.
double psnr_report(const Image& a, const Image& b);

/// Gaussian-window SSIM averaged over channels and valid window positions.
/// Requires both images to be at least 11x11.
double ssim(const Image& a, const Image& b);
double dssim(const Image& a, const Image& b);
/// D-SSIM = (1 - SSIM) / 2 and its gradient with respect to a.
LossResult dssim_loss(const Image& a, const Image& b);

/// (1 - lambda) MSE + lambda D-SSIM between the current render resampled to
/// the previous render's dims and the previous render. s_i / s_prev is the
/// nominal ratio; the resampling always lands on prev's exact dims.
LossResult structure_loss(const Image& current, const Image& previous, double s_i, double s_prev, double lambda);

/// MSE against the reference on orthogonal views, exactly 0 otherwise.
LossResult texture_loss(const Image& rendered, const Image& reference, bool is_orthogonal);

} // namespace arbigs
