// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Framed binary protocol between the trainer and an out-of-process prior.
// See docs/protocol.md for the byte layout.

#include "arbigs/prior.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <sys/types.h>
#include <vector>

namespace arbigs {

enum class Opcode : std::uint8_t {
    Encode = 0,
    Predict = 1,
    Denoise = 2,
    Decode = 3,
    Grad = 4,
    Dims = 5,
};

inline constexpr std::uint8_t kResponseBit = 0x80;
inline constexpr char kFrameMagic[4] = {'A', 'S', 'G', 'P'};
inline constexpr std::size_t kFrameHeaderBytes = 29;

struct Frame {
    std::uint8_t opcode = 0;
    std::uint32_t t0 = 0;
    std::uint32_t t1 = 0;
    std::uint32_t channels = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<Tensor> tensors;

    bool operator==(const Frame&) const = default;
};

std::string encode_frame(const Frame& frame);

/// Parses one complete frame. Throws ProtocolError naming the byte offset of
/// the first violation.
Frame decode_frame(std::string_view bytes);

/// Bytes still missing before the frame in `bytes` is complete (0 when it is),
/// or nullopt once enough of the header is present to detect corruption
/// (the caller should then decode to get the error).
std::optional<std::size_t> frame_bytes_missing(std::string_view bytes);

/// Provider that runs a child process and speaks the framed protocol over
/// its standard input and output. Calls are serialized.
class ExternalProvider : public PriorProvider {
public:
    explicit ExternalProvider(const std::string& command,
                              std::chrono::milliseconds timeout = std::chrono::seconds(120));
    ~ExternalProvider() override;
    ExternalProvider(const ExternalProvider&) = delete;
    ExternalProvider& operator=(const ExternalProvider&) = delete;

    LatentDims latent_dims(int height, int width) override;
    Tensor encode(const Image& image, const Tensor& noise, int t) override;
    Tensor predict_noise(const Tensor& latent, const Image& condition, int t) override;
    Tensor denoise(const Tensor& latent, int from, int to, const Image& condition) override;
    Image decode(const Tensor& latent) override;
    Image image_gradient(const Image& image, const Tensor& latent_grad) override;
    int schedule_length() override;
    int default_start_timestep() override;

    /// Sends a request and returns the validated response frame. A timeout or
    /// protocol error stops the child; later calls throw ProviderError.
    Frame call(const Frame& request);

private:
    Frame exchange(const Frame& request);
    void ensure_schedule();
    void shutdown();

    std::string command_;
    std::chrono::milliseconds timeout_;
    int fd_ = -1;
    pid_t pid_ = -1;
    std::optional<std::pair<int, int>> schedule_;
};

} // namespace arbigs
