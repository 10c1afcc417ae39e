// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/protocol.hpp"

#include "arbigs/errors.hpp"

#include <bit>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

namespace arbigs {

namespace {

constexpr std::uint8_t kErrorOpcode = 0xFF;
constexpr std::uint32_t kMaxTensors = 16;
constexpr std::uint64_t kMaxElements = 1ull << 28;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, double v) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    std::uint32_t u32(const char* field) {
        need(4, field);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint8_t u8(const char* field) {
        need(1, field);
        return static_cast<unsigned char>(bytes_[pos_++]);
    }

    float f32() { return std::bit_cast<float>(u32("payload")); }

    void need(std::size_t n, const char* field) const {
        if (remaining() < n) {
            throw ProtocolError("truncated frame at offset " + std::to_string(pos_) + " while reading " + field);
        }
    }

    std::string_view take(std::size_t n) {
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

bool known_opcode(std::uint8_t op) {
    const std::uint8_t base = op & static_cast<std::uint8_t>(~kResponseBit);
    return op == kErrorOpcode || base <= static_cast<std::uint8_t>(Opcode::Dims);
}

Tensor planar(const Image& img) {
    return image_to_tensor(img);
}

} // namespace

std::string encode_frame(const Frame& frame) {
    std::string out(kFrameMagic, 4);
    out.push_back(static_cast<char>(frame.opcode));
    put_u32(out, frame.t0);
    put_u32(out, frame.t1);
    put_u32(out, frame.channels);
    put_u32(out, frame.height);
    put_u32(out, frame.width);
    put_u32(out, static_cast<std::uint32_t>(frame.tensors.size()));
    for (const Tensor& t : frame.tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.channels));
        put_u32(out, static_cast<std::uint32_t>(t.height));
        put_u32(out, static_cast<std::uint32_t>(t.width));
        for (double v : t.data) put_f32(out, v);
    }
    return out;
}

Frame decode_frame(std::string_view bytes) {
    Reader r(bytes);
    r.need(4, "magic");
    for (int i = 0; i < 4; ++i) {
        if (bytes[i] != kFrameMagic[i]) {
            throw ProtocolError("bad magic at offset " + std::to_string(i) + " (expected \"ASGP\")");
        }
    }
    r.take(4);
    Frame f;
    const std::size_t op_offset = r.offset();
    f.opcode = r.u8("opcode");
    if (!known_opcode(f.opcode)) {
        throw ProtocolError("unknown opcode " + std::to_string(f.opcode) + " at offset " + std::to_string(op_offset));
    }
    f.t0 = r.u32("t0");
    f.t1 = r.u32("t1");
    f.channels = r.u32("channels");
    f.height = r.u32("height");
    f.width = r.u32("width");
    const std::size_t count_offset = r.offset();
    const std::uint32_t count = r.u32("tensor count");
    if (count > kMaxTensors) {
        throw ProtocolError("tensor count " + std::to_string(count) + " at offset " + std::to_string(count_offset) +
                            " exceeds " + std::to_string(kMaxTensors));
    }
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::size_t dims_offset = r.offset();
        const std::uint32_t c = r.u32("tensor channels");
        const std::uint32_t h = r.u32("tensor height");
        const std::uint32_t w = r.u32("tensor width");
        const std::uint64_t n = static_cast<std::uint64_t>(c) * h * w;
        if (n > kMaxElements) {
            throw ProtocolError("tensor at offset " + std::to_string(dims_offset) + " is too large");
        }
        r.need(n * 4, "payload");
        Tensor t(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::size_t at = r.offset();
            const float v = r.f32();
            if (!std::isfinite(v)) throw ProtocolError("non-finite payload value at offset " + std::to_string(at));
            t.data[i] = v;
        }
        f.tensors.push_back(std::move(t));
    }
    if (r.remaining() != 0) {
        throw ProtocolError("trailing bytes after frame at offset " + std::to_string(r.offset()));
    }
    return f;
}

std::optional<std::size_t> frame_bytes_missing(std::string_view bytes) {
    for (std::size_t i = 0; i < std::min<std::size_t>(4, bytes.size()); ++i) {
        if (bytes[i] != kFrameMagic[i]) return std::nullopt;
    }
    if (bytes.size() < kFrameHeaderBytes) return kFrameHeaderBytes - bytes.size();
    Reader r(bytes);
    r.take(25);
    const std::uint32_t count = r.u32("tensor count");
    if (count > kMaxTensors) return std::nullopt;
    std::size_t need = kFrameHeaderBytes;
    for (std::uint32_t k = 0; k < count; ++k) {
        if (bytes.size() < need + 12) return need + 12 - bytes.size();
        Reader d(bytes.substr(need));
        const std::uint64_t n =
            static_cast<std::uint64_t>(d.u32("c")) * d.u32("h") * d.u32("w");
        if (n > kMaxElements) return std::nullopt;
        need += 12 + n * 4;
    }
    return bytes.size() >= need ? 0 : need - bytes.size();
}

ExternalProvider::ExternalProvider(const std::string& command, std::chrono::milliseconds timeout)
    : command_(command), timeout_(timeout) {
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
        throw ProviderError(std::string("socketpair failed: ") + std::strerror(errno));
    }
    pid_ = ::fork();
    if (pid_ < 0) {
        ::close(sv[0]);
        ::close(sv[1]);
        throw ProviderError(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
        ::setpgid(0, 0);
        ::dup2(sv[1], STDIN_FILENO);
        ::dup2(sv[1], STDOUT_FILENO);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::setpgid(pid_, pid_);
    ::close(sv[1]);
    fd_ = sv[0];
}

ExternalProvider::~ExternalProvider() {
    shutdown();
}

void ExternalProvider::shutdown() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
    if (pid_ > 0) {
        int status = 0;
        for (int i = 0; i < 50; ++i) {
            if (::waitpid(pid_, &status, WNOHANG) == pid_) {
                ::kill(-pid_, SIGKILL);
                pid_ = -1;
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        ::kill(-pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }
}

Frame ExternalProvider::call(const Frame& request) {
    if (fd_ < 0) throw ProviderError("provider connection is closed");
    // A late or garbled reply would desynchronize every later call.
    try {
        return exchange(request);
    } catch (const TimeoutError&) {
        shutdown();
        throw;
    } catch (const ProtocolError&) {
        shutdown();
        throw;
    }
}

Frame ExternalProvider::exchange(const Frame& request) {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    const auto remaining_ms = [&] {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        return static_cast<int>(std::max<long long>(0, left.count()));
    };
    const std::string out = encode_frame(request);
    std::size_t sent = 0;
    while (sent < out.size()) {
        pollfd p{fd_, POLLOUT, 0};
        const int ready = ::poll(&p, 1, remaining_ms());
        if (ready == 0) throw TimeoutError("provider did not accept the request within the timeout");
        if (ready < 0) {
            if (errno == EINTR) continue;
            throw ProviderError(std::string("poll failed: ") + std::strerror(errno));
        }
        const ssize_t n = ::send(fd_, out.data() + sent, out.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw ProviderError(std::string("provider closed its input: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }

    std::string in;
    char buf[65536];
    for (;;) {
        const auto missing = frame_bytes_missing(in);
        if (!missing || *missing == 0) break;
        pollfd p{fd_, POLLIN, 0};
        const int ready = ::poll(&p, 1, remaining_ms());
        if (ready == 0) {
            throw TimeoutError("provider did not answer opcode " + std::to_string(request.opcode) + " within " +
                               std::to_string(timeout_.count()) + " ms");
        }
        if (ready < 0) {
            if (errno == EINTR) continue;
            throw ProviderError(std::string("poll failed: ") + std::strerror(errno));
        }
        const ssize_t n = ::recv(fd_, buf, std::min(sizeof(buf), *missing), 0);
        if (n == 0) {
            shutdown();
            throw ProviderError("provider process exited before answering opcode " + std::to_string(request.opcode));
        }
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw ProviderError(std::string("read from provider failed: ") + std::strerror(errno));
        }
        in.append(buf, static_cast<std::size_t>(n));
    }
    Frame reply = decode_frame(in);
    if (reply.opcode == kErrorOpcode) {
        throw ProviderError("provider reported a failure for opcode " + std::to_string(request.opcode));
    }
    if (reply.opcode != (request.opcode | kResponseBit)) {
        throw ProtocolError("response opcode " + std::to_string(reply.opcode) + " at offset 4 does not answer " +
                            std::to_string(request.opcode));
    }
    return reply;
}

namespace {

const Tensor& single(const Frame& f, const char* op) {
    if (f.tensors.size() != 1) {
        throw ProtocolError(std::string(op) + " response carries " + std::to_string(f.tensors.size()) +
                            " tensors at offset 25, expected 1");
    }
    return f.tensors[0];
}

Frame request(Opcode op, std::uint32_t t0 = 0, std::uint32_t t1 = 0) {
    Frame f;
    f.opcode = static_cast<std::uint8_t>(op);
    f.t0 = t0;
    f.t1 = t1;
    return f;
}

std::uint32_t timestep(int t) {
    if (t < 0) throw ConfigError("timesteps must be non-negative");
    return static_cast<std::uint32_t>(t);
}

} // namespace

LatentDims ExternalProvider::latent_dims(int height, int width) {
    Frame f = request(Opcode::Dims);
    f.channels = 3;
    f.height = static_cast<std::uint32_t>(height);
    f.width = static_cast<std::uint32_t>(width);
    const Frame r = call(f);
    if (!schedule_) schedule_ = {static_cast<int>(r.t0), static_cast<int>(r.t1)};
    return {static_cast<int>(r.channels), static_cast<int>(r.height), static_cast<int>(r.width)};
}

Tensor ExternalProvider::encode(const Image& image, const Tensor& noise, int t) {
    Frame f = request(Opcode::Encode, timestep(t));
    f.tensors = {planar(image), noise};
    return single(call(f), "ENCODE");
}

Tensor ExternalProvider::predict_noise(const Tensor& latent, const Image& condition, int t) {
    Frame f = request(Opcode::Predict, timestep(t));
    f.tensors = {latent, planar(condition)};
    return single(call(f), "PREDICT");
}

Tensor ExternalProvider::denoise(const Tensor& latent, int from, int to, const Image& condition) {
    if (from == to) return latent;
    Frame f = request(Opcode::Denoise, timestep(from), timestep(to));
    f.tensors = {latent, planar(condition)};
    return single(call(f), "DENOISE");
}

Image ExternalProvider::decode(const Tensor& latent) {
    Frame f = request(Opcode::Decode);
    f.tensors = {latent};
    const Tensor t = single(call(f), "DECODE");
    if (t.channels != 3) throw ProtocolError("DECODE response must carry 3 channels");
    return tensor_to_image(t);
}

Image ExternalProvider::image_gradient(const Image& image, const Tensor& latent_grad) {
    Frame f = request(Opcode::Grad);
    f.tensors = {planar(image), latent_grad};
    const Tensor t = single(call(f), "GRAD");
    if (t.channels != 3) throw ProtocolError("GRAD response must carry 3 channels");
    return tensor_to_image(t);
}

void ExternalProvider::ensure_schedule() {
    if (!schedule_) latent_dims(8, 8);
}

int ExternalProvider::schedule_length() {
    ensure_schedule();
    return schedule_->first;
}

int ExternalProvider::default_start_timestep() {
    ensure_schedule();
    return schedule_->second;
}

} // namespace arbigs
