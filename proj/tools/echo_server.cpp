// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0

// Reference peer for the prior protocol. Reads request frames on stdin and
// answers on stdout:
//   DIMS     -> (channels, h / factor, w / factor), t0 = schedule, t1 = start
//   ENCODE   -> the noise tensor
//   PREDICT, DENOISE, DECODE -> the first tensor
//   GRAD     -> the image tensor
// The --fault flag injects failures for client tests.

#include "arbigs/errors.hpp"
#include "arbigs/protocol.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <string>
#include <thread>
#include <unistd.h>

using namespace arbigs;

namespace {

bool read_frame(std::string& out) {
    out.clear();
    char buf[65536];
    for (;;) {
        const auto missing = frame_bytes_missing(out);
        if (!missing || *missing == 0) return true;
        const ssize_t n = ::read(STDIN_FILENO, buf, std::min(sizeof(buf), *missing));
        if (n <= 0) return false;
        out.append(buf, static_cast<std::size_t>(n));
    }
}

void write_all(const std::string& bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t n = ::write(STDOUT_FILENO, bytes.data() + sent, bytes.size() - sent);
        if (n <= 0) return;
        sent += static_cast<std::size_t>(n);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"arbigs prior protocol echo server"};
    int channels = 4;
    int factor = 8;
    int schedule = 1000;
    int start = 400;
    std::string fault = "none";
    app.add_option("--channels", channels, "latent channels reported by DIMS");
    app.add_option("--factor", factor, "spatial downsampling reported by DIMS");
    app.add_option("--schedule", schedule, "schedule length reported by DIMS");
    app.add_option("--start", start, "default start timestep reported by DIMS");
    app.add_option("--fault", fault, "none | bad-magic | wrong-opcode | error | hang | exit")
        ->check(CLI::IsMember({"none", "bad-magic", "wrong-opcode", "error", "hang", "exit"}));
    CLI11_PARSE(app, argc, argv);

    std::string in;
    while (read_frame(in)) {
        Frame req;
        try {
            req = decode_frame(in);
        } catch (const ProtocolError& e) {
            std::fprintf(stderr, "echo_server: %s\n", e.what());
            return 1;
        }
        if (fault == "exit") return 0;
        if (fault == "hang") {
            std::this_thread::sleep_for(std::chrono::hours(1));
            return 0;
        }
        Frame resp;
        resp.opcode = req.opcode | kResponseBit;
        if (fault == "wrong-opcode") resp.opcode = kResponseBit | ((req.opcode + 1) % 6);
        if (fault == "error") resp.opcode = 0xFF;
        switch (static_cast<Opcode>(req.opcode)) {
        case Opcode::Dims:
            resp.channels = static_cast<std::uint32_t>(channels);
            resp.height = std::max<std::uint32_t>(1, req.height / factor);
            resp.width = std::max<std::uint32_t>(1, req.width / factor);
            resp.t0 = static_cast<std::uint32_t>(schedule);
            resp.t1 = static_cast<std::uint32_t>(start);
            break;
        case Opcode::Encode:
            if (req.tensors.size() > 1) resp.tensors = {req.tensors[1]};
            break;
        default:
            if (!req.tensors.empty()) resp.tensors = {req.tensors[0]};
            break;
        }
        std::string bytes = encode_frame(resp);
        if (fault == "bad-magic") bytes[0] = 'X';
        write_all(bytes);
    }
    return 0;
}
