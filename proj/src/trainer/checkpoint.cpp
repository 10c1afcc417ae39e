// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/errors.hpp"
#include "arbigs/trainer.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace arbigs {

namespace {

// Section tags, four bytes each.
constexpr char kTagCursor[] = "CURS";
constexpr char kTagGaussians[] = "GAUS";
constexpr char kTagSnapshot[] = "SNAP";
constexpr char kTagAdam[] = "ADAM";
constexpr char kTagRng[] = "RNG ";
constexpr char kTagMetrics[] = "METR";
constexpr char kTagDensify[] = "DENS";
constexpr char kTagEnd[] = "END ";

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ull;
    }
    return h;
}

class Writer {
public:
    template <class T>
    void put(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void raw(const std::string& s) { buf_ += s; }
    void doubles(const std::vector<double>& v) {
        put<std::uint64_t>(v.size());
        buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    void gaussians(const std::vector<Gaussian3D>& gs) {
        put<std::uint64_t>(gs.size());
        for (const auto& g : gs) {
            for (int k = 0; k < 3; ++k) put(g.position[k]);
            for (int k = 0; k < 4; ++k) put(g.rotation[k]);
            for (int k = 0; k < 3; ++k) put(g.log_scale[k]);
            put(g.opacity_logit);
            for (int k = 0; k < 3; ++k) put(g.color[k]);
            put(g.max_rate);
            put<std::uint8_t>(g.max_rate_valid ? 1 : 0);
        }
    }
    void section(const char* tag, const Writer& body) {
        buf_.append(tag, 4);
        put<std::uint64_t>(body.buf_.size());
        buf_ += body.buf_;
    }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& bytes, std::size_t begin, std::size_t end) : b_(bytes), at_(begin), end_(end) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + at_, sizeof(T));
        at_ += sizeof(T);
        return v;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s = b_.substr(at_, n);
        at_ += n;
        return s;
    }
    std::size_t count(std::size_t item_bytes) {
        const auto n = get<std::uint64_t>();
        if (item_bytes > 0 && n > (end_ - at_) / item_bytes) fail("element count " + std::to_string(n) + " overruns");
        return static_cast<std::size_t>(n);
    }
    std::vector<double> doubles() {
        std::vector<double> v(count(sizeof(double)));
        for (double& d : v) d = get<double>();
        return v;
    }
    std::vector<Gaussian3D> gaussians() {
        constexpr std::size_t kRecord = 15 * sizeof(double) + 1;
        std::vector<Gaussian3D> gs(count(kRecord));
        for (auto& g : gs) {
            for (int k = 0; k < 3; ++k) g.position[k] = get<double>();
            for (int k = 0; k < 4; ++k) g.rotation[k] = get<double>();
            for (int k = 0; k < 3; ++k) g.log_scale[k] = get<double>();
            g.opacity_logit = get<double>();
            for (int k = 0; k < 3; ++k) g.color[k] = get<double>();
            g.max_rate = get<double>();
            g.max_rate_valid = get<std::uint8_t>() != 0;
        }
        return gs;
    }
    std::size_t offset() const { return at_; }
    bool at_end() const { return at_ == end_; }
    [[noreturn]] void fail(const std::string& what) const {
        throw CheckpointError("checkpoint " + what + " at byte " + std::to_string(at_));
    }

private:
    void need(std::size_t n) const {
        if (n > end_ - at_) fail("is truncated");
    }
    const std::string& b_;
    std::size_t at_;
    std::size_t end_;
};

// Checks magic and checksum; returns the end of the section area.
std::size_t verify_frame(const std::string& bytes) {
    constexpr std::size_t kHead = sizeof(kCheckpointMagic) + sizeof(std::uint32_t);
    if (bytes.size() < kHead + sizeof(std::uint64_t)) throw CheckpointError("checkpoint is truncated");
    if (bytes.compare(0, sizeof(kCheckpointMagic), std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) != 0) {
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    const std::size_t body_end = bytes.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body_end, sizeof(stored));
    if (fnv1a(bytes.data(), body_end) != stored) throw CheckpointError("checkpoint checksum mismatch (truncated or corrupt)");
    return body_end;
}

} // namespace

std::vector<Gaussian3D> checkpoint_gaussians(const std::string& bytes) {
    const std::size_t body_end = verify_frame(bytes);
    Reader in(bytes, sizeof(kCheckpointMagic), body_end);
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) in.fail("version " + std::to_string(version) + " is unsupported");
    while (!in.at_end()) {
        const std::string tag = in.raw(4);
        const auto len = in.get<std::uint64_t>();
        if (len > body_end - in.offset()) in.fail("section " + tag + " is truncated");
        if (tag == kTagGaussians) {
            Reader s(bytes, in.offset(), in.offset() + static_cast<std::size_t>(len));
            return s.gaussians();
        }
        in.raw(static_cast<std::size_t>(len));
    }
    throw CheckpointError("checkpoint has no Gaussian section");
}

std::string Trainer::serialize_checkpoint() const {
    Writer out;
    out.raw(std::string(kCheckpointMagic, sizeof(kCheckpointMagic)));
    out.put(kCheckpointVersion);

    Writer cursor;
    cursor.put<std::int32_t>(global_iter_);
    cursor.put<std::int32_t>(stage_);
    cursor.put<std::int32_t>(stage_iter_);
    cursor.put<std::uint8_t>(stage_started_ ? 1 : 0);
    cursor.put<std::int32_t>(cfg_.warmup_iterations);
    cursor.put<std::uint64_t>(cfg_.schedule.stages.size());
    for (const auto& s : cfg_.schedule.stages) {
        cursor.put(s.max_scale);
        cursor.put<std::int32_t>(s.iterations);
    }
    out.section(kTagCursor, cursor);

    Writer gs;
    gs.gaussians(scene_.gaussians);
    out.section(kTagGaussians, gs);
    Writer snap;
    snap.gaussians(snapshot_);
    out.section(kTagSnapshot, snap);

    Writer adam;
    adam.put(adam_.step);
    adam.doubles(adam_.m);
    adam.doubles(adam_.v);
    out.section(kTagAdam, adam);

    Writer rng;
    std::ostringstream os;
    os << rng_;
    rng.put<std::uint64_t>(os.str().size());
    rng.raw(os.str());
    out.section(kTagRng, rng);

    Writer metrics;
    metrics.put<std::uint64_t>(metrics_.size());
    for (const auto& m : metrics_) {
        metrics.put<std::int32_t>(m.stage);
        metrics.put(m.scale);
        metrics.put(m.psnr);
        metrics.put(m.ssim);
    }
    out.section(kTagMetrics, metrics);

    Writer dens;
    dens.doubles(grad_accum_);
    dens.put<std::uint64_t>(grad_count_.size());
    for (int c : grad_count_) dens.put<std::int32_t>(c);
    out.section(kTagDensify, dens);

    out.section(kTagEnd, Writer{});
    std::string bytes = out.bytes();
    const std::uint64_t sum = fnv1a(bytes.data(), bytes.size());
    bytes.append(reinterpret_cast<const char*>(&sum), sizeof(sum));
    return bytes;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    const std::string bytes = serialize_checkpoint();
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write checkpoint " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    restore_checkpoint(ss.str());
}

void Trainer::restore_checkpoint(const std::string& bytes) {
    const std::size_t body_end = verify_frame(bytes);
    Reader in(bytes, sizeof(kCheckpointMagic), body_end);
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) in.fail("version " + std::to_string(version) + " is unsupported");

    int global_iter = 0, stage = 0, stage_iter = 0;
    bool started = false, seen_end = false;
    std::vector<Gaussian3D> gaussians, snapshot;
    AdamState adam;
    std::mt19937_64 rng;
    std::vector<StageMetrics> metrics;
    std::vector<double> accum;
    std::vector<int> counts;
    unsigned seen = 0;

    while (!seen_end) {
        const std::string tag = in.raw(4);
        const auto len = in.get<std::uint64_t>();
        if (len > body_end - in.offset()) in.fail("section " + tag + " is truncated");
        const std::size_t begin = in.offset();
        Reader s(bytes, begin, begin + static_cast<std::size_t>(len));
        if (tag == kTagCursor) {
            global_iter = s.get<std::int32_t>();
            stage = s.get<std::int32_t>();
            stage_iter = s.get<std::int32_t>();
            started = s.get<std::uint8_t>() != 0;
            bool match = s.get<std::int32_t>() == cfg_.warmup_iterations;
            const std::size_t n = s.count(12);
            match = match && n == cfg_.schedule.stages.size();
            for (std::size_t i = 0; i < n; ++i) {
                const double scale = s.get<double>();
                const int iters = s.get<std::int32_t>();
                match = match && i < cfg_.schedule.stages.size() && cfg_.schedule.stages[i] == StageSpec{scale, iters};
            }
            if (!match) throw CheckpointError("checkpoint schedule does not match the training config");
            seen |= 1;
        } else if (tag == kTagGaussians) {
            gaussians = s.gaussians();
            seen |= 2;
        } else if (tag == kTagSnapshot) {
            snapshot = s.gaussians();
        } else if (tag == kTagAdam) {
            adam.step = s.get<std::uint64_t>();
            adam.m = s.doubles();
            adam.v = s.doubles();
            seen |= 4;
        } else if (tag == kTagRng) {
            std::istringstream is(s.raw(s.count(1)));
            is >> rng;
            if (!is) s.fail("random state is unreadable");
            seen |= 8;
        } else if (tag == kTagMetrics) {
            metrics.resize(s.count(28));
            for (auto& m : metrics) {
                m.stage = s.get<std::int32_t>();
                m.scale = s.get<double>();
                m.psnr = s.get<double>();
                m.ssim = s.get<double>();
            }
        } else if (tag == kTagDensify) {
            accum = s.doubles();
            counts.resize(s.count(4));
            for (int& c : counts) c = s.get<std::int32_t>();
        } else if (tag == kTagEnd) {
            seen_end = true;
        } else {
            s.raw(static_cast<std::size_t>(len));  // unknown section, skipped
        }
        if (!s.at_end()) s.fail("section " + tag + " has trailing bytes");
        in.raw(static_cast<std::size_t>(len));
    }
    if (!in.at_end()) in.fail("has data after the end marker");
    if (seen != 15) throw CheckpointError("checkpoint is missing a required section");
    if (adam.m.size() != gaussians.size() * kParamsPerGaussian || adam.v.size() != adam.m.size()) {
        throw CheckpointError("checkpoint optimizer state does not match its Gaussians");
    }
    if (accum.size() != gaussians.size()) accum.assign(gaussians.size(), 0.0);
    if (counts.size() != gaussians.size()) counts.assign(gaussians.size(), 0);

    scene_.gaussians = std::move(gaussians);
    snapshot_ = std::move(snapshot);
    adam_ = std::move(adam);
    rng_ = rng;
    metrics_ = std::move(metrics);
    grad_accum_ = std::move(accum);
    grad_count_ = std::move(counts);
    global_iter_ = global_iter;
    stage_ = stage;
    stage_iter_ = stage_iter;
    stage_started_ = started;
}

} // namespace arbigs
