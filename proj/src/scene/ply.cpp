// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/ply.hpp"

#include "arbigs/errors.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string_view>
#include <unordered_map>

namespace arbigs {

static_assert(std::endian::native == std::endian::little, "PLY codec assumes a little-endian host");

namespace {

constexpr std::array<const char*, 14> kRequired = {"x",       "y",       "z",       "f_dc_0", "f_dc_1",
                                                   "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2",
                                                   "rot_0",   "rot_1",   "rot_2",   "rot_3"};

enum class ScalarType { I8, U8, I16, U16, I32, U32, F32, F64 };

ScalarType parse_type(const std::string& name) {
    static const std::unordered_map<std::string, ScalarType> table = {
        {"char", ScalarType::I8},     {"int8", ScalarType::I8},     {"uchar", ScalarType::U8},
        {"uint8", ScalarType::U8},    {"short", ScalarType::I16},   {"int16", ScalarType::I16},
        {"ushort", ScalarType::U16},  {"uint16", ScalarType::U16},  {"int", ScalarType::I32},
        {"int32", ScalarType::I32},   {"uint", ScalarType::U32},    {"uint32", ScalarType::U32},
        {"float", ScalarType::F32},   {"float32", ScalarType::F32}, {"double", ScalarType::F64},
        {"float64", ScalarType::F64},
    };
    const auto it = table.find(name);
    if (it == table.end()) throw FormatError("unsupported PLY property type '" + name + "'");
    return it->second;
}

std::size_t type_size(ScalarType t) {
    switch (t) {
    case ScalarType::I8:
    case ScalarType::U8: return 1;
    case ScalarType::I16:
    case ScalarType::U16: return 2;
    case ScalarType::I32:
    case ScalarType::U32:
    case ScalarType::F32: return 4;
    case ScalarType::F64: return 8;
    }
    return 0;
}

template <typename T>
T load_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

double read_scalar(ScalarType t, const char* p) {
    switch (t) {
    case ScalarType::I8: return load_le<std::int8_t>(p);
    case ScalarType::U8: return load_le<std::uint8_t>(p);
    case ScalarType::I16: return load_le<std::int16_t>(p);
    case ScalarType::U16: return load_le<std::uint16_t>(p);
    case ScalarType::I32: return load_le<std::int32_t>(p);
    case ScalarType::U32: return load_le<std::uint32_t>(p);
    case ScalarType::F32: return load_le<float>(p);
    case ScalarType::F64: return load_le<double>(p);
    }
    return 0.0;
}

struct Property {
    std::string name;
    ScalarType type;
    std::size_t offset;
};

} // namespace

std::vector<Gaussian3D> parse_ply(const std::string& bytes) {
    const std::string_view terminator = "end_header\n";
    const auto header_end = bytes.find(terminator);
    if (bytes.rfind("ply\n", 0) != 0 || header_end == std::string::npos) {
        throw FormatError("not a PLY file (missing 'ply' magic or 'end_header')");
    }
    std::istringstream header(bytes.substr(0, header_end));
    std::string line;
    std::size_t vertex_count = 0;
    bool in_vertex = false;
    bool seen_vertex = false;
    bool binary_le = false;
    std::vector<Property> props;
    std::size_t stride = 0;
    while (std::getline(header, line)) {
        std::istringstream tokens(line);
        std::string keyword;
        tokens >> keyword;
        if (keyword == "format") {
            std::string fmt;
            tokens >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (keyword == "element") {
            std::string name;
            std::size_t count = 0;
            tokens >> name >> count;
            if (name == "vertex") {
                if (seen_vertex) throw FormatError("duplicate PLY vertex element");
                vertex_count = count;
                in_vertex = seen_vertex = true;
            } else {
                if (!seen_vertex) throw FormatError("PLY element '" + name + "' precedes vertex data");
                in_vertex = false;
            }
        } else if (keyword == "property" && in_vertex) {
            std::string type, name;
            tokens >> type;
            if (type == "list") throw FormatError("list properties are not supported in the vertex element");
            tokens >> name;
            const ScalarType t = parse_type(type);
            props.push_back({name, t, stride});
            stride += type_size(t);
        }
    }
    if (!binary_le) throw FormatError("only binary_little_endian PLY is supported");
    if (!seen_vertex) throw FormatError("PLY has no vertex element");

    std::array<const Property*, kRequired.size()> fields{};
    for (std::size_t k = 0; k < kRequired.size(); ++k) {
        for (const auto& p : props) {
            if (p.name == kRequired[k]) fields[k] = &p;
        }
        if (!fields[k]) throw FormatError(std::string("PLY is missing vertex property '") + kRequired[k] + "'");
    }

    const std::size_t data_begin = header_end + terminator.size();
    if (bytes.size() < data_begin + vertex_count * stride) {
        throw FormatError("PLY vertex data truncated: expected " + std::to_string(vertex_count * stride) +
                          " bytes, found " + std::to_string(bytes.size() - data_begin));
    }

    std::vector<Gaussian3D> out(vertex_count);
    std::array<double, kRequired.size()> v{};
    for (std::size_t i = 0; i < vertex_count; ++i) {
        const char* record = bytes.data() + data_begin + i * stride;
        for (std::size_t k = 0; k < kRequired.size(); ++k) {
            v[k] = read_scalar(fields[k]->type, record + fields[k]->offset);
            if (!std::isfinite(v[k])) {
                throw DataError("non-finite value in property '" + std::string(kRequired[k]) + "' of vertex " +
                                std::to_string(i));
            }
        }
        Gaussian3D& g = out[i];
        g.position = Vec3(v[0], v[1], v[2]);
        g.color = Vec3(0.5 + kShC0 * v[3], 0.5 + kShC0 * v[4], 0.5 + kShC0 * v[5]);
        g.opacity_logit = v[6];
        g.log_scale = Vec3(v[7], v[8], v[9]);
        const Vec4 q(v[10], v[11], v[12], v[13]);
        const double norm = q.norm();
        if (!(norm > 0.0)) throw DataError("zero-length rotation quaternion at vertex " + std::to_string(i));
        g.rotation = q / norm;
    }
    return out;
}

std::vector<Gaussian3D> load_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open PLY file " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_ply(buffer.str());
}

std::string serialize_ply(const std::vector<Gaussian3D>& gaussians, PlyPrecision precision) {
    const bool f64 = precision == PlyPrecision::Float64;
    std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(gaussians.size()) + "\n";
    for (const char* name : kRequired) {
        out += std::string("property ") + (f64 ? "double " : "float ") + name + "\n";
    }
    out += "end_header\n";
    const std::size_t header_size = out.size();
    const std::size_t width = f64 ? 8 : 4;
    out.resize(header_size + gaussians.size() * kRequired.size() * width);
    char* cursor = out.data() + header_size;
    for (const auto& g : gaussians) {
        const std::array<double, kRequired.size()> v = {
            g.position.x(),         g.position.y(),         g.position.z(),
            (g.color.x() - 0.5) / kShC0, (g.color.y() - 0.5) / kShC0, (g.color.z() - 0.5) / kShC0,
            g.opacity_logit,        g.log_scale.x(),        g.log_scale.y(),
            g.log_scale.z(),        g.rotation[0],          g.rotation[1],
            g.rotation[2],          g.rotation[3]};
        for (double x : v) {
            if (!std::isfinite(x)) throw DataError("cannot serialize non-finite Gaussian parameter");
            if (f64) {
                std::memcpy(cursor, &x, 8);
            } else {
                const float f = static_cast<float>(x);
                std::memcpy(cursor, &f, 4);
            }
            cursor += width;
        }
    }
    return out;
}

void save_ply(const std::vector<Gaussian3D>& gaussians, const std::filesystem::path& path, PlyPrecision precision) {
    const std::string bytes = serialize_ply(gaussians, precision);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace arbigs
