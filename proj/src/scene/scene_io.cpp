// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/scene_io.hpp"

#include "arbigs/errors.hpp"
#include "arbigs/image_io.hpp"
#include "arbigs/ply.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace arbigs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void only_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw FormatError(where + " must be an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) throw FormatError("unknown key '" + key + "' in " + where);
    }
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw FormatError("missing key '" + std::string(key) + "' in " + where);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError("key '" + std::string(key) + "' in " + where + " has the wrong type");
    }
}

template <int N>
Eigen::Matrix<double, N, 1> vec(const json& j, const char* key, const std::string& where) {
    const auto v = field<std::vector<double>>(j, key, where);
    if (v.size() != N) throw FormatError("'" + std::string(key) + "' in " + where + " needs " + std::to_string(N) + " numbers");
    Eigen::Matrix<double, N, 1> out;
    for (int i = 0; i < N; ++i) out[i] = v[i];
    return out;
}

Image read_image(const fs::path& p) {
    if (!fs::exists(p)) throw IoError("image not found: " + p.string());
    const std::string ext = p.extension().string();
    if (ext == ".ppm") return read_ppm(p);
    return read_png(p);
}

} // namespace

SceneFile load_scene(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scene " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw FormatError("scene " + path.string() + " is not valid JSON: " + e.what());
    }
    only_keys(j, {"version", "ply", "ground_truth_ply", "background", "cameras"}, "scene");
    const int version = field<int>(j, "version", "scene");
    if (version != kSceneFormatVersion) throw FormatError("unsupported scene version " + std::to_string(version));
    const fs::path base = path.parent_path();
    const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    SceneFile out;
    out.scene.gaussians = load_ply(resolve(field<std::string>(j, "ply", "scene")));
    if (j.contains("ground_truth_ply")) out.ground_truth = load_ply(resolve(field<std::string>(j, "ground_truth_ply", "scene")));
    if (j.contains("background")) out.scene.background = vec<3>(j, "background", "scene");

    const auto cams = field<json>(j, "cameras", "scene");
    if (!cams.is_array()) throw FormatError("'cameras' must be an array");
    for (std::size_t k = 0; k < cams.size(); ++k) {
        const json& c = cams[k];
        const std::string where = "camera " + std::to_string(k);
        only_keys(c, {"id", "focal", "principal", "rotation", "translation", "width", "height", "scale_factor",
                      "is_orthogonal", "image"},
                  where);
        if (c.contains("id") && field<std::size_t>(c, "id", where) != k) {
            throw FormatError(where + " has id " + c["id"].dump() + "; ids must equal the array index");
        }
        Camera cam;
        cam.focal = field<double>(c, "focal", where);
        cam.principal = vec<2>(c, "principal", where);
        const auto rows = field<std::vector<std::vector<double>>>(c, "rotation", where);
        if (rows.size() != 3) throw FormatError(where + " rotation must be 3x3");
        for (int r = 0; r < 3; ++r) {
            if (rows[r].size() != 3) throw FormatError(where + " rotation must be 3x3");
            for (int col = 0; col < 3; ++col) cam.rotation(r, col) = rows[r][col];
        }
        cam.translation = vec<3>(c, "translation", where);
        cam.width = field<int>(c, "width", where);
        cam.height = field<int>(c, "height", where);
        if (c.contains("scale_factor")) cam.scale_factor = field<double>(c, "scale_factor", where);
        if (c.contains("is_orthogonal")) cam.is_orthogonal = field<bool>(c, "is_orthogonal", where);
        try {
            cam.validate();
        } catch (const ConfigError& e) {
            throw FormatError(where + ": " + e.what());
        }
        out.scene.cameras.push_back(cam);
        if (c.contains("image") && !c["image"].is_null()) {
            out.scene.reference_images.emplace_back(read_image(resolve(field<std::string>(c, "image", where))));
        } else {
            out.scene.reference_images.emplace_back();
        }
    }
    try {
        out.scene.validate();
    } catch (const Error& e) {
        throw FormatError("scene " + path.string() + ": " + e.what());
    }
    return out;
}

fs::path save_scene(const SceneFile& file, const fs::path& dir, const std::string& stem) {
    fs::create_directories(dir);
    const Scene& s = file.scene;
    json j;
    j["version"] = kSceneFormatVersion;
    j["ply"] = stem + ".ply";
    save_ply(s.gaussians, dir / (stem + ".ply"), PlyPrecision::Float64);
    if (file.ground_truth) {
        j["ground_truth_ply"] = stem + "_truth.ply";
        save_ply(*file.ground_truth, dir / (stem + "_truth.ply"), PlyPrecision::Float64);
    }
    j["background"] = {s.background[0], s.background[1], s.background[2]};
    j["cameras"] = json::array();
    for (std::size_t k = 0; k < s.cameras.size(); ++k) {
        const Camera& c = s.cameras[k];
        json cj;
        cj["id"] = k;
        cj["focal"] = c.focal;
        cj["principal"] = {c.principal[0], c.principal[1]};
        cj["rotation"] = json::array();
        for (int r = 0; r < 3; ++r) cj["rotation"].push_back({c.rotation(r, 0), c.rotation(r, 1), c.rotation(r, 2)});
        cj["translation"] = {c.translation[0], c.translation[1], c.translation[2]};
        cj["width"] = c.width;
        cj["height"] = c.height;
        cj["scale_factor"] = c.scale_factor;
        cj["is_orthogonal"] = c.is_orthogonal;
        if (k < s.reference_images.size() && s.reference_images[k]) {
            char name[32];
            std::snprintf(name, sizeof(name), "images/view_%03zu.png", k);
            fs::create_directories(dir / "images");
            write_png(*s.reference_images[k], dir / name);
            cj["image"] = name;
        }
        j["cameras"].push_back(cj);
    }
    const fs::path out = dir / (stem + ".json");
    std::ofstream f(out);
    if (!f) throw IoError("cannot write " + out.string());
    f << j.dump(2) << "\n";
    return out;
}

} // namespace arbigs
