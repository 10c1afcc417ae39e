// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
// arbigs: synth, train, render, eval, analyze-filter and bench.

#include "arbigs/commands.hpp"
#include "arbigs/errors.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>

using namespace arbigs;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::pair<int, int> parse_resolution(const std::string& text) {
    const auto x = text.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(text);
        return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
    } catch (const std::exception&) {
        throw ConfigError("resolution '" + text + "' is not WIDTHxHEIGHT");
    }
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Arbitrary-scale Gaussian splatting super-resolution"};
    app.require_subcommand(1);

    std::string config_path, out_dir, provider_cmd, scene_path, model_path, resume_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> scale;
    bool no_prior = false, no_sa3d = false, no_sa2d = false;
    const auto filter_flags = [&](CLI::App* c) {
        c->add_flag("--no-scale-aware-3d", no_sa3d, "Use the fixed 3D smoothing filter");
        c->add_flag("--no-scale-aware-2d", no_sa2d, "Use the fixed 2D Mip filter");
    };
    const auto filter_from_flags = [&](FilterConfig f) {
        if (no_sa3d) f.scale_aware_3d = false;
        if (no_sa2d) f.scale_aware_2d = false;
        return f;
    };

    SynthSpec synth;
    double perturb = 0.05;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic scene");
    c_synth->add_option("preset", synth.preset, "grid | checker-wall | random")->required();
    c_synth->add_option("--seed", seed, "Random seed");
    c_synth->add_option("--out", out_dir, "Output directory")->required();
    c_synth->add_option("--gaussians", synth.gaussian_count, "Gaussian count")->capture_default_str();
    c_synth->add_option("--cameras", synth.camera_count, "Camera ring size")->capture_default_str();
    c_synth->add_option("--width", synth.width, "Base width")->capture_default_str();
    c_synth->add_option("--height", synth.height, "Base height")->capture_default_str();
    c_synth->add_option("--perturb", perturb, "Noise on the starting Gaussians")->capture_default_str();
    c_synth->add_option("--reference-scale", synth.reference_scale, "Render scale the LR references are downsampled from")
        ->capture_default_str();

    auto* c_train = app.add_subcommand("train", "Train a scene");
    c_train->add_option("--config", config_path, "JSON run config")->required();
    c_train->add_option("--seed", seed, "Override the config seed");
    c_train->add_option("--out", out_dir, "Override the output directory");
    c_train->add_option("--scene", scene_path, "Override the scene path");
    c_train->add_option("--provider-cmd", provider_cmd, "External prior provider command line");
    c_train->add_option("--resume", resume_path, "Continue from a checkpoint");
    c_train->add_flag("--no-prior", no_prior, "Train without the diffusion prior");
    filter_flags(c_train);

    std::size_t camera = 0;
    auto* c_render = app.add_subcommand("render", "Render one view at any scale");
    c_render->add_option("--model", model_path, "Checkpoint or PLY")->required();
    c_render->add_option("--scene", scene_path, "Scene JSON")->required();
    c_render->add_option("--camera", camera, "Camera index")->capture_default_str();
    c_render->add_option("--scale", scale, "Scale factor s >= 1");
    c_render->add_option("--out", out_dir, "Output PNG path")->required();
    filter_flags(c_render);

    std::vector<double> scales{1.0, 2.0, 3.5};
    std::vector<std::size_t> cameras;
    auto* c_eval = app.add_subcommand("eval", "PSNR/SSIM per scale");
    c_eval->add_option("--model", model_path, "Checkpoint or PLY")->required();
    c_eval->add_option("--scene", scene_path, "Scene JSON")->required();
    c_eval->add_option("--scales", scales, "Scale factors")->capture_default_str();
    c_eval->add_option("--scale", scale, "Single scale factor (overrides --scales)");
    c_eval->add_option("--cameras", cameras, "Camera indices (default: the last camera)");
    c_eval->add_option("--out", out_dir, "Output directory")->required();
    filter_flags(c_eval);

    double w_min = 0.5, w_max = 4.0, w_step = 0.05, epsilon = 0.1, sigma_g = 1.0;
    auto* c_filter = app.add_subcommand("analyze-filter", "1D approximation error table");
    c_filter->add_option("--w-min", w_min)->capture_default_str();
    c_filter->add_option("--w-max", w_max)->capture_default_str();
    c_filter->add_option("--w-step", w_step)->capture_default_str();
    c_filter->add_option("--epsilon", epsilon)->capture_default_str();
    c_filter->add_option("--sigma-g", sigma_g)->capture_default_str();
    c_filter->add_option("--out", out_dir, "CSV path (default: stdout)");

    std::vector<std::string> resolutions{"640x360", "1280x720", "1920x1080"};
    int repetitions = 10;
    auto* c_bench = app.add_subcommand("bench", "Rasterizer throughput");
    c_bench->add_option("--model", model_path, "Checkpoint or PLY (default: the scene's PLY)");
    c_bench->add_option("--scene", scene_path, "Scene JSON")->required();
    c_bench->add_option("--resolutions", resolutions, "WIDTHxHEIGHT list")->capture_default_str();
    c_bench->add_option("--repetitions", repetitions)->capture_default_str();
    c_bench->add_option("--out", out_dir, "JSON path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*c_synth) {
            if (seed) synth.seed = *seed;
            std::cout << cmd_synth(synth, out_dir, perturb).string() << "\n";
        } else if (*c_train) {
            RunConfig cfg = load_run_config(config_path);
            if (seed) cfg.train.seed = *seed;
            if (!out_dir.empty()) cfg.output_dir = out_dir;
            if (!scene_path.empty()) cfg.scene = scene_path;
            if (!provider_cmd.empty()) cfg.provider_cmd = provider_cmd;
            if (no_prior) cfg.use_prior = false;
            cfg.train.filter = filter_from_flags(cfg.train.filter);
            if (!cfg.scene.empty() && fs::path(cfg.scene).is_relative() && scene_path.empty()) {
                cfg.scene = (fs::path(config_path).parent_path() / cfg.scene).string();
            }
            const TrainSummary s = cmd_train(cfg, std::cout, resume_path);
            std::cout << "checkpoint " << s.checkpoint.string() << "\nmodel " << s.model.string() << "\n";
        } else if (*c_render) {
            const SceneFile file = load_scene(scene_path);
            cmd_render(load_model(model_path), file.scene, camera, scale.value_or(1.0), filter_from_flags({}), out_dir);
        } else if (*c_eval) {
            const SceneFile file = load_scene(scene_path);
            if (cameras.empty()) cameras.push_back(file.scene.cameras.size() - 1);
            if (scale) scales = {*scale};
            const auto rows = cmd_eval(load_model(model_path), file, cameras, scales, filter_from_flags({}));
            write_eval(rows, out_dir);
            for (const auto& r : rows) {
                std::cout << "view " << r.camera << " x" << r.scale << " PSNR " << r.psnr << " SSIM " << r.ssim << "\n";
            }
        } else if (*c_filter) {
            if (!(w_step > 0.0) || !(w_max >= w_min)) throw ConfigError("window range is empty");
            std::vector<double> windows;
            const int n = static_cast<int>(std::floor((w_max - w_min) / w_step + 1e-9));
            for (int i = 0; i <= n; ++i) windows.push_back(w_min + w_step * i);
            const std::string csv = cmd_analyze_filter(windows, epsilon, sigma_g);
            if (out_dir.empty()) std::cout << csv;
            else write_text(out_dir, csv);
        } else if (*c_bench) {
            const SceneFile file = load_scene(scene_path);
            std::vector<std::pair<int, int>> res;
            for (const auto& r : resolutions) res.push_back(parse_resolution(r));
            const auto gs = model_path.empty() ? file.scene.gaussians : load_model(model_path);
            const std::string json = cmd_bench(gs, file.scene, res, repetitions);
            if (out_dir.empty()) std::cout << json;
            else write_text(out_dir, json);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const FormatError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
