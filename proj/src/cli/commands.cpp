// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/commands.hpp"

#include "arbigs/errors.hpp"
#include "arbigs/image_io.hpp"
#include "arbigs/losses.hpp"
#include "arbigs/ply.hpp"
#include "arbigs/protocol.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace arbigs {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
}

std::string scale_tag(double s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", s);
    return buf;
}

// Truth Gaussians with rate caches matching the in-memory synthetic scene.
Scene truth_scene(const SceneFile& file) {
    Scene truth;
    truth.gaussians = *file.ground_truth;
    truth.cameras = file.scene.cameras;
    truth.background = file.scene.background;
    if (!truth.gaussians.empty()) update_max_rates(truth.gaussians, truth.cameras);
    return truth;
}

} // namespace

std::vector<double> default_filter_windows() {
    std::vector<double> w;
    for (int i = 0; i <= 70; ++i) w.push_back(0.5 + 0.05 * i);
    return w;
}

std::vector<Gaussian3D> load_model(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.compare(0, sizeof(kCheckpointMagic), std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) == 0) {
        return checkpoint_gaussians(bytes);
    }
    return parse_ply(bytes);
}

fs::path cmd_synth(const SynthSpec& spec, const fs::path& out, double perturb) {
    SceneFile file;
    file.scene = synth_scene(spec);
    file.ground_truth = file.scene.gaussians;
    file.scene.gaussians = perturb_gaussians(file.scene.gaussians, spec.seed + 1, perturb);
    return save_scene(file, out);
}

TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log, const fs::path& resume) {
    cfg.validate();
    if (cfg.scene.empty()) throw ConfigError("config needs a scene path");
    const SceneFile file = load_scene(cfg.scene);
    const fs::path out = cfg.output_dir;
    fs::create_directories(out / "renders");
    write_file(out / "config.json", run_config_to_json(cfg));

    std::unique_ptr<PriorProvider> provider;
    if (cfg.use_prior) {
        if (cfg.provider_cmd.empty()) {
            provider = std::make_unique<MockProvider>();
        } else {
            provider = std::make_unique<ExternalProvider>(
                cfg.provider_cmd, std::chrono::milliseconds(static_cast<long long>(cfg.provider_timeout_s * 1000)));
        }
    }
    GroundTruthFn gt;
    std::shared_ptr<Scene> truth;
    if (file.ground_truth) {
        truth = std::make_shared<Scene>(truth_scene(file));
        gt = [truth](std::size_t cam, double s) { return render_ground_truth(*truth, cam, s); };
    }

    Trainer trainer(file.scene, cfg.train, provider.get(), gt);
    if (!resume.empty()) trainer.load_checkpoint(resume);
    TrainSummary summary;
    summary.checkpoint = out / "checkpoint.asgs";
    int last_stage = trainer.stage();
    const auto stage_outputs = [&](int stage) {
        if (stage < 0) return;
        for (double s : cfg.train.schedule.pool(static_cast<std::size_t>(stage))) {
            write_png(trainer.render(trainer.heldout_camera() < file.scene.cameras.size() ? trainer.heldout_camera() : 0, s),
                      out / "renders" / ("stage" + std::to_string(stage + 1) + "_s" + scale_tag(s) + ".png"));
        }
        trainer.save_checkpoint(summary.checkpoint);
    };
    trainer.run([&](const IterationLog& it) {
        if (it.iteration % 100 == 0) {
            log << (it.stage < 0 ? std::string("warm-up") : "stage " + std::to_string(it.stage + 1)) << " iter "
                << it.iteration << " cam " << it.camera << " s " << it.scale << " loss " << it.total << "\n";
        }
        if (trainer.stage() != last_stage) {
            stage_outputs(last_stage);
            last_stage = trainer.stage();
        } else if (cfg.checkpoint_interval > 0 && trainer.global_iteration() % cfg.checkpoint_interval == 0) {
            trainer.save_checkpoint(summary.checkpoint);
        }
    });
    if (trainer.stage() == last_stage && last_stage >= 0 &&
        static_cast<std::size_t>(last_stage) < cfg.train.schedule.stages.size()) {
        stage_outputs(last_stage);
    }
    trainer.save_checkpoint(summary.checkpoint);

    std::ostringstream csv;
    csv << "stage,scale,psnr,ssim\n";
    for (const auto& m : trainer.metrics()) {
        csv << m.stage + 1 << "," << m.scale << "," << m.psnr << "," << m.ssim << "\n";
        log << "stage " << m.stage + 1 << " held-out x" << m.scale << ": PSNR " << m.psnr << " SSIM " << m.ssim << "\n";
    }
    write_file(out / "metrics.csv", csv.str());
    summary.model = out / "model.ply";
    save_ply(trainer.gaussians(), summary.model, PlyPrecision::Float64);
    summary.metrics = trainer.metrics();

    const std::size_t held = trainer.heldout_camera();
    const bool has_ref = held < file.scene.reference_images.size() && file.scene.reference_images[held];
    if (!cfg.eval_scales.empty() && held < file.scene.cameras.size() && (file.ground_truth || has_ref)) {
        const auto rows = cmd_eval(trainer.gaussians(), file, {held}, cfg.eval_scales, cfg.train.filter);
        write_eval(rows, out);
        for (const auto& r : rows) log << "eval view " << r.camera << " x" << r.scale << ": PSNR " << r.psnr << "\n";
    }
    return summary;
}

Image cmd_render(const std::vector<Gaussian3D>& gaussians, const Scene& scene, std::size_t camera, double s,
                 const FilterConfig& filter, const fs::path& out_png) {
    if (camera >= scene.cameras.size()) throw ConfigError("camera " + std::to_string(camera) + " does not exist");
    std::vector<Gaussian3D> gs = gaussians;
    if (!gs.empty()) update_max_rates(gs, scene.cameras);
    RenderRequest req;
    req.camera = scene.cameras[camera];
    req.scale_factor = s;
    req.filter = filter;
    req.background = scene.background;
    Image img = render_forward(gs, req).image;
    if (!out_png.empty()) write_png(img, out_png);
    return img;
}

std::vector<EvalRow> cmd_eval(const std::vector<Gaussian3D>& gaussians, const SceneFile& file,
                              const std::vector<std::size_t>& cameras, const std::vector<double>& scales,
                              const FilterConfig& filter) {
    std::vector<EvalRow> rows;
    std::unique_ptr<Scene> truth;
    if (file.ground_truth) truth = std::make_unique<Scene>(truth_scene(file));
    for (std::size_t cam : cameras) {
        for (double s : scales) {
            const Image img = cmd_render(gaussians, file.scene, cam, s, filter, {});
            EvalRow row{cam, s, 0.0, 0.0, truth ? "oracle" : "image"};
            if (truth) {
                const Image gt = render_ground_truth(*truth, cam, s);
                row.psnr = psnr_report(img, gt);
                row.ssim = ssim(img, gt);
            } else {
                if (cam >= file.scene.reference_images.size() || !file.scene.reference_images[cam]) {
                    throw ConfigError("camera " + std::to_string(cam) + " has no reference image to evaluate against");
                }
                const Image& ref = *file.scene.reference_images[cam];
                const Image low = resize_bicubic(img, ref.width, ref.height);
                row.psnr = psnr_report(low, ref);
                row.ssim = ssim(low, ref);
            }
            rows.push_back(row);
        }
    }
    return rows;
}

void write_eval(const std::vector<EvalRow>& rows, const fs::path& dir) {
    fs::create_directories(dir);
    std::ostringstream csv;
    csv << "view,scale,psnr,ssim,reference\n";
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
        csv << r.camera << "," << r.scale << "," << r.psnr << "," << r.ssim << "," << r.reference << "\n";
        j.push_back({{"view", r.camera}, {"scale", r.scale}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"reference", r.reference}});
    }
    write_file(dir / "eval.csv", csv.str());
    write_file(dir / "eval.json", j.dump(2) + "\n");
}

std::string cmd_analyze_filter(const std::vector<double>& windows, double epsilon, double sigma_g) {
    FilterConfig cfg;
    cfg.epsilon = epsilon;
    cfg.validate();
    return approx_error_csv(approx_error_curve(windows, sigma_g, cfg));
}

std::string cmd_bench(const std::vector<Gaussian3D>& gaussians, const Scene& scene,
                      const std::vector<std::pair<int, int>>& resolutions, int repetitions) {
    if (scene.cameras.empty()) throw ConfigError("benchmark scene has no camera");
    std::vector<Gaussian3D> gs = gaussians;
    if (!gs.empty()) update_max_rates(gs, scene.cameras);
    const auto rows = run_benchmark(gs, scene.cameras[0], resolutions, repetitions, scene.background);
    return benchmark_json(rows, gs.size());
}

} // namespace arbigs
