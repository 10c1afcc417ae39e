// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/config.hpp"

#include "arbigs/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace arbigs {

using nlohmann::json;

namespace {

// Walks one JSON object, dispatching known keys and rejecting the rest.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("'" + name() + "' must be an object");
    }

    template <class T>
    Section& opt(const char* key, T& into) {
        seen_.push_back(key);
        if (!j_.contains(key)) return *this;
        try {
            into = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("'" + dotted(key) + "' has the wrong type");
        }
        return *this;
    }
    Section& sub(const char* key, const std::function<void(Section&)>& fn) {
        seen_.push_back(key);
        if (!j_.contains(key)) return *this;
        Section s(j_.at(key), dotted(key));
        fn(s);
        s.finish();
        return *this;
    }
    const json* raw(const char* key) {
        seen_.push_back(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }
    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
                throw ConfigError("unknown config key '" + dotted(key) + "'");
            }
        }
    }
    std::string dotted(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    std::string name() const { return path_.empty() ? "<root>" : path_; }
    const json& j_;
    std::string path_;
    std::vector<std::string> seen_;
};

} // namespace

void RunConfig::validate() const {
    train.validate();
    if (!(provider_timeout_s > 0.0)) throw ConfigError("provider_timeout_s must be positive");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be non-negative");
    for (double s : eval_scales) {
        if (!(s >= 1.0)) throw ConfigError("eval scales must be >= 1");
    }
}

RunConfig parse_run_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    TrainConfig& t = c.train;
    Section root(j, "");
    root.opt("scene", c.scene)
        .opt("output_dir", c.output_dir)
        .opt("seed", t.seed)
        .sub("provider",
             [&](Section& s) {
                 s.opt("command", c.provider_cmd).opt("enabled", c.use_prior).opt("timeout_s", c.provider_timeout_s);
             })
        .sub("filter",
             [&](Section& s) {
                 s.opt("gamma", t.filter.gamma)
                     .opt("epsilon", t.filter.epsilon)
                     .opt("scale_aware_3d", t.filter.scale_aware_3d)
                     .opt("scale_aware_2d", t.filter.scale_aware_2d);
             })
        .sub("loss",
             [&](Section& s) {
                 s.opt("lds", t.weights.lds).opt("tex", t.weights.tex).opt("str", t.weights.str).opt("lambda",
                                                                                                     t.weights.lambda);
             })
        .sub("prior",
             [&](Section& s) {
                 std::string weighting = to_string(t.prior.weighting);
                 s.opt("n", t.prior.n)
                     .opt("start_timestep", t.prior.start_timestep)
                     .opt("weighting", weighting)
                     .opt("weight_scale", t.prior.weight_scale);
                 t.prior.weighting = parse_weight_schedule(weighting);
             })
        .sub("lr",
             [&](Section& s) {
                 s.opt("position", t.lr.position)
                     .opt("position_final_factor", t.lr.position_final_factor)
                     .opt("rotation", t.lr.rotation)
                     .opt("scale", t.lr.scale)
                     .opt("opacity", t.lr.opacity)
                     .opt("color", t.lr.color);
             })
        .sub("densify",
             [&](Section& s) {
                 s.opt("enabled", t.densify.enabled)
                     .opt("interval", t.densify.interval)
                     .opt("grad_threshold", t.densify.grad_threshold)
                     .opt("clone_max_scale", t.densify.clone_max_scale)
                     .opt("prune_opacity", t.densify.prune_opacity);
             })
        .sub("training", [&](Section& s) {
            s.opt("warmup_iterations", t.warmup_iterations)
                .opt("rate_refresh_interval", t.rate_refresh_interval)
                .opt("literal_previous_render", t.literal_previous_render)
                .opt("orthogonal_min_angle", t.orthogonal_min_angle)
                .opt("heldout_camera", t.heldout_camera)
                .opt("checkpoint_interval", c.checkpoint_interval)
                .opt("eval_scales", c.eval_scales);
            if (const json* stages = s.raw("stages")) {
                if (!stages->is_array()) throw ConfigError("'training.stages' must be an array");
                t.schedule.stages.clear();
                for (std::size_t i = 0; i < stages->size(); ++i) {
                    StageSpec spec;
                    Section st((*stages)[i], "training.stages[" + std::to_string(i) + "]");
                    st.opt("max_scale", spec.max_scale).opt("iterations", spec.iterations);
                    st.finish();
                    t.schedule.stages.push_back(spec);
                }
            }
        });
    root.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& c) {
    const TrainConfig& t = c.train;
    json j;
    j["scene"] = c.scene;
    j["output_dir"] = c.output_dir;
    j["seed"] = t.seed;
    j["provider"] = {{"command", c.provider_cmd}, {"enabled", c.use_prior}, {"timeout_s", c.provider_timeout_s}};
    j["filter"] = {{"gamma", t.filter.gamma},
                   {"epsilon", t.filter.epsilon},
                   {"scale_aware_3d", t.filter.scale_aware_3d},
                   {"scale_aware_2d", t.filter.scale_aware_2d}};
    j["loss"] = {{"lds", t.weights.lds}, {"tex", t.weights.tex}, {"str", t.weights.str}, {"lambda", t.weights.lambda}};
    j["prior"] = {{"n", t.prior.n},
                  {"start_timestep", t.prior.start_timestep},
                  {"weighting", to_string(t.prior.weighting)},
                  {"weight_scale", t.prior.weight_scale}};
    j["lr"] = {{"position", t.lr.position}, {"position_final_factor", t.lr.position_final_factor},
               {"rotation", t.lr.rotation}, {"scale", t.lr.scale},
               {"opacity", t.lr.opacity},   {"color", t.lr.color}};
    j["densify"] = {{"enabled", t.densify.enabled},
                    {"interval", t.densify.interval},
                    {"grad_threshold", t.densify.grad_threshold},
                    {"clone_max_scale", t.densify.clone_max_scale},
                    {"prune_opacity", t.densify.prune_opacity}};
    json stages = json::array();
    for (const auto& s : t.schedule.stages) stages.push_back({{"max_scale", s.max_scale}, {"iterations", s.iterations}});
    j["training"] = {{"warmup_iterations", t.warmup_iterations},
                     {"rate_refresh_interval", t.rate_refresh_interval},
                     {"literal_previous_render", t.literal_previous_render},
                     {"orthogonal_min_angle", t.orthogonal_min_angle},
                     {"heldout_camera", t.heldout_camera},
                     {"checkpoint_interval", c.checkpoint_interval},
                     {"eval_scales", c.eval_scales},
                     {"stages", stages}};
    return j.dump(2) + "\n";
}

} // namespace arbigs
