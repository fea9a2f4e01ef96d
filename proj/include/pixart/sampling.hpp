#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pixart/dataops.hpp"
#include "pixart/diffusion.hpp"
#include "pixart/pipeline.hpp"

// Batch sampling driver behind the `sample` CLI verb: one output per
// (prompt, seed, cfg) combination, written as latent tensor files plus a
// metadata line recording every knob.

namespace pixart {

// guidance scales enumerated by the sweep flag
inline const std::vector<real>& cfg_sweep_scales() {
    static const std::vector<real> scales = {1.5, 2.0, 3.0, 4.0, 5.0, 6.0};
    return scales;
}

struct SampleRequest {
    std::vector<std::string> prompts;
    SamplerConfig sampler;
    bool cfg_sweep = false;
    std::vector<uint64_t> seeds;  // defaults to {sampler.seed}
    int resolution = 16;          // image-space square edge
    int codec_downsample = 2;
    int schedule_T = 1000;
    std::string out_dir;
};

struct SampleOutput {
    std::string prompt;
    uint64_t seed = 0;
    real cfg_scale = 1.0;
    std::string latent_path;

    nlohmann::json meta(const SampleRequest& req) const {
        nlohmann::json j;
        j["prompt"] = prompt;
        j["seed"] = seed;
        j["cfg_scale"] = cfg_scale;
        j["sampler"] = sampler_name(req.sampler.kind);
        j["steps"] = req.sampler.steps;
        j["resolution"] = req.resolution;
        j["codec_downsample"] = req.codec_downsample;
        j["schedule_T"] = req.schedule_T;
        j["latent_path"] = latent_path;
        return j;
    }
};

// Runs every (prompt, seed, cfg) combination through the sampler. An empty
// prompt list is a no-op success. Only t2i checkpoints can be sampled from
// with prompts; a class-conditional model is a config error here.
inline std::vector<SampleOutput> sample_run(const Model& model, const SampleRequest& req) {
    if (!is_t2i(model.config().variant))
        throw ConfigError("checkpoint variant " +
                          std::string(variant_name(model.config().variant)) +
                          " is class-conditional; `sample` needs a t2i checkpoint");
    req.sampler.validate();
    if (req.resolution % (req.codec_downsample * model.config().patch_size) != 0)
        throw ConfigError("resolution must be divisible by codec_downsample * patch_size");

    std::vector<SampleOutput> outputs;
    if (req.prompts.empty()) return outputs;
    std::filesystem::create_directories(req.out_dir);

    const int edge = req.resolution / req.codec_downsample;
    const Shape latent_shape{model.config().latent_channels, edge, edge};
    DiffusionSchedule schedule = DiffusionSchedule::linear(req.schedule_T);
    HashedTextProvider provider(model.config().text_dim, model.config().max_text_tokens);
    ModelPredictor predictor(model);

    const std::vector<uint64_t> seeds = req.seeds.empty()
                                            ? std::vector<uint64_t>{req.sampler.seed}
                                            : req.seeds;
    const std::vector<real> scales =
        req.cfg_sweep ? cfg_sweep_scales() : std::vector<real>{req.sampler.cfg_scale};

    for (size_t pi = 0; pi < req.prompts.size(); ++pi) {
        TextCondition text = provider.embed(req.prompts[pi]);
        Conditioning cond =
            text.is_null ? Conditioning::none() : Conditioning::of_text(std::move(text));
        for (uint64_t seed : seeds) {
            for (real scale : scales) {
                SamplerConfig cfg = req.sampler;
                cfg.seed = seed;
                cfg.cfg_scale = scale;
                Tensor latent = sample(predictor, latent_shape, cond, cfg, schedule);

                SampleOutput out;
                out.prompt = req.prompts[pi];
                out.seed = seed;
                out.cfg_scale = scale;
                char name[128];
                std::snprintf(name, sizeof(name), "p%03zu_s%llu_cfg%g.ten", pi,
                              static_cast<unsigned long long>(seed), scale);
                out.latent_path = (std::filesystem::path(req.out_dir) / name).string();
                save_tensor(latent, out.latent_path);
                outputs.push_back(std::move(out));
            }
        }
    }

    std::ofstream meta((std::filesystem::path(req.out_dir) / "metadata.jsonl").string(),
                       std::ios::trunc);
    for (const SampleOutput& out : outputs) meta << out.meta(req).dump() << "\n";
    return outputs;
}

// -----------------------------------------------------------------------
// stage config from key/value pairs (plan files and train --config)

inline StageConfig stage_from_kv(const std::map<std::string, std::string>& kv) {
    StageConfig s;
    auto get = [&](const char* key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        return it->second;
    };
    auto geti = [&](const char* key, int& slot) {
        if (auto v = get(key)) slot = std::stoi(*v);
    };
    auto getr = [&](const char* key, real& slot) {
        if (auto v = get(key)) slot = std::stod(*v);
    };
    auto getb = [&](const char* key, bool& slot) {
        if (auto v = get(key)) slot = (*v == "true" || *v == "1" || *v == "yes");
    };
    if (auto v = get("name")) s.name = *v;
    geti("resolution", s.resolution);
    geti("steps", s.steps);
    geti("batch_size", s.batch_size);
    getr("lr", s.lr);
    getr("weight_decay", s.weight_decay);
    getb("multi_aspect", s.multi_aspect);
    if (auto v = get("manifest")) s.manifest_path = *v;
    if (auto v = get("init_from")) s.init_from = InitFrom::parse(*v);
    if (auto v = get("seed")) s.seed = std::stoull(*v);
    geti("checkpoint_every", s.checkpoint_every);
    geti("bucket_count", s.bucket_count);
    getr("ratio_min", s.ratio_min);
    getr("ratio_max", s.ratio_max);
    geti("codec_downsample", s.codec_downsample);
    geti("schedule_T", s.schedule_T);
    getr("null_cond_prob", s.null_cond_prob);
    getb("overfit", s.overfit);
    if (auto v = get("variant")) s.model.variant = variant_from_name(*v);
    geti("hidden_size", s.model.hidden_size);
    geti("depth", s.model.depth);
    geti("num_heads", s.model.num_heads);
    geti("patch_size", s.model.patch_size);
    geti("latent_channels", s.model.latent_channels);
    geti("text_dim", s.model.text_dim);
    geti("max_text_tokens", s.model.max_text_tokens);
    geti("time_embed_freq_dim", s.model.time_embed_freq_dim);
    geti("num_classes", s.model.num_classes);
    geti("base_grid", s.model.base_grid);
    return s;
}

// Flat `key = value` file ('#' comments), the train-config format.
inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config file " + path + " line " + std::to_string(lineno) +
                              ": expected key = value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

// Plan file: `key = value` lines under [stage.N] sections, N starting at 1.
// '#' starts a comment.
inline std::vector<StageConfig> parse_plan_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open plan file " + path);
    std::map<int, std::map<std::string, std::string>> sections;
    int current = -1;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.rfind("[stage.", 0) != 0)
                throw ConfigError("plan file " + path + " line " + std::to_string(lineno) +
                                  ": expected [stage.N]");
            current = std::stoi(line.substr(7, line.size() - 8));
            if (current < 1 || sections.count(current))
                throw ConfigError("plan file " + path + ": bad or duplicate stage index " +
                                  std::to_string(current));
            sections[current];
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos || current < 0)
            throw ConfigError("plan file " + path + " line " + std::to_string(lineno) +
                              ": expected key = value inside a [stage.N] section");
        sections[current][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    std::vector<StageConfig> stages;
    int expect = 1;
    for (const auto& [idx, kv] : sections) {
        if (idx != expect++)
            throw ConfigError("plan file " + path + ": stage indices must be 1..N contiguous");
        stages.push_back(stage_from_kv(kv));
    }
    return stages;
}

}  // namespace pixart
