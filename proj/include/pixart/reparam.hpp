#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pixart/checkpoint.hpp"
#include "pixart/model.hpp"

// Checkpoint surgery: load a pretrained class-conditional model into the
// adaln-single t2i architecture so that at the selected timestep t* (500 by
// default, with no class condition) both networks produce identical
// modulation tuples, and — because the fresh cross-attention starts as the
// identity — identical outputs.
//
// The shared modulation MLP is taken verbatim from block 0, which forces
// E_0 = 0 exactly; every other offset is E_i = f_i(e(t*)) - f_0(e(t*)).
// The final layer gets the same treatment: its MLP is copied, so its
// dedicated offset is exactly zero.

namespace pixart {

struct SurgeryReport {
    std::vector<std::string> copied;
    std::vector<std::string> zero_initialized;
    std::vector<std::string> freshly_initialized;
    std::vector<std::string> derived;
    real max_modulation_residual = 0;
    int t_star = 500;
    uint64_t fresh_seed = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["copied"] = copied;
        j["zero_initialized"] = zero_initialized;
        j["freshly_initialized"] = freshly_initialized;
        j["derived"] = derived;
        j["max_modulation_residual"] = max_modulation_residual;
        j["t_star"] = t_star;
        j["fresh_seed"] = fresh_seed;
        return j;
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw DataError("cannot open " + path + " for writing");
        f << to_json().dump(2) << "\n";
    }
};

// Per-block L-inf distance between the two models' modulation tuples at
// timestep t, class/text conditions absent. Pure diagnostic; calling it
// twice yields the same vector.
inline std::vector<real> modulation_residual(const Model& source, const Model& target, real t) {
    if (source.config().depth != target.config().depth)
        throw SurgeryError("modulation_residual: depth mismatch");
    auto src = source.modulation_tuples(t, Conditioning::none());
    auto tgt = target.modulation_tuples(t, Conditioning::none());
    std::vector<real> out(src.size(), 0.0);
    for (size_t i = 0; i < src.size(); ++i) {
        real worst = 0;
        for (size_t j = 0; j < src[i].numel(); ++j)
            worst = std::max(worst, std::abs(src[i].data()[j] - tgt[i].data()[j]));
        out[i] = worst;
    }
    return out;
}

struct SurgeryResult {
    Checkpoint checkpoint;
    SurgeryReport report;
};

inline SurgeryResult reparameterize(const Checkpoint& source, int t_star = 500,
                                    uint64_t fresh_seed = 0,
                                    std::optional<ModelConfig> target_config = std::nullopt) {
    if (source.config.variant != Variant::dit_class_conditional)
        throw SurgeryError("reparameterize expects a dit_class_conditional source, got " +
                           std::string(variant_name(source.config.variant)));

    ModelConfig tcfg = target_config.value_or([&] {
        ModelConfig c = source.config;
        c.variant = Variant::t2i_adaln_single;
        return c;
    }());
    tcfg.variant = Variant::t2i_adaln_single;
    {
        std::string bad;
        auto differs = [&](const char* field, int a, int b) {
            if (a != b) bad += std::string(bad.empty() ? "" : ", ") + field + " " +
                               std::to_string(a) + " vs " + std::to_string(b);
        };
        differs("hidden_size", source.config.hidden_size, tcfg.hidden_size);
        differs("depth", source.config.depth, tcfg.depth);
        differs("num_heads", source.config.num_heads, tcfg.num_heads);
        differs("patch_size", source.config.patch_size, tcfg.patch_size);
        differs("latent_channels", source.config.latent_channels, tcfg.latent_channels);
        if (!bad.empty()) throw SurgeryError("incompatible configs for surgery: " + bad);
    }

    Model src_model = source.to_model();
    // fresh target supplies the cross-attention and caption-embedder init
    Model tgt_model(tcfg, fresh_seed);

    SurgeryReport report;
    report.t_star = t_star;
    report.fresh_seed = fresh_seed;

    const int h = tcfg.hidden_size;
    // e(t*) and the per-block tuples of the source, with the class term absent
    auto src_tuples = src_model.modulation_tuples(static_cast<real>(t_star), Conditioning::none());

    auto copy_weight = [&](const std::string& name, const std::string& from) {
        tgt_model.set_param(name, src_model.param(from).detach(true));
    };

    for (const WeightSpec& spec : weight_specs(tcfg)) {
        const std::string& name = spec.name;
        const std::string role = name.substr(name.rfind('.') + 1);
        if (name.rfind("patch_embed.", 0) == 0 || name.rfind("time_embed.", 0) == 0 ||
            name.find(".sa_") != std::string::npos || name.find(".mlp_") != std::string::npos ||
            name == "final.g.linear_weight" || name == "final.g.linear_bias" ||
            name == "final.g.adaln_weight" || name == "final.g.adaln_bias") {
            copy_weight(name, name);
            report.copied.push_back(name);
        } else if (name == "global_mod.g.weight") {
            copy_weight(name, "block.0.adaln_weight");
            report.derived.push_back(name);
        } else if (name == "global_mod.g.bias") {
            copy_weight(name, "block.0.adaln_bias");
            report.derived.push_back(name);
        } else if (role == "adaln_embed" && name.rfind("block.", 0) == 0) {
            const int i = std::stoi(name.substr(6, name.find('.', 6) - 6));
            std::vector<real> e(static_cast<size_t>(6) * h);
            for (size_t j = 0; j < e.size(); ++j)
                e[j] = src_tuples[i].data()[j] - src_tuples[0].data()[j];
            tgt_model.set_param(name, Tensor::from({6 * h}, std::move(e), true));
            report.derived.push_back(name);
        } else if (name == "final.g.adaln_embed") {
            tgt_model.set_param(name, Tensor::zeros({2 * h}, true));
            report.derived.push_back(name);
        } else if (role == "ca_wo" || role == "ca_bo") {
            // already zero from init; listed separately from the random fresh weights
            report.zero_initialized.push_back(name);
        } else {
            // fresh cross-attention q/k/v and the caption embedder stack
            report.freshly_initialized.push_back(name);
        }
    }

    auto residuals =
        modulation_residual(src_model, tgt_model, static_cast<real>(t_star));
    report.max_modulation_residual = *std::max_element(residuals.begin(), residuals.end());

    std::map<std::string, std::string> meta = source.metadata;
    meta["surgery"] = "reparam";
    meta["surgery_t_star"] = std::to_string(t_star);
    meta["surgery_fresh_seed"] = std::to_string(fresh_seed);
    return {Checkpoint::from_model(tgt_model, std::move(meta)), std::move(report)};
}

}  // namespace pixart
