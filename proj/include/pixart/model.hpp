#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pixart/config.hpp"
#include "pixart/tensor.hpp"

// The denoising network. A latent [C x H x W] is patchified into tokens,
// processed by `depth` transformer blocks and projected back to a noise
// prediction of the same shape. Blocks are modulated by a six-way
// scale/shift/gate tuple derived from the timestep: per-block MLPs in the
// classic variants, or one shared MLP plus per-block trainable offsets
// (S_i = S_bar + E_i) in the adaln-single variant. The t2i variants add a
// cross-attention layer between self-attention and the MLP whose output
// projection starts at zero, so a fresh cross-attention layer is exactly
// the identity.

namespace pixart {

// Additive score bias that underflows exp() to exactly zero, so masked
// condition tokens carry zero attention weight.
constexpr real kMaskedScore = -1e30;

// -----------------------------------------------------------------------
// modulation tuple

// The six adaLN vectors, each hidden_size long: shifts beta1/beta2, scales
// gamma1/gamma2, gates alpha1/alpha2 (1 = self-attention branch, 2 = MLP
// branch). Packed layout is one [6*hidden] vector in exactly that order.
struct ModulationTuple {
    Tensor beta1, beta2, gamma1, gamma2, alpha1, alpha2;

    static ModulationTuple unpack(const Tensor& packed) {
        if (packed.ndim() != 1 || packed.dim(0) % 6 != 0)
            throw ShapeError("modulation tuple expects a [6*hidden] vector, got " +
                             shape_str(packed.shape()));
        const int h = packed.dim(0) / 6;
        ModulationTuple m;
        m.beta1 = slice_vec(packed, 0, h);
        m.beta2 = slice_vec(packed, h, 2 * h);
        m.gamma1 = slice_vec(packed, 2 * h, 3 * h);
        m.gamma2 = slice_vec(packed, 3 * h, 4 * h);
        m.alpha1 = slice_vec(packed, 4 * h, 5 * h);
        m.alpha2 = slice_vec(packed, 5 * h, 6 * h);
        return m;
    }

    Tensor packed() const {
        auto row = [](const Tensor& v) { return reshape(v, {1, v.dim(0)}); };
        Tensor cat = concat_cols({row(beta1), row(beta2), row(gamma1), row(gamma2), row(alpha1),
                                  row(alpha2)});
        return reshape(cat, {cat.dim(1)});
    }
};

// -----------------------------------------------------------------------
// conditioning

struct TextCondition {
    Tensor tokens;              // [n_tok x text_dim]
    std::vector<uint8_t> mask;  // 1 = real token, 0 = padding
    bool is_null = false;       // sentinel: use the model's learned null token

    static TextCondition null() {
        TextCondition c;
        c.is_null = true;
        return c;
    }

    int token_count() const { return is_null ? 1 : tokens.dim(0); }
};

struct Conditioning {
    std::optional<int> class_id;          // dit variant
    std::optional<TextCondition> text;    // t2i variants

    static Conditioning none() { return {}; }
    static Conditioning of_class(int c) {
        Conditioning k;
        k.class_id = c;
        return k;
    }
    static Conditioning of_text(TextCondition t) {
        Conditioning k;
        k.text = std::move(t);
        return k;
    }
};

// -----------------------------------------------------------------------
// fixed (non-learned) embeddings

// Half-sin / half-cos frequency features. t = 0 gives zeros then ones.
inline Tensor timestep_frequency(real t, int freq_dim) {
    if (freq_dim <= 0 || freq_dim % 2 != 0)
        throw ConfigError("timestep frequency dim must be even and positive, got " +
                          std::to_string(freq_dim));
    const int half = freq_dim / 2;
    std::vector<real> out(static_cast<size_t>(freq_dim));
    for (int j = 0; j < half; ++j) {
        const real freq = std::exp(-std::log(10000.0) * static_cast<real>(j) / half);
        out[j] = std::sin(t * freq);
        out[half + j] = std::cos(t * freq);
    }
    return Tensor::from({freq_dim}, std::move(out));
}

// 2-d sinusoidal positional table for a (gh x gw) token grid, row-major
// tokens. When a base grid is given, positions are rescaled per axis by
// base/actual so frequencies stay calibrated across resolutions and aspect
// ratios.
inline Tensor positional_embedding_2d(int gh, int gw, int hidden, int base_gh = 0,
                                      int base_gw = 0) {
    if (hidden % 4 != 0) throw ConfigError("2-d positional embedding needs hidden % 4 == 0");
    const int axis_dim = hidden / 2;
    const int half = axis_dim / 2;
    const real sy = base_gh > 0 ? static_cast<real>(base_gh) / gh : 1.0;
    const real sx = base_gw > 0 ? static_cast<real>(base_gw) / gw : 1.0;
    std::vector<real> out(static_cast<size_t>(gh) * gw * hidden);
    for (int y = 0; y < gh; ++y) {
        for (int x = 0; x < gw; ++x) {
            real* row = &out[(static_cast<size_t>(y) * gw + x) * hidden];
            for (int j = 0; j < half; ++j) {
                const real freq = std::exp(-std::log(10000.0) * static_cast<real>(j) / half);
                row[j] = std::sin(y * sy * freq);
                row[half + j] = std::cos(y * sy * freq);
                row[axis_dim + j] = std::sin(x * sx * freq);
                row[axis_dim + half + j] = std::cos(x * sx * freq);
            }
        }
    }
    return Tensor::from({gh * gw, hidden}, std::move(out));
}

// -----------------------------------------------------------------------
// weight table

enum class InitKind { zero, scaled_normal, embedding_normal, unit_normal };

struct WeightSpec {
    std::string name;  // grammar: <module>.<block_index|g>.<role>
    Shape shape;
    InitKind init;
};

// Single source of truth for names, shapes and init of every trainable
// weight of a variant. Metadata only; allocation happens in Model.
inline std::vector<WeightSpec> weight_specs(const ModelConfig& cfg) {
    cfg.validate();
    const int h = cfg.hidden_size;
    const int mh = cfg.mlp_ratio * h;
    const int pe = cfg.patch_elems();
    std::vector<WeightSpec> specs;
    auto push = [&](std::string name, Shape shape, InitKind init) {
        specs.push_back({std::move(name), std::move(shape), init});
    };

    push("patch_embed.g.weight", {pe, h}, InitKind::scaled_normal);
    push("patch_embed.g.bias", {h}, InitKind::zero);
    push("time_embed.g.fc1_weight", {cfg.time_embed_freq_dim, h}, InitKind::scaled_normal);
    push("time_embed.g.fc1_bias", {h}, InitKind::zero);
    push("time_embed.g.fc2_weight", {h, h}, InitKind::scaled_normal);
    push("time_embed.g.fc2_bias", {h}, InitKind::zero);

    if (cfg.variant == Variant::dit_class_conditional) {
        push("class_embed.g.table", {cfg.num_classes, h}, InitKind::embedding_normal);
    } else {
        push("caption_embed.g.fc1_weight", {cfg.text_dim, h}, InitKind::scaled_normal);
        push("caption_embed.g.fc1_bias", {h}, InitKind::zero);
        push("caption_embed.g.fc2_weight", {h, h}, InitKind::scaled_normal);
        push("caption_embed.g.fc2_bias", {h}, InitKind::zero);
        push("caption_embed.g.null_token", {1, cfg.text_dim}, InitKind::unit_normal);
    }

    for (int i = 0; i < cfg.depth; ++i) {
        const std::string b = "block." + std::to_string(i) + ".";
        for (const char* r : {"sa_wq", "sa_wk", "sa_wv", "sa_wo"})
            push(b + r, {h, h}, InitKind::scaled_normal);
        for (const char* r : {"sa_bq", "sa_bk", "sa_bv", "sa_bo"}) push(b + r, {h}, InitKind::zero);
        if (is_t2i(cfg.variant)) {
            // kv attend over caption features already projected to hidden
            // size; only the output projection starts at zero.
            push(b + "ca_wq", {h, h}, InitKind::scaled_normal);
            push(b + "ca_bq", {h}, InitKind::zero);
            push(b + "ca_wk", {h, h}, InitKind::scaled_normal);
            push(b + "ca_bk", {h}, InitKind::zero);
            push(b + "ca_wv", {h, h}, InitKind::scaled_normal);
            push(b + "ca_bv", {h}, InitKind::zero);
            push(b + "ca_wo", {h, h}, InitKind::zero);
            push(b + "ca_bo", {h}, InitKind::zero);
        }
        push(b + "mlp_fc1_weight", {h, mh}, InitKind::scaled_normal);
        push(b + "mlp_fc1_bias", {mh}, InitKind::zero);
        push(b + "mlp_fc2_weight", {mh, h}, InitKind::scaled_normal);
        push(b + "mlp_fc2_bias", {h}, InitKind::zero);
        if (cfg.variant == Variant::t2i_adaln_single) {
            push(b + "adaln_embed", {6 * h}, InitKind::zero);
        } else {
            push(b + "adaln_weight", {h, 6 * h}, InitKind::zero);
            push(b + "adaln_bias", {6 * h}, InitKind::zero);
        }
    }

    if (cfg.variant == Variant::t2i_adaln_single) {
        push("global_mod.g.weight", {h, 6 * h}, InitKind::zero);
        push("global_mod.g.bias", {6 * h}, InitKind::zero);
        push("final.g.adaln_weight", {h, 2 * h}, InitKind::zero);
        push("final.g.adaln_bias", {2 * h}, InitKind::zero);
        push("final.g.adaln_embed", {2 * h}, InitKind::zero);
    } else {
        push("final.g.adaln_weight", {h, 2 * h}, InitKind::zero);
        push("final.g.adaln_bias", {2 * h}, InitKind::zero);
    }
    push("final.g.linear_weight", {h, pe}, InitKind::zero);
    push("final.g.linear_bias", {pe}, InitKind::zero);
    return specs;
}

// parameter-group name for a weight, the granularity param_count reports at
inline std::string param_group(const std::string& name) {
    auto field = [&](int idx) {
        size_t a = name.find('.');
        size_t b = name.find('.', a + 1);
        if (idx == 0) return name.substr(0, a);
        if (idx == 1) return name.substr(a + 1, b - a - 1);
        return name.substr(b + 1);
    };
    const std::string module = field(0);
    if (module == "block") {
        const std::string role = field(2);
        if (role.rfind("sa_", 0) == 0) return "self_attn";
        if (role.rfind("ca_", 0) == 0) return "cross_attn";
        if (role.rfind("mlp_", 0) == 0) return "mlp";
        return "adaln";
    }
    if (module == "global_mod") return "adaln";
    if (module == "final") return "final_layer";
    return module;  // patch_embed, time_embed, class_embed, caption_embed
}

struct ParamCountReport {
    std::map<std::string, long long> groups;
    long long total = 0;
};

// Exact per-group parameter counts from shapes alone; nothing is allocated.
inline ParamCountReport param_count(const ModelConfig& cfg) {
    ParamCountReport report;
    for (const WeightSpec& spec : weight_specs(cfg)) {
        long long n = 1;
        for (int d : spec.shape) n *= d;
        report.groups[param_group(spec.name)] += n;
        report.total += n;
    }
    return report;
}

// -----------------------------------------------------------------------
// model

class Model {
public:
    Model(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        for (const WeightSpec& spec : weight_specs(cfg_)) {
            Rng rng(seed, hash64(spec.name));
            weights_.emplace(spec.name, init_weight(spec, rng));
        }
    }

    Model(ModelConfig cfg, std::map<std::string, Tensor> weights)
        : cfg_(cfg), weights_(std::move(weights)) {
        cfg_.validate();
        for (const WeightSpec& spec : weight_specs(cfg_)) {
            auto it = weights_.find(spec.name);
            if (it == weights_.end()) throw DataError("missing weight " + spec.name);
            if (it->second.shape() != spec.shape)
                throw DataError("weight " + spec.name + " has shape " +
                                shape_str(it->second.shape()) + ", expected " +
                                shape_str(spec.shape));
        }
        if (weights_.size() != weight_specs(cfg_).size())
            throw DataError("unexpected extra weights for variant " +
                            std::string(variant_name(cfg_.variant)));
    }

    const ModelConfig& config() const { return cfg_; }
    std::map<std::string, Tensor>& params() { return weights_; }
    const std::map<std::string, Tensor>& params() const { return weights_; }

    Tensor& param(const std::string& name) {
        auto it = weights_.find(name);
        if (it == weights_.end()) throw DataError("no such weight: " + name);
        return it->second;
    }
    const Tensor& param(const std::string& name) const {
        return const_cast<Model*>(this)->param(name);
    }
    void set_param(const std::string& name, Tensor t) {
        Tensor& slot = param(name);
        if (t.shape() != slot.shape())
            throw ShapeError("set_param " + name + ": shape " + shape_str(t.shape()) +
                             " != " + shape_str(slot.shape()));
        slot = std::move(t);
    }

    // ---- embedding paths ------------------------------------------------

    // Frequency features then a two-layer MLP with SiLU in between.
    Tensor time_embedding(real t) const {
        Tensor f = timestep_frequency(t, cfg_.time_embed_freq_dim);
        Tensor h = add(matmul(f, param("time_embed.g.fc1_weight")),
                       param("time_embed.g.fc1_bias"));
        return add(matmul(silu(h), param("time_embed.g.fc2_weight")),
                   param("time_embed.g.fc2_bias"));
    }

    // Caption tokens projected to hidden size: [n_tok x hidden] plus the
    // mask bias row used by cross-attention. Null conditions resolve to the
    // learned null token.
    struct ContextTokens {
        Tensor tokens;     // [n x hidden]
        Tensor mask_bias;  // [n], 0 for real tokens, kMaskedScore for padding
    };

    ContextTokens caption_context(const TextCondition& cond) const {
        if (!is_t2i(cfg_.variant))
            throw ContractError("caption_context on a class-conditional model");
        Tensor raw;
        std::vector<uint8_t> mask;
        if (cond.is_null) {
            raw = param("caption_embed.g.null_token");
            mask = {1};
        } else {
            raw = cond.tokens;
            mask = cond.mask;
            if (!raw.defined() || raw.ndim() != 2 || raw.dim(0) < 1)
                throw ContractError("text condition must carry at least one token");
            if (raw.dim(1) != cfg_.text_dim)
                throw ShapeError("text condition dim " + std::to_string(raw.dim(1)) +
                                 " != text_dim " + std::to_string(cfg_.text_dim));
            if (raw.dim(0) > cfg_.max_text_tokens)
                throw ContractError("text condition exceeds max_text_tokens");
            if (mask.size() != static_cast<size_t>(raw.dim(0)))
                throw ContractError("text condition mask length mismatch");
            bool any = false;
            for (uint8_t m : mask) any = any || m;
            if (!any) throw ContractError("text condition with every token masked");
        }
        Tensor h = add(matmul(raw, param("caption_embed.g.fc1_weight")),
                       param("caption_embed.g.fc1_bias"));
        Tensor projected = add(matmul(silu(h), param("caption_embed.g.fc2_weight")),
                               param("caption_embed.g.fc2_bias"));
        std::vector<real> bias(mask.size());
        for (size_t i = 0; i < mask.size(); ++i) bias[i] = mask[i] ? 0.0 : kMaskedScore;
        return {projected, Tensor::from({static_cast<int>(mask.size())}, std::move(bias))};
    }

    // Conditioning vector feeding per-block modulation MLPs: time embedding
    // plus class embedding (dit) or masked-mean text feature (t2i per-block).
    // An absent condition contributes nothing.
    Tensor condition_vector(const Tensor& t_emb, const Conditioning& cond,
                            const ContextTokens* ctx) const {
        if (cfg_.variant == Variant::dit_class_conditional) {
            if (!cond.class_id) return t_emb;
            const int c = *cond.class_id;
            if (c < 0 || c >= cfg_.num_classes)
                throw ContractError("class id " + std::to_string(c) + " out of range");
            std::vector<real> onehot(static_cast<size_t>(cfg_.num_classes), 0.0);
            onehot[static_cast<size_t>(c)] = 1.0;
            Tensor sel = Tensor::from({cfg_.num_classes}, std::move(onehot));
            return add(t_emb, matmul(sel, param("class_embed.g.table")));
        }
        if (cfg_.variant == Variant::t2i_adaln_per_block) {
            if (!ctx) return t_emb;
            // masked mean over real tokens
            const auto& bias = ctx->mask_bias.data();
            std::vector<real> w(bias.size());
            real count = 0;
            for (size_t i = 0; i < bias.size(); ++i) {
                w[i] = bias[i] == 0.0 ? 1.0 : 0.0;
                count += w[i];
            }
            Tensor wrow = Tensor::from({static_cast<int>(w.size())}, std::move(w));
            Tensor pooled = scale(matmul(wrow, ctx->tokens), 1.0 / count);
            return add(t_emb, pooled);
        }
        return t_emb;  // adaln-single: time only
    }

    // ---- modulation -----------------------------------------------------

    // Shared tuple S_bar = f(t_emb), computed once per forward pass.
    // Only meaningful on the adaln-single variant.
    Tensor global_modulation_packed(const Tensor& t_emb) const {
        if (cfg_.variant != Variant::t2i_adaln_single)
            throw ContractError("global modulation only exists on the adaln-single variant");
        return add(matmul(silu(t_emb), param("global_mod.g.weight")),
                   param("global_mod.g.bias"));
    }

    ModulationTuple global_modulation(const Tensor& t_emb) const {
        return ModulationTuple::unpack(global_modulation_packed(t_emb));
    }

    // S_i = S_bar + E_i.
    Tensor block_modulation_packed(const Tensor& s_bar_packed, int block) const {
        if (cfg_.variant != Variant::t2i_adaln_single)
            throw ContractError("block modulation offsets only exist on the adaln-single variant");
        if (block < 0 || block >= cfg_.depth)
            throw ContractError("block index " + std::to_string(block) + " out of range");
        return add(s_bar_packed, param("block." + std::to_string(block) + ".adaln_embed"));
    }

    ModulationTuple block_modulation(const ModulationTuple& s_bar, int block) const {
        return ModulationTuple::unpack(block_modulation_packed(s_bar.packed(), block));
    }

    // Per-block adaLN MLP of the per-block variants: S_i = W_i silu(cv) + b_i.
    Tensor per_block_modulation_packed(const Tensor& cond_vec, int block) const {
        if (cfg_.variant == Variant::t2i_adaln_single)
            throw ContractError("per-block modulation MLP does not exist on adaln-single");
        if (block < 0 || block >= cfg_.depth)
            throw ContractError("block index " + std::to_string(block) + " out of range");
        const std::string b = "block." + std::to_string(block) + ".";
        return add(matmul(silu(cond_vec), param(b + "adaln_weight")), param(b + "adaln_bias"));
    }

    // Packed S_i for every block at (t, cond); the surgery diagnostics hook.
    std::vector<Tensor> modulation_tuples(real t, const Conditioning& cond) const {
        Tensor t_emb = time_embedding(t);
        std::vector<Tensor> out;
        out.reserve(static_cast<size_t>(cfg_.depth));
        if (cfg_.variant == Variant::t2i_adaln_single) {
            Tensor s_bar = global_modulation_packed(t_emb);
            for (int i = 0; i < cfg_.depth; ++i) out.push_back(block_modulation_packed(s_bar, i));
        } else {
            std::optional<ContextTokens> ctx;
            if (is_t2i(cfg_.variant))
                ctx = caption_context(cond.text ? *cond.text : TextCondition::null());
            Tensor cv = condition_vector(t_emb, cond, ctx ? &*ctx : nullptr);
            for (int i = 0; i < cfg_.depth; ++i) out.push_back(per_block_modulation_packed(cv, i));
        }
        return out;
    }

    // ---- transformer pieces ----------------------------------------------

    // Pre-norm, scale/shift, multi-head self-attention, gated residual:
    // x + alpha1 * Attn(ss(LN(x), gamma1, beta1)).
    Tensor self_attention(int block, const Tensor& x, const ModulationTuple& mod) const {
        const std::string b = "block." + std::to_string(block) + ".";
        Tensor q_in = scale_shift(layer_norm(x), mod.gamma1, mod.beta1);
        Tensor att = attention(q_in, q_in, b + "sa_", nullptr);
        return add(x, mul(att, mod.alpha1));
    }

    // Queries from a non-affine LN of x, keys/values from the projected
    // caption tokens; ungated residual. Zero output projection at init makes
    // this the identity bitwise.
    Tensor cross_attention(int block, const Tensor& x, const ContextTokens& ctx) const {
        if (!is_t2i(cfg_.variant))
            throw ContractError("cross_attention on a class-conditional model");
        if (ctx.tokens.dim(0) < 1) throw ContractError("empty cross-attention condition");
        const std::string b = "block." + std::to_string(block) + ".";
        Tensor att = attention(layer_norm(x), ctx.tokens, b + "ca_", &ctx.mask_bias);
        return add(x, att);
    }

    Tensor mlp_branch(int block, const Tensor& x, const ModulationTuple& mod) const {
        const std::string b = "block." + std::to_string(block) + ".";
        Tensor h = scale_shift(layer_norm(x), mod.gamma2, mod.beta2);
        h = add(matmul(h, param(b + "mlp_fc1_weight")), param(b + "mlp_fc1_bias"));
        h = gelu(h);
        h = add(matmul(h, param(b + "mlp_fc2_weight")), param(b + "mlp_fc2_bias"));
        return add(x, mul(h, mod.alpha2));
    }

    // Full block: self-attention, cross-attention (t2i), pointwise MLP.
    Tensor pixart_block(int block, const Tensor& x, const ModulationTuple& mod,
                        const ContextTokens* ctx) const {
        Tensor h = self_attention(block, x, mod);
        if (is_t2i(cfg_.variant)) {
            if (!ctx) throw ContractError("t2i block requires a text context");
            h = cross_attention(block, h, *ctx);
        }
        return mlp_branch(block, h, mod);
    }

    // ---- forward ----------------------------------------------------------

    // Predicted noise for a latent at timestep t. Deterministic given
    // (weights, inputs).
    Tensor forward(const Tensor& latent, real t, const Conditioning& cond) const {
        if (latent.ndim() != 3 || latent.dim(0) != cfg_.latent_channels)
            throw ShapeError("forward expects [" + std::to_string(cfg_.latent_channels) +
                             "xHxW], got " + shape_str(latent.shape()));
        const int C = latent.dim(0), H = latent.dim(1), W = latent.dim(2);
        const int p = cfg_.patch_size;
        if (H % p != 0 || W % p != 0)
            throw ShapeError("latent dims H=" + std::to_string(H) + " W=" + std::to_string(W) +
                             " not divisible by patch size " + std::to_string(p));

        Tensor t_emb = time_embedding(t);
        std::optional<ContextTokens> ctx;
        if (is_t2i(cfg_.variant)) {
            TextCondition tc = cond.text ? *cond.text : TextCondition::null();
            ctx = caption_context(tc);
        }
        Tensor cond_vec = condition_vector(t_emb, cond, ctx ? &*ctx : nullptr);

        // patch embedding + positional table for the actual grid
        Tensor x = add(matmul(patch_rearrange(latent, p), param("patch_embed.g.weight")),
                       param("patch_embed.g.bias"));
        x = add(x, positional_embedding_2d(H / p, W / p, cfg_.hidden_size, cfg_.base_grid,
                                           cfg_.base_grid));

        Tensor s_bar;
        if (cfg_.variant == Variant::t2i_adaln_single) s_bar = global_modulation_packed(t_emb);
        for (int i = 0; i < cfg_.depth; ++i) {
            Tensor packed = cfg_.variant == Variant::t2i_adaln_single
                                ? block_modulation_packed(s_bar, i)
                                : per_block_modulation_packed(cond_vec, i);
            x = pixart_block(i, x, ModulationTuple::unpack(packed), ctx ? &*ctx : nullptr);
        }

        // final layer: LN, scale/shift from the time path, linear to p*p*C
        Tensor fin = final_modulation_packed(t_emb, cond_vec);
        const int h = cfg_.hidden_size;
        Tensor fshift = slice_vec(fin, 0, h);
        Tensor fscale = slice_vec(fin, h, 2 * h);
        x = scale_shift(layer_norm(x), fscale, fshift);
        x = add(matmul(x, param("final.g.linear_weight")), param("final.g.linear_bias"));
        return patch_merge(x, C, H, W, p);
    }

    // (shift, scale) for the final layer, mirroring the block rule per
    // variant: shared MLP + dedicated embedding on adaln-single, an own MLP
    // on the conditioning vector otherwise.
    Tensor final_modulation_packed(const Tensor& t_emb, const Tensor& cond_vec) const {
        if (cfg_.variant == Variant::t2i_adaln_single) {
            Tensor m = add(matmul(silu(t_emb), param("final.g.adaln_weight")),
                           param("final.g.adaln_bias"));
            return add(m, param("final.g.adaln_embed"));
        }
        return add(matmul(silu(cond_vec), param("final.g.adaln_weight")),
                   param("final.g.adaln_bias"));
    }

private:
    static Tensor init_weight(const WeightSpec& spec, Rng& rng) {
        switch (spec.init) {
            case InitKind::zero: return Tensor::zeros(spec.shape, true);
            case InitKind::scaled_normal: {
                const int fan_in = spec.shape.size() == 2 ? spec.shape[0] : spec.shape.back();
                return Tensor::randn(spec.shape, rng, 1.0 / std::sqrt(static_cast<real>(fan_in)),
                                     true);
            }
            case InitKind::embedding_normal: return Tensor::randn(spec.shape, rng, 0.02, true);
            case InitKind::unit_normal: return Tensor::randn(spec.shape, rng, 1.0, true);
        }
        throw ConfigError("unreachable init kind");
    }

    // Shared multi-head attention: queries from q_in, keys/values from kv_in,
    // weights looked up by prefix (sa_ / ca_).
    Tensor attention(const Tensor& q_in, const Tensor& kv_in, const std::string& prefix,
                     const Tensor* mask_bias) const {
        Tensor q = add(matmul(q_in, param(prefix + "wq")), param(prefix + "bq"));
        Tensor k = add(matmul(kv_in, param(prefix + "wk")), param(prefix + "bk"));
        Tensor v = add(matmul(kv_in, param(prefix + "wv")), param(prefix + "bv"));
        const int hd = cfg_.head_dim();
        std::vector<Tensor> heads;
        heads.reserve(static_cast<size_t>(cfg_.num_heads));
        for (int hidx = 0; hidx < cfg_.num_heads; ++hidx) {
            const int c0 = hidx * hd, c1 = c0 + hd;
            Tensor scores = scale(matmul(slice_cols(q, c0, c1), transpose(slice_cols(k, c0, c1))),
                                  1.0 / std::sqrt(static_cast<real>(hd)));
            if (mask_bias) scores = add(scores, *mask_bias);
            heads.push_back(matmul(softmax(scores), slice_cols(v, c0, c1)));
        }
        Tensor cat = cfg_.num_heads == 1 ? heads[0] : concat_cols(heads);
        return add(matmul(cat, param(prefix + "wo")), param(prefix + "bo"));
    }

    ModelConfig cfg_;
    std::map<std::string, Tensor> weights_;
};

}  // namespace pixart
