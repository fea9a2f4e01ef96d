#pragma once

#include <string>

#include "pixart/errors.hpp"

namespace pixart {

// Network variants. dit_class_conditional is the classic class-guided
// backbone with one modulation MLP per block; the two t2i variants add a
// cross-attention layer per block and differ only in how the adaLN
// modulation is produced (per-block MLPs vs one shared MLP plus per-block
// trainable offsets).
enum class Variant {
    dit_class_conditional,
    t2i_adaln_per_block,
    t2i_adaln_single,
};

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::dit_class_conditional: return "dit_class_conditional";
        case Variant::t2i_adaln_per_block: return "t2i_adaln_per_block";
        case Variant::t2i_adaln_single: return "t2i_adaln_single";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "dit_class_conditional") return Variant::dit_class_conditional;
    if (s == "t2i_adaln_per_block") return Variant::t2i_adaln_per_block;
    if (s == "t2i_adaln_single") return Variant::t2i_adaln_single;
    throw ConfigError("unknown model variant: " + s);
}

inline bool is_t2i(Variant v) { return v != Variant::dit_class_conditional; }

struct ModelConfig {
    int hidden_size = 64;
    int depth = 4;
    int num_heads = 4;
    int patch_size = 2;
    int latent_channels = 4;
    int text_dim = 64;
    int max_text_tokens = 120;
    int time_embed_freq_dim = 64;
    int num_classes = 8;  // class table rows, dit variant only
    int mlp_ratio = 4;
    // Token grid side the positional frequencies are calibrated to; 0 means
    // "whatever grid the latent actually has" (no rescaling).
    int base_grid = 0;
    Variant variant = Variant::t2i_adaln_single;

    void validate() const {
        if (hidden_size <= 0 || depth <= 0 || num_heads <= 0 || patch_size <= 0 ||
            latent_channels <= 0 || text_dim <= 0 || max_text_tokens <= 0 ||
            time_embed_freq_dim <= 0 || mlp_ratio <= 0)
            throw ConfigError("model config fields must be positive");
        if (hidden_size % num_heads != 0)
            throw ConfigError("hidden_size " + std::to_string(hidden_size) +
                              " not divisible by num_heads " + std::to_string(num_heads));
        if (hidden_size % 4 != 0)
            throw ConfigError("hidden_size must be divisible by 4 for 2-d positional features");
        if (time_embed_freq_dim % 2 != 0)
            throw ConfigError("time_embed_freq_dim must be even, got " +
                              std::to_string(time_embed_freq_dim));
        if (variant == Variant::dit_class_conditional && num_classes <= 0)
            throw ConfigError("class-conditional variant needs num_classes > 0");
    }

    int head_dim() const { return hidden_size / num_heads; }
    int patch_elems() const { return patch_size * patch_size * latent_channels; }

    // Small preset used by every test that actually runs the network.
    static ModelConfig desk(Variant v) {
        ModelConfig c;
        c.hidden_size = 64;
        c.depth = 4;
        c.num_heads = 4;
        c.patch_size = 2;
        c.latent_channels = 4;
        c.text_dim = 64;
        c.max_text_tokens = 16;
        c.time_embed_freq_dim = 64;
        c.num_classes = 8;
        c.variant = v;
        c.validate();
        return c;
    }

    // XL geometry (hidden 1152, depth 28, heads 16, patch 2). Only ever used
    // metadata-only for parameter counting; never allocated in tests.
    static ModelConfig xl(Variant v) {
        ModelConfig c;
        c.hidden_size = 1152;
        c.depth = 28;
        c.num_heads = 16;
        c.patch_size = 2;
        c.latent_channels = 4;
        c.text_dim = 4096;
        c.max_text_tokens = 120;
        c.time_embed_freq_dim = 256;
        c.num_classes = 1000;
        c.variant = v;
        c.validate();
        return c;
    }
};

}  // namespace pixart
