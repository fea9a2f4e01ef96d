#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pixart/dataops.hpp"
#include "pixart/rng.hpp"

// Synthetic two-mode latent datasets for desk-scale training runs: mode
// "alpha" is a smooth horizontal ramp, mode "beta" a checkerboard, both with
// small additive noise. Latents are written as tensor files plus a manifest.

namespace pixart {

inline Tensor synth_latent(int channels, int h, int w, bool mode_beta, Rng& rng,
                           real noise = 0.1) {
    std::vector<real> data(static_cast<size_t>(channels) * h * w);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                real base;
                if (mode_beta)
                    base = ((x / 2 + y / 2 + c) % 2 == 0) ? 0.9 : -0.9;
                else
                    base = -1.0 + 2.0 * x / std::max(1, w - 1) + 0.1 * c;
                data[(static_cast<size_t>(c) * h + y) * w + x] = base + noise * rng.normal();
            }
    return Tensor::from({channels, h, w}, std::move(data));
}

// Writes `per_bucket` samples for every bucket (alternating modes) and the
// manifest; returns the manifest path. Latent dims are bucket dims divided by
// the codec downsample factor.
inline std::string write_synthetic_dataset(const std::string& dir,
                                           const std::vector<Bucket>& buckets, int per_bucket,
                                           uint64_t seed, int latent_channels, int downsample) {
    std::filesystem::create_directories(dir);
    DatasetManifest manifest;
    Rng rng(seed, hash64("synthdata"));
    int k = 0;
    for (const Bucket& b : buckets) {
        const int lh = b.height / downsample;
        const int lw = b.width / downsample;
        if (lh < 1 || lw < 1 || b.height % downsample || b.width % downsample)
            throw ConfigError("bucket " + std::to_string(b.id) +
                              " dims not divisible by codec downsample");
        for (int i = 0; i < per_bucket; ++i) {
            const bool beta = (i % 2) == 1;
            Tensor latent = synth_latent(latent_channels, lh, lw, beta, rng);
            ManifestRecord r;
            r.sample_id = "synth" + std::to_string(k++);
            r.latent_path = (std::filesystem::path(dir) / (r.sample_id + ".ten")).string();
            r.native_height = b.height;
            r.native_width = b.width;
            r.caption = beta ? "a beta checker pattern tile" : "an alpha ramp gradient tile";
            r.bucket_id = b.id;
            save_tensor(latent, r.latent_path);
            manifest.records.push_back(std::move(r));
        }
    }
    const std::string path = (std::filesystem::path(dir) / "manifest.jsonl").string();
    save_manifest(manifest, path);
    return path;
}

}  // namespace pixart
