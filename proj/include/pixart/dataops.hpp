#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pixart/checkpoint.hpp"
#include "pixart/rng.hpp"
#include "pixart/tensor.hpp"

// Data-side machinery: multi-aspect bucket construction and the alternating
// single-bucket batch scheduler, manifest ingestion, the latent-codec seam,
// and the caption noun-density analyzer.

namespace pixart {

// -----------------------------------------------------------------------
// buckets

// A fixed training rectangle in image pixels. Both sides are multiples of
// quantum = patch_size * codec_downsample so the encoded latent tiles into
// patches.
struct Bucket {
    int id = 0;
    int height = 0;
    int width = 0;
    real aspect = 1.0;  // width / height
};

constexpr real kBucketAreaTolerance = 0.125;

namespace detail_buckets {

struct Candidate {
    int h = 0, w = 0;
    real aspect_err = 0, area_err = 0;
    bool valid = false;
};

// Best grid rectangle for a target aspect: feasible = area within the band,
// then closest log-aspect, then closest area, then smaller height.
inline Candidate best_rectangle(long long target_area, real aspect, int quantum) {
    const real lo_area = (1.0 - kBucketAreaTolerance) * static_cast<real>(target_area);
    const real hi_area = (1.0 + kBucketAreaTolerance) * static_cast<real>(target_area);
    Candidate best;
    const int h_max = static_cast<int>(hi_area / quantum);
    for (int h = quantum; h <= h_max; h += quantum) {
        const int w_lo = std::max(quantum, static_cast<int>(std::ceil(lo_area / h / quantum)) * quantum);
        const int w_hi = static_cast<int>(std::floor(hi_area / h / quantum)) * quantum;
        for (int w = w_lo; w <= w_hi; w += quantum) {
            const real area = static_cast<real>(h) * w;
            if (area < lo_area || area > hi_area) continue;
            Candidate c;
            c.h = h;
            c.w = w;
            c.aspect_err = std::abs(std::log(static_cast<real>(w) / h) - std::log(aspect));
            c.area_err = std::abs(area - static_cast<real>(target_area));
            c.valid = true;
            const bool better =
                !best.valid || c.aspect_err < best.aspect_err - 1e-12 ||
                (std::abs(c.aspect_err - best.aspect_err) <= 1e-12 &&
                 (c.area_err < best.area_err - 1e-9 ||
                  (std::abs(c.area_err - best.area_err) <= 1e-9 && c.h < best.h)));
            if (better) best = c;
        }
    }
    return best;
}

}  // namespace detail_buckets

// Aspect ratios log-spaced over [ratio_min, ratio_max], each rounded onto
// the quantum grid inside the +/-12.5% area band. Ids ascend with aspect.
inline std::vector<Bucket> make_buckets(long long target_area, int count = 40,
                                        real ratio_min = 0.25, real ratio_max = 4.0,
                                        int quantum = 16) {
    if (count < 1 || quantum < 1 || ratio_min <= 0 || ratio_max < ratio_min)
        throw ConfigError("invalid bucket generation parameters");
    if (target_area < static_cast<long long>(quantum) * quantum)
        throw ConfigError("target_area " + std::to_string(target_area) +
                          " below quantum^2 = " + std::to_string(quantum * quantum));
    std::vector<Bucket> buckets;
    std::set<std::pair<int, int>> seen;
    for (int i = 0; i < count; ++i) {
        const real a = count == 1 ? 1.0
                                  : std::exp(std::log(ratio_min) +
                                             (std::log(ratio_max) - std::log(ratio_min)) * i /
                                                 (count - 1));
        auto c = detail_buckets::best_rectangle(target_area, a, quantum);
        if (!c.valid)
            throw ConfigError("no quantum rectangle within the area band for aspect ratio " +
                              std::to_string(a));
        if (!seen.insert({c.h, c.w}).second)
            throw ConfigError("target_area too small for " + std::to_string(count) +
                              " distinct buckets: collision at aspect ratio " + std::to_string(a));
        Bucket b;
        b.id = i;
        b.height = c.h;
        b.width = c.w;
        b.aspect = static_cast<real>(c.w) / c.h;
        buckets.push_back(b);
    }
    return buckets;
}

// Bucket whose log-aspect is closest to the native one; ties go to the
// smaller id.
inline int assign_bucket(int native_h, int native_w, const std::vector<Bucket>& buckets) {
    if (buckets.empty()) throw ContractError("assign_bucket with no buckets");
    if (native_h <= 0 || native_w <= 0) throw ContractError("assign_bucket with non-positive dims");
    const real target = std::log(static_cast<real>(native_w) / native_h);
    int best = 0;
    real best_err = std::abs(std::log(buckets[0].aspect) - target);
    for (size_t i = 1; i < buckets.size(); ++i) {
        const real err = std::abs(std::log(buckets[i].aspect) - target);
        if (err < best_err - 1e-15) {
            best = static_cast<int>(i);
            best_err = err;
        }
    }
    return buckets[static_cast<size_t>(best)].id;
}

// -----------------------------------------------------------------------
// manifest

struct ManifestRecord {
    std::string sample_id;
    std::string image_path;   // one of image_path / latent_path is set
    std::string latent_path;
    int native_height = 0;
    int native_width = 0;
    std::string caption;
    int bucket_id = 0;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::vector<ManifestRecord> quarantined;  // e.g. empty captions; never dropped silently
};

inline nlohmann::json record_to_json(const ManifestRecord& r) {
    nlohmann::json j;
    j["sample_id"] = r.sample_id;
    if (!r.image_path.empty()) j["image_path"] = r.image_path;
    if (!r.latent_path.empty()) j["latent_path"] = r.latent_path;
    j["native_height"] = r.native_height;
    j["native_width"] = r.native_width;
    j["caption"] = r.caption;
    j["bucket_id"] = r.bucket_id;
    return j;
}

inline ManifestRecord record_from_json(const nlohmann::json& j) {
    ManifestRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.image_path = j.value("image_path", "");
    r.latent_path = j.value("latent_path", "");
    r.native_height = j.at("native_height").get<int>();
    r.native_width = j.at("native_width").get<int>();
    r.caption = j.at("caption").get<std::string>();
    r.bucket_id = j.at("bucket_id").get<int>();
    return r;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open manifest " + path);
    DatasetManifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        ManifestRecord r;
        try {
            r = record_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest " + path + " line " + std::to_string(lineno) + ": " +
                            e.what());
        }
        if (trim(r.caption).empty())
            m.quarantined.push_back(std::move(r));
        else
            m.records.push_back(std::move(r));
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open " + path + " for writing");
    for (const ManifestRecord& r : m.records) f << record_to_json(r).dump() << "\n";
}

// -----------------------------------------------------------------------
// tensor files (latents, images, sampler outputs)

constexpr char kTensorMagic[4] = {'P', 'X', 'T', 'N'};

inline void save_tensor(const Tensor& t, const std::string& path) {
    io::Writer w;
    w.bytes.insert(w.bytes.end(), kTensorMagic, kTensorMagic + 4);
    w.u32(static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) w.i32(d);
    for (real v : t.data()) w.f64(v);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<long>(w.bytes.size()));
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open tensor file " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    io::Reader r(bytes);
    r.need(4);
    if (std::memcmp(bytes.data(), kTensorMagic, 4) != 0)
        throw DataError(path + " is not a tensor file");
    r.pos = 4;
    const uint32_t ndim = r.u32();
    if (ndim > 8) throw DataError("implausible tensor rank in " + path);
    Shape shape;
    for (uint32_t i = 0; i < ndim; ++i) shape.push_back(r.i32());
    std::vector<real> data(shape_numel(shape));
    for (real& v : data) v = r.f64();
    return Tensor::from(std::move(shape), std::move(data));
}

// -----------------------------------------------------------------------
// latent codec seam

struct LatentCodec {
    virtual ~LatentCodec() = default;
    virtual int downsample() const = 0;
    virtual Tensor encode(const Tensor& image) const = 0;   // [CxHxW] -> [C f^2 x H/f x W/f]
    virtual Tensor decode(const Tensor& latent) const = 0;
};

// Exact invertible stand-in for a learned codec: space-to-depth by factor f,
// then a seeded signed channel permutation as the mixing step. Signed
// permutations are the mixings that stay bit-exact under doubles, which is
// what makes decode(encode(x)) == x hold bitwise.
class SpaceToDepthCodec : public LatentCodec {
public:
    explicit SpaceToDepthCodec(int f = 8, uint64_t mix_seed = 0) : f_(f), seed_(mix_seed) {
        if (f < 1) throw ConfigError("codec downsample must be >= 1");
    }

    int downsample() const override { return f_; }
    int latent_channels(int image_channels) const { return image_channels * f_ * f_; }

    Tensor encode(const Tensor& image) const override {
        if (image.ndim() != 3) throw ShapeError("encode expects [CxHxW]");
        const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
        if (H % f_ != 0 || W % f_ != 0)
            throw ShapeError("image dims " + std::to_string(H) + "x" + std::to_string(W) +
                             " not divisible by codec factor " + std::to_string(f_));
        const int lc = C * f_ * f_, lh = H / f_, lw = W / f_;
        auto [perm, sign] = mixing(lc);
        std::vector<real> out(static_cast<size_t>(lc) * lh * lw);
        for (int c = 0; c < lc; ++c) {
            const int src_c = perm[static_cast<size_t>(c)];
            const int ic = src_c / (f_ * f_);
            const int dy = (src_c % (f_ * f_)) / f_;
            const int dx = src_c % f_;
            for (int y = 0; y < lh; ++y)
                for (int x = 0; x < lw; ++x)
                    out[(static_cast<size_t>(c) * lh + y) * lw + x] =
                        sign[static_cast<size_t>(c)] *
                        image.data()[(static_cast<size_t>(ic) * H + y * f_ + dy) * W + x * f_ + dx];
        }
        return Tensor::from({lc, lh, lw}, std::move(out));
    }

    Tensor decode(const Tensor& latent) const override {
        if (latent.ndim() != 3) throw ShapeError("decode expects [CxHxW]");
        const int lc = latent.dim(0), lh = latent.dim(1), lw = latent.dim(2);
        if (lc % (f_ * f_) != 0)
            throw ShapeError("latent channels not a multiple of f^2");
        const int C = lc / (f_ * f_), H = lh * f_, W = lw * f_;
        auto [perm, sign] = mixing(lc);
        std::vector<real> out(static_cast<size_t>(C) * H * W);
        for (int c = 0; c < lc; ++c) {
            const int src_c = perm[static_cast<size_t>(c)];
            const int ic = src_c / (f_ * f_);
            const int dy = (src_c % (f_ * f_)) / f_;
            const int dx = src_c % f_;
            for (int y = 0; y < lh; ++y)
                for (int x = 0; x < lw; ++x)
                    out[(static_cast<size_t>(ic) * H + y * f_ + dy) * W + x * f_ + dx] =
                        sign[static_cast<size_t>(c)] *
                        latent.data()[(static_cast<size_t>(c) * lh + y) * lw + x];
        }
        return Tensor::from({C, H, W}, std::move(out));
    }

private:
    std::pair<std::vector<int>, std::vector<real>> mixing(int channels) const {
        std::vector<int> perm(static_cast<size_t>(channels));
        for (int i = 0; i < channels; ++i) perm[static_cast<size_t>(i)] = i;
        std::vector<real> sign(static_cast<size_t>(channels), 1.0);
        Rng rng(seed_, 0xC0DEC);
        for (int i = channels - 1; i > 0; --i)
            std::swap(perm[static_cast<size_t>(i)],
                      perm[static_cast<size_t>(rng.uniform_int(static_cast<uint64_t>(i) + 1))]);
        for (real& s : sign) s = rng.uniform() < 0.5 ? -1.0 : 1.0;
        return {perm, sign};
    }

    int f_;
    uint64_t seed_;
};

// Lossy test double for the codec seam: space-to-depth plus value
// quantization. Reconstruction differs; everything downstream of encode()
// behaves the same.
class QuantizingCodec : public LatentCodec {
public:
    explicit QuantizingCodec(int f = 8, real step = 0.25) : inner_(f, 1), step_(step) {}
    int downsample() const override { return inner_.downsample(); }
    Tensor encode(const Tensor& image) const override {
        Tensor z = inner_.encode(image);
        std::vector<real> q(z.numel());
        for (size_t i = 0; i < q.size(); ++i) q[i] = std::round(z.data()[i] / step_) * step_;
        return Tensor::from(z.shape(), std::move(q));
    }
    Tensor decode(const Tensor& latent) const override { return inner_.decode(latent); }

private:
    SpaceToDepthCodec inner_;
    real step_;
};

// -----------------------------------------------------------------------
// batch scheduler

struct SchedulerReport {
    std::map<int, long long> dropped_per_bucket;  // remainders < batch_size
    long long total_dropped = 0;
};

// Deterministic epoch-indexed scheduler. Every batch is single-bucket;
// consecutive batches rotate across non-exhausted buckets (strict
// alternation whenever two or more still have batches); within-bucket order
// reshuffles per (seed, epoch).
class BatchScheduler {
public:
    BatchScheduler(const DatasetManifest& manifest, const std::vector<Bucket>& buckets,
                   int batch_size, uint64_t seed)
        : manifest_(&manifest), batch_size_(batch_size), seed_(seed) {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        std::set<int> known;
        for (const Bucket& b : buckets) known.insert(b.id);
        for (size_t i = 0; i < manifest.records.size(); ++i) {
            const ManifestRecord& r = manifest.records[i];
            if (!known.count(r.bucket_id))
                throw DataError("record " + r.sample_id + " references unknown bucket " +
                                std::to_string(r.bucket_id));
            members_[r.bucket_id].push_back(i);
        }
        bool any = false;
        for (auto& [id, v] : members_) {
            const long long dropped = static_cast<long long>(v.size() % batch_size_);
            if (dropped) {
                report_.dropped_per_bucket[id] = dropped;
                report_.total_dropped += dropped;
            }
            any = any || v.size() >= static_cast<size_t>(batch_size_);
        }
        if (!any) throw DataError("no bucket holds a full batch of " + std::to_string(batch_size_));
    }

    // record indices per batch for one epoch
    std::vector<std::vector<size_t>> epoch_batches(uint64_t epoch) const {
        std::map<int, std::vector<std::vector<size_t>>> queues;
        for (const auto& [bucket_id, members] : members_) {
            std::vector<size_t> order = members;
            Rng rng(seed_, hash64("epoch") ^ (epoch * 0x9E3779B97F4A7C15ull) ^
                               static_cast<uint64_t>(bucket_id));
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.uniform_int(i)]);
            const size_t full = order.size() / static_cast<size_t>(batch_size_);
            for (size_t b = 0; b < full; ++b)
                queues[bucket_id].emplace_back(order.begin() + static_cast<long>(b * batch_size_),
                                               order.begin() +
                                                   static_cast<long>((b + 1) * batch_size_));
        }
        std::vector<int> ids;
        for (auto& [id, q] : queues)
            if (!q.empty()) ids.push_back(id);

        std::vector<std::vector<size_t>> out;
        std::map<int, size_t> next_in;
        size_t cursor = 0;
        while (true) {
            bool emitted = false;
            for (size_t probe = 0; probe < ids.size(); ++probe) {
                const size_t at = (cursor + probe) % ids.size();
                const int id = ids[at];
                auto& q = queues[id];
                if (next_in[id] < q.size()) {
                    out.push_back(std::move(q[next_in[id]]));
                    ++next_in[id];
                    cursor = at + 1;
                    emitted = true;
                    break;
                }
            }
            if (!emitted) break;
        }
        return out;
    }

    const SchedulerReport& report() const { return report_; }
    int batch_size() const { return batch_size_; }

    std::vector<size_t> batch(uint64_t step) const {
        auto first = epoch_batches(0);
        const uint64_t per_epoch = first.size();
        if (per_epoch == 0) throw DataError("scheduler produced an empty epoch");
        const uint64_t epoch = step / per_epoch;
        return epoch_batches(epoch)[step % per_epoch];
    }

private:
    const DatasetManifest* manifest_;
    int batch_size_;
    uint64_t seed_;
    std::map<int, std::vector<size_t>> members_;
    SchedulerReport report_;
};

// -----------------------------------------------------------------------
// caption statistics

struct CaptionStats {
    long long distinct_nouns = 0;  // DN
    long long valid_nouns = 0;     // VN: appearing more than the threshold
    long long total_nouns = 0;
    real avg_per_image = 0;
    std::map<std::string, long long> histogram;
};

namespace detail_captions {

// Function-word lexicon for the rule-based tagger. Everything alphabetic
// that survives the lexicon and the adverb suffix rule is counted as a noun;
// absolute numbers therefore depend on this tagger.
inline const std::set<std::string>& function_words() {
    static const std::set<std::string> words = {
        "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every",
        "no", "none", "all", "both", "few", "many", "much", "several",
        "i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us", "them", "its",
        "my", "your", "his", "our", "their", "mine", "yours", "theirs", "itself", "himself",
        "herself", "themselves", "who", "whom", "whose", "which", "what", "where", "when",
        "why", "how", "there", "here",
        "and", "or", "but", "nor", "so", "yet", "if", "then", "else", "while", "because",
        "although", "though", "since", "unless", "until", "as",
        "in", "on", "at", "by", "for", "with", "without", "about", "against", "between",
        "into", "through", "during", "before", "after", "above", "below", "to", "from", "up",
        "down", "of", "off", "over", "under", "again", "further", "near", "behind", "beside",
        "across", "around", "along", "upon", "within", "among", "toward", "towards",
        "is", "am", "are", "was", "were", "be", "been", "being", "do", "does", "did", "doing",
        "have", "has", "had", "having", "will", "would", "shall", "should", "can", "could",
        "may", "might", "must", "not", "also", "very", "too", "quite", "rather", "just",
        "only", "even", "still", "such", "own", "same", "other", "another", "more", "most",
        "less", "least", "than", "out", "now",
        "big", "small", "large", "little", "old", "new", "young", "long", "short", "high",
        "low", "good", "bad", "great", "full", "empty", "red", "green", "blue", "white",
        "black", "yellow", "brown", "gray", "grey", "orange", "purple", "pink", "dark",
        "light", "bright", "colorful", "beautiful", "detailed", "various", "different",
        "numerous", "multiple",
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "first", "second", "third", "left", "right", "top", "bottom", "front", "back",
        "middle", "center",
        "made", "seen", "shown", "located", "placed", "positioned", "depicted", "featured",
        "captured", "displayed", "visible", "surrounded", "filled", "covered", "dressed",
        "wearing", "holding", "standing", "sitting", "walking", "looking", "appears",
        "appear", "seems", "seem", "style", "styled",
    };
    return words;
}

inline bool is_noun_candidate(const std::string& w) {
    if (w.size() < 2) return false;
    if (function_words().count(w)) return false;
    // adverb suffix rule; "-ing" words stay (painting, building, lighting)
    if (w.size() > 3 && w.compare(w.size() - 2, 2, "ly") == 0) return false;
    if (w.size() > 3 && w.compare(w.size() - 2, 2, "ed") == 0) return false;
    return true;
}

}  // namespace detail_captions

// Lowercased alphabetic tokens surviving the function-word lexicon and the
// suffix rules, one histogram entry per surface form.
inline std::vector<std::string> extract_nouns(const std::string& caption) {
    std::vector<std::string> nouns;
    std::string word;
    auto flush = [&]() {
        if (!word.empty() && detail_captions::is_noun_candidate(word)) nouns.push_back(word);
        word.clear();
    };
    for (char raw : caption) {
        const unsigned char c = static_cast<unsigned char>(raw);
        if (std::isalpha(c))
            word.push_back(static_cast<char>(std::tolower(c)));
        else
            flush();
    }
    flush();
    return nouns;
}

inline CaptionStats caption_stats(const std::vector<std::string>& captions,
                                  int valid_threshold = 10) {
    CaptionStats s;
    for (const std::string& caption : captions)
        for (const std::string& noun : extract_nouns(caption)) {
            ++s.histogram[noun];
            ++s.total_nouns;
        }
    s.distinct_nouns = static_cast<long long>(s.histogram.size());
    for (const auto& [noun, count] : s.histogram)
        if (count > valid_threshold) ++s.valid_nouns;  // strictly more than the threshold
    s.avg_per_image = captions.empty()
                          ? 0.0
                          : static_cast<real>(s.total_nouns) / static_cast<real>(captions.size());
    return s;
}

// Deterministic shard merge: histograms add, derived fields recompute.
inline CaptionStats merge_stats(const CaptionStats& a, const CaptionStats& b,
                                long long total_captions, int valid_threshold = 10) {
    CaptionStats s;
    s.histogram = a.histogram;
    for (const auto& [noun, count] : b.histogram) s.histogram[noun] += count;
    for (const auto& [noun, count] : s.histogram) {
        s.total_nouns += count;
        if (count > valid_threshold) ++s.valid_nouns;
    }
    s.distinct_nouns = static_cast<long long>(s.histogram.size());
    s.avg_per_image =
        total_captions > 0 ? static_cast<real>(s.total_nouns) / total_captions : 0.0;
    return s;
}

// Published noun-concept statistics for large captioned corpora, kept as
// citation constants for comparison reports; they are not reproduced here.
struct NounStatsReference {
    const char* dataset;
    double valid_nouns;
    double distinct_nouns;
    double vn_ratio_pct;  // as published, not recomputed from rounded counts
    double total_nouns;
    double avg_per_image;
};

inline constexpr NounStatsReference kPublishedNounStats[] = {
    {"LAION", 210e3, 2461e3, 8.5, 72.0e6, 6.4},
    {"LAION-LLaVA", 85e3, 646e3, 13.3, 233.9e6, 20.9},
    {"SAM-LLaVA", 23e3, 124e3, 18.6, 327.9e6, 29.3},
    {"Internal", 152e3, 582e3, 26.1, 136.6e6, 12.2},
};

// Comparison table over the standard columns: VN/DN, Total Noun, Average.
struct StatsReport {
    std::string name_a, name_b;
    CaptionStats a, b;

    static const std::vector<std::string>& columns() {
        static const std::vector<std::string> cols = {"VN/DN", "Total Noun", "Average"};
        return cols;
    }

    real vn_ratio(const CaptionStats& s) const {
        return s.distinct_nouns ? static_cast<real>(s.valid_nouns) / s.distinct_nouns : 0.0;
    }

    std::map<std::string, std::string> key_values() const {
        std::map<std::string, std::string> kv;
        auto put = [&](const std::string& prefix, const CaptionStats& s) {
            kv[prefix + ".vn"] = std::to_string(s.valid_nouns);
            kv[prefix + ".dn"] = std::to_string(s.distinct_nouns);
            kv[prefix + ".vn_ratio"] = std::to_string(vn_ratio(s));
            kv[prefix + ".total"] = std::to_string(s.total_nouns);
            kv[prefix + ".average"] = std::to_string(s.avg_per_image);
        };
        put(name_a, a);
        put(name_b, b);
        kv["delta.vn_ratio"] = std::to_string(vn_ratio(b) - vn_ratio(a));
        kv["delta.total"] = std::to_string(b.total_nouns - a.total_nouns);
        kv["delta.average"] = std::to_string(b.avg_per_image - a.avg_per_image);
        return kv;
    }

    std::string human_table() const {
        std::ostringstream out;
        char line[160];
        std::snprintf(line, sizeof(line), "%-14s %-22s %14s %10s\n", "Dataset", "VN/DN",
                      "Total Noun", "Average");
        out << line;
        auto row = [&](const std::string& name, const CaptionStats& s) {
            std::snprintf(line, sizeof(line), "%-14s %lld/%lld = %.1f%% %14lld %9.1f\n",
                          name.c_str(), s.valid_nouns, s.distinct_nouns, 100.0 * vn_ratio(s),
                          s.total_nouns, s.avg_per_image);
            out << line;
        };
        row(name_a, a);
        row(name_b, b);
        std::snprintf(line, sizeof(line), "%-14s %+21.1f%% %+14lld %+9.1f\n", "delta",
                      100.0 * (vn_ratio(b) - vn_ratio(a)), b.total_nouns - a.total_nouns,
                      b.avg_per_image - a.avg_per_image);
        out << line;
        out << "\npublished reference rows (not reproduced by this tagger):\n";
        for (const NounStatsReference& r : kPublishedNounStats) {
            std::snprintf(line, sizeof(line), "%-14s %.0fK/%.0fK = %.1f%% %13.1fM %9.1f\n",
                          r.dataset, r.valid_nouns / 1e3, r.distinct_nouns / 1e3, r.vn_ratio_pct,
                          r.total_nouns / 1e6, r.avg_per_image);
            out << line;
        }
        return out.str();
    }
};

inline StatsReport stats_report(const CaptionStats& a, const CaptionStats& b,
                                const std::string& name_a = "corpus_a",
                                const std::string& name_b = "corpus_b") {
    return StatsReport{name_a, name_b, a, b};
}

}  // namespace pixart
