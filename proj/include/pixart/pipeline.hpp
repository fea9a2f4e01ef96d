#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pixart/checkpoint.hpp"
#include "pixart/dataops.hpp"
#include "pixart/diffusion.hpp"
#include "pixart/model.hpp"
#include "pixart/reparam.hpp"

// Training orchestration: AdamW with global-norm clipping, the deterministic
// text-embedding stub, per-stage training loops and the multi-stage plan
// runner. Every stochastic draw is keyed by (seed, step, sample), so a run
// is a pure function of its config and resuming from a step checkpoint
// reproduces the straight-through run bit for bit.

namespace pixart {

// -----------------------------------------------------------------------
// optimizer

struct AdamWConfig {
    real lr = 2e-5;
    real beta1 = 0.9;
    real beta2 = 0.999;
    real eps = 1e-8;
    real weight_decay = 0.03;
    real clip_norm = 1.0;  // 0 disables clipping
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    int64_t step_count() const { return step_count_; }

    // One update over all params; consumes and zeroes grads. Returns the
    // pre-clip global gradient norm.
    real step(std::map<std::string, Tensor>& params) {
        real sq = 0;
        for (auto& [name, w] : params) {
            if (!w.has_grad()) continue;
            for (real g : w.grad()) sq += g * g;
        }
        const real norm = std::sqrt(sq);
        const real clip =
            cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
        ++step_count_;
        const real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<real>(step_count_));
        const real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<real>(step_count_));
        for (auto& [name, w] : params) {
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() != w.numel()) m.assign(w.numel(), 0.0);
            if (v.size() != w.numel()) v.assign(w.numel(), 0.0);
            const auto& grad = w.grad();
            auto& data = w.mutable_data();
            for (size_t i = 0; i < data.size(); ++i) {
                const real g = grad[i] * clip;
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const real mhat = m[i] / bc1;
                const real vhat = v[i] / bc2;
                data[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                      cfg_.weight_decay * data[i]);
            }
            w.zero_grad();
        }
        return norm;
    }

    void serialize_state(io::Writer& w) const {
        w.u64(static_cast<uint64_t>(step_count_));
        w.u32(static_cast<uint32_t>(m_.size()));
        for (const auto& [name, m] : m_) {
            w.str(name);
            w.u64(m.size());
            for (real x : m) w.f64(x);
            for (real x : v_.at(name)) w.f64(x);
        }
    }

    void deserialize_state(io::Reader& r) {
        step_count_ = static_cast<int64_t>(r.u64());
        const uint32_t n = r.u32();
        m_.clear();
        v_.clear();
        for (uint32_t i = 0; i < n; ++i) {
            const std::string name = r.str();
            const uint64_t len = r.u64();
            std::vector<real> m(len), v(len);
            for (auto& x : m) x = r.f64();
            for (auto& x : v) x = r.f64();
            m_[name] = std::move(m);
            v_[name] = std::move(v);
        }
    }

private:
    AdamWConfig cfg_;
    int64_t step_count_ = 0;
    std::map<std::string, std::vector<real>> m_, v_;
};

// -----------------------------------------------------------------------
// text embedding provider

struct TextEmbeddingProvider {
    virtual ~TextEmbeddingProvider() = default;
    virtual TextCondition embed(const std::string& caption) const = 0;
};

// Deterministic stand-in for a language-model encoder: each token maps to a
// fixed pseudo-random vector seeded by the token text alone. Output is
// always max_tokens rows, truncated or zero-padded, with the mask marking
// real tokens. Empty captions resolve to the null condition.
class HashedTextProvider : public TextEmbeddingProvider {
public:
    explicit HashedTextProvider(int text_dim, int max_tokens = 120)
        : text_dim_(text_dim), max_tokens_(max_tokens) {
        if (text_dim < 1 || max_tokens < 1)
            throw ConfigError("text provider needs positive dims");
    }

    static std::vector<std::string> tokenize(const std::string& caption) {
        std::vector<std::string> tokens;
        std::string cur;
        for (char raw : caption) {
            const unsigned char c = static_cast<unsigned char>(raw);
            if (std::isspace(c)) {
                if (!cur.empty()) tokens.push_back(std::move(cur));
                cur.clear();
            } else {
                cur.push_back(static_cast<char>(std::tolower(c)));
            }
        }
        if (!cur.empty()) tokens.push_back(std::move(cur));
        return tokens;
    }

    TextCondition embed(const std::string& caption) const override {
        std::vector<std::string> tokens = tokenize(caption);
        if (tokens.empty()) return TextCondition::null();
        if (static_cast<int>(tokens.size()) > max_tokens_)
            tokens.resize(static_cast<size_t>(max_tokens_));

        TextCondition cond;
        std::vector<real> data(static_cast<size_t>(max_tokens_) * text_dim_, 0.0);
        cond.mask.assign(static_cast<size_t>(max_tokens_), 0);
        for (size_t i = 0; i < tokens.size(); ++i) {
            Rng rng(hash64(tokens[i]), 0x7E97);
            for (int j = 0; j < text_dim_; ++j)
                data[i * static_cast<size_t>(text_dim_) + j] = rng.normal();
            cond.mask[i] = 1;
        }
        cond.tokens = Tensor::from({max_tokens_, text_dim_}, std::move(data));
        return cond;
    }

private:
    int text_dim_;
    int max_tokens_;
};

// -----------------------------------------------------------------------
// run ledger

// Append-only JSONL event log. Wall-clock fields are real measurements and
// are therefore excluded from the canonical form used for determinism
// comparisons.
class RunLedger {
public:
    RunLedger() = default;
    explicit RunLedger(const std::string& path) : path_(path) {
        if (!path.empty()) {
            const auto parent = std::filesystem::path(path).parent_path();
            if (!parent.empty()) std::filesystem::create_directories(parent);
            sink_.open(path, std::ios::app);
            if (!sink_) throw DataError("cannot open ledger " + path);
        }
    }

    void add(nlohmann::json j) {
        if (sink_.is_open()) sink_ << j.dump() << "\n" << std::flush;
        entries_.push_back(std::move(j));
    }

    const std::vector<nlohmann::json>& entries() const { return entries_; }

    static nlohmann::json canonical(nlohmann::json e) {
        e.erase("wall_ms");
        return e;
    }

    std::vector<nlohmann::json> canonical_entries() const {
        std::vector<nlohmann::json> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(canonical(e));
        return out;
    }

    // steps strictly increasing within a stage; every checkpoint ref on disk
    void validate() const {
        long long last_step = -1;
        for (const auto& e : entries_) {
            const std::string kind = e.value("kind", "");
            if (kind == "stage_start") last_step = -1;
            if (kind == "step") {
                const long long s = e.at("step").get<long long>();
                if (s <= last_step) throw DataError("ledger steps not strictly increasing");
                last_step = s;
            }
            if (kind == "checkpoint" && !std::filesystem::exists(e.at("path").get<std::string>()))
                throw DataError("ledger references missing checkpoint " +
                                e.at("path").get<std::string>());
        }
    }

private:
    std::string path_;
    std::ofstream sink_;
    std::vector<nlohmann::json> entries_;
};

// -----------------------------------------------------------------------
// stage config

struct InitFrom {
    enum class Kind { scratch, checkpoint, reparam } kind = Kind::scratch;
    std::string path;

    static InitFrom scratch() { return {}; }
    static InitFrom from_checkpoint(std::string p) { return {Kind::checkpoint, std::move(p)}; }
    static InitFrom from_reparam(std::string p) { return {Kind::reparam, std::move(p)}; }

    std::string describe() const {
        switch (kind) {
            case Kind::scratch: return "scratch";
            case Kind::checkpoint: return "checkpoint:" + path;
            case Kind::reparam: return "reparam:" + path;
        }
        return "?";
    }

    static InitFrom parse(const std::string& s) {
        if (s == "scratch" || s.empty()) return scratch();
        if (s.rfind("checkpoint:", 0) == 0) return from_checkpoint(s.substr(11));
        if (s.rfind("reparam:", 0) == 0) return from_reparam(s.substr(8));
        throw ConfigError("cannot parse init_from: " + s +
                          " (expected scratch | checkpoint:<path> | reparam:<path>)");
    }
};

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"pixel_dependency", "text_image_align",
                                                   "high_aesthetics"};
    return names;
}

struct StageConfig {
    std::string name = "pixel_dependency";
    int resolution = 256;  // image-space square edge for this stage
    int steps = 100;
    int batch_size = 8;
    real lr = 2e-5;
    real weight_decay = 0.03;
    bool multi_aspect = false;
    std::string manifest_path;
    InitFrom init_from;
    uint64_t seed = 0;
    int checkpoint_every = 0;  // 0: only the final checkpoint
    int bucket_count = 40;     // used when multi_aspect
    real ratio_min = 0.25;
    real ratio_max = 4.0;
    int codec_downsample = 2;
    int schedule_T = 1000;
    real null_cond_prob = 0.1;
    bool overfit = false;  // repeat the first batch with frozen (t, eps) draws
    ModelConfig model;     // used for scratch init

    void validate() const {
        bool known = false;
        for (const std::string& n : stage_names()) known = known || n == name;
        if (!known) throw ConfigError("unknown stage name: " + name);
        if (lr <= 0) throw ConfigError("stage lr must be > 0");
        if (steps <= 0) throw ConfigError("stage steps must be > 0");
        if (batch_size < 1) throw ConfigError("stage batch_size must be >= 1");
        if (multi_aspect && name != "high_aesthetics")
            throw ConfigError("multi_aspect is only allowed in the high_aesthetics stage");
        if (manifest_path.empty()) throw ConfigError("stage manifest_path is required");
        if (resolution < 1 || codec_downsample < 1 || schedule_T < 1)
            throw ConfigError("stage geometry fields must be positive");
        if (null_cond_prob < 0 || null_cond_prob > 1)
            throw ConfigError("null_cond_prob must lie in [0,1]");
    }

    nlohmann::json effective_json() const {
        nlohmann::json j;
        j["name"] = name;
        j["resolution"] = resolution;
        j["steps"] = steps;
        j["batch_size"] = batch_size;
        j["lr"] = lr;
        j["weight_decay"] = weight_decay;
        j["multi_aspect"] = multi_aspect;
        j["manifest_path"] = manifest_path;
        j["init_from"] = init_from.describe();
        j["seed"] = seed;
        j["checkpoint_every"] = checkpoint_every;
        j["bucket_count"] = bucket_count;
        j["ratio_min"] = ratio_min;
        j["ratio_max"] = ratio_max;
        j["codec_downsample"] = codec_downsample;
        j["schedule_T"] = schedule_T;
        j["null_cond_prob"] = null_cond_prob;
        j["overfit"] = overfit;
        j["variant"] = variant_name(model.variant);
        return j;
    }
};

// -----------------------------------------------------------------------
// training state (optimizer + position), for bitwise resume

constexpr char kStateMagic[4] = {'P', 'X', 'O', 'S'};

inline void save_train_state(const std::string& path, const AdamW& opt, uint64_t next_step) {
    io::Writer w;
    w.bytes.insert(w.bytes.end(), kStateMagic, kStateMagic + 4);
    w.u32(1);
    w.u64(next_step);
    opt.serialize_state(w);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<long>(w.bytes.size()));
}

inline uint64_t load_train_state(const std::string& path, AdamW& opt) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open state file " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    io::Reader r(bytes);
    r.need(4);
    if (std::memcmp(bytes.data(), kStateMagic, 4) != 0)
        throw DataError(path + " is not a training state file");
    r.pos = 4;
    if (r.u32() != 1) throw VersionError("unsupported training state version");
    const uint64_t next_step = r.u64();
    opt.deserialize_state(r);
    return next_step;
}

// -----------------------------------------------------------------------
// stage runner

struct StageResult {
    std::string final_checkpoint;  // path; empty when aborted before any save
    std::vector<real> losses;      // per executed step
    bool aborted = false;
    std::string last_good_checkpoint;
    SurgeryReport surgery;  // populated for reparam init
    bool did_surgery = false;
};

namespace detail_pipe {

inline Conditioning condition_for(const ManifestRecord& rec, const Model& model,
                                  const TextEmbeddingProvider& provider) {
    if (is_t2i(model.config().variant)) {
        TextCondition tc = provider.embed(rec.caption);
        if (tc.is_null) return Conditioning::none();
        return Conditioning::of_text(std::move(tc));
    }
    // class-conditional: explicit "class <k>" captions, hashed otherwise
    const auto tokens = HashedTextProvider::tokenize(rec.caption);
    if (tokens.size() == 2 && tokens[0] == "class") {
        try {
            return Conditioning::of_class(std::stoi(tokens[1]) % model.config().num_classes);
        } catch (const std::exception&) {
        }
    }
    return Conditioning::of_class(
        static_cast<int>(hash64(rec.caption) % static_cast<uint64_t>(model.config().num_classes)));
}

inline uint64_t loss_stream(uint64_t step, size_t sample) {
    return hash64("loss") ^ (0x9E3779B97F4A7C15ull * (step + 1)) ^
           (0xBF58476D1CE4E5B9ull * (static_cast<uint64_t>(sample) + 1));
}

}  // namespace detail_pipe

inline StageResult run_stage(const StageConfig& stage, RunLedger& ledger,
                             const std::string& out_dir, bool resume = false) {
    stage.validate();
    std::filesystem::create_directories(out_dir);

    // model per init_from
    std::optional<Model> model;
    StageResult result;
    switch (stage.init_from.kind) {
        case InitFrom::Kind::scratch: {
            ModelConfig cfg = stage.model;
            model.emplace(cfg, stage.seed);
            break;
        }
        case InitFrom::Kind::checkpoint: {
            model.emplace(load(stage.init_from.path).to_model());
            break;
        }
        case InitFrom::Kind::reparam: {
            Checkpoint source = load(stage.init_from.path);
            SurgeryResult surged = reparameterize(source, 500, stage.seed);
            result.surgery = surged.report;
            result.did_surgery = true;
            model.emplace(surged.checkpoint.to_model());
            break;
        }
    }
    // multi-aspect stages anchor positional frequencies to the stage grid
    if (stage.multi_aspect && model->config().base_grid == 0) {
        ModelConfig cfg = model->config();
        cfg.base_grid = stage.resolution / (stage.codec_downsample * cfg.patch_size);
        std::map<std::string, Tensor> weights;
        for (auto& [name, w] : model->params()) weights.emplace(name, w);
        model.emplace(cfg, std::move(weights));
    }

    const ModelConfig cfg = model->config();
    const int quantum = cfg.patch_size * stage.codec_downsample;
    auto buckets = make_buckets(static_cast<long long>(stage.resolution) * stage.resolution,
                                stage.multi_aspect ? stage.bucket_count : 1, stage.ratio_min,
                                stage.ratio_max, quantum);
    DatasetManifest manifest = load_manifest(stage.manifest_path);
    BatchScheduler scheduler(manifest, buckets, stage.batch_size, stage.seed);

    const bool ablation_no_reparam =
        stage.init_from.kind == InitFrom::Kind::scratch && stage.name != "pixel_dependency";
    {
        nlohmann::json j;
        j["kind"] = "stage_start";
        j["config"] = stage.effective_json();
        j["ablation_no_reparam"] = ablation_no_reparam;
        if (result.did_surgery) {
            j["surgery_max_residual"] = result.surgery.max_modulation_residual;
            j["surgery_fresh_seed"] = result.surgery.fresh_seed;
        }
        if (!manifest.quarantined.empty())
            j["quarantined_records"] = manifest.quarantined.size();
        if (scheduler.report().total_dropped)
            j["dropped_remainders"] = scheduler.report().total_dropped;
        ledger.add(j);
    }

    DiffusionSchedule schedule = DiffusionSchedule::linear(stage.schedule_T);
    AdamW opt({stage.lr, 0.9, 0.999, 1e-8, stage.weight_decay, 1.0});

    uint64_t start_step = 0;
    if (resume) {
        uint64_t best = 0;
        std::string best_state, best_ckpt;
        for (const auto& entry : std::filesystem::directory_iterator(out_dir)) {
            const std::string fname = entry.path().filename().string();
            const bool is_step_state = fname.rfind("step_", 0) == 0 && fname.size() > 11 &&
                                       fname.substr(fname.size() - 6) == ".state";
            if (!is_step_state && fname != "final.state") continue;
            AdamW probe({});
            const uint64_t next = load_train_state(entry.path().string(), probe);
            if (next >= best) {
                best = next;
                best_state = entry.path().string();
                best_ckpt = entry.path().string();
                best_ckpt.replace(best_ckpt.size() - 6, 6, ".ckpt");
            }
        }
        if (!best_state.empty()) {
            start_step = std::min<uint64_t>(load_train_state(best_state, opt),
                                            static_cast<uint64_t>(stage.steps));
            model.emplace(load(best_ckpt).to_model());
            nlohmann::json j;
            j["kind"] = "resume";
            j["step"] = start_step;
            j["from"] = best_ckpt;
            ledger.add(j);
            result.last_good_checkpoint = best_ckpt;
        }
    }

    HashedTextProvider provider(cfg.text_dim, cfg.max_text_tokens);
    ModelPredictor predictor(*model);

    // expected latent dims per bucket
    std::map<int, Shape> latent_shape;
    for (const Bucket& b : buckets)
        latent_shape[b.id] = {cfg.latent_channels, b.height / stage.codec_downsample,
                              b.width / stage.codec_downsample};

    SpaceToDepthCodec codec(stage.codec_downsample, stage.seed);
    std::map<std::string, Tensor> latent_cache;
    auto load_latent = [&](const ManifestRecord& rec) {
        const std::string key = rec.latent_path.empty() ? rec.image_path : rec.latent_path;
        auto it = latent_cache.find(key);
        if (it != latent_cache.end()) return it->second;
        Tensor latent = rec.latent_path.empty() ? codec.encode(load_tensor(rec.image_path))
                                                : load_tensor(rec.latent_path);
        latent_cache.emplace(key, latent);
        return latent;
    };

    auto save_snapshot = [&](const std::string& tag, uint64_t next_step) {
        const std::string ckpt_path = (std::filesystem::path(out_dir) / (tag + ".ckpt")).string();
        const std::string state_path = (std::filesystem::path(out_dir) / (tag + ".state")).string();
        std::map<std::string, std::string> meta;
        meta["stage"] = stage.name;
        meta["step"] = std::to_string(next_step);
        meta["seed"] = std::to_string(stage.seed);
        meta["init"] = stage.init_from.describe();
        save(Checkpoint::from_model(*model, std::move(meta)), ckpt_path);
        save_train_state(state_path, opt, next_step);
        nlohmann::json j;
        j["kind"] = "checkpoint";
        j["step"] = next_step;
        j["path"] = ckpt_path;
        ledger.add(j);
        return ckpt_path;
    };

    for (uint64_t step = start_step; step < static_cast<uint64_t>(stage.steps); ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto batch = scheduler.batch(stage.overfit ? 0 : step);
        const int bucket_id = manifest.records[batch[0]].bucket_id;
        real loss_value = 0;
        real grad_norm = 0;
        try {
            Tensor total;
            for (size_t j = 0; j < batch.size(); ++j) {
                const ManifestRecord& rec = manifest.records[batch[j]];
                Tensor latent = load_latent(rec);
                if (latent.shape() != latent_shape.at(rec.bucket_id))
                    throw DataError("latent for " + rec.sample_id + " has shape " +
                                    shape_str(latent.shape()) + ", bucket expects " +
                                    shape_str(latent_shape.at(rec.bucket_id)));
                Conditioning cond = detail_pipe::condition_for(rec, *model, provider);
                Rng rng(stage.seed, detail_pipe::loss_stream(stage.overfit ? 0 : step, j));
                Tensor l = training_loss(predictor, latent, cond, rng, schedule,
                                         stage.null_cond_prob);
                total = j == 0 ? l : add(total, l);
            }
            Tensor loss = scale(total, 1.0 / static_cast<real>(batch.size()));
            loss_value = loss.item();
            backward(loss);
            grad_norm = opt.step(model->params());
        } catch (const NumericError& e) {
            nlohmann::json j;
            j["kind"] = "abort";
            j["step"] = step;
            j["reason"] = e.what();
            j["last_good_checkpoint"] = result.last_good_checkpoint;
            ledger.add(j);
            result.aborted = true;
            return result;
        }
        const auto t1 = std::chrono::steady_clock::now();
        nlohmann::json j;
        j["kind"] = "step";
        j["step"] = step;
        j["loss"] = loss_value;
        j["lr"] = stage.lr;
        j["bucket_id"] = bucket_id;
        j["grad_norm"] = grad_norm;
        j["wall_ms"] =
            std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count() / 1000.0;
        ledger.add(j);
        result.losses.push_back(loss_value);

        if (stage.checkpoint_every > 0 && (step + 1) % static_cast<uint64_t>(stage.checkpoint_every) == 0 &&
            step + 1 < static_cast<uint64_t>(stage.steps)) {
            result.last_good_checkpoint = save_snapshot("step_" + std::to_string(step + 1), step + 1);
        }
    }

    result.final_checkpoint = save_snapshot("final", static_cast<uint64_t>(stage.steps));
    result.last_good_checkpoint = result.final_checkpoint;
    nlohmann::json j;
    j["kind"] = "stage_end";
    j["name"] = stage.name;
    j["final_checkpoint"] = result.final_checkpoint;
    ledger.add(j);
    return result;
}

// -----------------------------------------------------------------------
// plan runner

struct PlanOutcome {
    bool empty = false;
    bool aborted = false;
    std::vector<std::string> stage_checkpoints;
};

inline std::string plan_stage_dir(const std::string& out_root, size_t index,
                                  const StageConfig& stage) {
    return (std::filesystem::path(out_root) /
            ("stage" + std::to_string(index + 1) + "_" + stage.name))
        .string();
}

// Executes stages in order. The chain is validated structurally before any
// training: stage i>0 must initialize from stage i-1's final checkpoint
// (checkpoint or reparam), or explicitly from scratch, which is the
// "without re-parameterization" ablation and is labeled as such in the
// ledger. A resume skips stages whose final checkpoint already exists.
inline PlanOutcome run_plan(std::vector<StageConfig> stages, RunLedger& ledger,
                            const std::string& out_root, bool resume = false) {
    PlanOutcome outcome;
    if (stages.empty()) {
        outcome.empty = true;
        nlohmann::json j;
        j["kind"] = "plan_empty";
        j["note"] = "empty plan: nothing to do";
        ledger.add(j);
        return outcome;
    }

    // validation pass before any training starts
    for (size_t i = 0; i < stages.size(); ++i) {
        stages[i].validate();
        if (i == 0) {
            if (stages[i].init_from.kind != InitFrom::Kind::scratch &&
                !std::filesystem::exists(stages[i].init_from.path))
                throw ConfigError("plan: first stage init checkpoint missing: " +
                                  stages[i].init_from.path);
            continue;
        }
        const std::string expected =
            (std::filesystem::path(plan_stage_dir(out_root, i - 1, stages[i - 1])) / "final.ckpt")
                .string();
        if (stages[i].init_from.kind == InitFrom::Kind::scratch) continue;  // ablation path
        if (stages[i].init_from.path.empty())
            stages[i].init_from.path = expected;
        else if (stages[i].init_from.path != expected)
            throw ConfigError("plan chain broken: stage " + std::to_string(i + 1) +
                              " initializes from " + stages[i].init_from.path +
                              " but stage " + std::to_string(i) + " writes " + expected);
    }

    nlohmann::json start;
    start["kind"] = "plan_start";
    start["stages"] = stages.size();
    ledger.add(start);

    for (size_t i = 0; i < stages.size(); ++i) {
        const std::string dir = plan_stage_dir(out_root, i, stages[i]);
        const std::string final_path = (std::filesystem::path(dir) / "final.ckpt").string();
        if (resume && std::filesystem::exists(final_path)) {
            nlohmann::json j;
            j["kind"] = "stage_skipped";
            j["name"] = stages[i].name;
            j["final_checkpoint"] = final_path;
            ledger.add(j);
            outcome.stage_checkpoints.push_back(final_path);
            continue;
        }
        StageResult r = run_stage(stages[i], ledger, dir, resume);
        if (r.aborted) {
            outcome.aborted = true;
            return outcome;
        }
        outcome.stage_checkpoints.push_back(r.final_checkpoint);
    }
    return outcome;
}

}  // namespace pixart
