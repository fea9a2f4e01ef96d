// Command-line front end: train / plan / sample / reparam / analyze /
// autolabel, plus a synth-data utility for generating desk-scale datasets.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric abort.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "pixart/autolabel.hpp"
#include "pixart/checkpoint.hpp"
#include "pixart/dataops.hpp"
#include "pixart/pipeline.hpp"
#include "pixart/reparam.hpp"
#include "pixart/sampling.hpp"
#include "pixart/synthdata.hpp"

namespace {

using namespace pixart;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;


int cmd_train(const StageConfig& stage, const std::string& out_dir,
              const std::string& ledger_path, bool resume) {
    RunLedger ledger(ledger_path);
    StageResult r = run_stage(stage, ledger, out_dir, resume);
    if (r.aborted) {
        std::cerr << "training aborted on non-finite loss; last good checkpoint: "
                  << (r.last_good_checkpoint.empty() ? "(none)" : r.last_good_checkpoint) << "\n";
        return kExitNumeric;
    }
    std::cout << "final checkpoint: " << r.final_checkpoint << "\n";
    return kExitOk;
}

int cmd_plan(const std::string& plan_path, const std::string& out_root,
             const std::string& ledger_path, bool resume) {
    std::vector<StageConfig> stages = parse_plan_file(plan_path);
    RunLedger ledger(ledger_path);
    PlanOutcome out = run_plan(stages, ledger, out_root, resume);
    if (out.empty) {
        std::cout << "empty plan: nothing to do\n";
        return kExitOk;
    }
    if (out.aborted) {
        std::cerr << "plan aborted on non-finite loss\n";
        return kExitNumeric;
    }
    for (size_t i = 0; i < out.stage_checkpoints.size(); ++i)
        std::cout << "stage " << i + 1 << ": " << out.stage_checkpoints[i] << "\n";
    return kExitOk;
}

int cmd_sample(const std::string& ckpt_path, const SampleRequest& req, bool preview) {
    Model model = load(ckpt_path).to_model();
    std::vector<SampleOutput> outputs = sample_run(model, req);
    if (outputs.empty()) {
        std::cout << "no prompts given: zero outputs\n";
        return kExitOk;
    }
    if (preview) {
        for (const SampleOutput& out : outputs) {
            Tensor latent = load_tensor(out.latent_path);
            const int h = latent.dim(1), w = latent.dim(2);
            real lo = latent.data()[0], hi = latent.data()[0];
            for (real v : latent.data()) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            std::string path = out.latent_path;
            path.replace(path.size() - 4, 4, ".pgm");
            std::ofstream f(path, std::ios::binary);
            f << "P5\n" << w << " " << h << "\n255\n";
            for (int i = 0; i < h * w; ++i) {
                const real v = (latent.data()[i] - lo) / (hi - lo + 1e-12);
                f.put(static_cast<char>(static_cast<int>(v * 255)));
            }
        }
    }
    std::cout << outputs.size() << " outputs in " << req.out_dir << "\n";
    return kExitOk;
}

int cmd_reparam(const std::string& source, int t_star, uint64_t fresh_seed,
                const std::string& out, const std::string& report_path) {
    Checkpoint src = load(source);
    SurgeryResult result = reparameterize(src, t_star, fresh_seed);
    save(result.checkpoint, out);
    if (!report_path.empty()) result.report.save(report_path);
    std::cout << "surged checkpoint: " << out
              << "  max modulation residual: " << result.report.max_modulation_residual << "\n";
    return kExitOk;
}

int cmd_analyze(const std::string& manifest_path, const std::string& compare_path, int threshold,
                const std::string& out_path) {
    auto captions_of = [](const std::string& path) {
        DatasetManifest m = load_manifest(path);
        std::vector<std::string> captions;
        captions.reserve(m.records.size());
        for (const ManifestRecord& r : m.records) captions.push_back(r.caption);
        return captions;
    };
    CaptionStats a = caption_stats(captions_of(manifest_path), threshold);
    CaptionStats b = compare_path.empty() ? a : caption_stats(captions_of(compare_path), threshold);
    StatsReport report = stats_report(a, b, "corpus_a", compare_path.empty() ? "same" : "corpus_b");

    std::cout << report.human_table();
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f) throw DataError("cannot open " + out_path + " for writing");
        for (const auto& [k, v] : report.key_values()) f << k << " = " << v << "\n";
    }
    return kExitOk;
}

int cmd_autolabel(const std::string& manifest_path, const std::string& out_path,
                  const std::string& mock_caption, const std::string& replay_path,
                  const std::string& prompt, int concurrency, int max_retries, double base_delay,
                  const std::string& ledger_path) {
    DatasetManifest manifest = load_manifest(manifest_path);
    MockAutoLabelServer mock(mock_caption);
    if (!replay_path.empty()) mock.load_replay_file(replay_path);

    RetryPolicy policy;
    policy.max_retries = max_retries;
    policy.base_delay_s = base_delay;
    AutoLabelResult result = autolabel_run(
        manifest, mock, prompt, concurrency, policy,
        [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); });

    save_manifest(result.relabeled, out_path);
    RunLedger ledger(ledger_path);
    for (const AutoLabelRecordOutcome& o : result.outcomes) {
        nlohmann::json j;
        j["kind"] = "autolabel";
        j["sample_id"] = o.sample_id;
        j["status"] = o.ok ? "ok" : "quarantined";
        j["retries"] = o.retries;
        if (!o.ok) j["reason"] = o.failure_reason;
        ledger.add(j);
    }
    std::cout << "relabeled " << result.relabeled.records.size() << " records, quarantined "
              << result.quarantined << "\n";
    return kExitOk;  // quarantines are reported, not fatal
}

int cmd_synth_data(const std::string& out_dir, int resolution, int bucket_count, double ratio_min,
                   double ratio_max, int per_bucket, uint64_t seed, int channels, int downsample,
                   int patch) {
    auto buckets = make_buckets(static_cast<long long>(resolution) * resolution, bucket_count,
                                ratio_min, ratio_max, patch * downsample);
    const std::string manifest =
        write_synthetic_dataset(out_dir, buckets, per_bucket, seed, channels, downsample);
    std::cout << "manifest: " << manifest << "\n";
    return kExitOk;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"desk-scale text-to-image diffusion transformer"};
    app.require_subcommand(1);
    int rc = kExitOk;

    // train ---------------------------------------------------------------
    // Layered config: defaults < --config file < explicit flags. Flag values
    // land in the same key/value vocabulary the plan files use.
    auto* train = app.add_subcommand("train", "run one training stage");
    std::string train_config, train_out = "runs/stage", train_ledger;
    bool train_resume = false;
    train->add_option("--config", train_config, "key=value stage config file");
    std::map<std::string, CLI::Option*> train_opts;
    std::map<std::string, std::string> flag_store;
    auto kv_option = [&](const char* flag, const char* key, const char* help) {
        train_opts[key] = train->add_option(flag, flag_store[key], help);
    };
    auto kv_flag = [&](const char* flag, const char* key, const char* help) {
        train_opts[key] = train->add_flag(std::string(flag))->description(help);
    };
    kv_option("--name", "name", "pixel_dependency | text_image_align | high_aesthetics");
    kv_option("--resolution", "resolution", "stage resolution (image px)");
    kv_option("--steps", "steps", "optimizer steps");
    kv_option("--batch-size", "batch_size", "batch size");
    kv_option("--lr", "lr", "learning rate");
    kv_option("--weight-decay", "weight_decay", "AdamW weight decay");
    kv_flag("--multi-aspect", "multi_aspect", "multi-aspect bucket training");
    kv_option("--manifest", "manifest", "dataset manifest (jsonl)");
    kv_option("--seed", "seed", "run seed");
    kv_option("--checkpoint-every", "checkpoint_every", "snapshot interval");
    kv_option("--bucket-count", "bucket_count", "bucket count (multi-aspect)");
    kv_option("--ratio-min", "ratio_min", "min aspect ratio");
    kv_option("--ratio-max", "ratio_max", "max aspect ratio");
    kv_option("--downsample", "codec_downsample", "latent codec factor");
    kv_option("--schedule-t", "schedule_T", "diffusion steps T");
    kv_option("--null-prob", "null_cond_prob", "condition dropout probability");
    kv_flag("--overfit", "overfit", "repeat the first batch with frozen draws");
    kv_option("--init-from", "init_from", "scratch | checkpoint:<path> | reparam:<path>");
    kv_option("--variant", "variant",
              "dit_class_conditional | t2i_adaln_per_block | t2i_adaln_single");
    kv_option("--hidden", "hidden_size", "hidden size");
    kv_option("--depth", "depth", "transformer blocks");
    kv_option("--heads", "num_heads", "attention heads");
    kv_option("--patch", "patch_size", "patch size");
    kv_option("--latent-channels", "latent_channels", "latent channels");
    kv_option("--text-dim", "text_dim", "text embedding width");
    kv_option("--max-text-tokens", "max_text_tokens", "token budget per caption");
    kv_option("--freq-dim", "time_embed_freq_dim", "timestep frequency features");
    kv_option("--num-classes", "num_classes", "class count (dit variant)");
    kv_option("--base-grid", "base_grid", "positional frequency anchor grid");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--ledger", train_ledger, "ledger jsonl path");
    train->add_flag("--resume", train_resume, "resume from the latest snapshot in --out");
    train->callback([&]() {
        std::map<std::string, std::string> kv =
            train_config.empty() ? std::map<std::string, std::string>{}
                                 : parse_kv_file(train_config);
        for (const auto& [key, opt] : train_opts) {
            if (!opt->count()) continue;
            kv[key] = opt->results().empty() ? "true" : opt->results().back();
        }
        if (!kv.count("manifest") || kv.at("manifest").empty())
            throw ConfigError("train needs a manifest (flag --manifest or config key)");
        rc = cmd_train(stage_from_kv(kv), train_out, train_ledger, train_resume);
    });

    // plan ----------------------------------------------------------------
    auto* plan = app.add_subcommand("plan", "run a multi-stage training plan");
    std::string plan_path, plan_root = "runs/plan", plan_ledger;
    bool plan_resume = false;
    plan->add_option("--plan", plan_path, "[stage.N] key=value plan file")->required();
    plan->add_option("--out-root", plan_root, "root output directory");
    plan->add_option("--ledger", plan_ledger, "ledger jsonl path");
    plan->add_flag("--resume", plan_resume, "skip stages with existing final checkpoints");
    plan->callback([&]() { rc = cmd_plan(plan_path, plan_root, plan_ledger, plan_resume); });

    // sample --------------------------------------------------------------
    auto* sample_cmd = app.add_subcommand("sample", "sample latents from a t2i checkpoint");
    std::string sample_ckpt, sampler_kind = "dpm", prompts_file;
    SampleRequest req;
    bool preview = false;
    sample_cmd->add_option("--checkpoint", sample_ckpt, "t2i checkpoint")->required();
    sample_cmd->add_option("--prompt", req.prompts, "prompt (repeatable)");
    sample_cmd->add_option("--prompts-file", prompts_file, "one prompt per line");
    sample_cmd->add_option("--sampler", sampler_kind, "iddpm | dpm");
    sample_cmd->add_option("--steps", req.sampler.steps, "sampler steps");
    sample_cmd->add_option("--cfg", req.sampler.cfg_scale, "guidance scale");
    sample_cmd->add_flag("--cfg-sweep", req.cfg_sweep, "sweep cfg over 1.5,2,3,4,5,6");
    sample_cmd->add_option("--seed", req.seeds, "sampling seed (repeatable)");
    sample_cmd->add_option("--resolution", req.resolution, "image resolution");
    sample_cmd->add_option("--downsample", req.codec_downsample, "latent codec factor");
    sample_cmd->add_option("--schedule-t", req.schedule_T, "diffusion steps T");
    sample_cmd->add_option("--out", req.out_dir, "output directory")->required();
    sample_cmd->add_flag("--preview", preview, "write pgm previews of channel 0");
    sample_cmd->callback([&]() {
        req.sampler.kind = sampler_from_name(sampler_kind);
        if (!prompts_file.empty()) {
            std::ifstream f(prompts_file);
            if (!f) throw DataError("cannot open prompts file " + prompts_file);
            std::string line;
            while (std::getline(f, line))
                if (!trim(line).empty()) req.prompts.push_back(trim(line));
        }
        rc = cmd_sample(sample_ckpt, req, preview);
    });

    // reparam ---------------------------------------------------------------
    auto* rep = app.add_subcommand("reparam", "class-conditional -> adaln-single surgery");
    std::string rep_source, rep_out, rep_report;
    int t_star = 500;
    uint64_t fresh_seed = 0;
    rep->add_option("--source", rep_source, "class-conditional checkpoint")->required();
    rep->add_option("--t-star", t_star, "timestep the offsets are matched at");
    rep->add_option("--fresh-seed", fresh_seed, "seed for fresh cross-attention weights");
    rep->add_option("--out", rep_out, "surged checkpoint path")->required();
    rep->add_option("--report", rep_report, "surgery report json path");
    rep->callback([&]() { rc = cmd_reparam(rep_source, t_star, fresh_seed, rep_out, rep_report); });

    // analyze ---------------------------------------------------------------
    auto* analyze = app.add_subcommand("analyze", "caption noun-concept statistics");
    std::string an_manifest, an_compare, an_out;
    int threshold = 10;
    analyze->add_option("--manifest", an_manifest, "dataset manifest")->required();
    analyze->add_option("--compare", an_compare, "second manifest for deltas");
    analyze->add_option("--threshold", threshold, "valid-noun frequency threshold");
    analyze->add_option("--out", an_out, "key=value stats output");
    analyze->callback([&]() { rc = cmd_analyze(an_manifest, an_compare, threshold, an_out); });

    // autolabel -------------------------------------------------------------
    auto* label = app.add_subcommand("autolabel", "relabel captions through the mock endpoint");
    std::string al_manifest, al_out, al_caption = "a detailed description", al_replay;
    std::string al_prompt = kAutoLabelPrompt, al_ledger;
    int concurrency = 1, max_retries = 5;
    double base_delay = 1.0;
    label->add_option("--manifest", al_manifest, "input manifest")->required();
    label->add_option("--out", al_out, "relabeled manifest path")->required();
    label->add_option("--mock-caption", al_caption, "fixed caption served by the mock");
    label->add_option("--replay", al_replay, "replay file: {sample_id, caption} per line");
    label->add_option("--prompt", al_prompt, "instruction sent with every request");
    label->add_option("--concurrency", concurrency, "in-flight request bound");
    label->add_option("--max-retries", max_retries, "retry budget per record");
    label->add_option("--base-delay", base_delay, "backoff base (seconds)");
    label->add_option("--ledger", al_ledger, "ledger jsonl path");
    label->callback([&]() {
        rc = cmd_autolabel(al_manifest, al_out, al_caption, al_replay, al_prompt, concurrency,
                           max_retries, base_delay, al_ledger);
    });

    // synth-data ------------------------------------------------------------
    auto* synth = app.add_subcommand("synth-data", "generate a synthetic two-mode dataset");
    std::string sd_out = "data/synth";
    int sd_res = 16, sd_buckets = 1, sd_per = 32, sd_channels = 4, sd_down = 2, sd_patch = 2;
    double sd_rmin = 1.0, sd_rmax = 1.0;
    uint64_t sd_seed = 0;
    synth->add_option("--out-dir", sd_out, "dataset directory");
    synth->add_option("--resolution", sd_res, "target resolution (image px)");
    synth->add_option("--buckets", sd_buckets, "bucket count");
    synth->add_option("--ratio-min", sd_rmin, "min aspect");
    synth->add_option("--ratio-max", sd_rmax, "max aspect");
    synth->add_option("--per-bucket", sd_per, "samples per bucket");
    synth->add_option("--seed", sd_seed, "generation seed");
    synth->add_option("--channels", sd_channels, "latent channels");
    synth->add_option("--downsample", sd_down, "codec factor");
    synth->add_option("--patch", sd_patch, "model patch size");
    synth->callback([&]() {
        rc = cmd_synth_data(sd_out, sd_res, sd_buckets, sd_rmin, sd_rmax, sd_per, sd_seed,
                            sd_channels, sd_down, sd_patch);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const pixart::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const pixart::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const pixart::ContractError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const pixart::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const pixart::ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
