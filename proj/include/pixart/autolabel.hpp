#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pixart/dataops.hpp"

// Client for an external captioning service. Requests and responses are one
// JSON object per line over a byte-stream transport, which keeps the wire
// contract mockable in-process: the bundled mock server speaks exactly the
// same format and can replay canned captions or scripted failures.

namespace pixart {

// default instruction sent with every request
constexpr const char* kAutoLabelPrompt =
    "Describe this image and its style in a very detailed manner";

struct AutoLabelRequest {
    std::string sample_id;
    std::string image_ref;
    std::string prompt = kAutoLabelPrompt;
};

struct AutoLabelResponse {
    std::string caption;
    std::string model_tag;
    double latency_ms = 0;
};

inline std::string encode_request(const AutoLabelRequest& r) {
    nlohmann::json j;
    j["sample_id"] = r.sample_id;
    j["image_ref"] = r.image_ref;
    j["prompt"] = r.prompt;
    return j.dump();
}

inline AutoLabelRequest decode_request(const std::string& line) {
    try {
        nlohmann::json j = nlohmann::json::parse(line);
        AutoLabelRequest r;
        r.sample_id = j.at("sample_id").get<std::string>();
        r.image_ref = j.value("image_ref", "");
        r.prompt = j.at("prompt").get<std::string>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed autolabel request: ") + e.what());
    }
}

inline std::string encode_response(const AutoLabelResponse& r) {
    nlohmann::json j;
    j["caption"] = r.caption;
    j["model_tag"] = r.model_tag;
    j["latency_ms"] = r.latency_ms;
    return j.dump();
}

inline std::string encode_error_response(const std::string& reason) {
    nlohmann::json j;
    j["error"] = reason;
    return j.dump();
}

// throws DataError when the peer reports an error or the line is malformed
inline AutoLabelResponse decode_response(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed autolabel response: ") + e.what());
    }
    if (j.contains("error")) throw DataError("autolabel peer error: " + j["error"].dump());
    AutoLabelResponse r;
    r.caption = j.value("caption", "");
    r.model_tag = j.value("model_tag", "");
    r.latency_ms = j.value("latency_ms", 0.0);
    return r;
}

// byte-stream endpoint: request line in, response line out
struct AutoLabelTransport {
    virtual ~AutoLabelTransport() = default;
    virtual std::string round_trip(const std::string& request_line) = 0;
};

// In-process mock endpoint. Replays canned captions per sample_id (or one
// fixed caption), with optional scripted failures: the first fail_times[id]
// (or fail_all_times) calls for a record return an error response.
class MockAutoLabelServer : public AutoLabelTransport {
public:
    explicit MockAutoLabelServer(std::string fixed_caption = "a detailed description")
        : fixed_caption_(std::move(fixed_caption)) {}

    // replay file: one {"sample_id":..., "caption":...} object per line
    void load_replay_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw DataError("cannot open replay file " + path);
        std::string line;
        while (std::getline(f, line)) {
            if (trim(line).empty()) continue;
            try {
                nlohmann::json j = nlohmann::json::parse(line);
                replay_[j.at("sample_id").get<std::string>()] =
                    j.at("caption").get<std::string>();
            } catch (const nlohmann::json::exception& e) {
                throw DataError("replay file " + path + ": " + e.what());
            }
        }
    }

    void set_replay(const std::string& sample_id, const std::string& caption) {
        replay_[sample_id] = caption;
    }
    void fail_first(const std::string& sample_id, int times) { fail_times_[sample_id] = times; }
    void fail_always(bool on) { fail_always_ = on; }

    int total_calls() const { return calls_.load(); }
    const std::string& last_prompt() const { return last_prompt_; }

    std::string round_trip(const std::string& request_line) override {
        AutoLabelRequest req = decode_request(request_line);
        std::lock_guard<std::mutex> g(mutex_);
        calls_++;
        last_prompt_ = req.prompt;
        if (fail_always_) return encode_error_response("scripted permanent failure");
        auto it = fail_times_.find(req.sample_id);
        if (it != fail_times_.end() && it->second > 0) {
            --it->second;
            return encode_error_response("scripted transient failure");
        }
        AutoLabelResponse resp;
        auto rit = replay_.find(req.sample_id);
        resp.caption = rit != replay_.end() ? rit->second : fixed_caption_;
        resp.model_tag = "mock-vlm-1";
        resp.latency_ms = 1.0;
        return encode_response(resp);
    }

private:
    std::string fixed_caption_;
    std::map<std::string, std::string> replay_;
    std::map<std::string, int> fail_times_;
    bool fail_always_ = false;
    std::mutex mutex_;
    std::atomic<int> calls_{0};
    std::string last_prompt_;
};

struct RetryPolicy {
    int max_retries = 5;
    double base_delay_s = 1.0;
    double factor = 2.0;
};

struct AutoLabelRecordOutcome {
    std::string sample_id;
    bool ok = false;
    int retries = 0;
    std::string caption;
    std::string failure_reason;
};

struct AutoLabelResult {
    DatasetManifest relabeled;  // sample ids and order preserved
    std::vector<AutoLabelRecordOutcome> outcomes;
    long long quarantined = 0;
};

// Relabels every record through the transport. Exhausted retries quarantine
// the record instead of aborting the run. Work is sharded over `concurrency`
// threads; outcomes are slotted by record index, so output order does not
// depend on the worker count. sleep_fn receives the backoff delay in
// seconds; tests inject a collector instead of sleeping.
inline AutoLabelResult autolabel_run(
    const DatasetManifest& manifest, AutoLabelTransport& transport,
    const std::string& prompt = kAutoLabelPrompt, int concurrency = 1,
    RetryPolicy policy = {},
    std::function<void(double)> sleep_fn = [](double) {}) {
    if (concurrency < 1) throw ConfigError("autolabel concurrency must be >= 1");
    const size_t n = manifest.records.size();
    std::vector<AutoLabelRecordOutcome> outcomes(n);

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= n) return;
            const ManifestRecord& r = manifest.records[i];
            AutoLabelRequest req;
            req.sample_id = r.sample_id;
            req.image_ref = r.image_path.empty() ? r.latent_path : r.image_path;
            req.prompt = prompt;
            const std::string line = encode_request(req);

            AutoLabelRecordOutcome out;
            out.sample_id = r.sample_id;
            for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
                if (attempt > 0) {
                    sleep_fn(policy.base_delay_s * std::pow(policy.factor, attempt - 1));
                    out.retries = attempt;
                }
                try {
                    AutoLabelResponse resp = decode_response(transport.round_trip(line));
                    out.ok = true;
                    out.caption = resp.caption;
                    break;
                } catch (const DataError& e) {
                    out.failure_reason = e.what();
                }
            }
            outcomes[i] = std::move(out);
        }
    };

    if (concurrency == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < concurrency; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    AutoLabelResult result;
    result.outcomes = std::move(outcomes);
    for (size_t i = 0; i < n; ++i) {
        ManifestRecord r = manifest.records[i];
        if (result.outcomes[i].ok) {
            r.caption = result.outcomes[i].caption;
            result.relabeled.records.push_back(std::move(r));
        } else {
            result.relabeled.quarantined.push_back(std::move(r));
            ++result.quarantined;
        }
    }
    return result;
}

}  // namespace pixart
