#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstring>
#include <map>
#include <set>

#include "pixart/dataops.hpp"
#include "test_util.hpp"

using namespace pixart;

namespace {

// Exhaustive scan over the whole quantum grid box: the reference for
// make_buckets' per-aspect choice.
std::pair<int, int> brute_force_rectangle(long long area, double aspect, int quantum) {
    const double lo = 0.875 * static_cast<double>(area);
    const double hi = 1.125 * static_cast<double>(area);
    int best_h = 0, best_w = 0;
    double best_aspect_err = 1e300, best_area_err = 1e300;
    for (int h = quantum; static_cast<double>(h) * quantum <= hi; h += quantum)
        for (int w = quantum; static_cast<double>(h) * w <= hi; w += quantum) {
            const double a = static_cast<double>(h) * w;
            if (a < lo || a > hi) continue;
            const double aerr = std::abs(std::log(static_cast<double>(w) / h) - std::log(aspect));
            const double derr = std::abs(a - static_cast<double>(area));
            const bool better = aerr < best_aspect_err - 1e-12 ||
                                (std::abs(aerr - best_aspect_err) <= 1e-12 &&
                                 (derr < best_area_err - 1e-9 ||
                                  (std::abs(derr - best_area_err) <= 1e-9 && h < best_h)));
            if (better) {
                best_h = h;
                best_w = w;
                best_aspect_err = aerr;
                best_area_err = derr;
            }
        }
    return {best_h, best_w};
}

DatasetManifest synthetic_manifest(const std::vector<Bucket>& buckets,
                                   const std::vector<int>& per_bucket_counts) {
    DatasetManifest m;
    int k = 0;
    for (size_t b = 0; b < per_bucket_counts.size(); ++b)
        for (int i = 0; i < per_bucket_counts[b]; ++i) {
            ManifestRecord r;
            r.sample_id = "s" + std::to_string(k++);
            r.native_height = buckets[b].height;
            r.native_width = buckets[b].width;
            r.caption = "sample " + std::to_string(k);
            r.bucket_id = buckets[b].id;
            m.records.push_back(r);
        }
    return m;
}

}  // namespace

TEST_CASE("single bucket is square-ish") {
    auto buckets = make_buckets(512 * 512, 1, 0.25, 4.0, 16);
    REQUIRE(buckets.size() == 1);
    CHECK(std::abs(std::log(buckets[0].aspect)) < 0.1);
    CHECK(buckets[0].height % 16 == 0);
    CHECK(buckets[0].width % 16 == 0);
}

TEST_CASE("forty buckets span the aspect range") {
    auto buckets = make_buckets(512 * 512, 40, 0.25, 4.0, 16);
    REQUIRE(buckets.size() == 40);
    CHECK(buckets.front().aspect == Catch::Approx(0.25).epsilon(0.15));
    CHECK(buckets.back().aspect == Catch::Approx(4.0).epsilon(0.15));
    std::set<std::pair<int, int>> dims;
    for (size_t i = 0; i < buckets.size(); ++i) {
        const Bucket& b = buckets[i];
        REQUIRE(b.id == static_cast<int>(i));
        REQUIRE(b.height % 16 == 0);
        REQUIRE(b.width % 16 == 0);
        const double area = static_cast<double>(b.height) * b.width;
        REQUIRE(std::abs(area - 512.0 * 512.0) / (512.0 * 512.0) <= 0.125);
        if (i > 0) REQUIRE(b.aspect > buckets[i - 1].aspect);
        REQUIRE(dims.insert({b.height, b.width}).second);  // all distinct
    }
}

TEST_CASE("bucket choice matches the exhaustive grid scan") {
    const long long area = 512 * 512;
    auto buckets = make_buckets(area, 12, 0.25, 4.0, 16);
    for (int i = 0; i < 12; ++i) {
        const double aspect =
            std::exp(std::log(0.25) + (std::log(4.0) - std::log(0.25)) * i / 11.0);
        auto [h, w] = brute_force_rectangle(area, aspect, 16);
        REQUIRE(buckets[i].height == h);
        REQUIRE(buckets[i].width == w);
    }
}

TEST_CASE("bucket generation failure modes") {
    // grid too coarse for 40 distinct rectangles
    CHECK_THROWS_AS(make_buckets(256 * 256, 40, 0.25, 4.0, 128), ConfigError);
    // area below quantum^2
    CHECK_THROWS_AS(make_buckets(100, 4, 0.25, 4.0, 16), ConfigError);
    CHECK_THROWS_AS(make_buckets(512 * 512, 0, 0.25, 4.0, 16), ConfigError);
}

TEST_CASE("assign_bucket picks the aspect argmin with low-id ties") {
    auto buckets = make_buckets(512 * 512, 8, 0.25, 4.0, 16);
    for (const Bucket& b : buckets)
        CHECK(assign_bucket(b.height, b.width, buckets) == b.id);

    // geometric mean of two adjacent aspects: equidistant in log space
    std::vector<Bucket> pair;
    pair.push_back({0, 100, 50, 0.5});
    pair.push_back({1, 50, 100, 2.0});
    CHECK(assign_bucket(100, 100, pair) == 0);  // log-distance ties break low

    Rng rng(1);
    for (int trial = 0; trial < 10000; ++trial) {
        const int h = 64 + static_cast<int>(rng.uniform_int(960));
        const int w = 64 + static_cast<int>(rng.uniform_int(960));
        const double target = std::log(static_cast<double>(w) / h);
        int best = 0;
        double best_err = 1e300;
        for (const Bucket& b : buckets) {
            const double err = std::abs(std::log(b.aspect) - target);
            if (err < best_err - 1e-15) {
                best = b.id;
                best_err = err;
            }
        }
        REQUIRE(assign_bucket(h, w, buckets) == best);
    }
}

TEST_CASE("scheduler alternates strictly between two buckets") {
    auto buckets = make_buckets(128 * 128, 2, 0.5, 2.0, 16);
    DatasetManifest m = synthetic_manifest(buckets, {8, 8});
    BatchScheduler sched(m, buckets, 4, 7);
    auto batches = sched.epoch_batches(0);
    REQUIRE(batches.size() == 4);
    std::vector<int> sequence;
    for (const auto& batch : batches) {
        REQUIRE(batch.size() == 4);
        std::set<int> ids;
        for (size_t idx : batch) ids.insert(m.records[idx].bucket_id);
        REQUIRE(ids.size() == 1);  // single-bucket batch
        sequence.push_back(*ids.begin());
    }
    for (size_t i = 1; i < sequence.size(); ++i) REQUIRE(sequence[i] != sequence[i - 1]);
}

TEST_CASE("single-bucket manifest repeats the bucket") {
    auto buckets = make_buckets(128 * 128, 1, 1.0, 1.0, 16);
    DatasetManifest m = synthetic_manifest(buckets, {12});
    BatchScheduler sched(m, buckets, 4, 3);
    auto batches = sched.epoch_batches(0);
    REQUIRE(batches.size() == 3);
    for (const auto& batch : batches)
        for (size_t idx : batch) REQUIRE(m.records[idx].bucket_id == buckets[0].id);
}

TEST_CASE("scheduler conserves samples") {
    auto buckets = make_buckets(128 * 128, 4, 0.5, 2.0, 16);
    DatasetManifest m = synthetic_manifest(buckets, {9, 4, 7, 3});  // remainders 1, 0, 3, 3
    BatchScheduler sched(m, buckets, 4, 11);
    auto batches = sched.epoch_batches(2);

    std::multiset<std::string> emitted;
    for (const auto& batch : batches)
        for (size_t idx : batch) emitted.insert(m.records[idx].sample_id);
    CHECK(static_cast<long long>(emitted.size()) ==
          static_cast<long long>(m.records.size()) - sched.report().total_dropped);
    CHECK(emitted.size() == std::set<std::string>(emitted.begin(), emitted.end()).size());
    CHECK(sched.report().total_dropped == 1 + 3 + 3);

    // different epochs reshuffle but conserve
    auto other = sched.epoch_batches(3);
    std::multiset<std::string> emitted2;
    for (const auto& batch : other)
        for (size_t idx : batch) emitted2.insert(m.records[idx].sample_id);
    CHECK(emitted2.size() == emitted.size());
    CHECK(sched.epoch_batches(2) == batches);  // deterministic per epoch
}

TEST_CASE("scheduler refuses when no bucket can fill a batch") {
    auto buckets = make_buckets(128 * 128, 2, 0.5, 2.0, 16);
    DatasetManifest m = synthetic_manifest(buckets, {3, 2});
    CHECK_THROWS_AS(BatchScheduler(m, buckets, 4, 1), DataError);

    DatasetManifest unknown = synthetic_manifest(buckets, {4, 4});
    unknown.records[0].bucket_id = 99;
    CHECK_THROWS_AS(BatchScheduler(unknown, buckets, 4, 1), DataError);
}

TEST_CASE("space-to-depth codec round-trips bitwise") {
    Rng rng(5);
    SpaceToDepthCodec codec(2, 42);
    Tensor image = Tensor::randn({1, 8, 8}, rng);
    Tensor latent = codec.encode(image);
    CHECK(latent.shape() == Shape{4, 4, 4});
    Tensor back = codec.decode(latent);
    REQUIRE(back.shape() == image.shape());
    CHECK(std::memcmp(back.data().data(), image.data().data(), image.numel() * sizeof(real)) == 0);

    SpaceToDepthCodec wide(8, 0);
    Tensor img3 = Tensor::randn({3, 16, 16}, rng);
    Tensor z = wide.encode(img3);
    CHECK(z.shape() == Shape{192, 2, 2});
    CHECK(wide.decode(z).data() == img3.data());

    CHECK_THROWS_AS(codec.encode(Tensor::zeros({1, 7, 8})), ShapeError);
}

TEST_CASE("quantizing codec is lossy but shape-compatible") {
    Rng rng(6);
    QuantizingCodec lossy(2, 0.5);
    SpaceToDepthCodec exact(2, 1);
    Tensor image = Tensor::randn({1, 8, 8}, rng);
    Tensor z = lossy.encode(image);
    CHECK(z.shape() == exact.encode(image).shape());
    CHECK(lossy.decode(z).data() != image.data());  // reconstruction differs
}

TEST_CASE("tensor file round-trip") {
    testutil::TempDir dir("tenfile");
    Rng rng(7);
    Tensor t = Tensor::randn({3, 5, 2}, rng);
    save_tensor(t, dir.file("x.ten"));
    Tensor back = load_tensor(dir.file("x.ten"));
    CHECK(back.shape() == t.shape());
    CHECK(back.data() == t.data());
}

TEST_CASE("caption stats on the empty corpus") {
    CaptionStats s = caption_stats({});
    CHECK(s.distinct_nouns == 0);
    CHECK(s.valid_nouns == 0);
    CHECK(s.total_nouns == 0);
    CHECK(s.avg_per_image == 0.0);
}

TEST_CASE("caption stats hand corpus and strict threshold") {
    std::vector<std::string> corpus(11, "a cat");
    CaptionStats s = caption_stats(corpus);
    CHECK(s.distinct_nouns == 1);
    CHECK(s.histogram.at("cat") == 11);
    CHECK(s.valid_nouns == 1);  // 11 > 10
    CHECK(s.total_nouns == 11);
    CHECK(s.avg_per_image == 1.0);

    // exactly 10 occurrences is NOT valid
    std::vector<std::string> ten(10, "a cat");
    CaptionStats s10 = caption_stats(ten);
    CHECK(s10.distinct_nouns == 1);
    CHECK(s10.valid_nouns == 0);
}

TEST_CASE("caption stats invariants") {
    std::vector<std::string> corpus = {
        "A dog chases a ball in the park.",
        "The dog and the cat sleep on a sofa",
        "a painting of a harbor with boats and seagulls",
        "dog dog dog",
        "",
    };
    CaptionStats s = caption_stats(corpus, 2);
    CHECK(s.valid_nouns <= s.distinct_nouns);
    CHECK(s.distinct_nouns <= s.total_nouns);
    long long histsum = 0;
    for (auto& [k, v] : s.histogram) histsum += v;
    CHECK(histsum == s.total_nouns);
    CHECK(s.avg_per_image == Catch::Approx(static_cast<double>(s.total_nouns) / 5.0));

    // permutation invariance
    std::vector<std::string> shuffled = {corpus[3], corpus[0], corpus[4], corpus[2], corpus[1]};
    CaptionStats s2 = caption_stats(shuffled, 2);
    CHECK(s2.histogram == s.histogram);
    CHECK(s2.valid_nouns == s.valid_nouns);

    // shard merge equals whole-corpus stats
    CaptionStats left = caption_stats({corpus[0], corpus[1]}, 2);
    CaptionStats right = caption_stats({corpus[2], corpus[3], corpus[4]}, 2);
    CaptionStats merged = merge_stats(left, right, 5, 2);
    CHECK(merged.histogram == s.histogram);
    CHECK(merged.valid_nouns == s.valid_nouns);
    CHECK(merged.avg_per_image == Catch::Approx(s.avg_per_image));
}

TEST_CASE("stats report columns and deltas") {
    CHECK(StatsReport::columns() == std::vector<std::string>{"VN/DN", "Total Noun", "Average"});

    std::vector<std::string> brief = {"a cat", "a dog"};                    // avg 1
    std::vector<std::string> dense = {"cat dog bird", "fox owl hedgehog"};  // avg 3
    StatsReport r = stats_report(caption_stats(brief), caption_stats(dense), "brief", "dense");
    auto kv = r.key_values();
    CHECK(kv.at("delta.average") == std::to_string(2.0));

    StatsReport same = stats_report(caption_stats(brief), caption_stats(brief));
    auto kv2 = same.key_values();
    CHECK(kv2.at("delta.average") == std::to_string(0.0));
    CHECK(kv2.at("delta.total") == std::to_string(0ll));

    CHECK(r.human_table().find("VN/DN") != std::string::npos);
    CHECK(r.human_table().find("LAION") != std::string::npos);  // citation row
}

TEST_CASE("manifest load quarantines empty captions") {
    testutil::TempDir dir("manifest");
    {
        std::ofstream f(dir.file("data.jsonl"));
        f << R"({"sample_id":"a","latent_path":"a.ten","native_height":256,"native_width":256,"caption":"a cat","bucket_id":0})"
          << "\n";
        f << R"({"sample_id":"b","latent_path":"b.ten","native_height":256,"native_width":256,"caption":"   ","bucket_id":0})"
          << "\n";
        f << R"({"sample_id":"c","latent_path":"c.ten","native_height":512,"native_width":128,"caption":"a dog","bucket_id":1})"
          << "\n";
    }
    DatasetManifest m = load_manifest(dir.file("data.jsonl"));
    REQUIRE(m.records.size() == 2);
    REQUIRE(m.quarantined.size() == 1);
    CHECK(m.quarantined[0].sample_id == "b");

    save_manifest(m, dir.file("out.jsonl"));
    DatasetManifest again = load_manifest(dir.file("out.jsonl"));
    CHECK(again.records.size() == 2);
    CHECK(again.records[0].sample_id == "a");
    CHECK(again.records[1].caption == "a dog");

    std::ofstream bad(dir.file("bad.jsonl"));
    bad << "{not json}\n";
    bad.close();
    CHECK_THROWS_AS(load_manifest(dir.file("bad.jsonl")), DataError);
}
