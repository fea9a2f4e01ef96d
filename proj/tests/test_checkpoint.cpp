#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <fstream>

#include "pixart/checkpoint.hpp"
#include "test_util.hpp"

using namespace pixart;

namespace {

Checkpoint sample_checkpoint(uint64_t seed) {
    Model m(ModelConfig::desk(Variant::t2i_adaln_single), seed);
    testutil::perturb_weights(m, seed);
    return Checkpoint::from_model(m, {{"seed", std::to_string(seed)}, {"stage", "test"}});
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
}

// byte offset of the u64 element-count field of the first weight table entry
size_t first_length_offset(const std::vector<uint8_t>& bytes) {
    io::Reader r(bytes);
    r.pos = 4;      // magic
    r.u32();        // version
    r.str();        // variant
    for (int i = 0; i < 11; ++i) r.i32();
    const uint32_t meta = r.u32();
    for (uint32_t i = 0; i < meta; ++i) {
        r.str();
        r.str();
    }
    r.u32();  // weight count
    r.str();  // first name
    const uint32_t ndim = r.u32();
    for (uint32_t i = 0; i < ndim; ++i) r.i32();
    return r.pos;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
    testutil::TempDir dir("ckpt_roundtrip");
    Checkpoint a = sample_checkpoint(11);
    save(a, dir.file("a.ckpt"));
    Checkpoint b = load(dir.file("a.ckpt"));

    REQUIRE(b.weights.size() == a.weights.size());
    for (const auto& [name, w] : a.weights) {
        const Tensor& v = b.weights.at(name);
        REQUIRE(v.shape() == w.shape());
        REQUIRE(std::memcmp(v.data().data(), w.data().data(), w.numel() * sizeof(real)) == 0);
    }
    CHECK(b.metadata == a.metadata);
    CHECK(serialize(b) == serialize(a));
}

TEST_CASE("corrupt length field fails with shape disagreement") {
    Checkpoint a = sample_checkpoint(12);
    std::vector<uint8_t> bytes = serialize(a);
    const size_t off = first_length_offset(bytes);
    bytes[off] ^= 0x01;  // length no longer matches the declared shape
    try {
        deserialize(bytes);
        FAIL("expected DataError");
    } catch (const VersionError&) {
        FAIL("wrong error class");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("shape/length disagreement") != std::string::npos);
    }
}

TEST_CASE("future format version is refused with no partial state") {
    testutil::TempDir dir("ckpt_version");
    Checkpoint a = sample_checkpoint(13);
    std::vector<uint8_t> bytes = serialize(a);
    bytes[4] = 99;  // format_version little-endian low byte
    write_bytes(dir.file("future.ckpt"), bytes);
    CHECK_THROWS_AS(load(dir.file("future.ckpt")), VersionError);
}

TEST_CASE("truncated and corrupted files are distinct errors") {
    Checkpoint a = sample_checkpoint(14);
    std::vector<uint8_t> bytes = serialize(a);

    std::vector<uint8_t> cut(bytes.begin(), bytes.end() - 20);
    try {
        deserialize(cut);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }

    std::vector<uint8_t> flipped = bytes;
    flipped[flipped.size() - 100] ^= 0xFF;  // poke the data section
    try {
        deserialize(flipped);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }

    std::vector<uint8_t> badmagic = bytes;
    badmagic[0] = 'Q';
    CHECK_THROWS_AS(deserialize(badmagic), DataError);
}

TEST_CASE("weight name grammar is enforced") {
    CHECK(valid_weight_name("block.0.sa_wq"));
    CHECK(valid_weight_name("patch_embed.g.weight"));
    CHECK_FALSE(valid_weight_name("noseparators"));
    CHECK_FALSE(valid_weight_name("a.b.c.d"));
    CHECK_FALSE(valid_weight_name("block.x1.role"));
    CHECK_FALSE(valid_weight_name("block.0."));
    CHECK_FALSE(valid_weight_name("Block.0.role"));

    Checkpoint bad = sample_checkpoint(15);
    bad.weights.emplace("in valid", Tensor::zeros({2}));
    CHECK_THROWS_AS(serialize(bad), DataError);
}

TEST_CASE("checkpoint to model round-trip preserves forward behavior") {
    Checkpoint ckpt = sample_checkpoint(16);
    Model m = ckpt.to_model();
    Rng rng(17);
    Tensor latent = Tensor::randn({4, 8, 8}, rng);
    Tensor a = m.forward(latent, 42, Conditioning::none());
    Tensor b = ckpt.to_model().forward(latent, 42, Conditioning::none());
    CHECK(a.data() == b.data());
}
