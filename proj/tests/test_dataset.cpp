#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "torsion/dataset.hpp"
#include "torsion/oracle.hpp"

using namespace torsion;
namespace fs = std::filesystem;

namespace {

GenConfig small_cfg() {
    GenConfig cfg;
    cfg.seed = 20240601;
    cfg.count = 10;
    cfg.spline_prob = 0.5;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("generate: gates, determinism, both boundary kinds") {
    Dataset ds = generate(small_cfg(), 0.05, 96);
    REQUIRE(ds.samples.size() == 10);
    bool spline = false, poly = false;
    for (const auto& s : ds.samples) {
        CHECK(s.target > 0);
        CHECK(s.target <= saint_venant_bound(s.area) * 1.01);
        CHECK(s.id == s.base_id);
        REQUIRE_FALSE(s.domain.loops.empty());
        (s.domain.loops[0].from_spline ? spline : poly) = true;
    }
    CHECK(spline);
    CHECK(poly);

    // identical regeneration, and identical across worker counts
    Dataset again = generate(small_cfg(), 0.05, 96, 4);
    REQUIRE(again.samples.size() == ds.samples.size());
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(again.samples[i].target == ds.samples[i].target);
        CHECK(again.samples[i].image.bits == ds.samples[i].image.bits);
    }
}

TEST_CASE("augment: counts, copied targets, in-box, identity at zero") {
    Dataset base = generate(small_cfg(), 0.05, 96);
    Dataset aug = augment(base, 3);
    CHECK(aug.samples.size() == 40);
    for (const auto& s : aug.samples) {
        const Sample* b = aug.find(s.base_id);
        REQUIRE(b);
        CHECK(s.target == b->target); // invariance contract, bitwise
        for (const auto& loop : s.domain.loops)
            for (const auto& p : loop.pts) {
                CHECK(std::abs(p.x) <= 2.0);
                CHECK(std::abs(p.y) <= 2.0);
            }
    }
    // augmented copies differ from their base in pixel space
    int moved = 0;
    for (const auto& s : aug.samples)
        if (s.id != s.base_id && s.image.bits != aug.find(s.base_id)->image.bits) ++moved;
    CHECK(moved > 25);

    Dataset same = augment(base, 0);
    CHECK(same.samples.size() == base.samples.size());
}

TEST_CASE("split: fractions, determinism, no leakage") {
    Dataset ds = augment(generate(small_cfg(), 0.05, 96), 3);
    split_dataset(ds, {0.7, 0.1, 0.2}, 99);
    int counts[3] = {0, 0, 0};
    std::set<uint64_t> tr_bases, te_bases;
    for (const auto& s : ds.samples) {
        REQUIRE(s.split >= 0);
        ++counts[s.split];
        if (s.split == kTrain) tr_bases.insert(s.base_id);
        if (s.split == kTest) te_bases.insert(s.base_id);
    }
    CHECK(counts[kTrain] == 28); // 7 bases x 4
    CHECK(counts[kVal] == 4);
    CHECK(counts[kTest] == 8);
    for (uint64_t b : tr_bases) CHECK_FALSE(te_bases.count(b)); // domain-level grouping

    Dataset ds2 = augment(generate(small_cfg(), 0.05, 96), 3);
    split_dataset(ds2, {0.7, 0.1, 0.2}, 99);
    for (size_t i = 0; i < ds.samples.size(); ++i)
        CHECK(ds.samples[i].split == ds2.samples[i].split);

    CHECK_THROWS_AS(split_dataset(ds, {0.5, 0.2, 0.2}, 1), DatasetError);
}

TEST_CASE("save/load round trip is byte-identical") {
    TempDir d1("torsion_ds_a"), d2("torsion_ds_b");
    Dataset ds = augment(generate(small_cfg(), 0.05, 96), 2);
    split_dataset(ds, {0.7, 0.1, 0.2}, 5);
    std::string sum1 = save_dataset(ds, d1.path.string());
    Dataset loaded = load_dataset(d1.path.string());
    CHECK(loaded.checksum == sum1);
    CHECK(loaded.samples.size() == ds.samples.size());
    std::string sum2 = save_dataset(loaded, d2.path.string());
    CHECK(sum1 == sum2);
    CHECK(slurp(d1.path / "manifest.csv") == slurp(d2.path / "manifest.csv"));
    CHECK(slurp(d1.path / "config.json") == slurp(d2.path / "config.json"));
    CHECK(slurp(d1.path / "images/img_000003.bin") == slurp(d2.path / "images/img_000003.bin"));

    // manifest row count equals the sample count
    std::istringstream ms(slurp(d1.path / "manifest.csv"));
    std::string line;
    int rows = -1; // header
    while (std::getline(ms, line))
        if (!line.empty()) ++rows;
    CHECK(rows == int(ds.samples.size()));
}

TEST_CASE("corruption and truncation are detected") {
    TempDir dir("torsion_ds_corrupt");
    Dataset ds = generate(small_cfg(), 0.05, 96);
    save_dataset(ds, dir.path.string());

    // flip a pixel byte
    fs::path img = dir.path / "images/img_000000.bin";
    std::string bytes = slurp(img);
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream(img, std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_dataset(dir.path.string()), DatasetError);

    // truncate it instead
    std::ofstream(img, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS(load_dataset(dir.path.string()));
}

TEST_CASE("worker count does not change the saved bytes") {
    TempDir d1("torsion_ds_w1"), d8("torsion_ds_w8");
    GenConfig cfg = small_cfg();
    cfg.count = 8;
    Dataset a = augment(generate(cfg, 0.05, 96, 1), 2, 1);
    Dataset b = augment(generate(cfg, 0.05, 96, 8), 2, 8);
    split_dataset(a, {0.7, 0.1, 0.2}, 3);
    split_dataset(b, {0.7, 0.1, 0.2}, 3);
    CHECK(save_dataset(a, d1.path.string()) == save_dataset(b, d8.path.string()));
    CHECK(dataset_checksum(d1.path.string()) == dataset_checksum(d8.path.string()));
}

TEST_CASE("reference target set Y collects base targets") {
    Dataset ds = augment(generate(small_cfg(), 0.05, 96), 2);
    auto y = ds.reference_targets();
    CHECK(y.size() == 10);
    for (double v : y) CHECK(v > 0);
}
