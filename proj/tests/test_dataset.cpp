#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bdclean/dataset.hpp"
#include "bdclean/rng.hpp"

using namespace bdclean;

namespace {

std::string temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "bdclean_dataset_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
}

void push_u32be(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back((x >> 24) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back(x & 0xff);
}

}  // namespace

TEST_CASE("load_idx reads a tiny idx pair and scales bytes to [0,1]") {
    std::vector<unsigned char> imgs;
    push_u32be(imgs, 0x00000803);
    push_u32be(imgs, 2);  // two 2x2 images
    push_u32be(imgs, 2);
    push_u32be(imgs, 2);
    for (unsigned char b : {0, 128, 255, 51, 255, 0, 0, 255}) imgs.push_back(b);
    std::vector<unsigned char> lbls;
    push_u32be(lbls, 0x00000801);
    push_u32be(lbls, 2);
    lbls.push_back(7);
    lbls.push_back(0);
    auto ip = temp_path("tiny-images"), lp = temp_path("tiny-labels");
    write_bytes(ip, imgs);
    write_bytes(lp, lbls);

    data::Dataset ds = data::load_idx(ip, lp);
    CHECK(ds.size() == 2);
    CHECK(ds.num_classes == 10);
    CHECK(ds.samples[0].label == 7);
    CHECK(ds.samples[0].image.data[0] == doctest::Approx(0.0));
    CHECK(ds.samples[0].image.data[2] == doctest::Approx(1.0));  // byte 255 -> 1.0
    CHECK(ds.samples[1].label == 0);
}

TEST_CASE("load_idx rejects malformed input") {
    auto empty = temp_path("empty");
    write_bytes(empty, {});

    std::vector<unsigned char> imgs;
    push_u32be(imgs, 0x00000803);
    push_u32be(imgs, 1);
    push_u32be(imgs, 1);
    push_u32be(imgs, 1);
    imgs.push_back(9);
    auto ip = temp_path("one-image");
    write_bytes(ip, imgs);

    std::vector<unsigned char> lbls;
    push_u32be(lbls, 0x00000801);
    push_u32be(lbls, 2);  // count mismatch
    lbls.push_back(1);
    lbls.push_back(2);
    auto lp = temp_path("two-labels");
    write_bytes(lp, lbls);

    CHECK_THROWS(data::load_idx(empty, lp));
    CHECK_THROWS(data::load_idx(ip, lp));

    std::vector<unsigned char> bad;
    push_u32be(bad, 0xdeadbeef);
    auto bp = temp_path("bad-magic");
    write_bytes(bp, bad);
    CHECK_THROWS(data::load_idx(bp, lp));
}

TEST_CASE("idx export then load is identity on pixels and labels") {
    data::Dataset ds = data::synth_dataset(3, 4, {1, 5, 5}, 0.1, 99);
    auto ip = temp_path("rt-images"), lp = temp_path("rt-labels");
    data::export_idx(ds, ip, lp);
    data::Dataset back = data::load_idx(ip, lp);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.samples[i].label == ds.samples[i].label);
        for (std::size_t p = 0; p < ds.samples[i].image.numel(); ++p) {
            // quantized to bytes on the way out
            float expect = std::round(ds.samples[i].image.data[p] * 255.0f) / 255.0f;
            CHECK(back.samples[i].image.data[p] == doctest::Approx(expect).epsilon(1e-6));
        }
    }
}

TEST_CASE("synth_dataset basics") {
    SUBCASE("argument validation") {
        CHECK_THROWS_AS(data::synth_dataset(0, 5, {1, 4, 4}, 0.0, 1), std::invalid_argument);
        CHECK_THROWS_AS(data::synth_dataset(2, 0, {1, 4, 4}, 0.0, 1), std::invalid_argument);
        CHECK_THROWS_AS(data::synth_dataset(2, 5, {1, 4, 4}, -0.1, 1), std::invalid_argument);
    }
    SUBCASE("zero noise makes identical images within a class") {
        data::Dataset ds = data::synth_dataset(2, 5, {1, 4, 4}, 0.0, 7);
        CHECK(ds.size() == 10);
        for (int c = 0; c < 2; ++c)
            for (int k = 1; k < 5; ++k)
                CHECK(ds.samples[c * 5 + k].image.data == ds.samples[c * 5].image.data);
    }
    SUBCASE("bit-identical for the same seed") {
        data::Dataset a = data::synth_dataset(10, 100, {1, 8, 8}, 0.05, 42);
        data::Dataset b = data::synth_dataset(10, 100, {1, 8, 8}, 0.05, 42);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(a.samples[i].image.data == b.samples[i].image.data);
    }
    SUBCASE("class mean images differ somewhere by at least 0.2 (direct scan)") {
        data::Dataset ds = data::synth_dataset(2, 20, {1, 4, 4}, 0.02, 3);
        std::vector<double> mean0(16, 0.0), mean1(16, 0.0);
        for (const auto& s : ds.samples) {
            auto& m = s.label == 0 ? mean0 : mean1;
            for (int p = 0; p < 16; ++p) m[p] += s.image.data[p] / 20.0;
        }
        double worst = 0.0;
        for (int p = 0; p < 16; ++p) worst = std::max(worst, std::abs(mean0[p] - mean1[p]));
        CHECK(worst >= 0.2);
    }
    SUBCASE("ids are dense 0..N-1") {
        data::Dataset ds = data::synth_dataset(3, 7, {1, 4, 4}, 0.0, 11);
        CHECK_NOTHROW(ds.validate());
        for (std::size_t i = 0; i < ds.size(); ++i) CHECK(ds.samples[i].id == (int)i);
    }
}

TEST_CASE("manifest round trip preserves all fields") {
    data::Dataset ds = data::synth_dataset(2, 5, {1, 3, 3}, 0.0, 5);
    ds.samples[3].is_poisoned = true;
    ds.samples[3].original_label = 1;
    ds.samples[3].label = 0;
    auto rows = data::make_manifest(ds);
    rows[2].accepted = false;
    rows[2].predicted_class = 1;
    rows[2].confidence = 0.823456789;
    rows[7].accepted = true;
    rows[7].predicted_class = 1;
    rows[7].confidence = 1.0;

    auto path = temp_path("manifest.csv");
    data::write_manifest(path, rows);
    auto back = data::read_manifest(path);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].id == rows[i].id);
        CHECK(back[i].original_label == rows[i].original_label);
        CHECK(back[i].current_label == rows[i].current_label);
        CHECK(back[i].is_poisoned == rows[i].is_poisoned);
        CHECK(back[i].accepted.has_value() == rows[i].accepted.has_value());
        if (rows[i].confidence)
            CHECK(*back[i].confidence == doctest::Approx(*rows[i].confidence).epsilon(1e-8));
    }
}

TEST_CASE("manifest schema violations are rejected") {
    auto path = temp_path("bad_manifest.csv");
    {
        std::ofstream os(path, std::ios::trunc);
        os << "id,original_label,current_label,is_poisoned,accepted,predicted_class\n";
        os << "0,1,1,0,1,1\n";
    }
    CHECK_THROWS(data::read_manifest(path));  // missing confidence column

    {
        std::ofstream os(path, std::ios::trunc);
        os << "id,original_label,current_label,is_poisoned,accepted,predicted_class,confidence\n";
        os << "0,1,1,0,,,\n0,1,1,0,,,\n";
    }
    CHECK_THROWS(data::read_manifest(path));  // duplicate id
}

TEST_CASE("dataset dir save/load round trip") {
    data::Dataset ds = data::synth_dataset(3, 4, {2, 3, 3}, 0.05, 21);
    ds.samples[1].is_poisoned = true;
    auto dir = temp_path("dsdir");
    data::save_dataset_dir(dir, ds);
    data::Dataset back = data::load_dataset_dir(dir);
    REQUIRE(back.size() == ds.size());
    CHECK(back.num_classes == ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.samples[i].image.data == ds.samples[i].image.data);
        CHECK(back.samples[i].label == ds.samples[i].label);
        CHECK(back.samples[i].is_poisoned == ds.samples[i].is_poisoned);
    }
}

TEST_CASE("bdtn tensor file round trip and format errors") {
    Tensor t({2, 3});
    Rng rng(4);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    auto path = temp_path("t.bdtn");
    save_bdtn(path, t);
    Tensor back = load_bdtn(path);
    CHECK(back.dims == t.dims);
    CHECK(back.data == t.data);

    write_bytes(path, {'X', 'X', 'X', 'X', 0, 0, 0, 0});
    CHECK_THROWS(load_bdtn(path));
}
