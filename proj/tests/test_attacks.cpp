#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "bdclean/attacks.hpp"
#include "bdclean/contrastive.hpp"
#include "bdclean/rng.hpp"

using namespace bdclean;

TEST_CASE("chessboard pattern") {
    SUBCASE("1x2x2 with delta 3/255") {
        Tensor v = attacks::make_chessboard(1, 2, 2, 3.0 / 255.0);
        CHECK(v.at(0, 0, 0) == 0.0f);
        CHECK(v.at(0, 0, 1) == doctest::Approx(3.0 / 255.0));
        CHECK(v.at(0, 1, 0) == doctest::Approx(3.0 / 255.0));
        CHECK(v.at(0, 1, 1) == 0.0f);
    }
    SUBCASE("delta 0 gives the all-zeros pattern") {
        Tensor v = attacks::make_chessboard(1, 3, 3, 0.0);
        for (float x : v.data) CHECK(x == 0.0f);
    }
    SUBCASE("sum over 1x4x4 equals 8 delta (direct summation)") {
        double delta = 0.013;
        Tensor v = attacks::make_chessboard(1, 4, 4, delta);
        double s = 0;
        for (float x : v.data) s += x;
        CHECK(s == doctest::Approx(8 * delta).epsilon(1e-6));
    }
    SUBCASE("parity is configurable") {
        Tensor even = attacks::make_chessboard(1, 2, 2, 0.5, 0);
        CHECK(even.at(0, 0, 0) == 0.5f);
        CHECK(even.at(0, 0, 1) == 0.0f);
    }
}

TEST_CASE("embed_additive") {
    Tensor v = attacks::make_chessboard(1, 4, 4, 3.0 / 255.0);
    SUBCASE("clips at 1") {
        Tensor x({1, 4, 4});
        std::fill(x.data.begin(), x.data.end(), 1.0f);
        Tensor y = attacks::embed_additive(x, v);
        for (float p : y.data) CHECK(p == 1.0f);
    }
    SUBCASE("interior arithmetic") {
        Tensor x({1, 4, 4});
        std::fill(x.data.begin(), x.data.end(), 0.5f);
        Tensor y = attacks::embed_additive(x, v);
        CHECK(y.at(0, 0, 1) == doctest::Approx(0.5 + 3.0 / 255.0));
        CHECK(y.at(0, 0, 0) == 0.5f);
    }
    SUBCASE("matches elementwise recomputation on random input") {
        Rng rng(5);
        Tensor x({1, 4, 4});
        for (auto& p : x.data) p = static_cast<float>(rng.uniform());
        Tensor y = attacks::embed_additive(x, v);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            float expect = std::min(1.0f, std::max(0.0f, x.data[i] + v.data[i]));
            CHECK(y.data[i] == expect);
        }
    }
    SUBCASE("shape mismatch is rejected") {
        Tensor x({1, 3, 3});
        CHECK_THROWS_AS(attacks::embed_additive(x, v), std::invalid_argument);
    }
}

TEST_CASE("embed_patch") {
    SUBCASE("3x3 mask at origin replaces exactly 9 pixels per channel") {
        Tensor x({2, 6, 6});
        Tensor mask = attacks::make_rect_mask(2, 6, 6, 3, 3, 0, 0);
        Tensor u({2, 6, 6});
        std::fill(u.data.begin(), u.data.end(), 1.0f);
        Tensor y = attacks::embed_patch(x, mask, u);
        for (std::uint32_t c = 0; c < 2; ++c) {
            int ones = 0;
            for (std::uint32_t i = 0; i < 6; ++i)
                for (std::uint32_t j = 0; j < 6; ++j)
                    if (y.at(c, i, j) == 1.0f) ++ones;
            CHECK(ones == 9);
        }
    }
    SUBCASE("all-zero mask is the identity") {
        Rng rng(6);
        Tensor x({1, 4, 4});
        for (auto& p : x.data) p = static_cast<float>(rng.uniform());
        Tensor mask({1, 4, 4});
        Tensor u({1, 4, 4});
        Tensor y = attacks::embed_patch(x, mask, u);
        CHECK(y.data == x.data);
    }
    SUBCASE("non-binary mask is rejected") {
        Tensor x({1, 2, 2}), mask({1, 2, 2}), u({1, 2, 2});
        mask.data[0] = 0.5f;
        CHECK_THROWS_AS(attacks::embed_patch(x, mask, u), std::invalid_argument);
    }
}

TEST_CASE("embed_blend") {
    Tensor x({1, 4, 4});
    std::fill(x.data.begin(), x.data.end(), 1.0f);
    Tensor mask = attacks::make_rect_mask(1, 4, 4, 2, 2, 1, 1);
    Tensor u({1, 4, 4});

    SUBCASE("alpha 0.4 blends masked pixels to 0.6") {
        Tensor y = attacks::embed_blend(x, 0.4, mask, u);
        CHECK(y.at(0, 1, 1) == doctest::Approx(0.6));
        CHECK(y.at(0, 0, 0) == 1.0f);
    }
    SUBCASE("alpha 1 equals patch replacement") {
        Tensor blended = attacks::embed_blend(x, 1.0, mask, u);
        Tensor patched = attacks::embed_patch(x, mask, u);
        CHECK(blended.data == patched.data);
    }
    SUBCASE("alpha out of range is rejected") {
        CHECK_THROWS_AS(attacks::embed_blend(x, 0.0, mask, u), std::invalid_argument);
        CHECK_THROWS_AS(attacks::embed_blend(x, 1.5, mask, u), std::invalid_argument);
    }
}

namespace {

attacks::AttackSpec additive_spec(const data::Dataset& ds, int t, int m, std::uint64_t seed) {
    attacks::AttackSpec spec;
    spec.kind = attacks::PatternKind::additive;
    spec.target_class = t;
    spec.poison_count = m;
    spec.seed = seed;
    auto sh = ds.image_shape();
    spec.pattern.perturbation =
        attacks::make_chessboard(sh.channels, sh.height, sh.width, 3.0 / 255.0);
    return spec;
}

}  // namespace

TEST_CASE("poison_dataset bookkeeping") {
    data::Dataset ds = data::synth_dataset(4, 25, {1, 4, 4}, 0.05, 31);
    attacks::AttackSpec spec = additive_spec(ds, 0, 10, 77);
    attacks::PoisonOutcome out = attacks::poison_dataset(ds, spec);

    CHECK(out.poisoned.size() == 100);
    CHECK(out.poisoned_ids.size() == 10);
    std::set<int> flagged(out.poisoned_ids.begin(), out.poisoned_ids.end());
    for (const auto& s : out.poisoned.samples) {
        if (flagged.count(s.id)) {
            CHECK(s.is_poisoned);
            CHECK(s.label == 0);
            CHECK(s.original_label != 0);
        } else {
            CHECK_FALSE(s.is_poisoned);
            CHECK(s.image.data == ds.samples[s.id].image.data);  // untouched bytes
        }
    }
}

TEST_CASE("poison_dataset with M=0 is the identity") {
    data::Dataset ds = data::synth_dataset(2, 5, {1, 3, 3}, 0.0, 1);
    attacks::AttackSpec spec = additive_spec(ds, 0, 0, 3);
    attacks::PoisonOutcome out = attacks::poison_dataset(ds, spec);
    CHECK(out.poisoned_ids.empty());
    for (std::size_t i = 0; i < ds.size(); ++i)
        CHECK(out.poisoned.samples[i].image.data == ds.samples[i].image.data);
}

TEST_CASE("poison_dataset rejects impossible requests") {
    data::Dataset ds = data::synth_dataset(2, 5, {1, 3, 3}, 0.0, 1);
    attacks::AttackSpec spec = additive_spec(ds, 0, 6, 3);  // only 5 non-target samples
    CHECK_THROWS_AS(attacks::poison_dataset(ds, spec), std::invalid_argument);
    spec.target_class = 9;
    CHECK_THROWS_AS(attacks::poison_dataset(ds, spec), std::invalid_argument);
}

TEST_CASE("poison_dataset is deterministic in the seed") {
    data::Dataset ds = data::synth_dataset(3, 30, {1, 4, 4}, 0.02, 8);
    attacks::AttackSpec spec = additive_spec(ds, 1, 12, 99);
    auto a = attacks::poison_dataset(ds, spec);
    auto b = attacks::poison_dataset(ds, spec);
    CHECK(a.poisoned_ids == b.poisoned_ids);
    for (std::size_t i = 0; i < ds.size(); ++i)
        CHECK(a.poisoned.samples[i].image.data == b.poisoned.samples[i].image.data);
}

TEST_CASE("trigger_testset") {
    data::Dataset test = data::synth_dataset(2, 6, {1, 4, 4}, 0.05, 13);
    attacks::AttackSpec spec = additive_spec(test, 1, 0, 5);

    SUBCASE("2-class target 1 keeps exactly the class-0 samples, patterned") {
        data::Dataset trig = attacks::trigger_testset(test, spec);
        CHECK(trig.size() == 6);
        for (const auto& s : trig.samples) {
            CHECK(s.original_label == 0);
            CHECK(s.is_poisoned);
        }
    }
    SUBCASE("no non-target samples gives an empty set") {
        data::Dataset mono = data::synth_dataset(1, 4, {1, 4, 4}, 0.0, 2);
        attacks::AttackSpec s2 = additive_spec(mono, 0, 0, 5);
        data::Dataset trig = attacks::trigger_testset(mono, s2);
        CHECK(trig.samples.empty());
    }
    SUBCASE("triggered images differ from originals only on the pattern support") {
        data::Dataset trig = attacks::trigger_testset(test, spec);
        const Tensor& v = spec.pattern.perturbation;
        std::size_t ti = 0;
        for (const auto& orig : test.samples) {
            if (orig.original_label == 1) continue;
            const Tensor& y = trig.samples[ti++].image;
            for (std::size_t p = 0; p < y.data.size(); ++p) {
                if (v.data[p] == 0.0f) CHECK(y.data[p] == orig.image.data[p]);
                CHECK(y.data[p] >= 0.0f);
                CHECK(y.data[p] <= 1.0f);
            }
        }
    }
}

TEST_CASE("random patch placement stays in bounds and varies per sample") {
    data::Dataset ds = data::synth_dataset(2, 40, {1, 8, 8}, 0.0, 3);
    attacks::AttackSpec spec;
    spec.kind = attacks::PatternKind::patch;
    spec.target_class = 0;
    spec.poison_count = 30;
    spec.seed = 11;
    Rng prng(2);
    spec.pattern.patch = attacks::random_patch(1, 3, 3, prng);
    spec.pattern.patch_h = spec.pattern.patch_w = 3;
    spec.pattern.placement = attacks::Placement::random_per_sample;

    attacks::PoisonOutcome out = attacks::poison_dataset(ds, spec);
    std::set<std::size_t> first_diff;
    for (int id : out.poisoned_ids) {
        const auto& poisoned = out.poisoned.samples[id].image;
        const auto& orig = ds.samples[id].image;
        for (std::size_t p = 0; p < poisoned.data.size(); ++p)
            if (poisoned.data[p] != orig.data[p]) {
                first_diff.insert(p);
                break;
            }
    }
    CHECK(first_diff.size() > 1);  // placements differ across samples
}

TEST_CASE("class_centroid") {
    SUBCASE("singleton class returns its embedding") {
        Tensor emb({3, 2});
        emb.data = {1, 0, 0, 1, 0.5f, 0.5f};
        auto c = attacks::class_centroid(emb, {0, 1, 1}, 0);
        CHECK(c[0] == doctest::Approx(1.0));
        CHECK(c[1] == doctest::Approx(0.0));
    }
    SUBCASE("antipodal unit vectors average to zero") {
        Tensor emb({2, 2});
        emb.data = {1, 0, -1, 0};
        auto c = attacks::class_centroid(emb, {0, 0}, 0);
        CHECK(c[0] == doctest::Approx(0.0));
        CHECK(c[1] == doctest::Approx(0.0));
    }
    SUBCASE("matches brute-force mean on random vectors") {
        Rng rng(9);
        Tensor emb({5, 4});
        for (auto& v : emb.data) v = static_cast<float>(rng.uniform(-1, 1));
        std::vector<int> labels = {1, 1, 0, 1, 1};
        auto c = attacks::class_centroid(emb, labels, 1);
        for (std::size_t j = 0; j < 4; ++j) {
            double s = (static_cast<double>(emb.data[0 * 4 + j]) + emb.data[1 * 4 + j] +
                        emb.data[3 * 4 + j] + emb.data[4 * 4 + j]) /
                       4.0;
            CHECK(c[j] == doctest::Approx(s).epsilon(1e-12));
        }
    }
    SUBCASE("empty class is rejected") {
        Tensor emb({2, 2});
        CHECK_THROWS_AS(attacks::class_centroid(emb, {0, 0}, 1), std::invalid_argument);
    }
}

namespace {

nn::EncoderParams identity_encoder(std::uint32_t c, std::uint32_t h, std::uint32_t w) {
    nn::EncoderParams p;
    p.in_c = c;
    p.in_h = h;
    p.in_w = w;
    p.normalize = false;
    std::size_t d = static_cast<std::size_t>(c) * h * w;
    nn::Layer l;
    l.W = nn::Mat(d, d);
    for (std::size_t i = 0; i < d; ++i) l.W.at(i, i) = 1.0;
    l.b.assign(d, 0.0);
    l.relu = false;
    p.layers.push_back(std::move(l));
    return p;
}

}  // namespace

TEST_CASE("adaptive patch with identity encoder recovers the masked centroid") {
    data::Dataset ds = data::synth_dataset(3, 20, {1, 5, 5}, 0.05, 17);
    nn::EncoderParams enc = identity_encoder(1, 5, 5);
    int t = 2;
    attacks::AdaptiveResult res = attacks::optimize_adaptive_patch(
        enc, ds, t, 2, 2, attacks::Placement::fixed_top_left, 400, 0.5, 1);

    Tensor emb = contrastive::embed_dataset(enc, ds);
    std::vector<int> labels(ds.size());
    for (const auto& s : ds.samples) labels[s.id] = s.label;
    auto centroid = attacks::class_centroid(emb, labels, t);

    for (std::uint32_t i = 0; i < 2; ++i)
        for (std::uint32_t j = 0; j < 2; ++j) {
            double expect = centroid[i * 5 + j];  // top-left corner coords
            CHECK(res.patch.at(0, i, j) == doctest::Approx(expect).epsilon(2e-3));
        }
    CHECK(res.final_objective <= res.initial_objective);
}

TEST_CASE("adaptive patch with zero steps returns the initialization") {
    data::Dataset ds = data::synth_dataset(2, 6, {1, 4, 4}, 0.0, 3);
    nn::EncoderParams enc = identity_encoder(1, 4, 4);
    attacks::AdaptiveResult res = attacks::optimize_adaptive_patch(
        enc, ds, 0, 2, 2, attacks::Placement::fixed_top_left, 0, 0.5, 1);
    for (float v : res.patch.data) CHECK(v == 0.5f);
    CHECK(res.final_objective == res.initial_objective);
}

TEST_CASE("adaptive patch on a trained-style surrogate: objective decreases monotonically") {
    data::Dataset ds = data::synth_dataset(2, 25, {1, 4, 4}, 0.05, 21);
    nn::EncoderArch arch;
    arch.hidden = {10};
    arch.output_dim = 4;
    nn::EncoderParams enc = nn::make_encoder(1, 4, 4, arch, 31);

    attacks::AdaptiveResult res = attacks::optimize_adaptive_patch(
        enc, ds, 1, 2, 2, attacks::Placement::fixed_top_left, 25, 0.5, 1);
    CHECK(res.final_objective <= res.initial_objective);
    for (std::size_t i = 1; i < res.objective_history.size(); ++i)
        CHECK(res.objective_history[i] <= res.objective_history[i - 1]);

    // independent recomputation of the final objective by a fresh forward pass
    Tensor emb = contrastive::embed_dataset(enc, ds);
    std::vector<int> labels(ds.size());
    for (const auto& s : ds.samples) labels[s.id] = s.label;
    auto centroid = attacks::class_centroid(emb, labels, 1);
    Tensor mask = attacks::make_rect_mask(1, 4, 4, 2, 2, 0, 0);
    Tensor placed = attacks::place_patch(4, 4, res.patch, 0, 0);
    double obj = 0;
    std::size_t count = 0;
    for (const auto& s : ds.samples) {
        if (s.label == 1) continue;
        Tensor patched = attacks::embed_patch(s.image, mask, placed);
        std::vector<const Tensor*> one{&patched};
        nn::Mat z = nn::forward_embed(enc, one);
        double n2 = 0;
        for (std::size_t j = 0; j < z.cols; ++j) {
            double vd = z.at(0, j) - centroid[j];
            n2 += vd * vd;
        }
        obj += std::sqrt(n2);
        ++count;
    }
    obj /= static_cast<double>(count);
    CHECK(obj == doctest::Approx(res.final_objective).epsilon(1e-9));
}

TEST_CASE("adaptive patch rejects non-differentiable placement") {
    data::Dataset ds = data::synth_dataset(2, 6, {1, 4, 4}, 0.0, 3);
    nn::EncoderParams enc = identity_encoder(1, 4, 4);
    CHECK_THROWS_AS(
        attacks::optimize_adaptive_patch(enc, ds, 0, 2, 2,
                                         attacks::Placement::random_per_sample, 5, 0.5, 1),
        std::invalid_argument);
}
