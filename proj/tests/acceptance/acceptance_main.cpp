// Acceptance suite: one function per criterion, one PASS/FAIL line each.
// Run from the repository root (ctest does this); criterion numbers may be
// passed as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bdclean/attacks.hpp"
#include "bdclean/cleanse.hpp"
#include "bdclean/contrastive.hpp"
#include "bdclean/dataset.hpp"
#include "bdclean/evaluate.hpp"
#include "bdclean/margin.hpp"
#include "bdclean/nn.hpp"
#include "bdclean/pipeline.hpp"
#include "bdclean/rng.hpp"

using namespace bdclean;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::vector<const Tensor*> ptrs_of(const std::vector<Tensor>& v) {
    std::vector<const Tensor*> p;
    for (const auto& t : v) p.push_back(&t);
    return p;
}

double min_kink_distance(const nn::EncoderParams& params, const std::vector<Tensor>& batch) {
    nn::ForwardCache cache;
    nn::forward_embed(params, ptrs_of(batch), &cache);
    double worst = 1e9;
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        if (!params.layers[li].relu) continue;
        for (double v : cache.preact[li].a) worst = std::min(worst, std::abs(v));
    }
    return worst;
}

// ---------------------------------------------------------------- criterion 1
Outcome criterion_gradients() {
    const double h = 1e-4;
    int done = 0;
    double worst = 0.0;
    std::uint64_t seed = 0;
    const int K_opts[3] = {2, 3, 4};
    const int d_opts[2] = {3, 8};
    while (done < 24 && seed < 400) {
        ++seed;
        int K = K_opts[seed % 3];
        int d = d_opts[seed % 2];
        Rng rng(seed);
        std::vector<Tensor> batch;
        for (int i = 0; i < 2 * K; ++i) {
            Tensor t({1, 3, 3});
            for (auto& v : t.data) v = static_cast<float>(rng.uniform());
            batch.push_back(std::move(t));
        }
        nn::EncoderArch arch;
        arch.hidden = {10, 6};
        arch.output_dim = static_cast<std::uint32_t>(d);
        nn::EncoderParams params = nn::make_encoder(1, 3, 3, arch, 1000 + seed);
        // keep finite differences on one linear piece of every ReLU
        if (min_kink_distance(params, batch) < 1e-3) continue;
        ++done;

        bool use_supcon = (done % 2 == 0);
        std::vector<int> labels(2 * K);
        for (int i = 0; i < 2 * K; ++i)
            labels[i] = use_supcon ? static_cast<int>(rng.uniform_index(K)) : i / 2;
        // ensure at least one positive pair for supcon
        if (use_supcon) {
            labels[0] = labels[1] = 0;
        }
        auto loss = [&](const nn::Mat& Z) {
            auto r = use_supcon ? contrastive::supcon_loss(Z, labels, 0.5)
                                : contrastive::ntxent_loss(Z, 0.5);
            return std::make_pair(r.loss, r.dZ);
        };
        double err = nn::grad_check(params, ptrs_of(batch), loss, h);
        worst = std::max(worst, err);
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d instances, worst relative error %.3g (limit 1e-4)",
                  done, worst);
    return {done >= 20 && worst < 1e-4, buf};
}

// ---------------------------------------------------------------- criterion 2
Outcome criterion_closed_form() {
    double worst = 0.0;
    for (std::size_t K : {2, 4, 8}) {
        nn::Mat Z(2 * K, 6);
        for (auto& v : Z.a) v = 0.25;
        double loss = contrastive::ntxent_loss(Z, 0.5).loss;
        worst = std::max(worst, std::abs(loss - std::log(2.0 * K - 1.0)));
    }
    char buf[120];
    std::snprintf(buf, sizeof(buf), "worst |loss - ln(2K-1)| = %.3g (limit 1e-6)", worst);
    return {worst < 1e-6, buf};
}

// ---------------------------------------------------------------- criterion 3
// independent oracles, re-derived here: full-sort kNN and double-loop energy
struct OracleDecision {
    int pred;
    bool accepted;
    double confidence;
};

std::vector<OracleDecision> knn_sort_oracle(const Tensor& emb, const std::vector<int>& labels,
                                            int num_classes, int k) {
    std::size_t n = emb.dims[0], d = emb.dims[1];
    std::vector<OracleDecision> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double s = 0;
            for (std::size_t c = 0; c < d; ++c) {
                double diff = static_cast<double>(emb.data[i * d + c]) -
                              static_cast<double>(emb.data[j * d + c]);
                s += diff * diff;
            }
            all.emplace_back(s, j);
        }
        std::sort(all.begin(), all.end());
        std::vector<int> votes(num_classes, 0);
        for (int q = 0; q < k; ++q) votes[labels[all[q].second]]++;
        int pred = 0;
        for (int c = 1; c < num_classes; ++c)
            if (votes[c] > votes[pred]) pred = c;
        out[i] = {pred, pred == labels[i], static_cast<double>(votes[pred]) / k};
    }
    return out;
}

std::vector<std::vector<double>> energy_loop_oracle(const Tensor& emb,
                                                    const std::vector<int>& labels,
                                                    int num_classes, double tau) {
    std::size_t n = emb.dims[0], d = emb.dims[1];
    std::vector<std::vector<double>> scores(n, std::vector<double>(num_classes));
    for (std::size_t i = 0; i < n; ++i) {
        double den = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double s = 0;
            for (std::size_t c = 0; c < d; ++c)
                s += static_cast<double>(emb.data[i * d + c]) * emb.data[j * d + c];
            den += std::exp(s / tau);
        }
        for (int c = 0; c < num_classes; ++c) {
            double num = 0;
            std::size_t cnt = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i || labels[j] != c) continue;
                double s = 0;
                for (std::size_t q = 0; q < d; ++q)
                    s += static_cast<double>(emb.data[i * d + q]) * emb.data[j * d + q];
                num += std::exp(s / tau);
                ++cnt;
            }
            scores[i][c] = std::log(num / static_cast<double>(cnt) / den);
        }
    }
    return scores;
}

Tensor random_embeddings(std::size_t n, std::size_t d, Rng& rng) {
    Tensor emb({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(d)});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(d);
        double norm = 0;
        for (auto& v : row) {
            v = rng.gaussian();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d; ++j)
            emb.data[i * d + j] = static_cast<float>(row[j] / norm);
    }
    return emb;
}

std::vector<int> labels_with_pairs(std::size_t n, int num_classes, Rng& rng) {
    std::vector<int> labels;
    for (int c = 0; c < num_classes; ++c) {
        labels.push_back(c);
        labels.push_back(c);
    }
    while (labels.size() < n)
        labels.push_back(static_cast<int>(rng.uniform_index(num_classes)));
    rng.shuffle(labels);
    labels.resize(n);
    return labels;
}

Outcome criterion_filter_oracles() {
    Rng rng(33);
    double worst_energy = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        std::size_t n = 50 + rng.uniform_index(451);  // 50..500
        int num_classes = 2 + static_cast<int>(rng.uniform_index(4));
        Tensor emb = random_embeddings(n, 8, rng);
        std::vector<int> labels = labels_with_pairs(n, num_classes, rng);
        int k = 1 + static_cast<int>(rng.uniform_index(std::min<std::size_t>(n - 1, 40)));

        auto fast = cleanse::knn_filter(emb, labels, num_classes, k);
        auto slow = knn_sort_oracle(emb, labels, num_classes, k);
        for (std::size_t i = 0; i < n; ++i) {
            if (fast[i].predicted_class != slow[i].pred || fast[i].accepted != slow[i].accepted ||
                fast[i].confidence != slow[i].confidence) {
                char buf[120];
                std::snprintf(buf, sizeof(buf), "kNN mismatch at instance %d sample %zu", inst,
                              i);
                return {false, buf};
            }
        }

        double tau = inst % 2 == 0 ? 0.5 : 1.0;
        nn::Mat fast_scores = cleanse::energy_scores(emb, labels, num_classes, tau);
        auto slow_scores = energy_loop_oracle(emb, labels, num_classes, tau);
        for (std::size_t i = 0; i < n; ++i)
            for (int c = 0; c < num_classes; ++c)
                worst_energy = std::max(
                    worst_energy, std::abs(fast_scores.at(i, c) - slow_scores[i][c]));
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "50 instances; kNN exact, worst energy deviation %.3g (limit 1e-9)",
                  worst_energy);
    return {worst_energy < 1e-9, buf};
}

// ---------------------------------------------------------------- criterion 4
Outcome criterion_percentile_relabel() {
    std::vector<double> ladder = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    if (std::abs(cleanse::percentile_threshold(ladder, 80) - 0.8) > 1e-12)
        return {false, "nearest-rank T on the 10-value ladder is not 0.8"};

    data::Dataset ds = data::synth_dataset(3, 10, {1, 2, 2}, 0.0, 1);
    // boundary: a reject with confidence exactly T must stay out
    {
        std::vector<cleanse::FilterDecision> dec;
        for (int i = 0; i < 29; ++i)
            dec.push_back({i, ds.samples[i].label, true, 0.01 * (i + 1)});
        double t_expect = cleanse::percentile_threshold(
            [&] {
                std::vector<double> c;
                for (const auto& d : dec) c.push_back(d.confidence);
                return c;
            }(),
            80);
        dec.push_back({29, (ds.samples[29].label + 1) % 3, false, t_expect});
        auto rr = cleanse::relabel_and_assemble(ds, dec, 80);
        if (rr.report.relabeled_count != 0)
            return {false, "confidence exactly at T was relabeled"};
    }

    Rng rng(17);
    for (int inst = 0; inst < 100; ++inst) {
        std::vector<cleanse::FilterDecision> dec;
        for (const auto& s : ds.samples) {
            bool acc = rng.bernoulli(0.6);
            int pred = acc ? s.label : (s.label + 1 + (int)rng.uniform_index(2)) % 3;
            dec.push_back({s.id, pred, acc, rng.uniform()});
        }
        std::size_t prev = SIZE_MAX;
        for (double lambda : {5.0, 25.0, 50.0, 80.0, 90.0, 100.0}) {
            auto rr = cleanse::relabel_and_assemble(ds, dec, lambda);
            if (rr.report.relabeled_count > prev)
                return {false, "raising lambda increased the relabeled count"};
            prev = rr.report.relabeled_count;
        }
    }
    return {true, "nearest-rank anchor, boundary exclusion, monotone over 100 random sets"};
}

// ---------------------------------------------------------------- criterion 5
Outcome criterion_margin_property() {
    Rng rng(71);
    int hold = 0;
    long long tries = 0;
    double min_slack = 1e300;
    while (hold < 100 && tries < 100000) {
        ++tries;
        margin::LinearModel model;
        int dim = 2 + static_cast<int>(rng.uniform_index(6));
        model.weights = nn::Mat(2, dim);
        for (auto& v : model.weights.a) v = rng.uniform(-1, 1);
        std::vector<double> x(dim), dx(dim);
        for (auto& v : x) v = rng.uniform(-2, 2);
        for (auto& v : dx) v = rng.uniform(-2, 2);
        double tau = 0.05 + 0.5 * rng.uniform();
        margin::MarginReport rep = margin::verify_affinity(model, x, dx, 0, 1, tau);
        if (!rep.premises_hold) continue;
        ++hold;
        min_slack = std::min(min_slack, rep.affinity_gap - (2 * tau - 1e-9));
        if (!rep.inequality_holds) {
            char buf[120];
            std::snprintf(buf, sizeof(buf), "gap %.12f < 2tau %.12f", rep.affinity_gap,
                          2 * tau);
            return {false, buf};
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "%d premise-holding instances, min slack over the bound %.3g", hold,
                  min_slack);
    return {hold >= 100, buf};
}

// ----------------------------------------------------------- criteria 6 and 7
struct MnistResults {
    bool ready = false;
    std::string detail;
    double undefended_asr = 0.0;
    double defended_asr = 0.0;
    double defended_acc = 0.0;
    double baseline_acc = 0.0;
    eval::RetentionStats knn_retention;
    eval::RetentionStats energy_retention;
};

std::string mnist_dir() {
    const char* env = std::getenv("BDCLEAN_MNIST_DIR");
    return env ? env : "data/mnist";
}

MnistResults g_mnist;  // computed once, reported by criteria 6 and 7

const char* kMnistConfig = R"(
[data]
source = idx

[attack]
kind = additive
target_class = 0
poison_count = 250
delta = 0.0117647059

[encoder]
hidden = 256,128
output_dim = 64
epochs = 100
batch_size = 128
temperature = 0.5
lr = 0.05
momentum = 0.9
crop_lo = 0.75
crop_hi = 1.0
noise_std = 0.05

[filter]
method = knn
lambda = 80

[classifier]
hidden =
output_dim = 64
epochs = 120
batch_size = 128
temperature = 0.2
lr = 0.15
momentum = 0.9
head_epochs = 300
head_lr = 0.5

[run]
seed = 7
out = runs/acceptance_mnist
)";

void compute_mnist() {
    if (g_mnist.ready) return;
    g_mnist.ready = true;
    std::string dirp = mnist_dir();
    if (!std::filesystem::exists(dirp + "/train-images-idx3-ubyte")) {
        g_mnist.detail =
            "MNIST data not found under '" + dirp + "' (run scripts/fetch_mnist.py first)";
        return;
    }
    pipeline::Config raw = pipeline::Config::parse_string(kMnistConfig);
    raw.set("data.idx_images", dirp + "/train-images-idx3-ubyte");
    raw.set("data.idx_labels", dirp + "/train-labels-idx1-ubyte");
    raw.set("data.test_idx_images", dirp + "/t10k-images-idx3-ubyte");
    raw.set("data.test_idx_labels", dirp + "/t10k-labels-idx1-ubyte");
    raw.set("data.train_per_class", "500");
    pipeline::PipelineConfig cfg = pipeline::pipeline_config_from(raw);

    std::printf("  [mnist] defended pipeline (kNN, 100 encoder epochs)...\n");
    std::fflush(stdout);
    eval::Metrics defended = pipeline::run_pipeline(cfg);
    g_mnist.defended_acc = defended.acc;
    g_mnist.defended_asr = defended.asr_valid ? defended.asr : 0.0;

    std::string dir = pipeline::run_dir(cfg);
    data::Dataset poisoned = data::load_dataset_dir(dir + "/train_poisoned");
    data::Dataset test = data::load_dataset_dir(dir + "/test_clean");
    data::Dataset triggered = data::load_dataset_dir(dir + "/test_triggered");

    // retention for both filters from the same persisted embeddings
    Tensor emb = load_bdtn(dir + "/embeddings.bdtn");
    std::vector<int> labels(poisoned.size());
    for (const auto& s : poisoned.samples) labels[s.id] = s.label;
    int k = cleanse::auto_k(poisoned.size(), poisoned.num_classes);
    auto knn_dec = cleanse::knn_filter(emb, labels, poisoned.num_classes, k);
    auto energy_dec =
        cleanse::energy_filter(emb, labels, poisoned.num_classes, cfg.filter.tau_energy);
    g_mnist.knn_retention = eval::retention_stats(knn_dec, poisoned);
    g_mnist.energy_retention = eval::retention_stats(energy_dec, poisoned);

    contrastive::TrainConfig ctc = cfg.classifier_cfg;
    ctc.seed = 0x5eedc1a5ull;

    std::printf("  [mnist] undefended classifier on the poisoned set...\n");
    std::fflush(stdout);
    contrastive::Classifier undefended =
        contrastive::train_classifier(poisoned, cfg.classifier_arch, ctc);
    g_mnist.undefended_asr =
        eval::attack_success_rate(undefended, triggered, cfg.attack.target_class);

    std::printf("  [mnist] clean-data baseline classifier...\n");
    std::fflush(stdout);
    data::Dataset clean_train = data::load_idx(raw.get("data.idx_images", ""),
                                               raw.get("data.idx_labels", ""));
    // same 500-per-class slice the pipeline used
    data::Dataset clean_slice;
    clean_slice.num_classes = clean_train.num_classes;
    std::vector<int> count(clean_train.num_classes, 0);
    int next = 0;
    for (const auto& s : clean_train.samples) {
        if (count[s.label] >= 500) continue;
        ++count[s.label];
        data::LabeledSample copy = s;
        copy.id = next++;
        clean_slice.samples.push_back(std::move(copy));
    }
    contrastive::Classifier baseline =
        contrastive::train_classifier(clean_slice, cfg.classifier_arch, ctc);
    g_mnist.baseline_acc = eval::accuracy(baseline, test);
}

Outcome criterion_mnist_end_to_end() {
    compute_mnist();
    if (!g_mnist.detail.empty()) return {false, g_mnist.detail};
    char buf[240];
    std::snprintf(buf, sizeof(buf),
                  "undefended ASR %.1f%% (need >=50), defended ASR %.1f%% (need <=15), "
                  "defended ACC %.2f%% vs clean baseline %.2f%% (need within 4 points)",
                  100 * g_mnist.undefended_asr, 100 * g_mnist.defended_asr,
                  100 * g_mnist.defended_acc, 100 * g_mnist.baseline_acc);
    bool pass = g_mnist.undefended_asr >= 0.50 && g_mnist.defended_asr <= 0.15 &&
                g_mnist.defended_acc >= g_mnist.baseline_acc - 0.04;
    return {pass, buf};
}

Outcome criterion_retention() {
    compute_mnist();
    if (!g_mnist.detail.empty()) return {false, g_mnist.detail};
    char buf[240];
    std::snprintf(buf, sizeof(buf),
                  "kNN clean %.2f%% / backdoor %.2f%%; energy clean %.2f%% / backdoor %.2f%% "
                  "(need clean >=75, backdoor <=15)",
                  g_mnist.knn_retention.clean_pct, g_mnist.knn_retention.backdoor_pct,
                  g_mnist.energy_retention.clean_pct, g_mnist.energy_retention.backdoor_pct);
    bool pass = g_mnist.knn_retention.clean_pct >= 75.0 &&
                g_mnist.knn_retention.backdoor_pct <= 15.0 &&
                g_mnist.energy_retention.clean_pct >= 75.0 &&
                g_mnist.energy_retention.backdoor_pct <= 15.0;
    return {pass, buf};
}

// ---------------------------------------------------------------- criterion 8
Outcome criterion_combined_intersection() {
    Rng rng(91);
    for (int inst = 0; inst < 25; ++inst) {
        std::size_t n = 40 + rng.uniform_index(200);
        int num_classes = 2 + static_cast<int>(rng.uniform_index(3));
        Tensor emb = random_embeddings(n, 6, rng);
        std::vector<int> labels = labels_with_pairs(n, num_classes, rng);
        int k = 1 + static_cast<int>(rng.uniform_index(20));
        auto kd = cleanse::knn_filter(emb, labels, num_classes, k);
        auto ed = cleanse::energy_filter(emb, labels, num_classes, 0.5);
        auto cd = cleanse::combined_filter(kd, ed);
        std::set<int> ka, ea, ca, expect;
        for (std::size_t i = 0; i < n; ++i) {
            if (kd[i].accepted) ka.insert(kd[i].id);
            if (ed[i].accepted) ea.insert(ed[i].id);
            if (cd[i].accepted) ca.insert(cd[i].id);
        }
        std::set_intersection(ka.begin(), ka.end(), ea.begin(), ea.end(),
                              std::inserter(expect, expect.begin()));
        if (ca != expect) {
            char buf[120];
            std::snprintf(buf, sizeof(buf), "instance %d: acceptance set != intersection",
                          inst);
            return {false, buf};
        }
    }
    return {true, "25 instances: combined acceptance set equals the exact intersection"};
}

// ---------------------------------------------------------------- criterion 9
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

Outcome criterion_adaptive() {
    // (a) identity encoder: analytic optimum is the masked target centroid
    data::Dataset small = data::synth_dataset(3, 25, {1, 6, 6}, 0.05, 5);
    nn::EncoderParams ident = identity_encoder(1, 6, 6);
    attacks::AdaptiveResult ires = attacks::optimize_adaptive_patch(
        ident, small, 1, 3, 3, attacks::Placement::fixed_top_left, 600, 0.5, 2);
    Tensor iemb = contrastive::embed_dataset(ident, small);
    std::vector<int> ilabels(small.size());
    for (const auto& s : small.samples) ilabels[s.id] = s.label;
    auto centroid = attacks::class_centroid(iemb, ilabels, 1);
    double worst = 0.0;
    for (std::uint32_t y = 0; y < 3; ++y)
        for (std::uint32_t x = 0; x < 3; ++x)
            worst = std::max(worst, std::abs(static_cast<double>(ires.patch.at(0, y, x)) -
                                             centroid[y * 6 + x]));
    if (worst > 1e-3) {
        char buf[120];
        std::snprintf(buf, sizeof(buf), "identity-encoder optimum off by %.3g (limit 1e-3)",
                      worst);
        return {false, buf};
    }

    // (b) trained surrogate: the objective must decrease, and the defended
    // pipeline on adaptively poisoned data must beat the undefended one
    data::Dataset train = data::synth_dataset(4, 100, {1, 8, 8}, 0.08, 11);
    data::Dataset test = data::synth_dataset(4, 40, {1, 8, 8}, 0.08, 12);

    std::vector<const data::LabeledSample*> by_id(train.size());
    for (const auto& s : train.samples) by_id[s.id] = &s;
    std::vector<Tensor> images;
    for (const auto* s : by_id) images.push_back(s->image);
    nn::EncoderArch arch;
    arch.hidden = {64};
    arch.output_dim = 16;
    contrastive::TrainConfig enc_cfg;
    enc_cfg.batch_size = 32;
    enc_cfg.epochs = 20;
    enc_cfg.lr = 0.08;
    enc_cfg.seed = 21;
    enc_cfg.augment.noise_std = 0.05;
    nn::EncoderParams surrogate = contrastive::train_encoder(images, arch, enc_cfg, nullptr);

    attacks::AdaptiveResult ares = attacks::optimize_adaptive_patch(
        surrogate, train, 0, 3, 3, attacks::Placement::fixed_top_left, 30, 0.5, 3);
    if (!(ares.final_objective <= ares.initial_objective))
        return {false, "adaptive objective did not decrease from initialization"};

    attacks::AttackSpec spec;
    spec.kind = attacks::PatternKind::patch;
    spec.target_class = 0;
    spec.poison_count = 60;
    spec.seed = 13;
    spec.pattern.patch = ares.patch;
    spec.pattern.patch_h = spec.pattern.patch_w = 3;
    spec.pattern.placement = attacks::Placement::fixed_top_left;
    attacks::PoisonOutcome poisoned = attacks::poison_dataset(train, spec);
    data::Dataset triggered = attacks::trigger_testset(test, spec);

    eval::AblationConfig acfg;
    acfg.encoder_arch = arch;
    acfg.encoder_cfg = enc_cfg;
    acfg.encoder_cfg.seed = 31;  // the defender trains its own encoder
    acfg.classifier_arch = arch;
    acfg.classifier_cfg = enc_cfg;
    acfg.classifier_cfg.epochs = 20;
    acfg.classifier_cfg.head_epochs = 200;
    acfg.classifier_cfg.seed = 32;
    acfg.filter.method = cleanse::FilterMethod::knn;
    acfg.filter.lambda = 80;

    auto undefended = eval::ablation_run(poisoned.poisoned, test, triggered, 0,
                                         eval::AblationVariant::none, acfg);
    auto defended = eval::ablation_run(poisoned.poisoned, test, triggered, 0,
                                       eval::AblationVariant::full, acfg);
    char buf[240];
    std::snprintf(buf, sizeof(buf),
                  "identity optimum within %.2g; objective %.4f -> %.4f; ASR undefended "
                  "%.1f%% vs defended %.1f%%",
                  worst, ares.initial_objective, ares.final_objective,
                  100 * undefended.metrics.asr, 100 * defended.metrics.asr);
    bool pass = defended.metrics.asr < undefended.metrics.asr;
    return {pass, buf};
}

// --------------------------------------------------------------- criterion 10
Outcome criterion_determinism() {
    const char* config = R"(
[data]
source = synth
synth_classes = 4
synth_per_class = 40
synth_height = 6
synth_width = 6
synth_noise_std = 0.05

[attack]
kind = blend
target_class = 1
poison_count = 12
alpha = 0.4
patch_h = 2
patch_w = 2

[encoder]
hidden = 24
output_dim = 8
epochs = 10
batch_size = 16
lr = 0.1
noise_std = 0.05

[filter]
method = energy
lambda = 80

[classifier]
hidden = 24
output_dim = 8
epochs = 10
batch_size = 16
lr = 0.1
head_epochs = 150

[run]
seed = 11
out = runs/acceptance_det
)";
    pipeline::Config raw = pipeline::Config::parse_string(config);
    pipeline::PipelineConfig cfg = pipeline::pipeline_config_from(raw);
    std::string dir = pipeline::run_dir(cfg);

    auto slurp = [](const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    };

    std::filesystem::remove_all(dir);
    eval::Metrics m1 = pipeline::run_pipeline(cfg);
    std::string manifest1 = slurp(dir + "/cleanse_manifest.csv");
    std::string cleansed1 = slurp(dir + "/train_cleansed/manifest.csv");
    std::string poisoned1 = slurp(dir + "/train_poisoned/manifest.csv");

    std::filesystem::remove_all(dir);
    eval::Metrics m2 = pipeline::run_pipeline(cfg);
    bool same = manifest1 == slurp(dir + "/cleanse_manifest.csv") &&
                cleansed1 == slurp(dir + "/train_cleansed/manifest.csv") &&
                poisoned1 == slurp(dir + "/train_poisoned/manifest.csv") && m1.acc == m2.acc &&
                m1.asr == m2.asr && m1.asr_valid == m2.asr_valid;
    return {same, same ? "two runs: manifests byte-identical, metrics equal"
                       : "reruns diverged"};
}

struct Criterion {
    int number;
    const char* name;
    Outcome (*fn)();
};

const Criterion kCriteria[] = {
    {1, "gradient correctness (NT-Xent and SupCon through the encoder)", criterion_gradients},
    {2, "closed-form loss on identical embeddings", criterion_closed_form},
    {3, "filter oracle equivalence (kNN exact, energy within 1e-9)",
     criterion_filter_oracles},
    {4, "percentile and relabel contract", criterion_percentile_relabel},
    {5, "margin affinity property", criterion_margin_property},
    {6, "mini-MNIST end-to-end defense", criterion_mnist_end_to_end},
    {7, "mini-MNIST retention direction", criterion_retention},
    {8, "combined filter acceptance intersection", criterion_combined_intersection},
    {9, "adaptive attack optimum and defense", criterion_adaptive},
    {10, "pipeline determinism", criterion_determinism},
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : kCriteria) {
        if (!selected.empty() && !selected.count(c.number)) continue;
        auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.fn();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] criterion %2d: %s :: %s (%.1fs)\n", out.pass ? "PASS" : "FAIL",
                    c.number, c.name, out.detail.c_str(), secs);
        std::fflush(stdout);
        if (!out.pass) ++failures;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
