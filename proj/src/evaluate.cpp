#include "bdclean/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace bdclean::eval {

namespace {

std::vector<int> predictions(const contrastive::Classifier& clf, const data::Dataset& ds) {
    std::vector<int> preds;
    preds.reserve(ds.size());
    constexpr std::size_t kChunk = 512;
    for (std::size_t start = 0; start < ds.size(); start += kChunk) {
        std::size_t stop = std::min(ds.size(), start + kChunk);
        std::vector<const Tensor*> ptrs;
        for (std::size_t i = start; i < stop; ++i) ptrs.push_back(&ds.samples[i].image);
        auto chunk = clf.predict_batch(ptrs);
        preds.insert(preds.end(), chunk.begin(), chunk.end());
    }
    return preds;
}

}  // namespace

double accuracy(const std::vector<int>& preds, const data::Dataset& clean_test) {
    if (clean_test.samples.empty()) throw std::invalid_argument("accuracy: empty test set");
    if (preds.size() != clean_test.size())
        throw std::invalid_argument("accuracy: prediction count mismatch");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == clean_test.samples[i].original_label) ++hit;
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double accuracy(const contrastive::Classifier& clf, const data::Dataset& clean_test) {
    if (clean_test.samples.empty()) throw std::invalid_argument("accuracy: empty test set");
    return accuracy(predictions(clf, clean_test), clean_test);
}

double attack_success_rate(const std::vector<int>& preds, std::size_t n_samples,
                           int target_class) {
    if (n_samples == 0 || preds.size() != n_samples)
        throw std::invalid_argument("asr: empty or mismatched triggered test set");
    std::size_t hit = 0;
    for (int p : preds)
        if (p == target_class) ++hit;
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double attack_success_rate(const contrastive::Classifier& clf,
                           const data::Dataset& triggered_test, int target_class) {
    if (triggered_test.samples.empty())
        throw std::invalid_argument("asr: empty triggered test set");
    return attack_success_rate(predictions(clf, triggered_test), triggered_test.size(),
                               target_class);
}

RetentionStats retention_stats(const std::vector<cleanse::FilterDecision>& decisions,
                               const data::Dataset& ds) {
    if (decisions.size() != ds.size())
        throw std::invalid_argument("retention: decisions do not cover the dataset");
    std::size_t clean_total = 0, clean_kept = 0, bad_total = 0, bad_kept = 0;
    for (const auto& d : decisions) {
        const auto& s = ds.samples[d.id];
        if (s.id != d.id) throw std::invalid_argument("retention: dataset not in id order");
        if (s.is_poisoned) {
            ++bad_total;
            if (d.accepted) ++bad_kept;
        } else {
            ++clean_total;
            if (d.accepted) ++clean_kept;
        }
    }
    RetentionStats st;
    st.clean_pct = clean_total
                       ? 100.0 * static_cast<double>(clean_kept) / static_cast<double>(clean_total)
                       : 100.0;
    st.has_backdoor = bad_total > 0;
    st.backdoor_pct =
        bad_total ? 100.0 * static_cast<double>(bad_kept) / static_cast<double>(bad_total) : 0.0;
    return st;
}

void finish_report(cleanse::CleanseReport& report, const data::Dataset& ds,
                   const std::vector<cleanse::FilterDecision>& decisions) {
    RetentionStats st = retention_stats(decisions, ds);
    report.clean_retained_pct = st.clean_pct;
    report.backdoor_retained_pct = st.backdoor_pct;
    report.has_backdoor = st.has_backdoor;

    std::vector<int> predicted(ds.size(), -1);
    for (const auto& d : decisions) predicted[d.id] = d.predicted_class;
    std::size_t correct = 0;
    for (int id : report.relabeled_ids)
        if (predicted[id] == ds.samples[id].original_label) ++correct;
    report.relabel_correct_count = correct;
}

AblationVariant parse_variant(const std::string& name) {
    if (name == "none") return AblationVariant::none;
    if (name == "filter_only" || name == "filter-only") return AblationVariant::filter_only;
    if (name == "relabel_only" || name == "relabel-only") return AblationVariant::relabel_only;
    if (name == "full") return AblationVariant::full;
    throw std::invalid_argument("ablation: unknown variant '" + name + "'");
}

std::string variant_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::none: return "none";
        case AblationVariant::filter_only: return "filter_only";
        case AblationVariant::relabel_only: return "relabel_only";
        case AblationVariant::full: return "full";
    }
    return "?";
}

namespace {

std::vector<cleanse::FilterDecision> run_filter(const Tensor& emb,
                                                const std::vector<int>& labels,
                                                int num_classes,
                                                const cleanse::FilterConfig& cfg) {
    switch (cfg.method) {
        case cleanse::FilterMethod::knn: {
            int k = cfg.k > 0 ? cfg.k : cleanse::auto_k(labels.size(), num_classes);
            return cleanse::knn_filter(emb, labels, num_classes, k);
        }
        case cleanse::FilterMethod::energy:
            return cleanse::energy_filter(emb, labels, num_classes, cfg.tau_energy);
        case cleanse::FilterMethod::combined: {
            int k = cfg.k > 0 ? cfg.k : cleanse::auto_k(labels.size(), num_classes);
            auto kd = cleanse::knn_filter(emb, labels, num_classes, k);
            auto ed = cleanse::energy_filter(emb, labels, num_classes, cfg.tau_energy);
            return cleanse::combined_filter(kd, ed);
        }
    }
    throw std::invalid_argument("ablation: bad filter method");
}

}  // namespace

AblationRow ablation_run(const data::Dataset& poisoned_train, const data::Dataset& clean_test,
                         const data::Dataset& triggered_test, int target_class,
                         AblationVariant variant, const AblationConfig& cfg) {
    AblationRow row;
    row.variant = variant;

    data::Dataset train_set;
    if (variant == AblationVariant::none) {
        train_set = poisoned_train;
        row.retention = {100.0, 100.0, true};
    } else {
        Tensor emb;
        if (cfg.embedding_source) {
            emb = (*cfg.embedding_source)(poisoned_train);
        } else {
            std::vector<Tensor> images;
            images.reserve(poisoned_train.size());
            std::vector<const data::LabeledSample*> by_id(poisoned_train.size());
            for (const auto& s : poisoned_train.samples) by_id[s.id] = &s;
            for (const auto* s : by_id) images.push_back(s->image);
            nn::EncoderParams enc = contrastive::train_encoder(images, cfg.encoder_arch,
                                                               cfg.encoder_cfg, nullptr);
            emb = contrastive::embed_dataset(enc, poisoned_train);
        }
        std::vector<int> labels(poisoned_train.size());
        for (const auto& s : poisoned_train.samples) labels[s.id] = s.label;
        auto decisions = run_filter(emb, labels, poisoned_train.num_classes, cfg.filter);
        row.retention = retention_stats(decisions, poisoned_train);

        if (variant == AblationVariant::filter_only) {
            // keep accepted samples, skip relabeling
            data::Dataset kept;
            kept.num_classes = poisoned_train.num_classes;
            int next = 0;
            for (const auto& d : decisions) {
                if (!d.accepted) continue;
                data::LabeledSample s = poisoned_train.samples[d.id];
                s.id = next++;
                kept.samples.push_back(std::move(s));
            }
            train_set = std::move(kept);
        } else if (variant == AblationVariant::relabel_only) {
            // keep everything; rewrite labels of confident rejects
            std::vector<double> accepted_conf;
            for (const auto& d : decisions)
                if (d.accepted) accepted_conf.push_back(d.confidence);
            double threshold = std::numeric_limits<double>::infinity();
            if (!accepted_conf.empty())
                threshold = cleanse::percentile_threshold(accepted_conf, cfg.filter.lambda);
            train_set = poisoned_train;
            for (const auto& d : decisions) {
                if (d.accepted || d.confidence <= threshold) continue;
                train_set.samples[d.id].label = d.predicted_class;
                ++row.relabeled;
            }
            row.retention = {100.0, 100.0, row.retention.has_backdoor};
        } else {  // full
            auto rr = cfg.filter.method == cleanse::FilterMethod::combined
                          ? cleanse::relabel_and_assemble_combined(
                                poisoned_train,
                                cleanse::knn_filter(emb, labels, poisoned_train.num_classes,
                                                    cfg.filter.k > 0
                                                        ? cfg.filter.k
                                                        : cleanse::auto_k(
                                                              labels.size(),
                                                              poisoned_train.num_classes)),
                                cleanse::energy_filter(emb, labels, poisoned_train.num_classes,
                                                       cfg.filter.tau_energy),
                                cfg.filter.lambda)
                          : cleanse::relabel_and_assemble(poisoned_train, decisions,
                                                          cfg.filter.lambda);
            row.relabeled = rr.report.relabeled_count;
            train_set = std::move(rr.cleansed);
        }
    }

    row.cleansed_size = train_set.size();
    contrastive::Classifier clf =
        contrastive::train_classifier(train_set, cfg.classifier_arch, cfg.classifier_cfg);
    row.metrics.acc = accuracy(clf, clean_test);
    row.metrics.n_clean_test = clean_test.size();
    if (!triggered_test.samples.empty()) {
        row.metrics.asr = attack_success_rate(clf, triggered_test, target_class);
        row.metrics.asr_valid = true;
        row.metrics.n_triggered_test = triggered_test.size();
    }
    return row;
}

void append_results_csv(const std::string& path, const std::string& run_id,
                        const std::string& attack, const std::string& variant,
                        const Metrics& metrics, const RetentionStats& retention,
                        std::size_t relabeled, double lambda, int k, double tau) {
    bool fresh = !std::filesystem::exists(path);
    std::ofstream os(path, std::ios::app);
    if (!os) throw std::runtime_error("results: cannot open " + path);
    if (fresh)
        os << "run_id,attack,variant,asr,acc,clean_pct,backdoor_pct,relabeled,lambda,k,tau\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.9g,%.9g,%.9g,%.9g,%zu,%.9g,%d,%.9g\n",
                  run_id.c_str(), attack.c_str(), variant.c_str(),
                  metrics.asr_valid ? metrics.asr : -1.0, metrics.acc, retention.clean_pct,
                  retention.has_backdoor ? retention.backdoor_pct : -1.0, relabeled, lambda, k,
                  tau);
    os << buf;
}

}  // namespace bdclean::eval
