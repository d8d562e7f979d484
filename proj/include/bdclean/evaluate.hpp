#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bdclean/attacks.hpp"
#include "bdclean/cleanse.hpp"
#include "bdclean/contrastive.hpp"
#include "bdclean/dataset.hpp"

namespace bdclean::eval {

struct Metrics {
    double acc = 0.0;
    double asr = 0.0;
    bool asr_valid = false;
    std::size_t n_clean_test = 0;
    std::size_t n_triggered_test = 0;
};

double accuracy(const std::vector<int>& predictions, const data::Dataset& clean_test);
double accuracy(const contrastive::Classifier& clf, const data::Dataset& clean_test);
double attack_success_rate(const std::vector<int>& predictions, std::size_t n_samples,
                           int target_class);
double attack_success_rate(const contrastive::Classifier& clf,
                           const data::Dataset& triggered_test, int target_class);

struct RetentionStats {
    double clean_pct = 0.0;
    double backdoor_pct = 0.0;
    bool has_backdoor = false;
};

// Share of clean / poisoned samples surviving the filter, from ground truth.
RetentionStats retention_stats(const std::vector<cleanse::FilterDecision>& decisions,
                               const data::Dataset& ds);

// Ground-truth fields of a cleanse report (retention, relabel correctness).
void finish_report(cleanse::CleanseReport& report, const data::Dataset& ds,
                   const std::vector<cleanse::FilterDecision>& decisions);

enum class AblationVariant { none, filter_only, relabel_only, full };

AblationVariant parse_variant(const std::string& name);
std::string variant_name(AblationVariant v);

// Alternative embedding source hook (in place of the trained encoder).
using EmbeddingSource = std::function<Tensor(const data::Dataset&)>;

struct AblationConfig {
    nn::EncoderArch encoder_arch;
    contrastive::TrainConfig encoder_cfg;
    nn::EncoderArch classifier_arch;
    contrastive::TrainConfig classifier_cfg;
    cleanse::FilterConfig filter;
    std::optional<EmbeddingSource> embedding_source;  // overrides SimCLR when set
};

struct AblationRow {
    AblationVariant variant;
    Metrics metrics;
    RetentionStats retention;
    std::size_t relabeled = 0;
    std::size_t cleansed_size = 0;
};

// Runs the pipeline with the named stages disabled on an already poisoned
// training set.
AblationRow ablation_run(const data::Dataset& poisoned_train, const data::Dataset& clean_test,
                         const data::Dataset& triggered_test, int target_class,
                         AblationVariant variant, const AblationConfig& cfg);

// results CSV: run_id, attack, variant, ASR, ACC, clean_pct, backdoor_pct,
// relabeled, lambda, k, tau
void append_results_csv(const std::string& path, const std::string& run_id,
                        const std::string& attack, const std::string& variant,
                        const Metrics& metrics, const RetentionStats& retention,
                        std::size_t relabeled, double lambda, int k, double tau);

}  // namespace bdclean::eval
