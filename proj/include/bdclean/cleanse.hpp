#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdclean/dataset.hpp"
#include "bdclean/nn.hpp"
#include "bdclean/tensor.hpp"

namespace bdclean::cleanse {

struct FilterDecision {
    int id = 0;
    int predicted_class = 0;
    bool accepted = false;
    double confidence = 0.0;  // kNN: fraction of k in (0,1]; energy: max score <= 0
};

enum class FilterMethod { knn, energy, combined };

struct FilterConfig {
    FilterMethod method = FilterMethod::knn;
    int k = 0;                 // 0 = auto: floor((N/C)/2)
    double tau_energy = 0.5;
    double lambda = 80.0;      // relabel percentile
};

int auto_k(std::size_t n, int num_classes);

// Plurality vote over the k nearest rows (Euclidean distance, self excluded).
// Ties in distance break by lower id, ties in the vote by lower class.
std::vector<FilterDecision> knn_filter(const Tensor& embeddings,
                                       const std::vector<int>& labels, int num_classes,
                                       int k);

// S_c(z_i) = log mean_{k in class c, k != i} softmax-similarity; one row per
// sample, one column per class. Requires every class to have >= 2 members.
nn::Mat energy_scores(const Tensor& embeddings, const std::vector<int>& labels,
                      int num_classes, double tau);

std::vector<FilterDecision> energy_filter(const Tensor& embeddings,
                                          const std::vector<int>& labels, int num_classes,
                                          double tau);

// Accepted only when both methods accept. Rejected rows keep a prediction
// that disagrees with the label (the agreed one when both reject and agree).
std::vector<FilterDecision> combined_filter(const std::vector<FilterDecision>& knn,
                                            const std::vector<FilterDecision>& energy);

// Nearest-rank percentile: ascending sort, value at 1-based index
// ceil(lambda/100 * n); lambda=100 gives the maximum.
double percentile_threshold(std::vector<double> confidences, double lambda);

struct CleanseReport {
    double clean_retained_pct = 0.0;     // filled from ground truth by eval
    double backdoor_retained_pct = 0.0;  // filled from ground truth by eval
    bool has_backdoor = false;
    std::size_t relabeled_count = 0;
    std::size_t relabel_correct_count = 0;  // filled from ground truth by eval
    std::vector<int> accepted_ids;
    std::vector<int> relabeled_ids;
    double threshold = 0.0;       // single-method relabel threshold T
    double threshold_knn = 0.0;   // combined mode only
    double threshold_energy = 0.0;
    double lambda = 80.0;
};

struct RelabelResult {
    data::Dataset cleansed;
    CleanseReport report;
};

// Accepted samples keep their labels; rejected samples with confidence
// strictly above the threshold re-enter with the predicted label. The
// threshold is the lambda-percentile of accepted confidences only.
RelabelResult relabel_and_assemble(const data::Dataset& ds,
                                   const std::vector<FilterDecision>& decisions,
                                   double lambda);

// Combined mode: relabel only samples rejected by both methods, predicted to
// the same class, passing each method's own percentile threshold (computed
// over the combined accepted set).
RelabelResult relabel_and_assemble_combined(const data::Dataset& ds,
                                            const std::vector<FilterDecision>& knn,
                                            const std::vector<FilterDecision>& energy,
                                            double lambda);

// Manifest rows for the dataset with decision columns filled in.
std::vector<data::ManifestRecord> decisions_manifest(
    const data::Dataset& ds, const std::vector<FilterDecision>& decisions);

void write_report(const std::string& path, const CleanseReport& report);

}  // namespace bdclean::cleanse
