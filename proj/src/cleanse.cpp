#include "bdclean/cleanse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace bdclean::cleanse {

namespace {

void check_embeddings(const Tensor& embeddings, const std::vector<int>& labels,
                      int num_classes) {
    if (embeddings.ndim() != 2)
        throw std::invalid_argument("filter: embeddings must be N x d");
    if (labels.size() != embeddings.dims[0])
        throw std::invalid_argument("filter: labels/rows mismatch");
    for (int l : labels)
        if (l < 0 || l >= num_classes)
            throw std::invalid_argument("filter: label out of range");
}

}  // namespace

int auto_k(std::size_t n, int num_classes) {
    if (num_classes < 1) throw std::invalid_argument("auto_k: num_classes must be >= 1");
    std::size_t k = (n / static_cast<std::size_t>(num_classes)) / 2;
    if (k < 1) k = 1;
    if (k >= n) k = n - 1;
    return static_cast<int>(k);
}

std::vector<FilterDecision> knn_filter(const Tensor& embeddings,
                                       const std::vector<int>& labels, int num_classes,
                                       int k) {
    check_embeddings(embeddings, labels, num_classes);
    std::size_t n = embeddings.dims[0], d = embeddings.dims[1];
    if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
    if (static_cast<std::size_t>(k) >= n)
        throw std::invalid_argument("knn: k must be < N");

    std::vector<FilterDecision> out(n);
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(n - 1);
    std::vector<int> votes(num_classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
        dist.clear();
        const float* zi = embeddings.data.data() + i * d;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const float* zj = embeddings.data.data() + j * d;
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                double diff = static_cast<double>(zi[c]) - static_cast<double>(zj[c]);
                s += diff * diff;
            }
            dist.emplace_back(s, j);
        }
        std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());

        std::fill(votes.begin(), votes.end(), 0);
        for (int q = 0; q < k; ++q) votes[labels[dist[q].second]]++;
        int pred = 0;
        for (int c = 1; c < num_classes; ++c)
            if (votes[c] > votes[pred]) pred = c;  // ties keep the lowest class

        FilterDecision fd;
        fd.id = static_cast<int>(i);
        fd.predicted_class = pred;
        fd.confidence = static_cast<double>(votes[pred]) / static_cast<double>(k);
        fd.accepted = (pred == labels[i]);
        out[i] = fd;
    }
    return out;
}

nn::Mat energy_scores(const Tensor& embeddings, const std::vector<int>& labels,
                      int num_classes, double tau) {
    check_embeddings(embeddings, labels, num_classes);
    if (tau <= 0.0) throw std::invalid_argument("energy: tau must be > 0");
    std::size_t n = embeddings.dims[0], d = embeddings.dims[1];

    std::vector<std::size_t> class_count(num_classes, 0);
    for (int l : labels) class_count[l]++;
    for (int c = 0; c < num_classes; ++c)
        if (class_count[c] < 2)
            throw std::invalid_argument("energy: every class needs >= 2 members (class " +
                                        std::to_string(c) + " has " +
                                        std::to_string(class_count[c]) + ")");

    nn::Mat scores(n, static_cast<std::size_t>(num_classes));
    // tiled over anchor rows to bound the similarity buffer
    constexpr std::size_t kTile = 256;
    std::vector<double> sims(kTile * n);
    for (std::size_t t0 = 0; t0 < n; t0 += kTile) {
        std::size_t t1 = std::min(n, t0 + kTile);
        for (std::size_t i = t0; i < t1; ++i) {
            const float* zi = embeddings.data.data() + i * d;
            double* row = sims.data() + (i - t0) * n;
            for (std::size_t j = 0; j < n; ++j) {
                const float* zj = embeddings.data.data() + j * d;
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c)
                    s += static_cast<double>(zi[c]) * static_cast<double>(zj[c]);
                row[j] = s / tau;
            }
        }
        for (std::size_t i = t0; i < t1; ++i) {
            const double* row = sims.data() + (i - t0) * n;
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) m = std::max(m, row[j]);
            std::vector<double> class_num(num_classes, 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                class_num[labels[j]] += std::exp(row[j] - m);
            }
            double den = 0.0;
            for (int c = 0; c < num_classes; ++c) den += class_num[c];
            for (int c = 0; c < num_classes; ++c) {
                std::size_t cnt = class_count[c] - (labels[i] == c ? 1 : 0);
                scores.at(i, c) = std::log(class_num[c]) - std::log(static_cast<double>(cnt)) -
                                  std::log(den);
            }
        }
    }
    return scores;
}

std::vector<FilterDecision> energy_filter(const Tensor& embeddings,
                                          const std::vector<int>& labels, int num_classes,
                                          double tau) {
    nn::Mat scores = energy_scores(embeddings, labels, num_classes, tau);
    std::vector<FilterDecision> out(scores.rows);
    for (std::size_t i = 0; i < scores.rows; ++i) {
        const double* si = scores.row(i);
        int pred = 0;
        for (int c = 1; c < num_classes; ++c)
            if (si[c] > si[pred]) pred = c;  // ties keep the lowest class
        FilterDecision fd;
        fd.id = static_cast<int>(i);
        fd.predicted_class = pred;
        fd.confidence = si[pred];
        fd.accepted = (pred == labels[i]);
        out[i] = fd;
    }
    return out;
}

std::vector<FilterDecision> combined_filter(const std::vector<FilterDecision>& knn,
                                            const std::vector<FilterDecision>& energy) {
    if (knn.size() != energy.size())
        throw std::runtime_error("combined: decision lists differ in size");
    std::vector<FilterDecision> out(knn.size());
    for (std::size_t i = 0; i < knn.size(); ++i) {
        if (knn[i].id != energy[i].id)
            throw std::runtime_error("combined: decision id mismatch");
        FilterDecision fd;
        fd.id = knn[i].id;
        fd.accepted = knn[i].accepted && energy[i].accepted;
        if (knn[i].predicted_class == energy[i].predicted_class)
            fd.predicted_class = knn[i].predicted_class;
        else if (!knn[i].accepted)
            fd.predicted_class = knn[i].predicted_class;
        else
            fd.predicted_class = energy[i].predicted_class;
        // scalar column carries the kNN confidence; relabeling in combined
        // mode consults both method confidences separately
        fd.confidence = knn[i].confidence;
        out[i] = fd;
    }
    return out;
}

double percentile_threshold(std::vector<double> confidences, double lambda) {
    if (confidences.empty())
        throw std::invalid_argument("percentile: empty confidence list");
    if (lambda < 0.0 || lambda > 100.0)
        throw std::invalid_argument("percentile: lambda must be in [0,100]");
    std::sort(confidences.begin(), confidences.end());
    std::size_t n = confidences.size();
    std::size_t rank = static_cast<std::size_t>(
        std::ceil(lambda / 100.0 * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    return confidences[rank - 1];
}

namespace {

const data::LabeledSample* sample_by_id(const data::Dataset& ds, int id) {
    for (const auto& s : ds.samples)
        if (s.id == id) return &s;
    return nullptr;
}

void check_coverage(const data::Dataset& ds, const std::vector<FilterDecision>& decisions) {
    if (decisions.size() != ds.size())
        throw std::runtime_error("relabel: decisions do not cover the dataset");
    std::vector<char> seen(ds.size(), 0);
    for (const auto& d : decisions) {
        if (d.id < 0 || static_cast<std::size_t>(d.id) >= ds.size() || seen[d.id])
            throw std::runtime_error("relabel: bad decision id coverage");
        seen[d.id] = 1;
    }
}

data::Dataset assemble(const data::Dataset& ds, const std::vector<int>& accepted_ids,
                       const std::vector<std::pair<int, int>>& relabels) {
    data::Dataset out;
    out.num_classes = ds.num_classes;
    int next = 0;
    for (int id : accepted_ids) {
        data::LabeledSample s = *sample_by_id(ds, id);
        s.id = next++;
        out.samples.push_back(std::move(s));
    }
    for (auto [id, new_label] : relabels) {
        data::LabeledSample s = *sample_by_id(ds, id);
        s.id = next++;
        s.label = new_label;
        out.samples.push_back(std::move(s));
    }
    return out;
}

}  // namespace

RelabelResult relabel_and_assemble(const data::Dataset& ds,
                                   const std::vector<FilterDecision>& decisions,
                                   double lambda) {
    check_coverage(ds, decisions);

    RelabelResult res;
    res.report.lambda = lambda;
    std::vector<double> accepted_conf;
    for (const auto& d : decisions) {
        if (d.accepted) {
            res.report.accepted_ids.push_back(d.id);
            accepted_conf.push_back(d.confidence);
        }
    }
    double threshold = std::numeric_limits<double>::infinity();
    if (!accepted_conf.empty()) threshold = percentile_threshold(accepted_conf, lambda);
    res.report.threshold = threshold;

    std::vector<std::pair<int, int>> relabels;
    for (const auto& d : decisions) {
        if (d.accepted) continue;
        if (d.confidence > threshold) {  // strict: confidence == T is kept out
            relabels.emplace_back(d.id, d.predicted_class);
            res.report.relabeled_ids.push_back(d.id);
        }
    }
    res.report.relabeled_count = relabels.size();
    res.cleansed = assemble(ds, res.report.accepted_ids, relabels);
    return res;
}

RelabelResult relabel_and_assemble_combined(const data::Dataset& ds,
                                            const std::vector<FilterDecision>& knn,
                                            const std::vector<FilterDecision>& energy,
                                            double lambda) {
    std::vector<FilterDecision> merged = combined_filter(knn, energy);
    check_coverage(ds, merged);

    RelabelResult res;
    res.report.lambda = lambda;
    std::vector<double> knn_conf, energy_conf;
    for (std::size_t i = 0; i < merged.size(); ++i) {
        if (!merged[i].accepted) continue;
        res.report.accepted_ids.push_back(merged[i].id);
        knn_conf.push_back(knn[i].confidence);
        energy_conf.push_back(energy[i].confidence);
    }
    double t_knn = std::numeric_limits<double>::infinity();
    double t_energy = std::numeric_limits<double>::infinity();
    if (!knn_conf.empty()) {
        t_knn = percentile_threshold(knn_conf, lambda);
        t_energy = percentile_threshold(energy_conf, lambda);
    }
    res.report.threshold_knn = t_knn;
    res.report.threshold_energy = t_energy;
    res.report.threshold = t_knn;

    std::vector<std::pair<int, int>> relabels;
    for (std::size_t i = 0; i < merged.size(); ++i) {
        if (merged[i].accepted) continue;
        bool both_reject = !knn[i].accepted && !energy[i].accepted;
        bool agree = knn[i].predicted_class == energy[i].predicted_class;
        if (both_reject && agree && knn[i].confidence > t_knn &&
            energy[i].confidence > t_energy) {
            relabels.emplace_back(merged[i].id, knn[i].predicted_class);
            res.report.relabeled_ids.push_back(merged[i].id);
        }
    }
    res.report.relabeled_count = relabels.size();
    res.cleansed = assemble(ds, res.report.accepted_ids, relabels);
    return res;
}

std::vector<data::ManifestRecord> decisions_manifest(
    const data::Dataset& ds, const std::vector<FilterDecision>& decisions) {
    auto rows = data::make_manifest(ds);
    for (const auto& d : decisions) {
        for (auto& r : rows) {
            if (r.id != d.id) continue;
            r.accepted = d.accepted;
            r.predicted_class = d.predicted_class;
            r.confidence = d.confidence;
            break;
        }
    }
    return rows;
}

void write_report(const std::string& path, const CleanseReport& report) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("report: cannot write " + path);
    char buf[128];
    auto kv = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%s=%.9g\n", key, v);
        os << buf;
    };
    kv("lambda", report.lambda);
    kv("threshold", report.threshold);
    if (report.threshold_knn != 0.0 || report.threshold_energy != 0.0) {
        kv("threshold_knn", report.threshold_knn);
        kv("threshold_energy", report.threshold_energy);
    }
    os << "accepted_count=" << report.accepted_ids.size() << "\n";
    os << "relabeled_count=" << report.relabeled_count << "\n";
    os << "relabel_correct_count=" << report.relabel_correct_count << "\n";
    kv("clean_retained_pct", report.clean_retained_pct);
    if (report.has_backdoor) kv("backdoor_retained_pct", report.backdoor_retained_pct);
    if (!os) throw std::runtime_error("report: write failed: " + path);
}

}  // namespace bdclean::cleanse
