#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdclean/dataset.hpp"
#include "bdclean/nn.hpp"

namespace bdclean::contrastive {

struct TrainConfig {
    int batch_size = 64;       // K source samples per step (2K augmented rows)
    double temperature = 0.5;
    int epochs = 50;
    double lr = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    nn::AugmentConfig augment;
    // linear softmax head on frozen embeddings (classifier training only)
    int head_epochs = 300;
    double head_lr = 0.5;
    double head_momentum = 0.9;
};

struct LossResult {
    double loss = 0.0;
    nn::Mat dZ;
};

// Eq.-style normalized-temperature cross entropy over 2K rows where rows
// (2j, 2j+1) are the two augmentations of source sample j.
LossResult ntxent_loss(const nn::Mat& Z, double tau);

// All same-label rows are positives; anchors without a positive are skipped.
LossResult supcon_loss(const nn::Mat& Z, const std::vector<int>& labels, double tau);

struct TrainHistory {
    std::vector<double> epoch_loss;
};

void save_loss_history(const std::string& path, const TrainHistory& hist);

// Self-supervised training; receives images only, never labels.
nn::EncoderParams train_encoder(const std::vector<Tensor>& images,
                                const nn::EncoderArch& arch, const TrainConfig& cfg,
                                TrainHistory* hist = nullptr);

// Deterministic, augmentation-free embedding of every sample; row i <-> id i.
Tensor embed_dataset(const nn::EncoderParams& params, const data::Dataset& ds);

struct Classifier {
    nn::EncoderParams encoder;
    nn::Mat head_w;               // [C, d]
    std::vector<double> head_b;   // [C]
    int num_classes = 0;

    int predict(const Tensor& image) const;
    std::vector<int> predict_batch(const std::vector<const Tensor*>& images) const;
};

// SupCon encoder training on the labeled set, then a cross-entropy linear
// head fit on frozen embeddings.
Classifier train_classifier(const data::Dataset& ds, const nn::EncoderArch& arch,
                            const TrainConfig& cfg);

void save_classifier(const std::string& dir, const Classifier& clf);
Classifier load_classifier(const std::string& dir);

}  // namespace bdclean::contrastive
