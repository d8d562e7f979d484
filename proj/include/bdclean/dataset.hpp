#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bdclean/tensor.hpp"

namespace bdclean::data {

struct ImageShape {
    std::uint32_t channels = 1;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::size_t numel() const {
        return static_cast<std::size_t>(channels) * height * width;
    }
    bool operator==(const ImageShape&) const = default;
};

struct LabeledSample {
    int id = 0;
    Tensor image;            // dims {C,H,W}, pixels in [0,1]
    int label = 0;           // current (possibly attacker-flipped) label
    int original_label = 0;  // ground-truth class before any poisoning
    bool is_poisoned = false;  // provenance flag, evaluation-only
};

struct Dataset {
    std::vector<LabeledSample> samples;
    int num_classes = 0;

    std::size_t size() const { return samples.size(); }
    ImageShape image_shape() const;
    std::vector<int> labels() const;
    // throws if ids are not exactly {0..N-1} or a label is out of range
    void validate() const;
};

// IDX (MNIST) ingestion. Pixels are scaled from {0..255} to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
// Inverse of load_idx up to the [0,1] <-> {0..255} scaling.
void export_idx(const Dataset& ds, const std::string& images_path,
                const std::string& labels_path);

// Synthetic fixture: one random base image per class plus Gaussian pixel
// noise, clipped to [0,1]. Bit-identical for a fixed seed.
Dataset synth_dataset(int num_classes, int per_class, ImageShape shape,
                      double noise_std, std::uint64_t seed);

// One manifest row. The last three fields are present only once a filter
// has produced decisions for the dataset.
struct ManifestRecord {
    int id = 0;
    int original_label = 0;
    int current_label = 0;
    bool is_poisoned = false;
    std::optional<bool> accepted;
    std::optional<int> predicted_class;
    std::optional<double> confidence;
};

std::vector<ManifestRecord> make_manifest(const Dataset& ds);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& rows);
std::vector<ManifestRecord> read_manifest(const std::string& path);

// Dataset directory: images.bdtn ({N,C,H,W}) next to manifest.csv.
void save_dataset_dir(const std::string& dir, const Dataset& ds);
Dataset load_dataset_dir(const std::string& dir);

}  // namespace bdclean::data
