#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bdclean/attacks.hpp"
#include "bdclean/cleanse.hpp"
#include "bdclean/contrastive.hpp"
#include "bdclean/dataset.hpp"
#include "bdclean/evaluate.hpp"

namespace bdclean::pipeline {

// Flat key=value config with [section] headers, '#' comments.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    bool has(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    double get_num(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    void set(const std::string& key, const std::string& value);

    // canonical form (sorted keys) used for the artifact hash
    std::string canonical() const;
    std::uint64_t hash() const;

private:
    std::map<std::string, std::string> kv_;
};

struct DataSource {
    std::string kind = "synth";  // synth | idx | dir
    std::string idx_images, idx_labels, test_idx_images, test_idx_labels;
    std::string train_dir, test_dir;
    int synth_classes = 4, synth_per_class = 50;
    std::uint32_t synth_c = 1, synth_h = 8, synth_w = 8;
    double synth_noise = 0.05;
    int train_per_class = 0;  // 0 = all; otherwise first n of each class
};

struct PipelineConfig {
    DataSource source;
    bool attack_enabled = true;
    attacks::AttackSpec attack;
    double additive_delta = 3.0 / 255.0;
    std::string pattern_file;  // optional pre-built patch (adaptive attacks)
    nn::EncoderArch encoder_arch;
    contrastive::TrainConfig encoder_cfg;
    cleanse::FilterConfig filter;
    nn::EncoderArch classifier_arch;
    contrastive::TrainConfig classifier_cfg;
    std::string out_dir = "runs";
    std::uint64_t seed = 1;

    Config raw;
};

PipelineConfig load_pipeline_config(const std::string& path,
                                    std::optional<std::uint64_t> seed_override,
                                    std::optional<std::string> out_override);
PipelineConfig pipeline_config_from(const Config& cfg);

// Artifacts live under <out>/run_<hash16>; the hash covers the canonical
// config plus the effective seed, so differing configs never share a dir.
std::string run_dir(const PipelineConfig& cfg);

extern const std::vector<std::string> kStageNames;  // in execution order

struct StageResult {
    std::string stage;
    bool ran = false;
};

// Runs one named stage from persisted inputs in the run dir.
void run_stage(const PipelineConfig& cfg, const std::string& stage);

// Full Algorithm-1 style run: poison -> encoder -> embed -> cleanse ->
// classifier -> evaluate. Returns the final metrics.
eval::Metrics run_pipeline(const PipelineConfig& cfg);

eval::Metrics read_metrics(const std::string& run_dir_path);

}  // namespace bdclean::pipeline
