#pragma once

#include <cstdint>
#include <vector>

#include "bdclean/dataset.hpp"
#include "bdclean/nn.hpp"
#include "bdclean/tensor.hpp"

namespace bdclean::attacks {

enum class PatternKind { additive, patch, blend };
enum class Placement { fixed_top_left, random_per_sample };

struct PatternParams {
    // additive
    Tensor perturbation;  // image-shaped v
    // patch / blend
    Tensor patch;         // {C, patch_h, patch_w}, values in [0,1]
    std::uint32_t patch_h = 3, patch_w = 3;
    double alpha = 0.4;   // blend rate, (0,1]
    Placement placement = Placement::random_per_sample;
};

struct AttackSpec {
    PatternKind kind = PatternKind::additive;
    int target_class = 0;
    int poison_count = 0;
    PatternParams pattern;
    std::uint64_t seed = 1;
};

struct PoisonOutcome {
    data::Dataset poisoned;
    std::vector<int> poisoned_ids;
};

// v[c,i,j] = delta where (i+j) has the given parity, else 0.
Tensor make_chessboard(std::uint32_t channels, std::uint32_t height, std::uint32_t width,
                       double delta, int parity = 1);

// clip(x + v, 0, 1)
Tensor embed_additive(const Tensor& x, const Tensor& v);
// (1-m) .* x + m .* u, binary mask
Tensor embed_patch(const Tensor& x, const Tensor& mask, const Tensor& u);
// (1 - alpha m) .* x + alpha m .* u
Tensor embed_blend(const Tensor& x, double alpha, const Tensor& mask, const Tensor& u);

// image-shaped binary mask with a patch_h x patch_w rectangle of ones
Tensor make_rect_mask(std::uint32_t channels, std::uint32_t height, std::uint32_t width,
                      std::uint32_t patch_h, std::uint32_t patch_w, std::uint32_t top,
                      std::uint32_t left);
// image-shaped tensor carrying the small patch at (top, left), zero elsewhere
Tensor place_patch(std::uint32_t height, std::uint32_t width, const Tensor& patch,
                   std::uint32_t top, std::uint32_t left);
// uniform [0,1] noise patch, {channels, patch_h, patch_w}
Tensor random_patch(std::uint32_t channels, std::uint32_t patch_h, std::uint32_t patch_w,
                    Rng& rng);

// Embeds the spec's pattern into M non-target samples (chosen uniformly,
// seeded) and flips their labels to the target class.
PoisonOutcome poison_dataset(const data::Dataset& clean, const AttackSpec& spec);

// Embeds the pattern into every non-target test sample; ground-truth labels
// kept for attack-success accounting, target-class samples dropped.
data::Dataset trigger_testset(const data::Dataset& test, const AttackSpec& spec);

// Mean embedding of class t rows.
std::vector<double> class_centroid(const Tensor& embeddings, const std::vector<int>& labels,
                                   int t);

struct AdaptiveResult {
    Tensor patch;  // {C, patch_h, patch_w}
    double initial_objective = 0.0;
    double final_objective = 0.0;
    std::vector<double> objective_history;
};

// Learns a patch minimizing the mean embedding distance between patched
// non-target samples and the target-class centroid, by projected gradient
// descent with step halving. Mask is fixed at the top-left corner.
AdaptiveResult optimize_adaptive_patch(const nn::EncoderParams& surrogate,
                                       const data::Dataset& ds, int target_class,
                                       std::uint32_t patch_h, std::uint32_t patch_w,
                                       Placement placement, int steps, double step_size,
                                       std::uint64_t seed);

}  // namespace bdclean::attacks
