#include "bdclean/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bdclean/contrastive.hpp"

namespace bdclean::attacks {

Tensor make_chessboard(std::uint32_t channels, std::uint32_t height, std::uint32_t width,
                       double delta, int parity) {
    if (delta < 0.0) throw std::invalid_argument("chessboard: delta must be >= 0");
    Tensor v({channels, height, width});
    for (std::uint32_t c = 0; c < channels; ++c)
        for (std::uint32_t i = 0; i < height; ++i)
            for (std::uint32_t j = 0; j < width; ++j)
                if (static_cast<int>((i + j) % 2) == (parity & 1))
                    v.at(c, i, j) = static_cast<float>(delta);
    return v;
}

Tensor embed_additive(const Tensor& x, const Tensor& v) {
    if (!x.same_shape(v)) throw std::invalid_argument("embed_additive: shape mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        float y = x.data[i] + v.data[i];
        out.data[i] = std::min(1.0f, std::max(0.0f, y));
    }
    return out;
}

Tensor embed_patch(const Tensor& x, const Tensor& mask, const Tensor& u) {
    if (!x.same_shape(mask) || !x.same_shape(u))
        throw std::invalid_argument("embed_patch: shape mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        float m = mask.data[i];
        if (m != 0.0f && m != 1.0f)
            throw std::invalid_argument("embed_patch: mask must be binary");
        if (m != 0.0f) out.data[i] = u.data[i];
    }
    return out;
}

Tensor embed_blend(const Tensor& x, double alpha, const Tensor& mask, const Tensor& u) {
    if (alpha <= 0.0 || alpha > 1.0)
        throw std::invalid_argument("embed_blend: alpha must be in (0,1]");
    if (!x.same_shape(mask) || !x.same_shape(u))
        throw std::invalid_argument("embed_blend: shape mismatch");
    Tensor out = x;
    float a = static_cast<float>(alpha);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        float m = mask.data[i];
        if (m != 0.0f && m != 1.0f)
            throw std::invalid_argument("embed_blend: mask must be binary");
        if (m != 0.0f) out.data[i] = (1.0f - a) * x.data[i] + a * u.data[i];
    }
    return out;
}

Tensor make_rect_mask(std::uint32_t channels, std::uint32_t height, std::uint32_t width,
                      std::uint32_t patch_h, std::uint32_t patch_w, std::uint32_t top,
                      std::uint32_t left) {
    if (top + patch_h > height || left + patch_w > width)
        throw std::invalid_argument("mask: rectangle out of bounds");
    Tensor m({channels, height, width});
    for (std::uint32_t c = 0; c < channels; ++c)
        for (std::uint32_t i = 0; i < patch_h; ++i)
            for (std::uint32_t j = 0; j < patch_w; ++j) m.at(c, top + i, left + j) = 1.0f;
    return m;
}

Tensor place_patch(std::uint32_t height, std::uint32_t width, const Tensor& patch,
                   std::uint32_t top, std::uint32_t left) {
    std::uint32_t channels = patch.dims[0], ph = patch.dims[1], pw = patch.dims[2];
    if (top + ph > height || left + pw > width)
        throw std::invalid_argument("place_patch: rectangle out of bounds");
    Tensor u({channels, height, width});
    for (std::uint32_t c = 0; c < channels; ++c)
        for (std::uint32_t i = 0; i < ph; ++i)
            for (std::uint32_t j = 0; j < pw; ++j)
                u.at(c, top + i, left + j) = patch.at(c, i, j);
    return u;
}

Tensor random_patch(std::uint32_t channels, std::uint32_t patch_h, std::uint32_t patch_w,
                    Rng& rng) {
    Tensor p({channels, patch_h, patch_w});
    for (auto& v : p.data) v = static_cast<float>(rng.uniform());
    return p;
}

namespace {

// one embedded image; rng drives random per-sample placement
Tensor apply_pattern(const Tensor& x, const AttackSpec& spec, Rng& rng) {
    if (spec.kind == PatternKind::additive)
        return embed_additive(x, spec.pattern.perturbation);

    std::uint32_t H = x.dims[1], W = x.dims[2];
    std::uint32_t ph = spec.pattern.patch_h, pw = spec.pattern.patch_w;
    if (ph > H || pw > W) throw std::invalid_argument("pattern: patch exceeds image");
    std::uint32_t top = 0, left = 0;
    if (spec.pattern.placement == Placement::random_per_sample) {
        top = static_cast<std::uint32_t>(rng.uniform_index(H - ph + 1));
        left = static_cast<std::uint32_t>(rng.uniform_index(W - pw + 1));
    }
    Tensor mask = make_rect_mask(x.dims[0], H, W, ph, pw, top, left);
    Tensor u = place_patch(H, W, spec.pattern.patch, top, left);
    if (spec.kind == PatternKind::patch) return embed_patch(x, mask, u);
    return embed_blend(x, spec.pattern.alpha, mask, u);
}

}  // namespace

PoisonOutcome poison_dataset(const data::Dataset& clean, const AttackSpec& spec) {
    if (spec.target_class < 0 || spec.target_class >= clean.num_classes)
        throw std::invalid_argument("poison: target class out of range");
    if (spec.poison_count < 0) throw std::invalid_argument("poison: negative poison count");

    std::vector<int> candidates;
    for (const auto& s : clean.samples)
        if (s.label != spec.target_class) candidates.push_back(s.id);
    if (static_cast<std::size_t>(spec.poison_count) > candidates.size())
        throw std::invalid_argument("poison: not enough non-target samples");

    Rng rng(spec.seed);
    Rng pick_rng = rng.fork(1);
    Rng place_rng = rng.fork(2);
    std::sort(candidates.begin(), candidates.end());
    pick_rng.shuffle(candidates);
    std::vector<int> chosen(candidates.begin(), candidates.begin() + spec.poison_count);
    std::sort(chosen.begin(), chosen.end());

    PoisonOutcome out;
    out.poisoned = clean;
    out.poisoned_ids = chosen;
    for (int id : chosen) {
        for (auto& s : out.poisoned.samples) {
            if (s.id != id) continue;
            s.image = apply_pattern(s.image, spec, place_rng);
            s.original_label = s.label;
            s.label = spec.target_class;
            s.is_poisoned = true;
            break;
        }
    }
    return out;
}

data::Dataset trigger_testset(const data::Dataset& test, const AttackSpec& spec) {
    Rng rng(spec.seed);
    Rng place_rng = rng.fork(3);
    data::Dataset out;
    out.num_classes = test.num_classes;
    int id = 0;
    for (const auto& s : test.samples) {
        if (s.original_label == spec.target_class) continue;
        data::LabeledSample t;
        t.id = id++;
        t.image = apply_pattern(s.image, spec, place_rng);
        t.label = s.label;
        t.original_label = s.original_label;
        t.is_poisoned = true;
        out.samples.push_back(std::move(t));
    }
    return out;
}

std::vector<double> class_centroid(const Tensor& embeddings, const std::vector<int>& labels,
                                   int t) {
    if (embeddings.ndim() != 2)
        throw std::invalid_argument("centroid: embeddings must be 2-d");
    std::size_t n = embeddings.dims[0], d = embeddings.dims[1];
    if (labels.size() != n) throw std::invalid_argument("centroid: labels/rows mismatch");
    std::vector<double> mean(d, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != t) continue;
        ++count;
        for (std::size_t j = 0; j < d; ++j)
            mean[j] += static_cast<double>(embeddings.data[i * d + j]);
    }
    if (count == 0) throw std::invalid_argument("centroid: class has no members");
    for (auto& v : mean) v /= static_cast<double>(count);
    return mean;
}

namespace {

// objective and patch gradient over all non-target samples, batched
double adaptive_objective(const nn::EncoderParams& params,
                          const std::vector<const Tensor*>& images, const Tensor& patch,
                          std::uint32_t ph, std::uint32_t pw,
                          const std::vector<double>& centroid, std::vector<double>* grad) {
    std::size_t total = images.size();
    std::uint32_t C = images.front()->dims[0];
    std::uint32_t H = images.front()->dims[1], W = images.front()->dims[2];
    Tensor mask = make_rect_mask(C, H, W, ph, pw, 0, 0);
    Tensor placed = place_patch(H, W, patch, 0, 0);

    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    double obj = 0.0;
    constexpr std::size_t kChunk = 256;
    std::vector<Tensor> patched;
    for (std::size_t start = 0; start < total; start += kChunk) {
        std::size_t stop = std::min(total, start + kChunk);
        patched.clear();
        patched.reserve(stop - start);
        for (std::size_t i = start; i < stop; ++i)
            patched.push_back(embed_patch(*images[i], mask, placed));
        std::vector<const Tensor*> ptrs;
        for (const auto& img : patched) ptrs.push_back(&img);
        nn::ForwardCache cache;
        nn::Mat Z = nn::forward_embed(params, ptrs, &cache);
        nn::Mat dZ(Z.rows, Z.cols);
        for (std::size_t i = 0; i < Z.rows; ++i) {
            double n2 = 0.0;
            for (std::size_t j = 0; j < Z.cols; ++j) {
                double v = Z.at(i, j) - centroid[j];
                n2 += v * v;
            }
            double nv = std::sqrt(n2);
            obj += nv;
            if (grad && nv > 0.0)
                for (std::size_t j = 0; j < Z.cols; ++j)
                    dZ.at(i, j) = (Z.at(i, j) - centroid[j]) / (nv * static_cast<double>(total));
        }
        if (grad) {
            nn::Mat dX;
            nn::backward(params, cache, dZ, &dX);
            // patched pixels come straight from the patch, so the input
            // gradient restricted to the mask is the patch gradient
            for (std::size_t i = 0; i < dX.rows; ++i) {
                const double* dx = dX.row(i);
                for (std::uint32_t c = 0; c < C; ++c)
                    for (std::uint32_t y = 0; y < ph; ++y)
                        for (std::uint32_t x = 0; x < pw; ++x)
                            (*grad)[(static_cast<std::size_t>(c) * ph + y) * pw + x] +=
                                dx[(static_cast<std::size_t>(c) * H + y) * W + x];
            }
        }
    }
    return obj / static_cast<double>(total);
}

}  // namespace

AdaptiveResult optimize_adaptive_patch(const nn::EncoderParams& surrogate,
                                       const data::Dataset& ds, int target_class,
                                       std::uint32_t patch_h, std::uint32_t patch_w,
                                       Placement placement, int steps, double step_size,
                                       std::uint64_t seed) {
    if (placement != Placement::fixed_top_left)
        throw std::invalid_argument(
            "adaptive: random per-sample placement is not differentiable; use fixed placement");
    if (steps < 0) throw std::invalid_argument("adaptive: negative step count");
    if (step_size <= 0.0) throw std::invalid_argument("adaptive: step size must be > 0");
    (void)seed;  // initialization is deterministic (uniform 0.5 on the mask)

    // target centroid under the surrogate
    Tensor emb = contrastive::embed_dataset(surrogate, ds);
    std::vector<int> labels(ds.size());
    for (const auto& s : ds.samples) labels[s.id] = s.label;
    std::vector<double> centroid = class_centroid(emb, labels, target_class);

    std::vector<const Tensor*> non_target;
    for (const auto& s : ds.samples)
        if (s.label != target_class) non_target.push_back(&s.image);
    if (non_target.empty()) throw std::invalid_argument("adaptive: no non-target samples");

    std::uint32_t C = ds.image_shape().channels;
    AdaptiveResult res;
    res.patch = Tensor({C, patch_h, patch_w});
    std::fill(res.patch.data.begin(), res.patch.data.end(), 0.5f);

    std::size_t pn = res.patch.numel();
    std::vector<double> grad(pn, 0.0);
    double obj = adaptive_objective(surrogate, non_target, res.patch, patch_h, patch_w,
                                    centroid, &grad);
    res.initial_objective = obj;
    res.objective_history.push_back(obj);

    for (int it = 0; it < steps; ++it) {
        double step = step_size;
        Tensor candidate = res.patch;
        bool improved = false;
        for (int half = 0; half < 24; ++half) {
            for (std::size_t i = 0; i < pn; ++i) {
                double v = static_cast<double>(res.patch.data[i]) - step * grad[i];
                candidate.data[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
            double cand_obj = adaptive_objective(surrogate, non_target, candidate, patch_h,
                                                 patch_w, centroid, nullptr);
            if (cand_obj <= obj) {
                improved = true;
                obj = cand_obj;
                res.patch = candidate;
                break;
            }
            step *= 0.5;
        }
        if (!improved) break;
        res.objective_history.push_back(obj);
        obj = adaptive_objective(surrogate, non_target, res.patch, patch_h, patch_w, centroid,
                                 &grad);
    }
    res.final_objective = obj;
    return res;
}

}  // namespace bdclean::attacks
