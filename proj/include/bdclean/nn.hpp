#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bdclean/rng.hpp"
#include "bdclean/tensor.hpp"

namespace bdclean::nn {

// Row-major double matrix. All network math runs in double; tensors on disk
// stay float (see Tensor).
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }
    double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

// C = A * B; C = A * B^T; C = A^T * B. Plain ikj loops, deterministic
// accumulation order.
void matmul(const Mat& A, const Mat& B, Mat& C);
void matmul_nt(const Mat& A, const Mat& B, Mat& C);
void matmul_tn(const Mat& A, const Mat& B, Mat& C);

enum class LayerKind { dense, conv };

struct Layer {
    LayerKind kind = LayerKind::dense;
    Mat W;                   // dense: [out,in]; conv: [out_c, in_c*kh*kw]
    std::vector<double> b;   // dense: [out]; conv: [out_c]
    bool relu = true;
    // conv geometry (valid padding)
    std::uint32_t in_c = 0, in_h = 0, in_w = 0, kh = 0, kw = 0, stride = 1;
    std::uint32_t out_h() const { return (in_h - kh) / stride + 1; }
    std::uint32_t out_w() const { return (in_w - kw) / stride + 1; }
    std::size_t out_dim() const {
        return kind == LayerKind::dense ? W.rows : W.rows * out_h() * out_w();
    }
    std::size_t in_dim() const {
        return kind == LayerKind::dense
                   ? W.cols
                   : static_cast<std::size_t>(in_c) * in_h * in_w;
    }
};

// Encoder E (hidden layers) followed by a linear projector L (last layer,
// relu off), with optional L2 row normalization of the projector output.
struct EncoderParams {
    std::uint32_t in_c = 1, in_h = 0, in_w = 0;
    std::vector<Layer> layers;
    bool normalize = true;

    std::size_t input_dim() const {
        return static_cast<std::size_t>(in_c) * in_h * in_w;
    }
    std::size_t output_dim() const { return layers.back().out_dim(); }
};

struct ConvSpec {
    std::uint32_t out_channels = 8, kernel = 3, stride = 1;
};

struct EncoderArch {
    std::vector<ConvSpec> conv;          // optional conv stack, applied first
    std::vector<std::uint32_t> hidden;   // dense hidden widths
    std::uint32_t output_dim = 32;
    bool normalize = true;
};

EncoderParams make_encoder(std::uint32_t in_c, std::uint32_t in_h, std::uint32_t in_w,
                           const EncoderArch& arch, std::uint64_t seed);

struct ForwardCache {
    std::vector<Mat> inputs;   // input to each layer
    std::vector<Mat> preact;   // layer output before ReLU
    Mat pre_norm;              // projector output before normalization
    Mat output;
    bool valid = false;
};

// X is [B, in_dim] (images flattened row-major). Returns [B, d]; rows are
// unit-norm when params.normalize is set.
Mat forward(const EncoderParams& params, const Mat& X, ForwardCache* cache = nullptr);

// Batch assembly from image tensors (float -> double promotion).
Mat batch_to_mat(const std::vector<const Tensor*>& images);
Mat forward_embed(const EncoderParams& params, const std::vector<const Tensor*>& images,
                  ForwardCache* cache = nullptr);

struct Grads {
    std::vector<Mat> dW;
    std::vector<std::vector<double>> db;
};

Grads make_zero_grads(const EncoderParams& params);

// Exact reverse-mode gradients (including the normalization Jacobian).
// Requires the cache of the forward pass over the same batch; pass dX to
// also get gradients w.r.t. the input batch.
Grads backward(const EncoderParams& params, const ForwardCache& cache, const Mat& dZ,
               Mat* dX = nullptr);

struct SgdState {
    std::vector<Mat> vW;
    std::vector<std::vector<double>> vb;
};

SgdState make_sgd_state(const EncoderParams& params);
void sgd_step(EncoderParams& params, const Grads& grads, double lr, double momentum,
              SgdState& state);

// Loss on the embedding rows: returns (loss, dLoss/dZ).
using EmbeddingLoss = std::function<std::pair<double, Mat>(const Mat& Z)>;

// Central-difference check of every parameter coordinate (or a seeded sample
// of max_coords per layer when nonzero). Returns the worst relative error.
double grad_check(const EncoderParams& params, const std::vector<const Tensor*>& batch,
                  const EmbeddingLoss& loss_fn, double h, std::size_t max_coords = 0,
                  std::uint64_t sample_seed = 0);

struct AugmentConfig {
    double crop_scale_lo = 1.0, crop_scale_hi = 1.0;  // (0,1]
    double flip_prob = 0.0;
    double noise_std = 0.0;

    bool is_identity() const {
        return crop_scale_lo >= 1.0 && crop_scale_hi >= 1.0 && flip_prob <= 0.0 &&
               noise_std <= 0.0;
    }
};

// Random crop-resize (nearest neighbor), horizontal flip, Gaussian pixel
// noise, clip to [0,1]. Output shape equals input shape.
Tensor augment(const Tensor& x, const AugmentConfig& cfg, Rng& rng);

// EncoderParams persistence: BDTN weight files plus a key=value header.
void save_encoder(const std::string& dir, const EncoderParams& params);
EncoderParams load_encoder(const std::string& dir);

}  // namespace bdclean::nn
