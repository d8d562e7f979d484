#include "bdclean/nn.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace bdclean::nn {

void matmul(const Mat& A, const Mat& B, Mat& C) {
    if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dims differ");
    C = Mat(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        double* ci = C.row(i);
        const double* ai = A.row(i);
        for (std::size_t k = 0; k < A.cols; ++k) {
            double a = ai[k];
            if (a == 0.0) continue;
            const double* bk = B.row(k);
            for (std::size_t j = 0; j < B.cols; ++j) ci[j] += a * bk[j];
        }
    }
}

void matmul_nt(const Mat& A, const Mat& B, Mat& C) {
    if (A.cols != B.cols) throw std::invalid_argument("matmul_nt: inner dims differ");
    C = Mat(A.rows, B.rows);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const double* ai = A.row(i);
        double* ci = C.row(i);
        for (std::size_t j = 0; j < B.rows; ++j) {
            const double* bj = B.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < A.cols; ++k) s += ai[k] * bj[k];
            ci[j] = s;
        }
    }
}

void matmul_tn(const Mat& A, const Mat& B, Mat& C) {
    if (A.rows != B.rows) throw std::invalid_argument("matmul_tn: inner dims differ");
    C = Mat(A.cols, B.cols);
    for (std::size_t k = 0; k < A.rows; ++k) {
        const double* ak = A.row(k);
        const double* bk = B.row(k);
        for (std::size_t i = 0; i < A.cols; ++i) {
            double a = ak[i];
            if (a == 0.0) continue;
            double* ci = C.row(i);
            for (std::size_t j = 0; j < B.cols; ++j) ci[j] += a * bk[j];
        }
    }
}

namespace {

void init_layer(Layer& layer, Rng& rng) {
    double fan_in = static_cast<double>(layer.kind == LayerKind::dense
                                            ? layer.W.cols
                                            : layer.in_c * layer.kh * layer.kw);
    double bound = 1.0 / std::sqrt(fan_in);
    for (auto& w : layer.W.a) w = rng.uniform(-bound, bound);
    for (auto& b : layer.b) b = rng.uniform(-bound, bound);
}

}  // namespace

EncoderParams make_encoder(std::uint32_t in_c, std::uint32_t in_h, std::uint32_t in_w,
                           const EncoderArch& arch, std::uint64_t seed) {
    if (arch.output_dim < 2) throw std::invalid_argument("encoder: output_dim must be >= 2");
    EncoderParams p;
    p.in_c = in_c;
    p.in_h = in_h;
    p.in_w = in_w;
    p.normalize = arch.normalize;
    Rng rng(seed);

    std::uint32_t c = in_c, h = in_h, w = in_w;
    for (const auto& cs : arch.conv) {
        if (cs.kernel > h || cs.kernel > w)
            throw std::invalid_argument("encoder: conv kernel exceeds input");
        Layer l;
        l.kind = LayerKind::conv;
        l.in_c = c;
        l.in_h = h;
        l.in_w = w;
        l.kh = l.kw = cs.kernel;
        l.stride = cs.stride;
        l.W = Mat(cs.out_channels, static_cast<std::size_t>(c) * cs.kernel * cs.kernel);
        l.b.assign(cs.out_channels, 0.0);
        l.relu = true;
        init_layer(l, rng);
        c = cs.out_channels;
        h = l.out_h();
        w = l.out_w();
        p.layers.push_back(std::move(l));
    }
    std::size_t dim = static_cast<std::size_t>(c) * h * w;
    for (auto width : arch.hidden) {
        Layer l;
        l.W = Mat(width, dim);
        l.b.assign(width, 0.0);
        l.relu = true;
        init_layer(l, rng);
        dim = width;
        p.layers.push_back(std::move(l));
    }
    // linear projector
    Layer proj;
    proj.W = Mat(arch.output_dim, dim);
    proj.b.assign(arch.output_dim, 0.0);
    proj.relu = false;
    init_layer(proj, rng);
    p.layers.push_back(std::move(proj));
    return p;
}

namespace {

Mat conv_forward(const Layer& l, const Mat& X) {
    std::size_t B = X.rows;
    std::uint32_t oh = l.out_h(), ow = l.out_w(), oc = static_cast<std::uint32_t>(l.W.rows);
    Mat Y(B, static_cast<std::size_t>(oc) * oh * ow);
    for (std::size_t n = 0; n < B; ++n) {
        const double* x = X.row(n);
        double* y = Y.row(n);
        for (std::uint32_t o = 0; o < oc; ++o) {
            const double* w = l.W.row(o);
            for (std::uint32_t oy = 0; oy < oh; ++oy) {
                for (std::uint32_t ox = 0; ox < ow; ++ox) {
                    double s = l.b[o];
                    std::size_t widx = 0;
                    for (std::uint32_t ic = 0; ic < l.in_c; ++ic)
                        for (std::uint32_t ky = 0; ky < l.kh; ++ky)
                            for (std::uint32_t kx = 0; kx < l.kw; ++kx)
                                s += w[widx++] *
                                     x[(static_cast<std::size_t>(ic) * l.in_h +
                                        oy * l.stride + ky) * l.in_w + ox * l.stride + kx];
                    y[(static_cast<std::size_t>(o) * oh + oy) * ow + ox] = s;
                }
            }
        }
    }
    return Y;
}

void conv_backward(const Layer& l, const Mat& X, const Mat& dY, Mat& dW,
                   std::vector<double>& db, Mat* dX) {
    std::size_t B = X.rows;
    std::uint32_t oh = l.out_h(), ow = l.out_w(), oc = static_cast<std::uint32_t>(l.W.rows);
    for (std::size_t n = 0; n < B; ++n) {
        const double* x = X.row(n);
        const double* dy = dY.row(n);
        double* dx = dX ? dX->row(n) : nullptr;
        for (std::uint32_t o = 0; o < oc; ++o) {
            double* dw = dW.row(o);
            for (std::uint32_t oy = 0; oy < oh; ++oy) {
                for (std::uint32_t ox = 0; ox < ow; ++ox) {
                    double g = dy[(static_cast<std::size_t>(o) * oh + oy) * ow + ox];
                    if (g == 0.0) continue;
                    db[o] += g;
                    std::size_t widx = 0;
                    for (std::uint32_t ic = 0; ic < l.in_c; ++ic)
                        for (std::uint32_t ky = 0; ky < l.kh; ++ky)
                            for (std::uint32_t kx = 0; kx < l.kw; ++kx) {
                                std::size_t xi = (static_cast<std::size_t>(ic) * l.in_h +
                                                  oy * l.stride + ky) * l.in_w +
                                                 ox * l.stride + kx;
                                dw[widx] += g * x[xi];
                                if (dx) dx[xi] += g * l.W.row(o)[widx];
                                ++widx;
                            }
                }
            }
        }
    }
}

}  // namespace

Mat forward(const EncoderParams& params, const Mat& X, ForwardCache* cache) {
    if (params.layers.empty()) throw std::invalid_argument("forward: empty encoder");
    if (X.cols != params.layers.front().in_dim())
        throw std::invalid_argument("forward: batch width does not match first layer");
    if (X.rows == 0) throw std::invalid_argument("forward: empty batch");

    if (cache) {
        cache->inputs.clear();
        cache->preact.clear();
    }
    Mat cur = X;
    for (const auto& l : params.layers) {
        if (cache) cache->inputs.push_back(cur);
        Mat y;
        if (l.kind == LayerKind::dense) {
            matmul_nt(cur, l.W, y);
            for (std::size_t i = 0; i < y.rows; ++i) {
                double* yi = y.row(i);
                for (std::size_t j = 0; j < y.cols; ++j) yi[j] += l.b[j];
            }
        } else {
            y = conv_forward(l, cur);
        }
        if (cache) cache->preact.push_back(y);
        if (l.relu)
            for (auto& v : y.a) v = v > 0.0 ? v : 0.0;
        cur = std::move(y);
    }
    if (cache) cache->pre_norm = cur;
    if (params.normalize) {
        for (std::size_t i = 0; i < cur.rows; ++i) {
            double* zi = cur.row(i);
            double n2 = 0.0;
            for (std::size_t j = 0; j < cur.cols; ++j) n2 += zi[j] * zi[j];
            double n = std::sqrt(n2);
            if (n > 0.0)
                for (std::size_t j = 0; j < cur.cols; ++j) zi[j] /= n;
        }
    }
    if (cache) {
        cache->output = cur;
        cache->valid = true;
    }
    return cur;
}

Mat batch_to_mat(const std::vector<const Tensor*>& images) {
    if (images.empty()) throw std::invalid_argument("batch_to_mat: empty batch");
    std::size_t dim = images.front()->numel();
    Mat X(images.size(), dim);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->numel() != dim)
            throw std::invalid_argument("batch_to_mat: ragged batch");
        double* xi = X.row(i);
        const auto& d = images[i]->data;
        for (std::size_t j = 0; j < dim; ++j) xi[j] = static_cast<double>(d[j]);
    }
    return X;
}

Mat forward_embed(const EncoderParams& params, const std::vector<const Tensor*>& images,
                  ForwardCache* cache) {
    return forward(params, batch_to_mat(images), cache);
}

Grads make_zero_grads(const EncoderParams& params) {
    Grads g;
    for (const auto& l : params.layers) {
        g.dW.emplace_back(l.W.rows, l.W.cols);
        g.db.emplace_back(l.b.size(), 0.0);
    }
    return g;
}

Grads backward(const EncoderParams& params, const ForwardCache& cache, const Mat& dZ,
               Mat* dX) {
    if (!cache.valid) throw std::runtime_error("backward: stale or missing forward cache");
    if (dZ.rows != cache.output.rows || dZ.cols != cache.output.cols)
        throw std::invalid_argument("backward: upstream shape mismatch");

    Grads grads = make_zero_grads(params);
    Mat delta = dZ;
    if (params.normalize) {
        // z = y/|y|; dy = (dz - z (z . dz)) / |y|
        Mat d(delta.rows, delta.cols);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const double* y = cache.pre_norm.row(i);
            const double* z = cache.output.row(i);
            const double* dz = delta.row(i);
            double n2 = 0.0;
            for (std::size_t j = 0; j < delta.cols; ++j) n2 += y[j] * y[j];
            double n = std::sqrt(n2);
            double zdz = 0.0;
            for (std::size_t j = 0; j < delta.cols; ++j) zdz += z[j] * dz[j];
            if (n > 0.0)
                for (std::size_t j = 0; j < delta.cols; ++j)
                    d.row(i)[j] = (dz[j] - z[j] * zdz) / n;
        }
        delta = std::move(d);
    }

    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const Layer& l = params.layers[li];
        if (l.relu) {
            const Mat& pre = cache.preact[li];
            for (std::size_t i = 0; i < delta.a.size(); ++i)
                if (pre.a[i] <= 0.0) delta.a[i] = 0.0;
        }
        const Mat& input = cache.inputs[li];
        bool need_dx = (li > 0) || (dX != nullptr);
        if (l.kind == LayerKind::dense) {
            matmul_tn(delta, input, grads.dW[li]);
            for (std::size_t i = 0; i < delta.rows; ++i) {
                const double* di = delta.row(i);
                for (std::size_t j = 0; j < delta.cols; ++j) grads.db[li][j] += di[j];
            }
            if (need_dx) {
                Mat dx;
                matmul(delta, l.W, dx);
                delta = std::move(dx);
            }
        } else {
            Mat dx;
            if (need_dx) dx = Mat(input.rows, input.cols);
            conv_backward(l, input, delta, grads.dW[li], grads.db[li],
                          need_dx ? &dx : nullptr);
            if (need_dx) delta = std::move(dx);
        }
    }
    if (dX) *dX = std::move(delta);
    return grads;
}

SgdState make_sgd_state(const EncoderParams& params) {
    SgdState s;
    for (const auto& l : params.layers) {
        s.vW.emplace_back(l.W.rows, l.W.cols);
        s.vb.emplace_back(l.b.size(), 0.0);
    }
    return s;
}

void sgd_step(EncoderParams& params, const Grads& grads, double lr, double momentum,
              SgdState& state) {
    if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be > 0");
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        Layer& l = params.layers[li];
        for (std::size_t i = 0; i < l.W.a.size(); ++i) {
            double v = momentum * state.vW[li].a[i] + grads.dW[li].a[i];
            state.vW[li].a[i] = v;
            l.W.a[i] -= lr * v;
        }
        for (std::size_t i = 0; i < l.b.size(); ++i) {
            double v = momentum * state.vb[li][i] + grads.db[li][i];
            state.vb[li][i] = v;
            l.b[i] -= lr * v;
        }
    }
}

double grad_check(const EncoderParams& params, const std::vector<const Tensor*>& batch,
                  const EmbeddingLoss& loss_fn, double h, std::size_t max_coords,
                  std::uint64_t sample_seed) {
    if (h <= 0.0) throw std::invalid_argument("grad_check: h must be > 0");
    Mat X = batch_to_mat(batch);
    ForwardCache cache;
    Mat Z = forward(params, X, &cache);
    auto [loss, dZ] = loss_fn(Z);
    (void)loss;
    Grads analytic = backward(params, cache, dZ);

    EncoderParams work = params;
    auto eval = [&]() { return loss_fn(forward(work, X)).first; };

    Rng rng(sample_seed ^ 0x5eedULL);
    double worst = 0.0;
    auto probe = [&](double& p, double g) {
        double keep = p;
        p = keep + h;
        double up = eval();
        p = keep - h;
        double down = eval();
        p = keep;
        double numeric = (up - down) / (2.0 * h);
        double err = std::abs(numeric - g) / std::max(1e-6, std::abs(numeric) + std::abs(g));
        worst = std::max(worst, err);
    };
    for (std::size_t li = 0; li < work.layers.size(); ++li) {
        Layer& l = work.layers[li];
        std::size_t nw = l.W.a.size();
        if (max_coords == 0 || nw <= max_coords) {
            for (std::size_t i = 0; i < nw; ++i) probe(l.W.a[i], analytic.dW[li].a[i]);
        } else {
            for (std::size_t s = 0; s < max_coords; ++s) {
                std::size_t i = static_cast<std::size_t>(rng.uniform_index(nw));
                probe(l.W.a[i], analytic.dW[li].a[i]);
            }
        }
        for (std::size_t i = 0; i < l.b.size(); ++i) probe(l.b[i], analytic.db[li][i]);
    }
    return worst;
}

Tensor augment(const Tensor& x, const AugmentConfig& cfg, Rng& rng) {
    if (x.ndim() != 3) throw std::invalid_argument("augment: expected a C,H,W image");
    if (cfg.crop_scale_lo <= 0.0 || cfg.crop_scale_lo > cfg.crop_scale_hi ||
        cfg.crop_scale_hi > 1.0)
        throw std::invalid_argument("augment: crop scale range must satisfy 0 < lo <= hi <= 1");
    if (cfg.flip_prob < 0.0 || cfg.flip_prob > 1.0)
        throw std::invalid_argument("augment: flip_prob must be in [0,1]");

    std::uint32_t C = x.dims[0], H = x.dims[1], W = x.dims[2];
    Tensor out = x;

    // crop-resize, nearest neighbor
    double scale = rng.uniform(cfg.crop_scale_lo, cfg.crop_scale_hi);
    std::uint32_t ch = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::lround(scale * H)));
    std::uint32_t cw = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::lround(scale * W)));
    std::uint32_t top = static_cast<std::uint32_t>(rng.uniform_index(H - ch + 1));
    std::uint32_t left = static_cast<std::uint32_t>(rng.uniform_index(W - cw + 1));
    if (ch != H || cw != W) {
        Tensor resized({C, H, W});
        for (std::uint32_t c = 0; c < C; ++c)
            for (std::uint32_t i = 0; i < H; ++i) {
                std::uint32_t si = top + std::min<std::uint32_t>(
                                             ch - 1, static_cast<std::uint32_t>(
                                                         (static_cast<std::uint64_t>(i) * ch) / H));
                for (std::uint32_t j = 0; j < W; ++j) {
                    std::uint32_t sj = left + std::min<std::uint32_t>(
                                                  cw - 1,
                                                  static_cast<std::uint32_t>(
                                                      (static_cast<std::uint64_t>(j) * cw) / W));
                    resized.at(c, i, j) = x.at(c, si, sj);
                }
            }
        out = std::move(resized);
    }

    if (rng.bernoulli(cfg.flip_prob)) {
        for (std::uint32_t c = 0; c < C; ++c)
            for (std::uint32_t i = 0; i < H; ++i)
                for (std::uint32_t j = 0; j < W / 2; ++j)
                    std::swap(out.at(c, i, j), out.at(c, i, W - 1 - j));
    }

    if (cfg.noise_std > 0.0) {
        for (auto& v : out.data) {
            double y = v + cfg.noise_std * rng.gaussian();
            v = static_cast<float>(std::min(1.0, std::max(0.0, y)));
        }
    }
    return out;
}

namespace {

Tensor mat_to_tensor(const Mat& m) {
    Tensor t({static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)});
    for (std::size_t i = 0; i < m.a.size(); ++i) t.data[i] = static_cast<float>(m.a[i]);
    return t;
}

Mat tensor_to_mat(const Tensor& t) {
    if (t.ndim() != 2) throw std::runtime_error("encoder io: expected 2-d weight tensor");
    Mat m(t.dims[0], t.dims[1]);
    for (std::size_t i = 0; i < m.a.size(); ++i) m.a[i] = static_cast<double>(t.data[i]);
    return m;
}

}  // namespace

void save_encoder(const std::string& dir, const EncoderParams& params) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir + "/encoder.txt", std::ios::trunc);
    if (!os) throw std::runtime_error("encoder io: cannot write " + dir);
    os << "in_c=" << params.in_c << "\nin_h=" << params.in_h << "\nin_w=" << params.in_w
       << "\nnormalize=" << (params.normalize ? 1 : 0)
       << "\nnum_layers=" << params.layers.size() << "\n";
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const Layer& l = params.layers[i];
        os << "layer" << i << ".kind=" << (l.kind == LayerKind::dense ? "dense" : "conv")
           << "\nlayer" << i << ".relu=" << (l.relu ? 1 : 0);
        if (l.kind == LayerKind::conv)
            os << "\nlayer" << i << ".in_c=" << l.in_c << "\nlayer" << i << ".in_h=" << l.in_h
               << "\nlayer" << i << ".in_w=" << l.in_w << "\nlayer" << i << ".kh=" << l.kh
               << "\nlayer" << i << ".kw=" << l.kw << "\nlayer" << i << ".stride=" << l.stride;
        os << "\n";
        save_bdtn(dir + "/layer" + std::to_string(i) + "_W.bdtn", mat_to_tensor(l.W));
        Tensor bt({static_cast<std::uint32_t>(l.b.size())});
        for (std::size_t j = 0; j < l.b.size(); ++j) bt.data[j] = static_cast<float>(l.b[j]);
        save_bdtn(dir + "/layer" + std::to_string(i) + "_b.bdtn", bt);
    }
}

EncoderParams load_encoder(const std::string& dir) {
    std::ifstream is(dir + "/encoder.txt");
    if (!is) throw std::runtime_error("encoder io: cannot open " + dir + "/encoder.txt");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::runtime_error("encoder io: missing key " + k);
        return it->second;
    };
    EncoderParams p;
    p.in_c = static_cast<std::uint32_t>(std::stoul(need("in_c")));
    p.in_h = static_cast<std::uint32_t>(std::stoul(need("in_h")));
    p.in_w = static_cast<std::uint32_t>(std::stoul(need("in_w")));
    p.normalize = std::stoi(need("normalize")) != 0;
    std::size_t n = std::stoul(need("num_layers"));
    for (std::size_t i = 0; i < n; ++i) {
        std::string pre = "layer" + std::to_string(i) + ".";
        Layer l;
        l.kind = need(pre + "kind") == "conv" ? LayerKind::conv : LayerKind::dense;
        l.relu = std::stoi(need(pre + "relu")) != 0;
        if (l.kind == LayerKind::conv) {
            l.in_c = static_cast<std::uint32_t>(std::stoul(need(pre + "in_c")));
            l.in_h = static_cast<std::uint32_t>(std::stoul(need(pre + "in_h")));
            l.in_w = static_cast<std::uint32_t>(std::stoul(need(pre + "in_w")));
            l.kh = static_cast<std::uint32_t>(std::stoul(need(pre + "kh")));
            l.kw = static_cast<std::uint32_t>(std::stoul(need(pre + "kw")));
            l.stride = static_cast<std::uint32_t>(std::stoul(need(pre + "stride")));
        }
        l.W = tensor_to_mat(load_bdtn(dir + "/layer" + std::to_string(i) + "_W.bdtn"));
        Tensor bt = load_bdtn(dir + "/layer" + std::to_string(i) + "_b.bdtn");
        l.b.assign(bt.data.begin(), bt.data.end());
        p.layers.push_back(std::move(l));
    }
    return p;
}

}  // namespace bdclean::nn
