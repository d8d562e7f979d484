#include "bdclean/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace bdclean::contrastive {

namespace {

// Shared kernel for both losses: per-anchor softmax over all other rows,
// positives defined by the label vector. ntxent is the pair-unique special
// case, so the two losses agree bit-for-bit when labels are pair-unique.
LossResult contrastive_kernel(const nn::Mat& Z, const std::vector<int>& labels, double tau) {
    std::size_t n = Z.rows;
    nn::Mat S;
    nn::matmul_nt(Z, Z, S);  // [n,n] similarities

    nn::Mat coef(n, n);  // dLoss/dS
    double loss = 0.0;
    std::size_t valid = 0;

    std::vector<double> p(n);
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < n; ++i) {
        pos.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) pos.push_back(j);
        if (pos.empty()) continue;
        ++valid;

        const double* si = S.row(i);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) m = std::max(m, si[j] / tau);
        double den = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            p[j] = (j == i) ? 0.0 : std::exp(si[j] / tau - m);
        for (std::size_t j = 0; j < n; ++j) den += p[j];
        for (std::size_t j = 0; j < n; ++j) p[j] /= den;

        double inv_np = 1.0 / static_cast<double>(pos.size());
        double li = 0.0;
        for (std::size_t q : pos) li += -(si[q] / tau - m - std::log(den));
        loss += li * inv_np;

        double* ci = coef.row(i);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) ci[j] += p[j] / tau;
        for (std::size_t q : pos) ci[q] -= inv_np / tau;
    }
    if (valid == 0)
        throw std::invalid_argument("contrastive loss: no anchor has a positive in batch");

    double inv_valid = 1.0 / static_cast<double>(valid);
    loss *= inv_valid;
    for (auto& v : coef.a) v *= inv_valid;

    // dZ = (coef + coef^T) Z
    LossResult res;
    res.loss = loss;
    res.dZ = nn::Mat(n, Z.cols);
    for (std::size_t i = 0; i < n; ++i) {
        double* gi = res.dZ.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            double c = coef.at(i, j) + coef.at(j, i);
            if (c == 0.0) continue;
            const double* zj = Z.row(j);
            for (std::size_t k = 0; k < Z.cols; ++k) gi[k] += c * zj[k];
        }
    }
    return res;
}

std::vector<int> pair_labels(std::size_t n) {
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i / 2);
    return labels;
}

}  // namespace

LossResult ntxent_loss(const nn::Mat& Z, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("ntxent: temperature must be > 0");
    if (Z.rows % 2 != 0 || Z.rows < 4)
        throw std::invalid_argument("ntxent: needs 2K rows with K >= 2");
    for (double v : Z.a)
        if (!std::isfinite(v)) throw std::invalid_argument("ntxent: non-finite embedding");
    return contrastive_kernel(Z, pair_labels(Z.rows), tau);
}

LossResult supcon_loss(const nn::Mat& Z, const std::vector<int>& labels, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("supcon: temperature must be > 0");
    if (labels.size() != Z.rows)
        throw std::invalid_argument("supcon: labels/rows mismatch");
    return contrastive_kernel(Z, labels, tau);
}

void save_loss_history(const std::string& path, const TrainHistory& hist) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("loss history: cannot write " + path);
    os << "epoch,mean_loss\n";
    char buf[64];
    for (std::size_t e = 0; e < hist.epoch_loss.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", e, hist.epoch_loss[e]);
        os << buf;
    }
}

namespace {

struct BatchPlan {
    std::vector<std::size_t> order;
    std::size_t batches = 0;
};

BatchPlan plan_epoch(std::size_t n, std::size_t k, Rng& rng) {
    BatchPlan plan;
    plan.order.resize(n);
    std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
    rng.shuffle(plan.order);
    plan.batches = n / k;  // drop last partial batch
    return plan;
}

}  // namespace

nn::EncoderParams train_encoder(const std::vector<Tensor>& images,
                                const nn::EncoderArch& arch, const TrainConfig& cfg,
                                TrainHistory* hist) {
    if (images.empty()) throw std::invalid_argument("train_encoder: empty image set");
    if (cfg.batch_size < 2) throw std::invalid_argument("train_encoder: batch_size must be >= 2");
    if (images.size() < static_cast<std::size_t>(cfg.batch_size))
        throw std::invalid_argument("train_encoder: fewer images than batch_size");

    const Tensor& first = images.front();
    Rng root(cfg.seed);
    Rng init_rng = root.fork(1);
    Rng shuffle_rng = root.fork(2);
    Rng aug_rng = root.fork(3);

    nn::EncoderParams params =
        nn::make_encoder(first.dims[0], first.dims[1], first.dims[2], arch, init_rng.next_u64());
    nn::SgdState sgd = nn::make_sgd_state(params);

    std::size_t k = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        BatchPlan plan = plan_epoch(images.size(), k, shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < plan.batches; ++b) {
            std::vector<Tensor> views;
            views.reserve(2 * k);
            for (std::size_t s = 0; s < k; ++s) {
                const Tensor& img = images[plan.order[b * k + s]];
                views.push_back(nn::augment(img, cfg.augment, aug_rng));
                views.push_back(nn::augment(img, cfg.augment, aug_rng));
            }
            std::vector<const Tensor*> ptrs;
            ptrs.reserve(views.size());
            for (const auto& v : views) ptrs.push_back(&v);

            nn::ForwardCache cache;
            nn::Mat Z = nn::forward_embed(params, ptrs, &cache);
            LossResult lr = ntxent_loss(Z, cfg.temperature);
            nn::Grads grads = nn::backward(params, cache, lr.dZ);
            nn::sgd_step(params, grads, cfg.lr, cfg.momentum, sgd);
            epoch_loss += lr.loss;
        }
        if (hist)
            hist->epoch_loss.push_back(plan.batches ? epoch_loss / static_cast<double>(plan.batches)
                                                    : 0.0);
    }
    return params;
}

Tensor embed_dataset(const nn::EncoderParams& params, const data::Dataset& ds) {
    if (ds.samples.empty()) throw std::invalid_argument("embed_dataset: empty dataset");
    std::size_t n = ds.size();
    std::size_t d = params.output_dim();
    if (ds.samples.front().image.numel() != params.input_dim())
        throw std::invalid_argument("embed_dataset: image shape does not match encoder");

    Tensor out({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(d)});
    // index by id so row i always corresponds to sample id i
    std::vector<const data::LabeledSample*> by_id(n, nullptr);
    for (const auto& s : ds.samples) by_id[s.id] = &s;

    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < n; start += kChunk) {
        std::size_t stop = std::min(n, start + kChunk);
        std::vector<const Tensor*> ptrs;
        ptrs.reserve(stop - start);
        for (std::size_t i = start; i < stop; ++i) ptrs.push_back(&by_id[i]->image);
        nn::Mat Z = nn::forward_embed(params, ptrs);
        for (std::size_t i = start; i < stop; ++i)
            for (std::size_t j = 0; j < d; ++j)
                out.data[i * d + j] = static_cast<float>(Z.at(i - start, j));
    }
    return out;
}

namespace {

// cross-entropy batch gradient of the linear head on fixed embeddings
double head_epoch(const nn::Mat& E, const std::vector<int>& labels, int num_classes,
                  nn::Mat& W, std::vector<double>& b, nn::Mat& vW, std::vector<double>& vb,
                  double lr, double momentum) {
    std::size_t n = E.rows, d = E.cols, c = static_cast<std::size_t>(num_classes);
    nn::Mat logits;
    nn::matmul_nt(E, W, logits);
    nn::Mat dlogits(n, c);
    double loss = 0.0;
    std::vector<double> p(c);
    for (std::size_t i = 0; i < n; ++i) {
        double* li = logits.row(i);
        for (std::size_t j = 0; j < c; ++j) li[j] += b[j];
        double m = *std::max_element(li, li + c);
        double den = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            p[j] = std::exp(li[j] - m);
            den += p[j];
        }
        loss += -(li[labels[i]] - m - std::log(den));
        double* gi = dlogits.row(i);
        for (std::size_t j = 0; j < c; ++j)
            gi[j] = (p[j] / den - (static_cast<int>(j) == labels[i] ? 1.0 : 0.0)) /
                    static_cast<double>(n);
    }
    nn::Mat dW;
    nn::matmul_tn(dlogits, E, dW);
    std::vector<double> db(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) db[j] += dlogits.at(i, j);
    for (std::size_t idx = 0; idx < W.a.size(); ++idx) {
        vW.a[idx] = momentum * vW.a[idx] + dW.a[idx];
        W.a[idx] -= lr * vW.a[idx];
    }
    for (std::size_t j = 0; j < c; ++j) {
        vb[j] = momentum * vb[j] + db[j];
        b[j] -= lr * vb[j];
    }
    return loss / static_cast<double>(n);
}

}  // namespace

Classifier train_classifier(const data::Dataset& ds, const nn::EncoderArch& arch,
                            const TrainConfig& cfg) {
    if (ds.samples.empty()) throw std::invalid_argument("train_classifier: empty dataset");
    std::vector<int> present(ds.num_classes, 0);
    for (const auto& s : ds.samples) present[s.label] = 1;
    if (std::accumulate(present.begin(), present.end(), 0) < 2)
        throw std::invalid_argument("train_classifier: needs at least 2 classes present");

    const Tensor& first = ds.samples.front().image;
    Rng root(cfg.seed);
    Rng init_rng = root.fork(11);
    Rng shuffle_rng = root.fork(12);
    Rng aug_rng = root.fork(13);

    Classifier clf;
    clf.num_classes = ds.num_classes;
    clf.encoder =
        nn::make_encoder(first.dims[0], first.dims[1], first.dims[2], arch, init_rng.next_u64());
    nn::SgdState sgd = nn::make_sgd_state(clf.encoder);

    std::size_t k = static_cast<std::size_t>(cfg.batch_size);
    std::size_t n = ds.size();
    if (k < 1 || (cfg.epochs > 0 && n < k))
        throw std::invalid_argument("train_classifier: bad batch size");

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        BatchPlan plan = plan_epoch(n, k, shuffle_rng);
        for (std::size_t b = 0; b < plan.batches; ++b) {
            std::vector<Tensor> views;
            std::vector<int> labels;
            views.reserve(2 * k);
            labels.reserve(2 * k);
            for (std::size_t s = 0; s < k; ++s) {
                const auto& sample = ds.samples[plan.order[b * k + s]];
                views.push_back(nn::augment(sample.image, cfg.augment, aug_rng));
                views.push_back(nn::augment(sample.image, cfg.augment, aug_rng));
                labels.push_back(sample.label);
                labels.push_back(sample.label);
            }
            std::vector<const Tensor*> ptrs;
            ptrs.reserve(views.size());
            for (const auto& v : views) ptrs.push_back(&v);

            nn::ForwardCache cache;
            nn::Mat Z = nn::forward_embed(clf.encoder, ptrs, &cache);
            LossResult lr = supcon_loss(Z, labels, cfg.temperature);
            nn::Grads grads = nn::backward(clf.encoder, cache, lr.dZ);
            nn::sgd_step(clf.encoder, grads, cfg.lr, cfg.momentum, sgd);
        }
    }

    // frozen embeddings, then linear softmax head
    std::size_t d = clf.encoder.output_dim();
    clf.head_w = nn::Mat(static_cast<std::size_t>(clf.num_classes), d);
    clf.head_b.assign(clf.num_classes, 0.0);
    if (cfg.head_epochs > 0) {
        Tensor emb = embed_dataset(clf.encoder, ds);
        nn::Mat E(n, d);
        std::vector<int> labels(n);
        for (const auto& s : ds.samples) labels[s.id] = s.label;
        for (std::size_t i = 0; i < E.a.size(); ++i) E.a[i] = static_cast<double>(emb.data[i]);
        nn::Mat vW(clf.head_w.rows, clf.head_w.cols);
        std::vector<double> vb(clf.num_classes, 0.0);
        for (int e = 0; e < cfg.head_epochs; ++e)
            head_epoch(E, labels, clf.num_classes, clf.head_w, clf.head_b, vW, vb, cfg.head_lr,
                       cfg.head_momentum);
    }
    return clf;
}

int Classifier::predict(const Tensor& image) const {
    std::vector<const Tensor*> one{&image};
    return predict_batch(one)[0];
}

std::vector<int> Classifier::predict_batch(const std::vector<const Tensor*>& images) const {
    nn::Mat Z = nn::forward_embed(encoder, images);
    std::vector<int> out(Z.rows);
    for (std::size_t i = 0; i < Z.rows; ++i) {
        const double* zi = Z.row(i);
        int best = 0;
        double best_v = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < num_classes; ++c) {
            double v = head_b[c];
            const double* wc = head_w.row(c);
            for (std::size_t j = 0; j < Z.cols; ++j) v += wc[j] * zi[j];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out[i] = best;
    }
    return out;
}

void save_classifier(const std::string& dir, const Classifier& clf) {
    std::filesystem::create_directories(dir);
    nn::save_encoder(dir + "/encoder", clf.encoder);
    Tensor w({static_cast<std::uint32_t>(clf.head_w.rows),
              static_cast<std::uint32_t>(clf.head_w.cols)});
    for (std::size_t i = 0; i < clf.head_w.a.size(); ++i)
        w.data[i] = static_cast<float>(clf.head_w.a[i]);
    save_bdtn(dir + "/head_W.bdtn", w);
    Tensor b({static_cast<std::uint32_t>(clf.head_b.size())});
    for (std::size_t i = 0; i < clf.head_b.size(); ++i)
        b.data[i] = static_cast<float>(clf.head_b[i]);
    save_bdtn(dir + "/head_b.bdtn", b);
}

Classifier load_classifier(const std::string& dir) {
    Classifier clf;
    clf.encoder = nn::load_encoder(dir + "/encoder");
    Tensor w = load_bdtn(dir + "/head_W.bdtn");
    if (w.ndim() != 2) throw std::runtime_error("classifier io: bad head_W");
    clf.head_w = nn::Mat(w.dims[0], w.dims[1]);
    for (std::size_t i = 0; i < clf.head_w.a.size(); ++i)
        clf.head_w.a[i] = static_cast<double>(w.data[i]);
    Tensor b = load_bdtn(dir + "/head_b.bdtn");
    clf.head_b.assign(b.data.begin(), b.data.end());
    clf.num_classes = static_cast<int>(clf.head_b.size());
    return clf;
}

}  // namespace bdclean::contrastive
