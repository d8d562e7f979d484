#include "bdclean/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bdclean/rng.hpp"

namespace bdclean::data {

namespace {

std::uint32_t read_u32be(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_u32be(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>((v >> 24) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>(v & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

ImageShape Dataset::image_shape() const {
    if (samples.empty()) return {};
    const auto& d = samples.front().image.dims;
    return {d[0], d[1], d[2]};
}

std::vector<int> Dataset::labels() const {
    std::vector<int> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = samples[i].label;
    return out;
}

void Dataset::validate() const {
    std::vector<char> seen(samples.size(), 0);
    for (const auto& s : samples) {
        if (s.id < 0 || static_cast<std::size_t>(s.id) >= samples.size() || seen[s.id])
            throw std::runtime_error("dataset: ids are not dense/unique");
        seen[s.id] = 1;
        if (s.label < 0 || s.label >= num_classes || s.original_label < 0 ||
            s.original_label >= num_classes)
            throw std::runtime_error("dataset: label out of range");
    }
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("idx: cannot open " + images_path);
    std::ifstream lbls(labels_path, std::ios::binary);
    if (!lbls) throw std::runtime_error("idx: cannot open " + labels_path);

    std::uint32_t img_magic = read_u32be(imgs);
    if (!imgs || img_magic != kIdxImagesMagic)
        throw std::runtime_error("idx: bad image magic in " + images_path);
    std::uint32_t n_images = read_u32be(imgs);
    std::uint32_t rows = read_u32be(imgs);
    std::uint32_t cols = read_u32be(imgs);

    std::uint32_t lbl_magic = read_u32be(lbls);
    if (!lbls || lbl_magic != kIdxLabelsMagic)
        throw std::runtime_error("idx: bad label magic in " + labels_path);
    std::uint32_t n_labels = read_u32be(lbls);
    if (n_images != n_labels)
        throw std::runtime_error("idx: image/label count mismatch (" + std::to_string(n_images) +
                                 " vs " + std::to_string(n_labels) + ")");

    Dataset ds;
    ds.num_classes = 10;
    ds.samples.reserve(n_images);
    std::size_t npix = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> buf(npix);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(npix));
        unsigned char lbl = 0;
        lbls.read(reinterpret_cast<char*>(&lbl), 1);
        if (!imgs || !lbls) throw std::runtime_error("idx: truncated file");
        LabeledSample s;
        s.id = static_cast<int>(i);
        s.image = Tensor({1, rows, cols});
        for (std::size_t p = 0; p < npix; ++p)
            s.image.data[p] = static_cast<float>(buf[p]) / 255.0f;
        s.label = s.original_label = static_cast<int>(lbl);
        ds.samples.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

void export_idx(const Dataset& ds, const std::string& images_path,
                const std::string& labels_path) {
    if (ds.samples.empty()) throw std::invalid_argument("idx export: empty dataset");
    ImageShape sh = ds.image_shape();
    if (sh.channels != 1) throw std::invalid_argument("idx export: single-channel images only");
    std::ofstream imgs(images_path, std::ios::binary | std::ios::trunc);
    std::ofstream lbls(labels_path, std::ios::binary | std::ios::trunc);
    if (!imgs || !lbls) throw std::runtime_error("idx export: cannot open output");
    write_u32be(imgs, kIdxImagesMagic);
    write_u32be(imgs, static_cast<std::uint32_t>(ds.size()));
    write_u32be(imgs, sh.height);
    write_u32be(imgs, sh.width);
    write_u32be(lbls, kIdxLabelsMagic);
    write_u32be(lbls, static_cast<std::uint32_t>(ds.size()));
    std::vector<unsigned char> buf(sh.numel());
    for (const auto& s : ds.samples) {
        for (std::size_t p = 0; p < buf.size(); ++p) {
            float v = s.image.data[p] * 255.0f;
            v = std::min(255.0f, std::max(0.0f, v));
            buf[p] = static_cast<unsigned char>(v + 0.5f);
        }
        imgs.write(reinterpret_cast<const char*>(buf.data()),
                   static_cast<std::streamsize>(buf.size()));
        unsigned char lbl = static_cast<unsigned char>(s.label);
        lbls.write(reinterpret_cast<const char*>(&lbl), 1);
    }
}

Dataset synth_dataset(int num_classes, int per_class, ImageShape shape, double noise_std,
                      std::uint64_t seed) {
    if (num_classes < 1) throw std::invalid_argument("synth_dataset: num_classes must be >= 1");
    if (per_class < 1) throw std::invalid_argument("synth_dataset: per_class must be >= 1");
    if (noise_std < 0) throw std::invalid_argument("synth_dataset: noise_std must be >= 0");

    Rng rng(seed);
    std::vector<Tensor> bases;
    bases.reserve(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        Tensor base({shape.channels, shape.height, shape.width});
        for (auto& v : base.data) v = static_cast<float>(rng.uniform());
        bases.push_back(std::move(base));
    }

    Dataset ds;
    ds.num_classes = num_classes;
    ds.samples.reserve(static_cast<std::size_t>(num_classes) * per_class);
    int id = 0;
    for (int c = 0; c < num_classes; ++c) {
        for (int k = 0; k < per_class; ++k) {
            LabeledSample s;
            s.id = id++;
            s.image = bases[c];
            for (auto& v : s.image.data) {
                double x = v + noise_std * rng.gaussian();
                v = static_cast<float>(std::min(1.0, std::max(0.0, x)));
            }
            s.label = s.original_label = c;
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

namespace {

const char* kManifestHeader =
    "id,original_label,current_label,is_poisoned,accepted,predicted_class,confidence";

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::vector<ManifestRecord> make_manifest(const Dataset& ds) {
    std::vector<ManifestRecord> rows;
    rows.reserve(ds.size());
    for (const auto& s : ds.samples) {
        ManifestRecord r;
        r.id = s.id;
        r.original_label = s.original_label;
        r.current_label = s.label;
        r.is_poisoned = s.is_poisoned;
        rows.push_back(r);
    }
    return rows;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& rows) {
    std::vector<char> seen(rows.size(), 0);
    for (const auto& r : rows) {
        if (r.id < 0 || static_cast<std::size_t>(r.id) >= rows.size() || seen[r.id])
            throw std::runtime_error("manifest: ids are not dense/unique");
        seen[r.id] = 1;
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("manifest: cannot open for write: " + path);
    os << kManifestHeader << "\n";
    char buf[64];
    for (const auto& r : rows) {
        os << r.id << ',' << r.original_label << ',' << r.current_label << ','
           << (r.is_poisoned ? 1 : 0) << ',';
        if (r.accepted) os << (*r.accepted ? 1 : 0);
        os << ',';
        if (r.predicted_class) os << *r.predicted_class;
        os << ',';
        if (r.confidence) {
            std::snprintf(buf, sizeof(buf), "%.9g", *r.confidence);
            os << buf;
        }
        os << '\n';
    }
    if (!os) throw std::runtime_error("manifest: write failed: " + path);
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("manifest: cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("manifest: empty file: " + path);
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line != kManifestHeader)
        throw std::runtime_error("manifest: header does not match schema in " + path);

    std::vector<ManifestRecord> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 7) throw std::runtime_error("manifest: malformed row in " + path);
        ManifestRecord r;
        r.id = std::stoi(f[0]);
        r.original_label = std::stoi(f[1]);
        r.current_label = std::stoi(f[2]);
        r.is_poisoned = std::stoi(f[3]) != 0;
        if (!f[4].empty()) r.accepted = std::stoi(f[4]) != 0;
        if (!f[5].empty()) r.predicted_class = std::stoi(f[5]);
        if (!f[6].empty()) r.confidence = std::stod(f[6]);
        rows.push_back(r);
    }
    std::vector<char> seen(rows.size(), 0);
    for (const auto& r : rows) {
        if (r.id < 0 || static_cast<std::size_t>(r.id) >= rows.size() || seen[r.id])
            throw std::runtime_error("manifest: duplicate or non-dense id in " + path);
        seen[r.id] = 1;
    }
    return rows;
}

void save_dataset_dir(const std::string& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    ImageShape sh = ds.image_shape();
    Tensor images({static_cast<std::uint32_t>(ds.size()), sh.channels, sh.height, sh.width});
    std::size_t stride = sh.numel();
    for (const auto& s : ds.samples)
        std::copy(s.image.data.begin(), s.image.data.end(),
                  images.data.begin() + static_cast<std::ptrdiff_t>(s.id * stride));
    save_bdtn(dir + "/images.bdtn", images);
    write_manifest(dir + "/manifest.csv", make_manifest(ds));
    std::ofstream meta(dir + "/meta.txt", std::ios::trunc);
    meta << "num_classes=" << ds.num_classes << "\n";
}

Dataset load_dataset_dir(const std::string& dir) {
    Tensor images = load_bdtn(dir + "/images.bdtn");
    if (images.ndim() != 4) throw std::runtime_error("dataset dir: images.bdtn must be 4-d");
    auto rows = read_manifest(dir + "/manifest.csv");
    if (rows.size() != images.dims[0])
        throw std::runtime_error("dataset dir: manifest/images row count mismatch");
    Dataset ds;
    std::size_t stride =
        static_cast<std::size_t>(images.dims[1]) * images.dims[2] * images.dims[3];
    ds.samples.resize(rows.size());
    int max_label = 0;
    for (const auto& r : rows) {
        LabeledSample& s = ds.samples[r.id];
        s.id = r.id;
        s.label = r.current_label;
        s.original_label = r.original_label;
        s.is_poisoned = r.is_poisoned;
        s.image = Tensor({images.dims[1], images.dims[2], images.dims[3]});
        auto begin = images.data.begin() + static_cast<std::ptrdiff_t>(r.id * stride);
        std::copy(begin, begin + static_cast<std::ptrdiff_t>(stride), s.image.data.begin());
        max_label = std::max({max_label, s.label, s.original_label});
    }
    ds.num_classes = max_label + 1;
    std::ifstream meta(dir + "/meta.txt");
    std::string line;
    while (std::getline(meta, line)) {
        if (line.rfind("num_classes=", 0) == 0)
            ds.num_classes = std::max(ds.num_classes, std::stoi(line.substr(12)));
    }
    ds.validate();
    return ds;
}

}  // namespace bdclean::data
