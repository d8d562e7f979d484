#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bdclean/attacks.hpp"
#include "bdclean/cleanse.hpp"
#include "bdclean/contrastive.hpp"
#include "bdclean/dataset.hpp"
#include "bdclean/evaluate.hpp"
#include "bdclean/margin.hpp"
#include "bdclean/pipeline.hpp"

namespace py = pybind11;
using namespace bdclean;

namespace {

Tensor tensor_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> arr) {
    Tensor t;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i)
        t.dims.push_back(static_cast<std::uint32_t>(arr.shape(i)));
    t.data.assign(arr.data(), arr.data() + arr.size());
    return t;
}

py::array_t<float> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.dims.begin(), t.dims.end());
    py::array_t<float> arr(shape);
    std::copy(t.data.begin(), t.data.end(), arr.mutable_data());
    return arr;
}

py::array_t<double> array_from_mat(const nn::Mat& m) {
    py::array_t<double> arr({static_cast<py::ssize_t>(m.rows),
                             static_cast<py::ssize_t>(m.cols)});
    std::copy(m.a.begin(), m.a.end(), arr.mutable_data());
    return arr;
}

nn::AugmentConfig augment_from_dict(const py::dict& d) {
    nn::AugmentConfig a;
    if (d.contains("crop_lo")) a.crop_scale_lo = d["crop_lo"].cast<double>();
    if (d.contains("crop_hi")) a.crop_scale_hi = d["crop_hi"].cast<double>();
    if (d.contains("flip_prob")) a.flip_prob = d["flip_prob"].cast<double>();
    if (d.contains("noise_std")) a.noise_std = d["noise_std"].cast<double>();
    return a;
}

contrastive::TrainConfig train_config_from_dict(const py::dict& d) {
    contrastive::TrainConfig t;
    if (d.contains("batch_size")) t.batch_size = d["batch_size"].cast<int>();
    if (d.contains("temperature")) t.temperature = d["temperature"].cast<double>();
    if (d.contains("epochs")) t.epochs = d["epochs"].cast<int>();
    if (d.contains("lr")) t.lr = d["lr"].cast<double>();
    if (d.contains("momentum")) t.momentum = d["momentum"].cast<double>();
    if (d.contains("seed")) t.seed = d["seed"].cast<std::uint64_t>();
    if (d.contains("head_epochs")) t.head_epochs = d["head_epochs"].cast<int>();
    if (d.contains("head_lr")) t.head_lr = d["head_lr"].cast<double>();
    if (d.contains("augment")) t.augment = augment_from_dict(d["augment"].cast<py::dict>());
    return t;
}

nn::EncoderArch arch_from_dict(const py::dict& d) {
    nn::EncoderArch a;
    if (d.contains("hidden")) a.hidden = d["hidden"].cast<std::vector<std::uint32_t>>();
    if (d.contains("output_dim")) a.output_dim = d["output_dim"].cast<std::uint32_t>();
    if (d.contains("normalize")) a.normalize = d["normalize"].cast<bool>();
    if (d.contains("conv")) {
        // list of (out_channels, kernel, stride) triples
        for (auto item : d["conv"].cast<py::list>()) {
            auto t = item.cast<std::vector<std::uint32_t>>();
            nn::ConvSpec cs;
            cs.out_channels = t.at(0);
            cs.kernel = t.at(1);
            cs.stride = t.size() > 2 ? t.at(2) : 1;
            a.conv.push_back(cs);
        }
    }
    return a;
}

attacks::AttackSpec spec_from_kwargs(const data::Dataset& ds, const std::string& kind,
                                     int target_class, int poison_count, double delta,
                                     py::object patch, double alpha,
                                     const std::string& placement, std::uint64_t seed) {
    attacks::AttackSpec spec;
    spec.target_class = target_class;
    spec.poison_count = poison_count;
    spec.seed = seed;
    auto sh = ds.image_shape();
    if (kind == "additive") {
        spec.kind = attacks::PatternKind::additive;
        spec.pattern.perturbation =
            attacks::make_chessboard(sh.channels, sh.height, sh.width, delta);
    } else {
        spec.kind = kind == "blend" ? attacks::PatternKind::blend
                                    : attacks::PatternKind::patch;
        if (patch.is_none()) {
            Rng rng(seed ^ 0x9a7c4ull);
            spec.pattern.patch = attacks::random_patch(sh.channels, 3, 3, rng);
        } else {
            spec.pattern.patch = tensor_from_array(
                patch.cast<py::array_t<float, py::array::c_style | py::array::forcecast>>());
        }
        spec.pattern.patch_h = spec.pattern.patch.dims[1];
        spec.pattern.patch_w = spec.pattern.patch.dims[2];
        spec.pattern.alpha = alpha;
        spec.pattern.placement = placement == "fixed" ? attacks::Placement::fixed_top_left
                                                      : attacks::Placement::random_per_sample;
    }
    return spec;
}

}  // namespace

PYBIND11_MODULE(_bdclean, m) {
    m.doc() = "training-set poisoning and cleansing toolkit";

    py::class_<data::LabeledSample>(m, "LabeledSample")
        .def_readonly("id", &data::LabeledSample::id)
        .def_readwrite("label", &data::LabeledSample::label)
        .def_readonly("original_label", &data::LabeledSample::original_label)
        .def_readonly("is_poisoned", &data::LabeledSample::is_poisoned)
        .def_property_readonly(
            "image", [](const data::LabeledSample& s) { return array_from_tensor(s.image); });

    py::class_<data::Dataset>(m, "Dataset")
        .def_readonly("num_classes", &data::Dataset::num_classes)
        .def("__len__", [](const data::Dataset& d) { return d.size(); })
        .def("labels", &data::Dataset::labels)
        .def("sample", [](const data::Dataset& d, std::size_t i) { return d.samples.at(i); },
             py::arg("index"))
        .def("poisoned_ids", [](const data::Dataset& d) {
            std::vector<int> ids;
            for (const auto& s : d.samples)
                if (s.is_poisoned) ids.push_back(s.id);
            return ids;
        });

    m.def("load_idx", &data::load_idx, py::arg("images_path"), py::arg("labels_path"));
    m.def("export_idx", &data::export_idx, py::arg("dataset"), py::arg("images_path"),
          py::arg("labels_path"));
    m.def(
        "synth_dataset",
        [](int num_classes, int per_class, std::uint32_t channels, std::uint32_t height,
           std::uint32_t width, double noise_std, std::uint64_t seed) {
            return data::synth_dataset(num_classes, per_class, {channels, height, width},
                                       noise_std, seed);
        },
        py::arg("num_classes"), py::arg("per_class"), py::arg("channels") = 1,
        py::arg("height") = 8, py::arg("width") = 8, py::arg("noise_std") = 0.05,
        py::arg("seed") = 1);
    m.def("save_dataset_dir", &data::save_dataset_dir);
    m.def("load_dataset_dir", &data::load_dataset_dir);

    m.def("make_chessboard", [](std::uint32_t c, std::uint32_t h, std::uint32_t w,
                                double delta) {
        return array_from_tensor(attacks::make_chessboard(c, h, w, delta));
    });

    py::class_<attacks::AttackSpec>(m, "AttackSpec");
    m.def("attack_spec", &spec_from_kwargs, py::arg("dataset"), py::arg("kind") = "additive",
          py::arg("target_class") = 0, py::arg("poison_count") = 0,
          py::arg("delta") = 3.0 / 255.0, py::arg("patch") = py::none(),
          py::arg("alpha") = 0.4, py::arg("placement") = "random", py::arg("seed") = 1);
    m.def(
        "poison_dataset",
        [](const data::Dataset& ds, const attacks::AttackSpec& spec) {
            auto out = attacks::poison_dataset(ds, spec);
            return py::make_tuple(out.poisoned, out.poisoned_ids);
        },
        py::arg("dataset"), py::arg("spec"));
    m.def("trigger_testset", &attacks::trigger_testset, py::arg("test"), py::arg("spec"));

    py::class_<nn::EncoderParams>(m, "EncoderParams")
        .def_property_readonly("output_dim", &nn::EncoderParams::output_dim);
    m.def("save_encoder", &nn::save_encoder);
    m.def("load_encoder", &nn::load_encoder);

    m.def(
        "train_encoder",
        [](const data::Dataset& ds, const py::dict& arch, const py::dict& cfg) {
            std::vector<const data::LabeledSample*> by_id(ds.size());
            for (const auto& s : ds.samples) by_id[s.id] = &s;
            std::vector<Tensor> images;
            for (const auto* s : by_id) images.push_back(s->image);
            contrastive::TrainHistory hist;
            nn::EncoderParams enc = contrastive::train_encoder(
                images, arch_from_dict(arch), train_config_from_dict(cfg), &hist);
            return py::make_tuple(enc, hist.epoch_loss);
        },
        py::arg("dataset"), py::arg("arch"), py::arg("config"),
        "self-supervised contrastive training; labels are never read");

    m.def(
        "embed_dataset",
        [](const nn::EncoderParams& enc, const data::Dataset& ds) {
            return array_from_tensor(contrastive::embed_dataset(enc, ds));
        },
        py::arg("encoder"), py::arg("dataset"));

    m.def(
        "ntxent_loss",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> z, double tau) {
            if (z.ndim() != 2) throw std::invalid_argument("ntxent: Z must be 2-d");
            nn::Mat Z(static_cast<std::size_t>(z.shape(0)),
                      static_cast<std::size_t>(z.shape(1)));
            std::copy(z.data(), z.data() + z.size(), Z.a.begin());
            auto res = contrastive::ntxent_loss(Z, tau);
            return py::make_tuple(res.loss, array_from_mat(res.dZ));
        },
        py::arg("Z"), py::arg("temperature") = 0.5);

    py::class_<contrastive::Classifier>(m, "Classifier")
        .def("predict",
             [](const contrastive::Classifier& clf,
                py::array_t<float, py::array::c_style | py::array::forcecast> image) {
                 Tensor t = tensor_from_array(image);
                 return clf.predict(t);
             })
        .def("predict_dataset", [](const contrastive::Classifier& clf,
                                   const data::Dataset& ds) {
            std::vector<int> preds;
            for (const auto& s : ds.samples) preds.push_back(clf.predict(s.image));
            return preds;
        });
    m.def(
        "train_classifier",
        [](const data::Dataset& ds, const py::dict& arch, const py::dict& cfg) {
            return contrastive::train_classifier(ds, arch_from_dict(arch),
                                                 train_config_from_dict(cfg));
        },
        py::arg("dataset"), py::arg("arch"), py::arg("config"));

    py::class_<cleanse::FilterDecision>(m, "FilterDecision")
        .def_readonly("id", &cleanse::FilterDecision::id)
        .def_readonly("predicted_class", &cleanse::FilterDecision::predicted_class)
        .def_readonly("accepted", &cleanse::FilterDecision::accepted)
        .def_readonly("confidence", &cleanse::FilterDecision::confidence);

    m.def("auto_k", &cleanse::auto_k, py::arg("n"), py::arg("num_classes"));
    m.def(
        "knn_filter",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> emb,
           const std::vector<int>& labels, int num_classes, int k) {
            return cleanse::knn_filter(tensor_from_array(emb), labels, num_classes, k);
        },
        py::arg("embeddings"), py::arg("labels"), py::arg("num_classes"), py::arg("k"));
    m.def(
        "energy_scores",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> emb,
           const std::vector<int>& labels, int num_classes, double tau) {
            return array_from_mat(
                cleanse::energy_scores(tensor_from_array(emb), labels, num_classes, tau));
        },
        py::arg("embeddings"), py::arg("labels"), py::arg("num_classes"),
        py::arg("temperature") = 0.5);
    m.def(
        "energy_filter",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> emb,
           const std::vector<int>& labels, int num_classes, double tau) {
            return cleanse::energy_filter(tensor_from_array(emb), labels, num_classes, tau);
        },
        py::arg("embeddings"), py::arg("labels"), py::arg("num_classes"),
        py::arg("temperature") = 0.5);
    m.def("combined_filter", &cleanse::combined_filter, py::arg("knn"), py::arg("energy"));
    m.def("percentile_threshold", &cleanse::percentile_threshold, py::arg("confidences"),
          py::arg("lam") = 80.0);

    py::class_<cleanse::CleanseReport>(m, "CleanseReport")
        .def_readonly("clean_retained_pct", &cleanse::CleanseReport::clean_retained_pct)
        .def_readonly("backdoor_retained_pct", &cleanse::CleanseReport::backdoor_retained_pct)
        .def_readonly("relabeled_count", &cleanse::CleanseReport::relabeled_count)
        .def_readonly("relabel_correct_count",
                      &cleanse::CleanseReport::relabel_correct_count)
        .def_readonly("accepted_ids", &cleanse::CleanseReport::accepted_ids)
        .def_readonly("relabeled_ids", &cleanse::CleanseReport::relabeled_ids)
        .def_readonly("threshold", &cleanse::CleanseReport::threshold);

    m.def(
        "relabel_and_assemble",
        [](const data::Dataset& ds, const std::vector<cleanse::FilterDecision>& dec,
           double lam) {
            auto rr = cleanse::relabel_and_assemble(ds, dec, lam);
            eval::finish_report(rr.report, ds, dec);
            return py::make_tuple(rr.cleansed, rr.report);
        },
        py::arg("dataset"), py::arg("decisions"), py::arg("lam") = 80.0);

    m.def(
        "retention_stats",
        [](const std::vector<cleanse::FilterDecision>& dec, const data::Dataset& ds) {
            auto st = eval::retention_stats(dec, ds);
            return py::make_tuple(st.clean_pct, st.has_backdoor ? st.backdoor_pct : -1.0);
        },
        py::arg("decisions"), py::arg("dataset"));

    m.def("accuracy", [](const contrastive::Classifier& clf, const data::Dataset& ds) {
        return eval::accuracy(clf, ds);
    });
    m.def("attack_success_rate",
          [](const contrastive::Classifier& clf, const data::Dataset& ds, int t) {
              return eval::attack_success_rate(clf, ds, t);
          });

    m.def(
        "run_pipeline",
        [](const std::string& config_path, py::object seed, py::object out) {
            std::optional<std::uint64_t> s;
            std::optional<std::string> o;
            if (!seed.is_none()) s = seed.cast<std::uint64_t>();
            if (!out.is_none()) o = out.cast<std::string>();
            pipeline::PipelineConfig cfg = pipeline::load_pipeline_config(config_path, s, o);
            eval::Metrics m2 = pipeline::run_pipeline(cfg);
            py::dict d;
            d["acc"] = m2.acc;
            if (m2.asr_valid) d["asr"] = m2.asr;
            d["run_dir"] = pipeline::run_dir(cfg);
            return d;
        },
        py::arg("config_path"), py::arg("seed") = py::none(), py::arg("out") = py::none());
}
