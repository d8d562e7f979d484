#include "bdclean/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bdclean::pipeline {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_string(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config: bad section at line " + std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: expected key=value at line " +
                                     std::to_string(lineno));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
        cfg.kv_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_string(ss.str());
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::get(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

std::string Config::require(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::runtime_error("config: missing required key " + key);
    return it->second;
}

double Config::get_num(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stod(it->second);
}

int Config::get_int(const std::string& key, int fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stoi(it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw std::runtime_error("config: bad boolean for " + key + ": " + v);
}

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

std::string Config::canonical() const {
    std::string out;
    for (const auto& [k, v] : kv_) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

std::uint64_t Config::hash() const {
    std::string c = canonical();
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char ch : c) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

nn::AugmentConfig augment_from(const Config& c, const std::string& sec) {
    nn::AugmentConfig a;
    a.crop_scale_lo = c.get_num(sec + ".crop_lo", 1.0);
    a.crop_scale_hi = c.get_num(sec + ".crop_hi", 1.0);
    a.flip_prob = c.get_num(sec + ".flip_prob", 0.0);
    a.noise_std = c.get_num(sec + ".noise_std", 0.0);
    return a;
}

nn::EncoderArch arch_from(const Config& c, const std::string& sec) {
    nn::EncoderArch arch;
    std::string hidden = c.get(sec + ".hidden", "256,128");
    std::stringstream ss(hidden);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) arch.hidden.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
    arch.output_dim = static_cast<std::uint32_t>(c.get_int(sec + ".output_dim", 64));
    arch.normalize = c.get_bool(sec + ".normalize", true);
    std::string conv = c.get(sec + ".conv", "");
    if (!conv.empty()) {
        // "8x3s1,16x3s2" -> channels x kernel, stride
        std::stringstream cs(conv);
        while (std::getline(cs, tok, ',')) {
            nn::ConvSpec spec;
            if (std::sscanf(tok.c_str(), "%ux%us%u", &spec.out_channels, &spec.kernel,
                            &spec.stride) < 2)
                throw std::runtime_error("config: bad conv spec token '" + tok + "'");
            arch.conv.push_back(spec);
        }
    }
    return arch;
}

contrastive::TrainConfig train_from(const Config& c, const std::string& sec,
                                    std::uint64_t seed) {
    contrastive::TrainConfig t;
    t.batch_size = c.get_int(sec + ".batch_size", 64);
    t.temperature = c.get_num(sec + ".temperature", 0.5);
    t.epochs = c.get_int(sec + ".epochs", 50);
    t.lr = c.get_num(sec + ".lr", 0.05);
    t.momentum = c.get_num(sec + ".momentum", 0.9);
    t.head_epochs = c.get_int(sec + ".head_epochs", 300);
    t.head_lr = c.get_num(sec + ".head_lr", 0.5);
    t.head_momentum = c.get_num(sec + ".head_momentum", 0.9);
    t.augment = augment_from(c, sec);
    t.seed = seed;
    return t;
}

}  // namespace

PipelineConfig pipeline_config_from(const Config& cfg) {
    PipelineConfig p;
    p.raw = cfg;
    p.seed = static_cast<std::uint64_t>(cfg.get_num("run.seed", 1));
    p.out_dir = cfg.get("run.out", "runs");

    p.source.kind = cfg.get("data.source", "synth");
    p.source.idx_images = cfg.get("data.idx_images", "");
    p.source.idx_labels = cfg.get("data.idx_labels", "");
    p.source.test_idx_images = cfg.get("data.test_idx_images", "");
    p.source.test_idx_labels = cfg.get("data.test_idx_labels", "");
    p.source.train_dir = cfg.get("data.train_dir", "");
    p.source.test_dir = cfg.get("data.test_dir", "");
    p.source.synth_classes = cfg.get_int("data.synth_classes", 4);
    p.source.synth_per_class = cfg.get_int("data.synth_per_class", 50);
    p.source.synth_c = static_cast<std::uint32_t>(cfg.get_int("data.synth_channels", 1));
    p.source.synth_h = static_cast<std::uint32_t>(cfg.get_int("data.synth_height", 8));
    p.source.synth_w = static_cast<std::uint32_t>(cfg.get_int("data.synth_width", 8));
    p.source.synth_noise = cfg.get_num("data.synth_noise_std", 0.05);
    p.source.train_per_class = cfg.get_int("data.train_per_class", 0);

    p.attack_enabled = cfg.get_bool("attack.enabled", true);
    std::string kind = cfg.get("attack.kind", "additive");
    if (kind == "additive") p.attack.kind = attacks::PatternKind::additive;
    else if (kind == "patch") p.attack.kind = attacks::PatternKind::patch;
    else if (kind == "blend") p.attack.kind = attacks::PatternKind::blend;
    else throw std::runtime_error("config: unknown attack.kind " + kind);
    p.attack.target_class = cfg.get_int("attack.target_class", 0);
    p.attack.poison_count = cfg.get_int("attack.poison_count", 0);
    p.additive_delta = cfg.get_num("attack.delta", 3.0 / 255.0);
    p.attack.pattern.patch_h = static_cast<std::uint32_t>(cfg.get_int("attack.patch_h", 3));
    p.attack.pattern.patch_w = static_cast<std::uint32_t>(cfg.get_int("attack.patch_w", 3));
    p.attack.pattern.alpha = cfg.get_num("attack.alpha", 0.4);
    std::string placement = cfg.get("attack.placement", "random");
    p.attack.pattern.placement = placement == "fixed"
                                     ? attacks::Placement::fixed_top_left
                                     : attacks::Placement::random_per_sample;
    p.pattern_file = cfg.get("attack.pattern_file", "");

    p.encoder_arch = arch_from(cfg, "encoder");
    p.encoder_cfg = train_from(cfg, "encoder", 0 /* fixed per stage below */);
    p.filter.lambda = cfg.get_num("filter.lambda", 80.0);
    p.filter.k = cfg.get_int("filter.k", 0);
    p.filter.tau_energy = cfg.get_num("filter.tau_energy", 0.5);
    std::string method = cfg.get("filter.method", "knn");
    if (method == "knn") p.filter.method = cleanse::FilterMethod::knn;
    else if (method == "energy") p.filter.method = cleanse::FilterMethod::energy;
    else if (method == "combined") p.filter.method = cleanse::FilterMethod::combined;
    else throw std::runtime_error("config: unknown filter.method " + method);

    p.classifier_arch = arch_from(cfg, "classifier");
    p.classifier_cfg = train_from(cfg, "classifier", 0);
    return p;
}

PipelineConfig load_pipeline_config(const std::string& path,
                                    std::optional<std::uint64_t> seed_override,
                                    std::optional<std::string> out_override) {
    Config cfg = Config::parse_file(path);
    if (seed_override) cfg.set("run.seed", std::to_string(*seed_override));
    if (out_override) cfg.set("run.out", *out_override);
    return pipeline_config_from(cfg);
}

std::string run_dir(const PipelineConfig& cfg) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "run_%016llx",
                  static_cast<unsigned long long>(cfg.raw.hash()));
    return cfg.out_dir + "/" + buf;
}

const std::vector<std::string> kStageNames = {"poison",   "train-encoder", "embed",
                                              "cleanse",  "train-classifier",
                                              "evaluate"};

namespace {

// per-stage deterministic seed streams derived from the config seed
std::uint64_t stage_seed(const PipelineConfig& cfg, std::uint64_t tag) {
    Rng r(cfg.seed);
    return r.fork(tag).next_u64();
}

data::Dataset limit_per_class(const data::Dataset& ds, int per_class) {
    if (per_class <= 0) return ds;
    data::Dataset out;
    out.num_classes = ds.num_classes;
    std::vector<int> count(ds.num_classes, 0);
    int next = 0;
    for (const auto& s : ds.samples) {
        if (count[s.label] >= per_class) continue;
        ++count[s.label];
        data::LabeledSample copy = s;
        copy.id = next++;
        out.samples.push_back(std::move(copy));
    }
    return out;
}

std::pair<data::Dataset, data::Dataset> load_source(const PipelineConfig& cfg) {
    const DataSource& src = cfg.source;
    if (src.kind == "idx") {
        data::Dataset train = data::load_idx(src.idx_images, src.idx_labels);
        data::Dataset test = data::load_idx(src.test_idx_images, src.test_idx_labels);
        return {limit_per_class(train, src.train_per_class), test};
    }
    if (src.kind == "dir") {
        return {data::load_dataset_dir(src.train_dir), data::load_dataset_dir(src.test_dir)};
    }
    if (src.kind == "synth") {
        // one pool per seed so train and test share the class base images
        int test_per_class = std::max(1, src.synth_per_class / 2);
        data::Dataset pool = data::synth_dataset(
            src.synth_classes, src.synth_per_class + test_per_class,
            {src.synth_c, src.synth_h, src.synth_w}, src.synth_noise, cfg.seed);
        data::Dataset train, test;
        train.num_classes = test.num_classes = src.synth_classes;
        std::vector<int> count(src.synth_classes, 0);
        for (const auto& s : pool.samples) {
            data::LabeledSample copy = s;
            if (count[s.label]++ < src.synth_per_class) {
                copy.id = static_cast<int>(train.samples.size());
                train.samples.push_back(std::move(copy));
            } else {
                copy.id = static_cast<int>(test.samples.size());
                test.samples.push_back(std::move(copy));
            }
        }
        return {train, test};
    }
    throw std::runtime_error("config: unknown data.source " + src.kind);
}

attacks::AttackSpec build_attack_spec(const PipelineConfig& cfg, const data::ImageShape& sh) {
    attacks::AttackSpec spec = cfg.attack;
    spec.seed = stage_seed(cfg, 100);
    if (spec.kind == attacks::PatternKind::additive) {
        spec.pattern.perturbation =
            attacks::make_chessboard(sh.channels, sh.height, sh.width, cfg.additive_delta);
    } else if (!cfg.pattern_file.empty()) {
        spec.pattern.patch = load_bdtn(cfg.pattern_file);
        if (spec.pattern.patch.ndim() != 3)
            throw std::runtime_error("pattern file must be a {C,ph,pw} tensor");
        spec.pattern.patch_h = spec.pattern.patch.dims[1];
        spec.pattern.patch_w = spec.pattern.patch.dims[2];
    } else {
        Rng prng(stage_seed(cfg, 101));
        spec.pattern.patch = attacks::random_patch(sh.channels, spec.pattern.patch_h,
                                                   spec.pattern.patch_w, prng);
    }
    return spec;
}

void stage_poison(const PipelineConfig& cfg, const std::string& dir) {
    auto [train, test] = load_source(cfg);
    attacks::AttackSpec spec = build_attack_spec(cfg, train.image_shape());

    if (cfg.attack_enabled && cfg.attack.poison_count > 0) {
        attacks::PoisonOutcome out = attacks::poison_dataset(train, spec);
        data::save_dataset_dir(dir + "/train_poisoned", out.poisoned);
        data::Dataset triggered = attacks::trigger_testset(test, spec);
        data::save_dataset_dir(dir + "/test_triggered", triggered);
        if (spec.kind == attacks::PatternKind::additive)
            save_bdtn(dir + "/pattern.bdtn", spec.pattern.perturbation);
        else
            save_bdtn(dir + "/pattern.bdtn", spec.pattern.patch);
    } else {
        data::save_dataset_dir(dir + "/train_poisoned", train);
    }
    data::save_dataset_dir(dir + "/test_clean", test);

    std::ofstream os(dir + "/poison_summary.txt", std::ios::trunc);
    os << "attack_enabled=" << (cfg.attack_enabled && cfg.attack.poison_count > 0 ? 1 : 0)
       << "\ntarget_class=" << spec.target_class << "\npoison_count=" << spec.poison_count
       << "\n";
}

void stage_train_encoder(const PipelineConfig& cfg, const std::string& dir) {
    data::Dataset train = data::load_dataset_dir(dir + "/train_poisoned");
    // images only: the self-supervised stage never sees labels
    std::vector<const data::LabeledSample*> by_id(train.size());
    for (const auto& s : train.samples) by_id[s.id] = &s;
    std::vector<Tensor> images;
    images.reserve(train.size());
    for (const auto* s : by_id) images.push_back(s->image);

    contrastive::TrainConfig tc = cfg.encoder_cfg;
    tc.seed = stage_seed(cfg, 200);
    contrastive::TrainHistory hist;
    nn::EncoderParams enc = contrastive::train_encoder(images, cfg.encoder_arch, tc, &hist);
    nn::save_encoder(dir + "/encoder", enc);
    contrastive::save_loss_history(dir + "/encoder_loss.csv", hist);
}

void stage_embed(const PipelineConfig& cfg, const std::string& dir) {
    (void)cfg;
    data::Dataset train = data::load_dataset_dir(dir + "/train_poisoned");
    nn::EncoderParams enc = nn::load_encoder(dir + "/encoder");
    Tensor emb = contrastive::embed_dataset(enc, train);
    save_bdtn(dir + "/embeddings.bdtn", emb);
}

void stage_cleanse(const PipelineConfig& cfg, const std::string& dir) {
    data::Dataset train = data::load_dataset_dir(dir + "/train_poisoned");
    Tensor emb = load_bdtn(dir + "/embeddings.bdtn");
    std::vector<int> labels(train.size());
    for (const auto& s : train.samples) labels[s.id] = s.label;

    int k = cfg.filter.k > 0 ? cfg.filter.k : cleanse::auto_k(train.size(), train.num_classes);
    cleanse::RelabelResult rr;
    std::vector<cleanse::FilterDecision> decisions;
    if (cfg.filter.method == cleanse::FilterMethod::combined) {
        auto kd = cleanse::knn_filter(emb, labels, train.num_classes, k);
        auto ed = cleanse::energy_filter(emb, labels, train.num_classes, cfg.filter.tau_energy);
        decisions = cleanse::combined_filter(kd, ed);
        rr = cleanse::relabel_and_assemble_combined(train, kd, ed, cfg.filter.lambda);
    } else {
        decisions = cfg.filter.method == cleanse::FilterMethod::knn
                        ? cleanse::knn_filter(emb, labels, train.num_classes, k)
                        : cleanse::energy_filter(emb, labels, train.num_classes,
                                                 cfg.filter.tau_energy);
        rr = cleanse::relabel_and_assemble(train, decisions, cfg.filter.lambda);
    }
    eval::finish_report(rr.report, train, decisions);
    data::write_manifest(dir + "/cleanse_manifest.csv",
                         cleanse::decisions_manifest(train, decisions));
    cleanse::write_report(dir + "/cleanse_report.txt", rr.report);
    data::save_dataset_dir(dir + "/train_cleansed", rr.cleansed);
}

void stage_train_classifier(const PipelineConfig& cfg, const std::string& dir) {
    data::Dataset cleansed = data::load_dataset_dir(dir + "/train_cleansed");
    contrastive::TrainConfig tc = cfg.classifier_cfg;
    tc.seed = stage_seed(cfg, 300);
    contrastive::Classifier clf =
        contrastive::train_classifier(cleansed, cfg.classifier_arch, tc);
    contrastive::save_classifier(dir + "/classifier", clf);
}

void stage_evaluate(const PipelineConfig& cfg, const std::string& dir) {
    contrastive::Classifier clf = contrastive::load_classifier(dir + "/classifier");
    data::Dataset test = data::load_dataset_dir(dir + "/test_clean");
    eval::Metrics m;
    m.acc = eval::accuracy(clf, test);
    m.n_clean_test = test.size();
    if (std::filesystem::exists(dir + "/test_triggered/manifest.csv")) {
        data::Dataset triggered = data::load_dataset_dir(dir + "/test_triggered");
        if (!triggered.samples.empty()) {
            m.asr = eval::attack_success_rate(clf, triggered, cfg.attack.target_class);
            m.asr_valid = true;
            m.n_triggered_test = triggered.size();
        }
    }
    std::ofstream os(dir + "/metrics.txt", std::ios::trunc);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "acc=%.9g\n", m.acc);
    os << buf;
    if (m.asr_valid) {
        std::snprintf(buf, sizeof(buf), "asr=%.9g\n", m.asr);
        os << buf;
    }
    os << "n_clean_test=" << m.n_clean_test << "\nn_triggered_test=" << m.n_triggered_test
       << "\n";

    eval::RetentionStats ret;  // from the cleanse manifest when present
    std::string method = cfg.raw.get("filter.method", "knn");
    if (std::filesystem::exists(dir + "/cleanse_manifest.csv")) {
        data::Dataset train = data::load_dataset_dir(dir + "/train_poisoned");
        auto rows = data::read_manifest(dir + "/cleanse_manifest.csv");
        std::vector<cleanse::FilterDecision> decisions;
        for (const auto& r : rows) {
            cleanse::FilterDecision d;
            d.id = r.id;
            d.accepted = r.accepted.value_or(false);
            d.predicted_class = r.predicted_class.value_or(-1);
            d.confidence = r.confidence.value_or(0.0);
            decisions.push_back(d);
        }
        ret = eval::retention_stats(decisions, train);
    }
    char run_id[32];
    std::snprintf(run_id, sizeof(run_id), "%016llx",
                  static_cast<unsigned long long>(cfg.raw.hash()));
    eval::append_results_csv(cfg.out_dir + "/results.csv", run_id,
                             cfg.raw.get("attack.kind", "additive"), method, m, ret, 0,
                             cfg.filter.lambda, cfg.filter.k, cfg.filter.tau_energy);
}

}  // namespace

void run_stage(const PipelineConfig& cfg, const std::string& stage) {
    std::string dir = run_dir(cfg);
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir + "/config.txt", std::ios::trunc);
        os << cfg.raw.canonical();
    }
    try {
        if (stage == "poison") stage_poison(cfg, dir);
        else if (stage == "train-encoder") stage_train_encoder(cfg, dir);
        else if (stage == "embed") stage_embed(cfg, dir);
        else if (stage == "cleanse") stage_cleanse(cfg, dir);
        else if (stage == "train-classifier") stage_train_classifier(cfg, dir);
        else if (stage == "evaluate") stage_evaluate(cfg, dir);
        else throw std::runtime_error("unknown stage " + stage);
    } catch (const std::exception& e) {
        throw std::runtime_error("stage '" + stage + "' failed: " + e.what());
    }
}

eval::Metrics run_pipeline(const PipelineConfig& cfg) {
    for (const auto& stage : kStageNames) run_stage(cfg, stage);
    return read_metrics(run_dir(cfg));
}

eval::Metrics read_metrics(const std::string& run_dir_path) {
    std::ifstream is(run_dir_path + "/metrics.txt");
    if (!is) throw std::runtime_error("metrics: cannot open " + run_dir_path + "/metrics.txt");
    eval::Metrics m;
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "acc") m.acc = std::stod(value);
        else if (key == "asr") {
            m.asr = std::stod(value);
            m.asr_valid = true;
        } else if (key == "n_clean_test") m.n_clean_test = std::stoul(value);
        else if (key == "n_triggered_test") m.n_triggered_test = std::stoul(value);
    }
    return m;
}

}  // namespace bdclean::pipeline
