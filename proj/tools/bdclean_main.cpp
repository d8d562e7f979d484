#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "bdclean/attacks.hpp"
#include "bdclean/margin.hpp"
#include "bdclean/pipeline.hpp"

using namespace bdclean;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
    auto* c = cmd->add_option("--config", opts.config_path, "pipeline config file");
    if (config_required) c->required();
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&opts](std::uint64_t v) { opts.seed = v; }, "override run.seed");
    cmd->add_option_function<std::string>(
        "--out", [&opts](const std::string& v) { opts.out = v; }, "override run.out");
}

pipeline::PipelineConfig load(const CommonOpts& opts) {
    return pipeline::load_pipeline_config(opts.config_path, opts.seed, opts.out);
}

void print_metrics(const eval::Metrics& m) {
    std::printf("acc=%.4f", m.acc);
    if (m.asr_valid) std::printf(" asr=%.4f", m.asr);
    std::printf(" n_clean_test=%zu n_triggered_test=%zu\n", m.n_clean_test,
                m.n_triggered_test);
}

int run_adaptive(const CommonOpts& opts, int steps, double step_size) {
    pipeline::PipelineConfig cfg = load(opts);
    std::string dir = pipeline::run_dir(cfg);
    std::filesystem::create_directories(dir);

    // the attacker trains a surrogate of the defender's encoder on the clean set
    pipeline::Config raw = cfg.raw;
    auto [train, test] = [&]() {
        // reuse the pipeline source loader through a poison-free spec
        pipeline::Config c2 = raw;
        c2.set("attack.poison_count", "0");
        pipeline::PipelineConfig tmp = pipeline::pipeline_config_from(c2);
        tmp.out_dir = dir + "/surrogate_stage";
        pipeline::run_stage(tmp, "poison");
        std::string sdir = pipeline::run_dir(tmp);
        return std::make_pair(data::load_dataset_dir(sdir + "/train_poisoned"),
                              data::load_dataset_dir(sdir + "/test_clean"));
    }();
    (void)test;

    std::vector<const data::LabeledSample*> by_id(train.size());
    for (const auto& s : train.samples) by_id[s.id] = &s;
    std::vector<Tensor> images;
    for (const auto* s : by_id) images.push_back(s->image);

    contrastive::TrainConfig tc = cfg.encoder_cfg;
    tc.seed = cfg.seed ^ 0xada9717eull;
    nn::EncoderParams surrogate =
        contrastive::train_encoder(images, cfg.encoder_arch, tc, nullptr);
    nn::save_encoder(dir + "/surrogate_encoder", surrogate);

    attacks::AdaptiveResult res = attacks::optimize_adaptive_patch(
        surrogate, train, cfg.attack.target_class, cfg.attack.pattern.patch_h,
        cfg.attack.pattern.patch_w, attacks::Placement::fixed_top_left, steps, step_size,
        cfg.seed);
    save_bdtn(dir + "/adaptive_patch.bdtn", res.patch);
    {
        std::ofstream os(dir + "/adaptive_objective.csv", std::ios::trunc);
        os << "step,objective\n";
        for (std::size_t i = 0; i < res.objective_history.size(); ++i)
            os << i << "," << res.objective_history[i] << "\n";
    }
    std::printf("adaptive objective: %.6f -> %.6f\npatch: %s/adaptive_patch.bdtn\n",
                res.initial_objective, res.final_objective, dir.c_str());
    std::printf("poison with: attack.kind=patch attack.placement=fixed "
                "attack.pattern_file=%s/adaptive_patch.bdtn\n",
                dir.c_str());
    return 0;
}

int run_margin_demo(int per_class, double tau, double spread, std::uint64_t seed,
                    const std::string& csv_path) {
    Rng rng(seed);
    int num_classes = 3, dim = 3;
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    std::vector<std::vector<double>> centers = {{4, 0, 1}, {-4, 0, 1}, {0, 4, 1}};
    for (int c = 0; c < num_classes; ++c)
        for (int k = 0; k < per_class; ++k) {
            std::vector<double> x = centers[c];
            x[0] += spread * rng.gaussian();
            x[1] += spread * rng.gaussian();
            xs.push_back(x);
            ys.push_back(c);
        }

    int s = 0, t = 2;
    std::vector<double> dx = {0, 9, 0};
    std::vector<std::size_t> source_ids;
    std::vector<std::vector<double>> poisoned = xs;
    std::vector<int> poisoned_labels = ys;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (ys[i] != s) continue;
        source_ids.push_back(i);
        std::vector<double> a = xs[i];
        for (std::size_t j = 0; j < dx.size(); ++j) a[j] += dx[j];
        poisoned.push_back(a);
        poisoned_labels.push_back(t);
    }

    margin::LinearModel model =
        margin::train_margin_classifier(poisoned, poisoned_labels, num_classes, tau, 50000);

    std::ofstream csv;
    if (!csv_path.empty()) {
        csv.open(csv_path, std::ios::trunc);
        csv << "sample,attack_margin,clean_margin,affinity_gap,premises_hold\n";
    }
    double min_gap = 1e300;
    int premise_pairs = 0;
    bool all_hold = true;
    for (std::size_t i : source_ids) {
        margin::MarginReport rep = margin::verify_affinity(model, xs[i], dx, s, t, tau);
        if (rep.premises_hold) {
            ++premise_pairs;
            min_gap = std::min(min_gap, rep.affinity_gap);
        }
        all_hold = all_hold && rep.inequality_holds;
        if (csv.is_open())
            csv << i << "," << rep.attack_margin << "," << rep.clean_margin << ","
                << rep.affinity_gap << "," << (rep.premises_hold ? 1 : 0) << "\n";
    }
    std::printf("tau=%.4f\npremise_pairs=%d\nmin_affinity_gap=%.6f\ntwo_tau=%.6f\n"
                "inequality_holds=%d\n",
                tau, premise_pairs, premise_pairs ? min_gap : 0.0, 2 * tau,
                all_hold ? 1 : 0);
    return all_hold ? 0 : 1;
}

int run_ablate(const CommonOpts& opts, const std::string& variant_arg) {
    pipeline::PipelineConfig cfg = load(opts);
    std::string dir = pipeline::run_dir(cfg);

    // materialize the poisoned/clean/triggered splits through the poison stage
    pipeline::run_stage(cfg, "poison");
    data::Dataset train = data::load_dataset_dir(dir + "/train_poisoned");
    data::Dataset test = data::load_dataset_dir(dir + "/test_clean");
    data::Dataset triggered;
    if (std::filesystem::exists(dir + "/test_triggered/manifest.csv"))
        triggered = data::load_dataset_dir(dir + "/test_triggered");

    eval::AblationConfig acfg;
    acfg.encoder_arch = cfg.encoder_arch;
    acfg.encoder_cfg = cfg.encoder_cfg;
    acfg.encoder_cfg.seed = cfg.seed ^ 0xab1a7e00ull;
    acfg.classifier_arch = cfg.classifier_arch;
    acfg.classifier_cfg = cfg.classifier_cfg;
    acfg.classifier_cfg.seed = cfg.seed ^ 0xab1a7e01ull;
    acfg.filter = cfg.filter;

    std::vector<eval::AblationVariant> variants;
    if (variant_arg == "all")
        variants = {eval::AblationVariant::none, eval::AblationVariant::filter_only,
                    eval::AblationVariant::relabel_only, eval::AblationVariant::full};
    else
        variants = {eval::parse_variant(variant_arg)};

    std::printf("%-14s %8s %8s %10s %12s %10s\n", "variant", "asr", "acc", "clean%",
                "backdoor%", "relabeled");
    for (auto v : variants) {
        eval::AblationRow row =
            eval::ablation_run(train, test, triggered, cfg.attack.target_class, v, acfg);
        std::printf("%-14s %8.4f %8.4f %10.2f %12.2f %10zu\n",
                    eval::variant_name(v).c_str(), row.metrics.asr_valid ? row.metrics.asr : -1,
                    row.metrics.acc, row.retention.clean_pct,
                    row.retention.has_backdoor ? row.retention.backdoor_pct : -1.0,
                    row.relabeled);
        char run_id[32];
        std::snprintf(run_id, sizeof(run_id), "%016llx",
                      static_cast<unsigned long long>(cfg.raw.hash()));
        eval::append_results_csv(cfg.out_dir + "/results.csv", run_id,
                                 cfg.raw.get("attack.kind", "additive"), eval::variant_name(v),
                                 row.metrics, row.retention, row.relabeled, cfg.filter.lambda,
                                 cfg.filter.k, cfg.filter.tau_energy);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"training-set poisoning and cleansing toolkit"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string stage;
    std::string variant = "all";
    int adaptive_steps = 40;
    double adaptive_step_size = 0.5;

    int per_class = 40;
    double tau = 1.0, spread = 0.3;
    std::uint64_t demo_seed = 1;
    std::string demo_csv;

    auto* p_pipeline = app.add_subcommand("pipeline", "run the full cleansing pipeline");
    add_common(p_pipeline, opts);
    p_pipeline->add_option("--stage", stage,
                           "run a single stage from persisted intermediates");

    for (const auto& name : pipeline::kStageNames) {
        auto* cmd = app.add_subcommand(name, "run the '" + name + "' stage");
        add_common(cmd, opts);
    }

    auto* p_adaptive =
        app.add_subcommand("adaptive", "optimize an adaptive patch against a surrogate");
    add_common(p_adaptive, opts);
    p_adaptive->add_option("--steps", adaptive_steps, "gradient steps");
    p_adaptive->add_option("--step-size", adaptive_step_size, "initial step size");

    auto* p_margin = app.add_subcommand("margin-demo",
                                        "linear-model affinity inequality demonstration");
    p_margin->add_option("--per-class", per_class, "samples per class");
    p_margin->add_option("--tau", tau, "target training margin");
    p_margin->add_option("--spread", spread, "class blob spread");
    p_margin->add_option("--seed", demo_seed, "generator seed");
    p_margin->add_option("--csv", demo_csv, "optional per-pair gap csv");

    auto* p_ablate = app.add_subcommand("ablate", "component ablation harness");
    add_common(p_ablate, opts);
    p_ablate->add_option("--variant", variant,
                         "none | filter_only | relabel_only | full | all");

    CLI11_PARSE(app, argc, argv);

    try {
        if (p_margin->parsed())
            return run_margin_demo(per_class, tau, spread, demo_seed, demo_csv);
        if (p_adaptive->parsed()) return run_adaptive(opts, adaptive_steps, adaptive_step_size);
        if (p_ablate->parsed()) return run_ablate(opts, variant);

        pipeline::PipelineConfig cfg = load(opts);
        if (p_pipeline->parsed()) {
            if (!stage.empty()) {
                pipeline::run_stage(cfg, stage);
                std::printf("stage %s done in %s\n", stage.c_str(),
                            pipeline::run_dir(cfg).c_str());
            } else {
                eval::Metrics m = pipeline::run_pipeline(cfg);
                print_metrics(m);
                std::printf("artifacts: %s\n", pipeline::run_dir(cfg).c_str());
            }
            return 0;
        }
        for (const auto& name : pipeline::kStageNames) {
            if (app.get_subcommand(name)->parsed()) {
                pipeline::run_stage(cfg, name);
                std::printf("stage %s done in %s\n", name.c_str(),
                            pipeline::run_dir(cfg).c_str());
                if (name == "evaluate")
                    print_metrics(pipeline::read_metrics(pipeline::run_dir(cfg)));
                return 0;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
