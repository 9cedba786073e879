#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ideodepth/errors.hpp"
#include "ideodepth/pipeline.hpp"

namespace pl = ideodepth::pipeline;

namespace {

enum Exit { Ok = 0, Validation = 1, Runtime = 2, NotConverged = 3 };

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool mock = false;
    std::string log_level = "info";

    // agreement
    std::optional<std::string> focus;
    std::optional<std::string> kappa_categories;
    // split
    std::optional<std::size_t> eval_size;
    // fa
    std::optional<std::string> retention;
    bool no_rotate = false;
    // irt
    std::optional<std::string> strategy;
    std::optional<int> dims, chains, iterations, burn_in, workers;
    // sta
    std::optional<std::string> selection_mode;
    std::optional<double> threshold;
};

void apply(const Overrides& o, pl::PipelineConfig& cfg) {
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.output_dir = *o.out;
    if (o.mock) cfg.adjudicator.mock = true;
    if (o.focus) cfg.focus = *o.focus;
    if (o.kappa_categories) {
        if (*o.kappa_categories == "with-null")
            cfg.kappa_categories = ideodepth::agreement::KappaCategories::WithNull;
        else if (*o.kappa_categories == "binary")
            cfg.kappa_categories = ideodepth::agreement::KappaCategories::Binary;
        else
            throw ideodepth::ConfigError("--kappa-categories must be with-null or binary");
    }
    if (o.eval_size) cfg.eval_size = *o.eval_size;
    if (o.retention) {
        if (*o.retention == "kaiser") {
            cfg.retention = ideodepth::factor::Retention::kaiser();
        } else {
            try {
                cfg.retention = ideodepth::factor::Retention::fixed(std::stoul(*o.retention));
            } catch (const std::logic_error&) {
                throw ideodepth::ConfigError("--retention must be kaiser or a factor count");
            }
        }
    }
    if (o.no_rotate) cfg.rotate = false;
    if (o.strategy) cfg.irt.strategy = ideodepth::irt::parse_strategy(*o.strategy);
    if (o.dims) cfg.irt.dims = *o.dims;
    if (o.chains) cfg.irt.chains = *o.chains;
    if (o.iterations) cfg.irt.iterations = *o.iterations;
    if (o.burn_in) cfg.irt.burn_in = *o.burn_in;
    if (o.workers) cfg.irt.workers = *o.workers;
    if (o.selection_mode) cfg.selection_mode = ideodepth::steer::parse_selection_mode(*o.selection_mode);
    if (o.threshold) cfg.activation_threshold = *o.threshold;
}

void add_common(CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Root seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_flag("--mock-adjudicator", o.mock, "Use the offline mock adjudicator");
    sub->add_option("--log-level", o.log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Political-ideology analytics for language model outputs and activations"};
    app.require_subcommand(1);
    app.set_version_flag("--version", IDEODEPTH_VERSION);

    Overrides o;
    std::string chosen;
    auto add = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub, o);
        sub->callback([&chosen, name] { chosen = name; });
        return sub;
    };

    add("categorize", "Assign statements to topics with the adjudicator");
    add("split", "Stratified evaluation/training split")
        ->add_option("--eval-size", o.eval_size, "Evaluation set size");
    auto* agr = add("agreement", "Consistency, Fleiss kappa, refusal and tendency tables");
    agr->add_option("--focus", o.focus, "Condition prefix used for kappa");
    agr->add_option("--kappa-categories", o.kappa_categories, "with-null or binary");
    auto* fa = add("fa", "Principal axis factoring with varimax rotation");
    fa->add_option("--retention", o.retention, "kaiser or a fixed factor count");
    fa->add_flag("--no-rotate", o.no_rotate, "Skip the varimax rotation");
    auto* irt = add("irt", "Bayesian multidimensional ideal points");
    irt->add_option("--strategy", o.strategy, "priors-only, two-point or three-point");
    irt->add_option("--dims", o.dims, "Latent dimensions");
    irt->add_option("--chains", o.chains, "Chains");
    irt->add_option("--iterations", o.iterations, "Iterations per chain, burn-in included");
    irt->add_option("--burn-in", o.burn_in, "Burn-in iterations");
    irt->add_option("--workers", o.workers, "Chains sampled concurrently");
    add("caa", "Contrastive steering vector and multiplier sweeps");
    auto* sta = add("sta", "SAE feature statistics and steering-atom selection");
    sta->add_option("--mode", o.selection_mode, "union or intersection");
    sta->add_option("--threshold", o.threshold, "Activation threshold for active-feature counts");
    add("score", "Output scores for feature interventions");
    add("judge", "Feature-quality judging with the adjudicator");
    add("report", "Plot-ready tables for every figure");
    auto* all = add("all", "Every configured command, then report");
    all->add_option("--eval-size", o.eval_size, "Evaluation set size");
    all->add_option("--strategy", o.strategy, "IRT identification strategy");
    all->add_option("--mode", o.selection_mode, "STA selection mode");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? Ok : Validation;
    }

    spdlog::set_default_logger(spdlog::stderr_color_mt("ideodepth"));
    spdlog::set_level(spdlog::level::from_str(o.log_level));

    try {
        auto cfg = pl::PipelineConfig::load(o.config);
        apply(o, cfg);
        const auto bundle = chosen == "all" ? pl::run_all(cfg) : pl::run(pl::parse_command(chosen), cfg);
        std::cout << bundle.manifest.string() << "\n";
        if (!bundle.converged) {
            spdlog::warn("results written but a model fit did not converge");
            return NotConverged;
        }
        return Ok;
    } catch (const ideodepth::ValidationError& e) {
        spdlog::error("{}", e.what());
        return Validation;
    } catch (const ideodepth::Error& e) {
        spdlog::error("{}", e.what());
        return Runtime;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return Runtime;
    }
}
