#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ideodepth/adjudicator.hpp"
#include "ideodepth/agreement.hpp"
#include "ideodepth/factor.hpp"
#include "ideodepth/irt.hpp"
#include "ideodepth/steer.hpp"

namespace ideodepth::pipeline {

namespace fs = std::filesystem;

struct Paths {
    std::optional<fs::path> statements;
    std::optional<fs::path> responses;
    std::optional<fs::path> reference_scores;
    std::optional<fs::path> positive_activations;  // N x H tensor
    std::optional<fs::path> negative_activations;
    std::map<std::string, fs::path> layer_sweeps;       // layer -> response matrix by multiplier
    std::map<std::string, fs::path> multiplier_sweeps;  // label -> response matrix by multiplier
    std::optional<fs::path> sae_positive;
    std::optional<fs::path> sae_negative;
    std::optional<fs::path> decoder;
    std::map<std::string, fs::path> eval_activations;      // label -> SAE matrix
    std::map<std::string, fs::path> intervention_records;  // label -> records
    std::optional<fs::path> feature_descriptions;
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    fs::path output_dir = "ideodepth-out";
    Paths paths;
    adjudicator::AdjudicatorConfig adjudicator;

    std::size_t eval_size = 126;
    std::size_t min_per_topic = 3;
    adjudicator::SplitAllocation allocation = adjudicator::SplitAllocation::Proportional;

    std::string focus = "role_conservative";
    agreement::KappaCategories kappa_categories = agreement::KappaCategories::WithNull;

    factor::Retention retention = factor::Retention::kaiser();
    bool rotate = true;
    factor::PafOptions paf;

    irt::IrtConfig irt;
    std::vector<std::pair<std::string, std::string>> irt_pairs;

    steer::SelectionMode selection_mode = steer::SelectionMode::Union;
    double activation_threshold = 0.0;

    /// Directory relative paths were resolved against.
    fs::path base_dir;

    /// Parses a config document. Relative paths resolve against `base_dir`.
    /// Unknown keys are rejected.
    static PipelineConfig from_json(const nlohmann::json& doc, const fs::path& base_dir = {});
    static PipelineConfig load(const fs::path& path);

    /// Canonical form used for the manifest's config digest.
    nlohmann::json to_json() const;
};

enum class Command { Categorize, Split, Agreement, Fa, Irt, Caa, Sta, Score, Judge, Report };

std::string_view to_string(Command c);
Command parse_command(std::string_view s);
const std::vector<Command>& all_commands();

/// True when the config names every input `c` needs.
bool has_inputs(Command c, const PipelineConfig& cfg);

struct Artifact {
    std::string path;  // relative to the output directory, '/' separated
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct ReportBundle {
    std::vector<Artifact> files;     // every file in the output directory except the manifest
    std::vector<std::string> skipped;  // plot tables whose sources were missing
    bool converged = true;           // false when a model fit returned unconverged results
    fs::path manifest;
};

/// Runs one command and rewrites the manifest. Missing inputs raise
/// ConfigError before any work starts.
ReportBundle run(Command command, const PipelineConfig& cfg);

/// Every command whose inputs are configured, in pipeline order, ending with report.
ReportBundle run_all(const PipelineConfig& cfg);

/// Copies the metric tables into long-format plot tables under report/.
ReportBundle emit_plot_data(const PipelineConfig& cfg);

std::string sha256_hex(std::string_view bytes);

}  // namespace ideodepth::pipeline
