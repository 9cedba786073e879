#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ideodepth/corpus.hpp"

namespace ideodepth::steer {

using corpus::SaeActivationMatrix;

// ---------------------------------------------------------------------------
// Contrastive activation addition
// ---------------------------------------------------------------------------

struct ContrastSet {
    std::string model;
    std::int64_t layer = 0;
    Eigen::MatrixXd positive;  // N x H
    Eigen::MatrixXd negative;  // N x H

    /// Pairs rows of two N x H tensor containers. Model and layer come from the
    /// positive container's metadata when present.
    static ContrastSet from_tensors(const corpus::TensorContainer& positive, const corpus::TensorContainer& negative);
};

struct CaaVector {
    std::string model;
    std::int64_t layer = 0;
    Eigen::VectorXd vector;
    std::size_t pairs = 0;

    corpus::TensorContainer to_tensor() const;
    static CaaVector from_tensor(const corpus::TensorContainer& t);
};

/// Mean over pairs of (positive - negative).
CaaVector compute_caa(const ContrastSet& set);

struct SweepPoint {
    double multiplier = 0.0;
    std::size_t liberal = 0, conservative = 0, null = 0;
    /// Overrides the tally-based estimate when the extractor reports it directly.
    std::optional<double> p_liberal;

    std::size_t total() const { return liberal + conservative + null; }
    double liberal_probability() const;
};

struct SweepCurve {
    std::string label;  // model or layer
    std::vector<SweepPoint> points;

    /// max - min of liberal probability across points.
    double range() const;
};

/// Layer whose curve has the largest range; ties go to the lower layer.
std::int64_t select_layer(const std::map<std::int64_t, SweepCurve>& curves);

/// One tally point per multiplier. Multipliers must be strictly monotone and
/// every response row the same length.
SweepCurve multiplier_sweep_table(const std::vector<std::pair<double, std::vector<corpus::Response>>>& responses,
                                  std::string label = {});
/// Rows labelled by multiplier value ("0", "-1", ...).
SweepCurve multiplier_sweep_table(const corpus::ResponseMatrix& m, std::string label = {});

/// label,multiplier,liberal,conservative,null,liberal_pct,conservative_pct,null_pct,p_liberal
std::string sweep_csv(std::span<const SweepCurve> curves);

// ---------------------------------------------------------------------------
// SAE feature statistics
// ---------------------------------------------------------------------------

struct FeatureStats {
    std::vector<double> delta_a_raw;  // mean over prompts of (pos - neg)
    std::vector<double> delta_a;      // delta_a_raw / max |delta_a_raw|
    std::vector<double> f_pos, f_neg, delta_f;

    std::size_t size() const { return delta_a.size(); }
};

FeatureStats compute_feature_stats(const SaeActivationMatrix& pos, const SaeActivationMatrix& neg);

enum class SelectionMode { Union, Intersection };

std::string_view to_string(SelectionMode m);
SelectionMode parse_selection_mode(std::string_view s);

struct StaSelection {
    std::vector<std::size_t> features;  // ascending
    SelectionMode mode = SelectionMode::Union;
};

/// Union: delta_a > 0 or delta_f > 0. Intersection: both.
StaSelection select_sta(const FeatureStats& stats, SelectionMode mode = SelectionMode::Union);

/// Decoder rows, possibly for a subset of features.
struct Decoder {
    std::vector<std::size_t> feature_ids;  // row i holds feature_ids[i]
    Eigen::MatrixXd rows;                  // n x H

    /// Dense F x H tensor, or a subset carrying a "feature_ids" metadata list.
    static Decoder from_tensor(const corpus::TensorContainer& t);
    std::optional<Eigen::Index> row_of(std::size_t feature) const;
};

/// Sum over selected features of weights[feature] * decoder row. `weights` is
/// indexed by feature id.
Eigen::VectorXd assemble_sta_vector(const StaSelection& selection, const Decoder& decoder,
                                    std::span<const double> weights);
/// Default weighting by normalized delta_a.
Eigen::VectorXd assemble_sta_vector(const StaSelection& selection, const Decoder& decoder, const FeatureStats& stats);

struct ActiveFeatureCounts {
    std::vector<std::size_t> per_prompt;
    std::size_t union_count = 0;
    double mean_per_prompt = 0.0;
};

/// Features whose activation exceeds `threshold`, per prompt and overall.
ActiveFeatureCounts count_active_features(const SaeActivationMatrix& acts, double threshold = 0.0);

std::string feature_stats_csv(const FeatureStats& stats);
std::string selection_csv(const StaSelection& sel, const FeatureStats& stats);

// ---------------------------------------------------------------------------
// Output score
// ---------------------------------------------------------------------------

struct TokenScore {
    std::size_t rank = 0;  // 0-based
    double prob = 0.0;
};

struct OutputScoreRecord {
    std::size_t feature = 0;
    std::size_t vocab_size = 0;
    TokenScore original;
    TokenScore intervened;
};

/// (1 - rank / |V|) * prob. Throws DomainError for rank >= |V| or prob outside [0, 1].
double rank_weighted_probability(TokenScore t, std::size_t vocab_size);

/// Intervened minus original rank-weighted probability.
double output_score(TokenScore original, TokenScore intervened, std::size_t vocab_size);
double output_score(const OutputScoreRecord& rec);

struct ScoreSummary {
    std::size_t n = 0;
    double mean = 0, stddev = 0, min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Population std and linear-interpolation quartiles. Needs at least one value.
ScoreSummary score_summary(std::span<const double> scores);
ScoreSummary score_summary(std::span<const OutputScoreRecord> records);

struct InterventionRecords {
    std::string neutral_sentence = "In my opinion,";
    std::vector<OutputScoreRecord> records;
};

/// JSONL: optional header {"neutral_sentence": "..."} then records
/// {"feature":f,"vocab_size":V,"original":{"rank":r,"prob":p},"intervened":{...}}.
InterventionRecords parse_intervention_records(std::string_view text);
InterventionRecords read_intervention_records(const std::filesystem::path& path);
std::string serialize_intervention_records(const InterventionRecords& recs);

std::string output_scores_csv(std::span<const OutputScoreRecord> records);
std::string score_summary_csv(const std::vector<std::pair<std::string, ScoreSummary>>& rows);

}  // namespace ideodepth::steer
