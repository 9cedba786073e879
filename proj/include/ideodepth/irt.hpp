#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ideodepth/corpus.hpp"
#include "ideodepth/rng.hpp"
#include "ideodepth/stats.hpp"

namespace ideodepth::irt {

using corpus::ResponseMatrix;

enum class Strategy { PriorsOnly, TwoPoint, ThreePoint };

std::string_view to_string(Strategy s);
/// Accepts "priors-only", "two-point", "three-point".
Strategy parse_strategy(std::string_view s);

struct IrtConfig {
    std::size_t dims = 2;
    double lkj_eta = 1.0;
    double beta_prior_sd = 10.0;
    Strategy strategy = Strategy::ThreePoint;
    /// Anchor respondent ids, j1, j2, j3 in order. Only the first 0/2/3 are used.
    std::vector<std::string> anchors;
    std::size_t chains = 4;
    std::size_t iterations = 4000;  // per chain, including burn-in
    std::size_t burn_in = 2000;
    std::size_t thin = 1;
    std::uint64_t seed = 1;
    std::size_t workers = 4;  // chains run concurrently up to this many threads
    double rhat_threshold = 1.1;

    /// Throws ConfigError on a violated invariant.
    void validate() const;
};

struct FixedCoordinate {
    std::string respondent;
    std::size_t dim = 0;  // 0-based
    double value = 0.0;
};

struct IdentificationConstraints {
    std::vector<FixedCoordinate> fixed;

    bool empty() const { return fixed.empty(); }
    /// Throws ConfigError on duplicates or non-finite values.
    void validate() const;
};

/// Fixed coordinates for a strategy:
///   priors-only: none
///   two-point:   j1 dim1 = -2, j2 dim1 = +2
///   three-point: two-point plus j3 dim1 = 0, j3 dim2 = +2
IdentificationConstraints apply_constraints(Strategy strategy, const std::vector<std::string>& respondents);

/// Bernoulli log-likelihood with p = logistic(theta_j . alpha_k - beta_k),
/// summed over non-null cells. theta is J x D, alpha is K x D.
double log_likelihood(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& alpha, const Eigen::VectorXd& beta,
                      const ResponseMatrix& y);

/// log logistic(x), stable for large |x|.
double log_logistic(double x);
double logistic(double x);

/// Draws rho from density proportional to (1 - rho^2)^(eta - 1) on (-1, 1),
/// the marginal of an LKJ(eta) 2x2 correlation matrix.
double sample_correlation_2d(double eta, Rng& rng);
double sample_correlation_2d(double eta, std::uint64_t seed);

/// Row-major draw storage: draws x rows x cols.
struct DrawArray {
    std::size_t draws = 0, rows = 0, cols = 0;
    std::vector<double> values;

    DrawArray() = default;
    DrawArray(std::size_t s, std::size_t r, std::size_t c) : draws(s), rows(r), cols(c), values(s * r * c, 0.0) {}

    double& operator()(std::size_t s, std::size_t r, std::size_t c) { return values[(s * rows + r) * cols + c]; }
    double operator()(std::size_t s, std::size_t r, std::size_t c) const { return values[(s * rows + r) * cols + c]; }

    /// Mean over draws, rows x cols.
    Eigen::MatrixXd mean() const;
    /// Per-cell quantile over draws (linear interpolation).
    Eigen::MatrixXd quantile(double q) const;
};

struct Diagnostics {
    Eigen::MatrixXd rhat_theta, ess_theta;  // J x D; NaN for fixed coordinates
    Eigen::MatrixXd rhat_alpha, ess_alpha;  // K x D
    Eigen::VectorXd rhat_beta, ess_beta;    // K
    Eigen::Vector2d rhat_rho = Eigen::Vector2d::Constant(std::numeric_limits<double>::quiet_NaN());
    Eigen::Vector2d ess_rho = Eigen::Vector2d::Constant(std::numeric_limits<double>::quiet_NaN());
    double max_rhat = 0.0;
    double min_ess = 0.0;
};

struct Acceptance {
    double theta = 0.0, alpha = 0.0, beta = 0.0, rho_theta = 0.0, rho_alpha = 0.0;  // post-burn-in rates
};

struct IrtPosterior {
    IrtConfig config;
    IdentificationConstraints constraints;
    std::vector<std::string> respondents;
    std::vector<std::string> items;          // items kept for fitting
    std::vector<std::string> dropped_items;  // degenerate, removed before sampling
    std::size_t draws_per_chain = 0;

    DrawArray theta;  // S x J x D, chains stacked chain-major
    DrawArray alpha;  // S x K x D
    DrawArray beta;   // S x K x 1
    DrawArray rho;    // S x 2 x 1: rho_theta, rho_alpha (zero when D != 2)

    std::vector<Acceptance> acceptance;  // per chain
    Diagnostics diagnostics;
    bool converged = true;  // false when any R-hat exceeds the threshold

    std::size_t draws() const { return theta.draws; }
    Eigen::MatrixXd theta_mean() const { return theta.mean(); }
};

/// Adaptive random-walk Metropolis-within-Gibbs.
///
/// Chains share an SVD-based start point and add independent jitter. Fixed
/// coordinates are set before the first iteration and never proposed. After sampling, whole
/// chains may be reflected along an unpinned dimension so all chains share
/// the sign of chain 0; this is an exact symmetry of the posterior.
IrtPosterior sample_posterior(const ResponseMatrix& y, const IrtConfig& cfg,
                              const IdentificationConstraints& constraints);

/// Convenience: constraints from cfg.strategy and cfg.anchors.
IrtPosterior fit(const ResponseMatrix& y, const IrtConfig& cfg);

/// R-hat and ESS for every free scalar of a posterior. Fixed coordinates get NaN.
Diagnostics compute_diagnostics(const IrtPosterior& posterior);

/// Split-chain potential scale reduction. `chains` holds equal-length chains.
double split_rhat(const std::vector<std::vector<double>>& chains);
/// Multi-chain effective sample size with Geyer's initial monotone sequence.
double effective_sample_size(const std::vector<std::vector<double>>& chains);

// ---------------------------------------------------------------------------
// Synthetic votes
// ---------------------------------------------------------------------------

struct SimulationOptions {
    double missing_rate = 0.0;
    /// respondent index -> true theta row, overriding the draw.
    std::map<std::size_t, std::vector<double>> fixed_theta;
    /// When set, every cell uses this linear predictor instead of theta.alpha - beta.
    std::optional<double> fixed_linear_predictor;
};

struct VoteSimulation {
    Eigen::MatrixXd theta;  // J x D
    Eigen::MatrixXd alpha;  // K x D
    Eigen::VectorXd beta;   // K
    ResponseMatrix votes;   // rows "r001".., cols "i001"..
    std::uint64_t seed = 0;
    std::optional<double> fixed_linear_predictor;

    /// Mean of logistic(theta.alpha - beta) over the observed cells.
    double expected_yes_fraction() const;
};

VoteSimulation simulate_votes(std::size_t j, std::size_t k, std::size_t d, std::uint64_t seed,
                              const SimulationOptions& options = {});

// ---------------------------------------------------------------------------
// Validation and reporting
// ---------------------------------------------------------------------------

struct DimensionMatch {
    std::size_t reference_dim = 0;
    std::size_t estimate_dim = 0;
    bool flipped = false;       // estimate sign reversed to align
    stats::Correlation fit;     // r after sign alignment (>= 0)
};

/// Per reference dimension, the matched estimate column (the permutation
/// maximizing total |r|) and its sign-aligned correlation.
std::vector<DimensionMatch> validate_against_reference(const Eigen::MatrixXd& estimate,
                                                       const Eigen::MatrixXd& reference);

struct ReferenceScores {
    std::vector<std::string> respondents;
    Eigen::MatrixXd scores;  // N x D
};

/// Comma-delimited "respondent,dim1,dim2[,...]" with an optional header row.
ReferenceScores parse_reference_scores(std::string_view text);
ReferenceScores read_reference_scores(const std::filesystem::path& path);

/// Aligns posterior means to reference rows by respondent id. The respondent
/// sets must match exactly.
std::vector<DimensionMatch> validate_against_reference(const IrtPosterior& posterior, const ReferenceScores& ref);

struct IdealPointRow {
    std::string respondent;
    std::size_t dim = 0;
    double mean = 0.0, lower = 0.0, upper = 0.0;  // central 90% interval
};

struct PairDistance {
    std::string first, second;
    double distance = 0.0;  // between posterior means
    double lower = 0.0, upper = 0.0;  // central 90% interval of per-draw distances
};

struct IdealPointReport {
    std::vector<IdealPointRow> points;
    std::vector<PairDistance> pairs;
};

IdealPointReport ideal_point_report(const IrtPosterior& posterior,
                                    const std::vector<std::pair<std::string, std::string>>& pairs = {});

std::string ideal_points_csv(const IdealPointReport& r);
/// Scatter rows: respondent,dim1,dim2,... posterior means.
std::string scatter_csv(const IrtPosterior& posterior);
std::string pair_distances_csv(const IdealPointReport& r);
std::string diagnostics_csv(const IrtPosterior& posterior);

/// theta/alpha/beta/rho tensors plus posterior.json in `dir`.
void write_posterior(const IrtPosterior& posterior, const std::filesystem::path& dir);
/// Reads draws and metadata written by write_posterior. Draws round-trip at f32 precision.
IrtPosterior read_posterior(const std::filesystem::path& dir);

}  // namespace ideodepth::irt
