#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ideodepth/corpus.hpp"
#include "ideodepth/errors.hpp"

namespace ideodepth::factor {

struct CorrelationMatrix {
    std::vector<std::string> labels;
    Eigen::MatrixXd r;      // K x K, unit diagonal
    Eigen::MatrixXi pairs;  // pairwise-complete observation counts
    /// Items removed because their non-null answers never vary.
    std::vector<std::string> dropped;
    /// Pairs whose jointly observed answers had no variance; r set to 0.
    std::vector<std::pair<std::string, std::string>> degenerate_pairs;

    std::size_t size() const { return labels.size(); }

    /// Wraps a caller-built matrix; checks symmetry, range and unit diagonal.
    static CorrelationMatrix from_dense(std::vector<std::string> labels, Eigen::MatrixXd r);
};

/// Pearson correlation between statement columns on pairwise-complete rows.
CorrelationMatrix correlation_matrix(const corpus::ResponseMatrix& m);

struct Retention {
    enum class Kind { Kaiser, Fixed };
    Kind kind = Kind::Kaiser;
    std::size_t factors = 0;

    /// Factors whose unreduced eigenvalue is strictly greater than 1.
    static Retention kaiser() { return {Kind::Kaiser, 0}; }
    static Retention fixed(std::size_t m) { return {Kind::Fixed, m}; }
};

struct PafOptions {
    double tolerance = 1e-4;  // max |change in communality|
    int max_iterations = 100;
};

struct FactorSolution {
    std::vector<std::string> labels;
    Eigen::MatrixXd loadings;             // K x m
    Eigen::VectorXd initial_eigenvalues;  // unreduced correlation matrix, descending
    Eigen::VectorXd eigenvalues;          // reduced matrix at the last iterate, descending
    Eigen::VectorXd variances;            // sum of squared loadings per factor
    Eigen::VectorXd proportions;          // variances / total retained variance
    Eigen::VectorXd cumulative;
    Eigen::VectorXd communalities;        // per item, sum of squared loadings
    Eigen::MatrixXd rotation;             // m x m; identity unless rotated
    bool rotated = false;
    bool converged = false;
    int iterations = 0;
    std::vector<std::string> heywood;     // items whose communality was clipped to 1
    std::size_t negative_eigenvalues = 0; // in the final reduced matrix

    std::size_t factors() const { return static_cast<std::size_t>(loadings.cols()); }
};

/// Recomputes variances, proportions, cumulative and communalities from loadings.
void refresh_summaries(FactorSolution& s);

class PafConvergenceError : public ConvergenceError {
public:
    PafConvergenceError(const std::string& what, FactorSolution last)
        : ConvergenceError(what), last_(std::move(last)) {}
    const FactorSolution& last_iterate() const noexcept { return last_; }

private:
    FactorSolution last_;
};

/// Iterated principal axis factoring.
///
/// Starts from communalities equal to each item's largest absolute
/// off-diagonal correlation, then alternates eigendecomposition of the
/// reduced matrix and communality re-estimation until the largest change is
/// below `tolerance`. Throws PafConvergenceError carrying the last iterate.
FactorSolution principal_axis_factor(const CorrelationMatrix& corr, Retention retention, PafOptions options = {});

struct VarimaxOptions {
    bool kaiser_normalize = true;
    double tolerance = 1e-12;  // relative change in the criterion
    int max_iterations = 1000;
};

struct VarimaxResult {
    Eigen::MatrixXd loadings;  // input * rotation
    Eigen::MatrixXd rotation;  // orthogonal m x m
    int iterations = 0;
};

/// Orthogonal varimax rotation. One-column input is returned unchanged. The
/// result's columns are signed so their largest-magnitude loading is positive.
VarimaxResult varimax(const Eigen::MatrixXd& loadings, VarimaxOptions options = {});

/// Sum over columns of the variance of squared loadings, computed on
/// row-normalized loadings when `kaiser_normalize` is set.
double varimax_criterion(const Eigen::MatrixXd& loadings, bool kaiser_normalize = true);

FactorSolution rotate_varimax(const FactorSolution& s, VarimaxOptions options = {});

struct ScreeRow {
    std::size_t factor = 0;  // 1-based
    double eigenvalue = 0.0; // variance carried by the factor
    double proportion = 0.0;
    double cumulative = 0.0;
};

std::vector<ScreeRow> scree(const FactorSolution& s);

std::string scree_csv(const FactorSolution& s);
std::string loadings_csv(const FactorSolution& s);
/// factor,initial_eigenvalue,reduced_eigenvalue for every factor position.
std::string eigenvalues_csv(const FactorSolution& s);

}  // namespace ideodepth::factor
