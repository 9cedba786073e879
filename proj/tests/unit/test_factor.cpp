#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ideodepth/factor.hpp"
#include "ideodepth/rng.hpp"

using namespace ideodepth;
using namespace ideodepth::factor;
using corpus::Response;

namespace {

std::vector<std::string> names(Eigen::Index k) {
    std::vector<std::string> v;
    for (Eigen::Index i = 0; i < k; ++i) v.push_back("q" + std::to_string(i));
    return v;
}

CorrelationMatrix compound_symmetry(Eigen::Index k, double rho) {
    Eigen::MatrixXd r = Eigen::MatrixXd::Constant(k, k, rho);
    r.diagonal().setOnes();
    return CorrelationMatrix::from_dense(names(k), r);
}

CorrelationMatrix from_loadings(const Eigen::MatrixXd& l) {
    Eigen::MatrixXd r = l * l.transpose();
    r.diagonal().setOnes();
    return CorrelationMatrix::from_dense(names(l.rows()), r);
}

// Variance of squared loadings per column, on row-normalized loadings.
double criterion_oracle(const Eigen::MatrixXd& l) {
    double v = 0;
    const double p = static_cast<double>(l.rows());
    for (Eigen::Index j = 0; j < l.cols(); ++j) {
        double s2 = 0, s4 = 0;
        for (Eigen::Index i = 0; i < l.rows(); ++i) {
            const double b = l(i, j) * l(i, j) / l.row(i).squaredNorm();
            s2 += b;
            s4 += b * b;
        }
        v += s4 / p - (s2 / p) * (s2 / p);
    }
    return v;
}

Eigen::Matrix2d planar(double t) {
    Eigen::Matrix2d r;
    r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    return r;
}

// Best planar rotation by a 0.001 grid over a quarter turn, then golden-section refinement.
Eigen::MatrixXd grid_varimax(const Eigen::MatrixXd& l) {
    double best_t = 0, best = -1;
    for (double t = 0; t < std::numbers::pi / 2; t += 0.001) {
        const double c = criterion_oracle(l * planar(t));
        if (c > best) {
            best = c;
            best_t = t;
        }
    }
    double a = best_t - 0.001, b = best_t + 0.001;
    const double g = (std::sqrt(5.0) - 1) / 2;
    for (int i = 0; i < 200; ++i) {
        const double x1 = b - g * (b - a), x2 = a + g * (b - a);
        if (criterion_oracle(l * planar(x1)) > criterion_oracle(l * planar(x2)))
            b = x2;
        else
            a = x1;
    }
    return l * planar((a + b) / 2);
}

// Distance up to column order and sign.
double aligned_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    double best = 1e300;
    for (int perm = 0; perm < 2; ++perm) {
        double worst = 0;
        for (Eigen::Index j = 0; j < 2; ++j) {
            const auto bj = b.col(perm ? 1 - j : j);
            worst = std::max(worst, std::min((a.col(j) - bj).cwiseAbs().maxCoeff(), (a.col(j) + bj).cwiseAbs().maxCoeff()));
        }
        best = std::min(best, worst);
    }
    return best;
}

}  // namespace

TEST(Correlation, MatchesPairwisePearson) {
    Rng rng(3);
    const std::size_t rows = 30, cols = 6;
    std::vector<Response> e;
    for (std::size_t i = 0; i < rows * cols; ++i) {
        const double u = rng.uniform();
        e.push_back(u < 0.1 ? Response::Null : u < 0.55 ? Response::Liberal : Response::Conservative);
    }
    std::vector<std::string> rl;
    for (std::size_t i = 0; i < rows; ++i) rl.push_back("r" + std::to_string(i));
    std::vector<std::string> cl;
    for (std::size_t i = 0; i < cols; ++i) cl.push_back("c" + std::to_string(i));
    corpus::ResponseMatrix m(rl, cl, e);
    auto c = correlation_matrix(m);
    ASSERT_EQ(c.size(), cols);
    for (std::size_t a = 0; a < cols; ++a) {
        for (std::size_t b = 0; b < cols; ++b) {
            // Raw-sum Pearson formula on complete pairs.
            double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            for (std::size_t r = 0; r < rows; ++r) {
                if (m(r, a) == Response::Null || m(r, b) == Response::Null) continue;
                const double x = m(r, a) == Response::Liberal, y = m(r, b) == Response::Liberal;
                n += 1;
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
            }
            const double want = a == b ? 1.0
                                       : (n * sxy - sx * sy) /
                                             std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
            EXPECT_NEAR(c.r(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)), want, 1e-12);
            EXPECT_EQ(c.pairs(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)), static_cast<int>(n));
        }
    }
}

TEST(Correlation, DropsConstantItemsAndFlagsDegeneratePairs) {
    auto m = corpus::parse_response_matrix_text(
        "r,a,b,c,d\n"
        "x,1,1,1,1\n"
        "y,0,1,null,0\n"
        "z,1,1,0,null\n"
        "w,0,null,0,1\n");
    auto c = correlation_matrix(m);
    EXPECT_EQ(c.dropped, std::vector<std::string>{"b"});
    ASSERT_EQ(c.labels, (std::vector<std::string>{"a", "c", "d"}));
    // d is constant on the rows it shares with c.
    ASSERT_EQ(c.degenerate_pairs.size(), 1u);
    EXPECT_EQ(c.degenerate_pairs[0], std::make_pair(std::string("c"), std::string("d")));
    EXPECT_EQ(c.r(1, 2), 0.0);

    auto thin = corpus::parse_response_matrix_text("r,a,b\nx,1,null\ny,0,1\nz,null,0\n");
    EXPECT_THROW(correlation_matrix(thin), CoverageError);
}

TEST(Correlation, FromDenseValidates) {
    Eigen::MatrixXd r(2, 2);
    r << 1, 0.5, 0.4, 1;
    EXPECT_THROW(CorrelationMatrix::from_dense(names(2), r), ValidationError);
    r << 1.1, 0.5, 0.5, 1;
    EXPECT_THROW(CorrelationMatrix::from_dense(names(2), r), ValidationError);
    EXPECT_THROW(CorrelationMatrix::from_dense(names(3), Eigen::MatrixXd::Identity(2, 2)), ValidationError);
}

TEST(Paf, CompoundSymmetryThreeItems) {
    auto s = principal_axis_factor(compound_symmetry(3, 0.5), Retention::kaiser());
    EXPECT_LT((s.initial_eigenvalues - Eigen::Vector3d(2.0, 0.5, 0.5)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(s.factors(), 1u);
}

TEST(Paf, CompoundSymmetryHasOneFactorOfRootRho) {
    for (double rho : {0.2, 0.45, 0.7}) {
        for (Eigen::Index k : {4, 7, 12}) {
            auto s = principal_axis_factor(compound_symmetry(k, rho), Retention::kaiser(), {1e-12, 10000});
            ASSERT_EQ(s.factors(), 1u) << rho << " " << k;
            EXPECT_NEAR(s.initial_eigenvalues(0), 1 + (k - 1) * rho, 1e-12);
            EXPECT_NEAR(s.initial_eigenvalues(1), 1 - rho, 1e-12);
            for (Eigen::Index i = 0; i < k; ++i) EXPECT_NEAR(s.loadings(i, 0), std::sqrt(rho), 1e-9);
            EXPECT_NEAR(s.variances(0), k * rho, 1e-8);
            EXPECT_NEAR(s.proportions(0), 1.0, 1e-15);
        }
    }
}

TEST(Paf, RankOneRecovery) {
    Eigen::VectorXd lambda(4);
    lambda << 0.9, 0.8, 0.7, 0.6;
    auto s = principal_axis_factor(from_loadings(lambda), Retention::fixed(1), {1e-14, 100000});
    EXPECT_TRUE(s.converged);
    EXPECT_LT((s.loadings.col(0) - lambda).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_TRUE(s.heywood.empty());
}

TEST(Paf, FixedRetentionAndSummaries) {
    Eigen::MatrixXd l(6, 2);
    l << 0.8, 0.1, 0.7, 0.2, 0.75, 0.0, 0.1, 0.8, 0.0, 0.7, 0.2, 0.6;
    auto s = principal_axis_factor(from_loadings(l), Retention::fixed(2), {1e-10, 10000});
    ASSERT_EQ(s.factors(), 2u);
    EXPECT_NEAR((s.loadings * s.loadings.transpose() - l * l.transpose()).cwiseAbs().maxCoeff(), 0.0, 1e-4);
    EXPECT_NEAR(s.cumulative(1), 1.0, 1e-12);
    EXPECT_NEAR(s.variances.sum(), s.communalities.sum(), 1e-12);
    EXPECT_GE(s.variances(0), s.variances(1));
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_GT(s.loadings.col(j).maxCoeff(), -s.loadings.col(j).minCoeff());
    EXPECT_THROW(principal_axis_factor(from_loadings(l), Retention::fixed(7)), ConfigError);
}

TEST(Paf, NonConvergenceCarriesLastIterate) {
    try {
        Eigen::VectorXd l(5);
        l << 0.9, 0.3, 0.6, 0.5, 0.2;
        principal_axis_factor(from_loadings(l), Retention::fixed(1), {1e-15, 1});
        FAIL() << "expected PafConvergenceError";
    } catch (const PafConvergenceError& e) {
        EXPECT_EQ(e.last_iterate().iterations, 1);
        EXPECT_FALSE(e.last_iterate().converged);
        EXPECT_EQ(e.last_iterate().factors(), 1u);
    }
}

TEST(Varimax, MatchesGridSearch) {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::MatrixXd l(8, 2);
        for (Eigen::Index i = 0; i < l.size(); ++i) l(i) = rng.uniform() * 1.4 - 0.7;
        auto v = varimax(l);
        auto want = grid_varimax(l);
        EXPECT_LT(aligned_distance(v.loadings, want), 1e-6) << trial;
        EXPECT_NEAR(criterion_oracle(v.loadings), criterion_oracle(want), 1e-10);
    }
}

TEST(Varimax, OrthogonalPreservesCommunalities) {
    Rng rng(5);
    Eigen::MatrixXd l(10, 3);
    for (Eigen::Index i = 0; i < l.size(); ++i) l(i) = rng.normal() * 0.4;
    auto v = varimax(l);
    const auto k = v.rotation.cols();
    EXPECT_LT((v.rotation.transpose() * v.rotation - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((v.loadings - l * v.rotation).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((v.loadings.rowwise().squaredNorm() - l.rowwise().squaredNorm()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(varimax_criterion(v.loadings), varimax_criterion(l) - 1e-12);
    for (Eigen::Index j = 0; j < k; ++j) EXPECT_GT(v.loadings.col(j).maxCoeff(), -v.loadings.col(j).minCoeff());

    // Rotating the input first gives the same answer.
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::Random(3, 3)).householderQ();
    auto w = varimax(l * q);
    EXPECT_NEAR(varimax_criterion(w.loadings), varimax_criterion(v.loadings), 1e-9);
}

TEST(Varimax, SingleColumnUnchanged) {
    Eigen::MatrixXd l(3, 1);
    l << 0.5, -0.2, 0.9;
    auto v = varimax(l);
    EXPECT_EQ(v.loadings, l);
    EXPECT_EQ(v.rotation, Eigen::MatrixXd::Identity(1, 1));
}

TEST(Varimax, RotateSolutionKeepsTotals) {
    Eigen::MatrixXd l(6, 2);
    l << 0.6, 0.5, 0.7, 0.4, 0.6, 0.3, 0.5, -0.5, 0.4, -0.6, 0.5, -0.4;
    auto s = principal_axis_factor(from_loadings(l), Retention::fixed(2), {1e-10, 10000});
    auto r = rotate_varimax(s);
    EXPECT_TRUE(r.rotated);
    EXPECT_NEAR(r.variances.sum(), s.variances.sum(), 1e-10);
    EXPECT_LT((r.communalities - s.communalities).cwiseAbs().maxCoeff(), 1e-12);
    auto rows = scree(r);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].factor, 1u);
    EXPECT_NEAR(rows[1].cumulative, 1.0, 1e-12);
    EXPECT_NE(loadings_csv(r).find("q5"), std::string::npos);
}
