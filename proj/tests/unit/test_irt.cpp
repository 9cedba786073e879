#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ideodepth/errors.hpp"
#include "ideodepth/irt.hpp"

using namespace ideodepth;
using namespace ideodepth::irt;
using corpus::Response;

namespace {

double naive_loglik(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& alpha, const Eigen::VectorXd& beta,
                    const corpus::ResponseMatrix& y) {
    double ll = 0;
    for (std::size_t j = 0; j < y.rows(); ++j) {
        for (std::size_t k = 0; k < y.cols(); ++k) {
            if (y(j, k) == Response::Null) continue;
            const double eta = theta.row(static_cast<Eigen::Index>(j)).dot(alpha.row(static_cast<Eigen::Index>(k))) -
                               beta(static_cast<Eigen::Index>(k));
            const double p = 1.0 / (1.0 + std::exp(-eta));
            ll += y(j, k) == Response::Liberal ? std::log(p) : std::log(1.0 - p);
        }
    }
    return ll;
}

Eigen::MatrixXd random_rotation(Rng& rng, Eigen::Index d) {
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    return qr.householderQ();
}

IrtConfig small_config(Strategy s = Strategy::ThreePoint) {
    IrtConfig cfg;
    cfg.strategy = s;
    cfg.anchors = {"r001", "r002", "r003"};
    cfg.chains = 2;
    cfg.iterations = 600;
    cfg.burn_in = 300;
    cfg.workers = 2;
    cfg.seed = 4;
    return cfg;
}

VoteSimulation anchored_sim(std::size_t j, std::size_t k, std::uint64_t seed) {
    SimulationOptions opt;
    opt.missing_rate = 0.05;
    opt.fixed_theta = {{0, {-2.0, 0.0}}, {1, {2.0, 0.0}}, {2, {0.0, 2.0}}};
    return simulate_votes(j, k, 2, seed, opt);
}

}  // namespace

TEST(Logistic, StableTails) {
    EXPECT_NEAR(log_logistic(0.0), -std::log(2.0), 1e-15);
    EXPECT_NEAR(log_logistic(-800.0), -800.0, 1e-9);
    EXPECT_NEAR(log_logistic(800.0), 0.0, 1e-15);
    for (double x : {-30.0, -3.0, -0.5, 0.5, 3.0, 30.0}) {
        EXPECT_NEAR(log_logistic(x), -std::log1p(std::exp(-x)), 1e-13);
        EXPECT_NEAR(logistic(x) + logistic(-x), 1.0, 1e-15);
    }
}

TEST(Likelihood, MatchesNaiveSumAndSkipsNulls) {
    auto sim = anchored_sim(9, 15, 2);
    Rng rng(1);
    Eigen::MatrixXd theta(9, 2), alpha(15, 2);
    Eigen::VectorXd beta(15);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = rng.normal();
    for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha(i) = rng.normal();
    for (Eigen::Index i = 0; i < beta.size(); ++i) beta(i) = rng.normal();
    EXPECT_NEAR(log_likelihood(theta, alpha, beta, sim.votes), naive_loglik(theta, alpha, beta, sim.votes), 1e-10);

    auto all_null = corpus::ResponseMatrix(sim.votes.row_labels(), sim.votes.col_labels(),
                                           std::vector<Response>(9 * 15, Response::Null));
    EXPECT_EQ(log_likelihood(theta, alpha, beta, all_null), 0.0);
}

TEST(Likelihood, InvariantUnderRotation) {
    auto sim = anchored_sim(20, 60, 8);
    Rng rng(99);
    const double base = log_likelihood(sim.theta, sim.alpha, sim.beta, sim.votes);
    for (int i = 0; i < 100; ++i) {
        auto r = random_rotation(rng, 2);
        const double rotated = log_likelihood(sim.theta * r, sim.alpha * r, sim.beta, sim.votes);
        EXPECT_LE(std::abs(rotated - base), 1e-9 * std::abs(base)) << i;
    }
}

TEST(Constraints, PerStrategy) {
    std::vector<std::string> ids{"a", "b", "c"};
    EXPECT_TRUE(apply_constraints(Strategy::PriorsOnly, ids).empty());
    auto two = apply_constraints(Strategy::TwoPoint, ids);
    ASSERT_EQ(two.fixed.size(), 2u);
    EXPECT_EQ(two.fixed[0].respondent, "a");
    EXPECT_EQ(two.fixed[0].value, -2.0);
    EXPECT_EQ(two.fixed[1].value, 2.0);
    auto three = apply_constraints(Strategy::ThreePoint, ids);
    ASSERT_EQ(three.fixed.size(), 4u);
    bool saw_dim2 = false;
    for (const auto& f : three.fixed) {
        if (f.respondent == "c" && f.dim == 1) {
            EXPECT_EQ(f.value, 2.0);
            saw_dim2 = true;
        }
        if (f.respondent == "c" && f.dim == 0) {
            EXPECT_EQ(f.value, 0.0);
        }
    }
    EXPECT_TRUE(saw_dim2);
    EXPECT_THROW(apply_constraints(Strategy::ThreePoint, {"a", "b"}), ConfigError);
    EXPECT_THROW(apply_constraints(Strategy::TwoPoint, {"a", "a"}), ConfigError);

    IdentificationConstraints dup{{{"a", 0, 1.0}, {"a", 0, 2.0}}};
    EXPECT_THROW(dup.validate(), ConfigError);
    IdentificationConstraints nan{{{"a", 0, std::nan("")}}};
    EXPECT_THROW(nan.validate(), ConfigError);
}

TEST(IrtConfigCheck, Validation) {
    auto cfg = small_config();
    EXPECT_NO_THROW(cfg.validate());
    auto bad = cfg;
    bad.chains = 1;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.burn_in = bad.iterations;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.dims = 3;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad.strategy = Strategy::PriorsOnly;
    EXPECT_NO_THROW(bad.validate());
    EXPECT_EQ(parse_strategy("two-point"), Strategy::TwoPoint);
    EXPECT_THROW(parse_strategy("four-point"), ConfigError);
}

TEST(Lkj, TwoByTwoMarginalMoments) {
    Rng rng(12);
    for (double eta : {1.0, 2.0, 4.0}) {
        const int n = 40000;
        double s = 0, s2 = 0;
        for (int i = 0; i < n; ++i) {
            const double r = sample_correlation_2d(eta, rng);
            ASSERT_GT(r, -1.0);
            ASSERT_LT(r, 1.0);
            s += r;
            s2 += r * r;
        }
        // rho = 2B - 1 with B ~ Beta(eta, eta): Var = 1 / (2 eta + 1).
        EXPECT_NEAR(s / n, 0.0, 0.02);
        EXPECT_NEAR(s2 / n, 1.0 / (2 * eta + 1), 0.01) << eta;
    }
    EXPECT_EQ(sample_correlation_2d(2.0, 5), sample_correlation_2d(2.0, 5));
}

TEST(Diagnostics, SplitRhatAndEss) {
    Rng rng(21);
    const std::size_t n = 4000;
    std::vector<std::vector<double>> iid(4, std::vector<double>(n));
    for (auto& c : iid)
        for (auto& x : c) x = rng.normal();
    EXPECT_NEAR(split_rhat(iid), 1.0, 0.01);
    EXPECT_NEAR(effective_sample_size(iid), 4.0 * n, 0.1 * 4 * n);

    // AR(1) with phi = 0.5: ESS ~ N (1 - phi) / (1 + phi).
    std::vector<std::vector<double>> ar(4, std::vector<double>(n));
    for (auto& c : ar) {
        double x = 0;
        for (auto& v : c) v = x = 0.5 * x + rng.normal();
    }
    EXPECT_NEAR(effective_sample_size(ar), 4.0 * n / 3.0, 0.15 * 4 * n / 3.0);

    auto shifted = iid;
    for (auto& x : shifted[0]) x += 2.0;
    EXPECT_GT(split_rhat(shifted), 1.1);

    // A trend within one chain shows up in split R-hat.
    std::vector<std::vector<double>> trend(2, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        trend[0][i] = rng.normal() + 4.0 * static_cast<double>(i) / n;
        trend[1][i] = rng.normal() + 4.0 * static_cast<double>(i) / n;
    }
    EXPECT_GT(split_rhat(trend), 1.1);
}

TEST(Simulation, DeterministicAndHonorsOptions) {
    auto a = anchored_sim(10, 30, 5), b = anchored_sim(10, 30, 5);
    EXPECT_EQ(a.votes, b.votes);
    EXPECT_EQ(a.theta, b.theta);
    EXPECT_EQ(a.theta(2, 1), 2.0);
    EXPECT_EQ(a.votes.row_labels()[0], "r001");
    EXPECT_NE(anchored_sim(10, 30, 6).votes, a.votes);

    SimulationOptions opt;
    opt.fixed_linear_predictor = 1.2;
    auto c = simulate_votes(40, 50, 2, 3, opt);
    EXPECT_NEAR(c.expected_yes_fraction(), logistic(1.2), 1e-12);
    std::size_t yes = 0;
    for (auto r : c.votes.entries()) yes += r == Response::Liberal;
    EXPECT_NEAR(yes / 2000.0, logistic(1.2), 0.03);

    SimulationOptions miss;
    miss.missing_rate = 0.3;
    auto d = simulate_votes(40, 50, 2, 3, miss);
    std::size_t nulls = 0;
    for (auto r : d.votes.entries()) nulls += r == Response::Null;
    EXPECT_NEAR(nulls / 2000.0, 0.3, 0.03);
}

TEST(Validation, PermutationAndSignRecovered) {
    Rng rng(4);
    Eigen::MatrixXd ref(30, 2);
    for (Eigen::Index i = 0; i < ref.size(); ++i) ref(i) = rng.normal();
    Eigen::MatrixXd est(30, 2);
    est.col(0) = ref.col(1) * 3.0;
    est.col(1) = -ref.col(0) + Eigen::VectorXd::Constant(30, 1.0);
    auto m = validate_against_reference(est, ref);
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[0].estimate_dim, 1u);
    EXPECT_TRUE(m[0].flipped);
    EXPECT_NEAR(m[0].fit.r, 1.0, 1e-12);
    EXPECT_EQ(m[1].estimate_dim, 0u);
    EXPECT_FALSE(m[1].flipped);
}

TEST(Validation, ReferenceScoresParse) {
    auto r = parse_reference_scores("respondent,dim1,dim2\na,0.5,-1\nb,1.5,2\n");
    ASSERT_EQ(r.respondents.size(), 2u);
    EXPECT_EQ(r.scores(1, 1), 2.0);
    auto nohead = parse_reference_scores("a,0.5,-1\nb,1.5,2\n");
    EXPECT_EQ(nohead.scores, r.scores);
    EXPECT_THROW(parse_reference_scores("a,0.5,-1\nb,1.5\n"), ParseError);
}

TEST(Sampler, SmallFitRespectsConstraintsAndRoundTrips) {
    auto sim = anchored_sim(12, 40, 31);
    auto cfg = small_config();
    auto post = fit(sim.votes, cfg);
    ASSERT_EQ(post.draws(), 2u * 300u);
    EXPECT_EQ(post.draws_per_chain, 300u);
    for (std::size_t s = 0; s < post.draws(); ++s) {
        ASSERT_EQ(post.theta(s, 0, 0), -2.0);
        ASSERT_EQ(post.theta(s, 1, 0), 2.0);
        ASSERT_EQ(post.theta(s, 2, 0), 0.0);
        ASSERT_EQ(post.theta(s, 2, 1), 2.0);
    }
    EXPECT_TRUE(std::isnan(post.diagnostics.rhat_theta(0, 0)));
    EXPECT_FALSE(std::isnan(post.diagnostics.rhat_theta(0, 1)));
    for (const auto& a : post.acceptance) {
        EXPECT_GT(a.theta, 0.05);
        EXPECT_LT(a.theta, 0.95);
    }

    // Same seed, same draws.
    auto again = fit(sim.votes, cfg);
    EXPECT_EQ(again.theta.values, post.theta.values);

    auto rep = ideal_point_report(post, {{"r004", "r005"}});
    ASSERT_EQ(rep.points.size(), 24u);
    for (const auto& p : rep.points) {
        EXPECT_LE(p.lower, p.mean + 1e-12);
        EXPECT_GE(p.upper, p.mean - 1e-12);
    }
    ASSERT_EQ(rep.pairs.size(), 1u);
    EXPECT_GE(rep.pairs[0].distance, 0.0);
    EXPECT_THROW(ideal_point_report(post, {{"r004", "nobody"}}), ValidationError);

    auto dir = std::filesystem::temp_directory_path() / "ideodepth_irt_posterior";
    std::filesystem::remove_all(dir);
    write_posterior(post, dir);
    auto back = read_posterior(dir);
    EXPECT_EQ(back.respondents, post.respondents);
    EXPECT_EQ(back.items, post.items);
    EXPECT_EQ(back.draws(), post.draws());
    EXPECT_EQ(back.constraints.fixed.size(), 4u);
    for (std::size_t i = 0; i < post.theta.values.size(); ++i)
        ASSERT_EQ(back.theta.values[i], static_cast<double>(static_cast<float>(post.theta.values[i])));

    auto diag = diagnostics_csv(post);
    EXPECT_NE(diag.find("rhat"), std::string::npos);
}

TEST(Sampler, MissingAnchorIsConfigError) {
    auto sim = anchored_sim(8, 20, 1);
    auto cfg = small_config();
    cfg.anchors = {"r001", "r002", "nobody"};
    EXPECT_THROW(fit(sim.votes, cfg), ConfigError);
}

TEST(Sampler, DegenerateItemsDropped) {
    auto sim = anchored_sim(10, 20, 17);
    auto e = sim.votes.entries();
    for (std::size_t j = 0; j < 10; ++j) e[j * 20 + 5] = Response::Liberal;
    corpus::ResponseMatrix y(sim.votes.row_labels(), sim.votes.col_labels(), e);
    auto cfg = small_config(Strategy::PriorsOnly);
    cfg.iterations = 200;
    cfg.burn_in = 100;
    auto post = fit(y, cfg);
    EXPECT_EQ(post.items.size() + post.dropped_items.size(), 20u);
    EXPECT_NE(std::find(post.dropped_items.begin(), post.dropped_items.end(), "i006"), post.dropped_items.end());
}
