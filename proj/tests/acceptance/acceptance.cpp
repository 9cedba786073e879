// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// the number of failures (capped at 1).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "ideodepth/agreement.hpp"
#include "ideodepth/factor.hpp"
#include "ideodepth/irt.hpp"
#include "ideodepth/rng.hpp"
#include "ideodepth/steer.hpp"

namespace fs = std::filesystem;
using namespace ideodepth;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string cli_path;

// ---------------------------------------------------------------------------

irt::VoteSimulation recovery_data(std::uint64_t seed) {
    irt::SimulationOptions so;
    so.fixed_theta = {{0, {-2.0, 0.0}}, {1, {2.0, 0.0}}, {2, {0.0, 2.0}}};
    return irt::simulate_votes(50, 200, 2, seed, so);
}

irt::IrtConfig recovery_config(irt::Strategy s, std::size_t iterations, std::uint64_t seed) {
    irt::IrtConfig cfg;
    cfg.strategy = s;
    cfg.anchors = {"r001", "r002", "r003"};
    cfg.chains = 4;
    cfg.iterations = iterations;
    cfg.burn_in = iterations / 2;
    cfg.workers = 1;
    cfg.seed = seed;
    return cfg;
}

Outcome irt_recovery() {
    auto sim = recovery_data(7);
    const auto t0 = std::chrono::steady_clock::now();
    auto post = irt::fit(sim.votes, recovery_config(irt::Strategy::ThreePoint, 4000, 1));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto m = irt::validate_against_reference(post.theta_mean(), sim.theta);
    const double r1 = m[0].fit.r, r2 = m[1].fit.r;
    return {r1 >= 0.90 && r2 >= 0.80 && secs <= 600.0,
            fmt::format("|r| dim1={:.4f} dim2={:.4f}, max R-hat {:.3f}, {:.1f} s", r1, r2,
                        post.diagnostics.max_rhat, secs)};
}

Outcome strategy_ordering() {
    auto sim = recovery_data(7);
    struct Row {
        irt::Strategy s;
        double mean = 0, sd = 0;
    };
    std::vector<Row> rows{{irt::Strategy::ThreePoint}, {irt::Strategy::TwoPoint}, {irt::Strategy::PriorsOnly}};
    for (auto& row : rows) {
        std::vector<double> r2;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            auto post = irt::fit(sim.votes, recovery_config(row.s, 2000, seed));
            r2.push_back(irt::validate_against_reference(post.theta_mean(), sim.theta)[1].fit.r);
        }
        for (double x : r2) row.mean += x / 5.0;
        for (double x : r2) row.sd += (x - row.mean) * (x - row.mean) / 4.0;
        row.sd = std::sqrt(row.sd);
    }
    const bool ordered = rows[0].sd < rows[1].sd && rows[1].sd < rows[2].sd;
    const bool lowest = rows[2].mean < rows[0].mean && rows[2].mean < rows[1].mean;
    return {ordered && lowest,
            fmt::format("sd three={:.4f} two={:.4f} priors={:.4f}; mean three={:.3f} two={:.3f} priors={:.3f}",
                        rows[0].sd, rows[1].sd, rows[2].sd, rows[0].mean, rows[1].mean, rows[2].mean)};
}

Outcome rotation_invariance() {
    irt::SimulationOptions so;
    so.missing_rate = 0.1;
    auto sim = irt::simulate_votes(50, 200, 2, 3, so);
    const double base = irt::log_likelihood(sim.theta, sim.alpha, sim.beta, sim.votes);
    Rng rng(2024);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        const double t = rng.uniform() * 2 * std::numbers::pi;
        Eigen::Matrix2d r;
        r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
        const double ll = irt::log_likelihood(sim.theta * r, sim.alpha * r, sim.beta, sim.votes);
        worst = std::max(worst, std::abs(ll - base) / std::abs(base));
    }
    return {worst <= 1e-9, fmt::format("max relative change {:.2e} over 100 rotations", worst)};
}

Outcome kappa_and_consistency() {
    const double k = agreement::fleiss_kappa({{3, 0}, {2, 1}});
    bool exact = true;
    for (int mask = 0; mask < 16; ++mask) {
        std::vector<corpus::Response> v;
        std::vector<double> x;
        for (int b = 0; b < 4; ++b) {
            const bool lib = (mask >> b) & 1;
            v.push_back(lib ? corpus::Response::Liberal : corpus::Response::Conservative);
            x.push_back(lib ? 1.0 : 0.0);
        }
        double mean = 0, var = 0;
        for (double e : x) mean += e / 4.0;
        for (double e : x) var += (e - mean) * (e - mean) / 4.0;
        exact = exact && agreement::consistency(v) == 1.0 - 4.0 * var;
    }
    return {std::abs(k + 0.2) <= 1e-12 && exact,
            fmt::format("kappa {:.15f}; consistency {} on 16 vectors", k, exact ? "exact" : "mismatch")};
}

// Variance of squared row-normalized loadings, summed over columns.
double varimax_oracle(const Eigen::MatrixXd& l) {
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

Outcome paf_and_varimax() {
    std::vector<std::string> detail;
    bool ok = true;

    Eigen::MatrixXd cs = Eigen::MatrixXd::Constant(3, 3, 0.5);
    cs.diagonal().setOnes();
    auto s = factor::principal_axis_factor(factor::CorrelationMatrix::from_dense({"a", "b", "c"}, cs),
                                           factor::Retention::kaiser());
    const double eig_err = (s.initial_eigenvalues - Eigen::Vector3d(2.0, 0.5, 0.5)).cwiseAbs().maxCoeff();
    ok = ok && eig_err <= 1e-9;
    detail.push_back(fmt::format("eigen err {:.1e}", eig_err));

    Eigen::Vector4d lambda(0.9, 0.8, 0.7, 0.6);
    Eigen::MatrixXd r1 = lambda * lambda.transpose();
    r1.diagonal().setOnes();
    auto one = factor::principal_axis_factor(factor::CorrelationMatrix::from_dense({"a", "b", "c", "d"}, r1),
                                             factor::Retention::fixed(1), {1e-14, 100000});
    const double load_err = std::min((one.loadings.col(0) - lambda).cwiseAbs().maxCoeff(),
                                     (one.loadings.col(0) + lambda).cwiseAbs().maxCoeff());
    ok = ok && load_err <= 1e-6;
    detail.push_back(fmt::format("rank-1 err {:.1e}", load_err));

    Rng rng(606);
    double comm_err = 0, crit_err = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd l(6, 2);
        for (Eigen::Index i = 0; i < l.size(); ++i) l(i) = rng.uniform() * 1.6 - 0.8;
        auto v = factor::varimax(l);
        comm_err = std::max(comm_err, (v.loadings.rowwise().squaredNorm() - l.rowwise().squaredNorm()).cwiseAbs().maxCoeff());
        double best = -1;
        for (double t = 0; t < std::numbers::pi / 2; t += 0.001) {
            Eigen::Matrix2d rot;
            rot << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
            best = std::max(best, varimax_oracle(l * rot));
        }
        crit_err = std::max(crit_err, std::abs(varimax_oracle(v.loadings) - best));
    }
    ok = ok && comm_err <= 1e-9 && crit_err <= 1e-6;
    detail.push_back(fmt::format("varimax communality err {:.1e}, criterion gap {:.1e}", comm_err, crit_err));
    return {ok, fmt::format("{}; {}; {}", detail[0], detail[1], detail[2])};
}

Outcome output_score_replay() {
    const fs::path data = IDEODEPTH_TEST_DATA;
    auto hand = steer::read_intervention_records(data / "output_scores_hand.jsonl");
    const double first = steer::output_score(hand.records.at(0));
    auto recorded = steer::read_intervention_records(data / "output_scores_recorded.jsonl");
    auto s = steer::score_summary(recorded.records);
    const bool ok = first == -0.44 && std::abs(s.mean - 0.002407) <= 1e-6 && std::abs(s.max - 0.882730) <= 1e-6;
    return {ok, fmt::format("hand {:.17g}; mean {:.7f} max {:.6f} over {} records", first, s.mean, s.max, s.n)};
}

Outcome feature_stats_brute_force() {
    Rng rng(515);
    std::size_t cases = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(20), f = 1 + rng.below(50);
        auto draw = [&] {
            std::vector<std::string> ids;
            for (std::size_t p = 0; p < n; ++p) ids.push_back("p" + std::to_string(p));
            std::vector<corpus::SaeEntry> e;
            for (std::size_t p = 0; p < n; ++p)
                for (std::size_t k = 0; k < f; ++k)
                    if (rng.uniform() < 0.2) e.push_back({p, k, rng.uniform() * 4.0, 1 + rng.below(30)});
            return corpus::SaeActivationMatrix(ids, f, e);
        };
        auto pos = draw(), neg = draw();
        std::vector<std::vector<double>> dp(n, std::vector<double>(f, 0.0)), dn = dp;
        for (const auto& e : pos.entries()) dp[e.prompt][e.feature] = e.activation;
        for (const auto& e : neg.entries()) dn[e.prompt][e.feature] = e.activation;

        auto stats = steer::compute_feature_stats(pos, neg);
        std::vector<double> raw(f, 0.0), fp(f, 0.0), fn(f, 0.0);
        double mx = 0;
        for (std::size_t k = 0; k < f; ++k) {
            std::size_t cp = 0, cn = 0;
            for (std::size_t p = 0; p < n; ++p) {
                raw[k] += dp[p][k] - dn[p][k];
                cp += dp[p][k] > 0;
                cn += dn[p][k] > 0;
            }
            raw[k] /= static_cast<double>(n);
            fp[k] = static_cast<double>(cp) / static_cast<double>(n);
            fn[k] = static_cast<double>(cn) / static_cast<double>(n);
            mx = std::max(mx, std::abs(raw[k]));
        }
        for (std::size_t k = 0; k < f; ++k) {
            const double da = mx > 0 ? raw[k] / mx : 0.0;
            if (stats.delta_a_raw[k] != raw[k] || stats.delta_a[k] != da || stats.delta_f[k] != fp[k] - fn[k])
                return {false, fmt::format("trial {} feature {} differs", trial, k)};
        }
        for (auto mode : {steer::SelectionMode::Union, steer::SelectionMode::Intersection}) {
            std::vector<std::size_t> want;
            for (std::size_t k = 0; k < f; ++k) {
                const bool a = stats.delta_a[k] > 0, b = stats.delta_f[k] > 0;
                if (mode == steer::SelectionMode::Union ? (a || b) : (a && b)) want.push_back(k);
            }
            if (steer::select_sta(stats, mode).features != want)
                return {false, fmt::format("trial {} selection differs", trial)};
        }
        ++cases;
    }
    return {true, fmt::format("{} random sparse pairs identical", cases)};
}

Outcome lkj_uniform() {
    const std::size_t n = 100000;
    Rng rng(17);
    std::vector<double> x(n);
    for (auto& v : x) v = irt::sample_correlation_2d(1.0, rng);
    std::sort(x.begin(), x.end());
    double d = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double cdf = (x[i] + 1.0) / 2.0;
        d = std::max({d, static_cast<double>(i + 1) / n - cdf, cdf - static_cast<double>(i) / n});
    }
    const double crit = 1.628 / std::sqrt(static_cast<double>(n));
    return {d < crit, fmt::format("KS D = {:.5f}, critical {:.5f}", d, crit)};
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

Outcome end_to_end() {
    if (cli_path.empty()) return {false, "no --cli given"};
    const fs::path fixture = IDEODEPTH_FIXTURE;
    const auto root = fs::temp_directory_path() / "ideodepth_acceptance_e2e";
    fs::remove_all(root);
    fs::create_directories(root);
    std::vector<json> files;
    for (const char* run : {"run1", "run2"}) {
        const auto out = root / run;
        const auto cmd = fmt::format("env -u IDEODEPTH_API_KEY \"{}\" all --config \"{}\" --out \"{}\" --log-level error > \"{}\" 2>&1",
                                     cli_path, (fixture / "config.json").string(), out.string(),
                                     (root / (std::string(run) + ".log")).string());
        const int rc = std::system(cmd.c_str());
        if (rc != 0) return {false, fmt::format("{} exited with status {}", run, rc)};
        auto manifest = read_json(out / "manifest.json");
        if (!manifest.value("converged", false)) return {false, fmt::format("{} reported an unconverged fit", run)};
        files.push_back(manifest.at("files"));
    }
    if (files[0] != files[1]) return {false, "report digests differ between runs"};
    return {true, fmt::format("{} files, digests identical across two runs", files[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
    std::string only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--cli" && i + 1 < argc)
            cli_path = argv[++i];
        else if (a == "--only" && i + 1 < argc)
            only = argv[++i];
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"irt-recovery", irt_recovery},
        {"strategy-ordering", strategy_ordering},
        {"rotation-invariance", rotation_invariance},
        {"kappa-consistency", kappa_and_consistency},
        {"paf-varimax", paf_and_varimax},
        {"output-score-replay", output_score_replay},
        {"feature-stats-brute-force", feature_stats_brute_force},
        {"lkj-ks", lkj_uniform},
        {"end-to-end-offline", end_to_end},
    };

    int failures = 0;
    for (const auto& [name, check] : criteria) {
        if (!only.empty() && name != only) continue;
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        fmt::print("{} {}: {}\n", o.pass ? "PASS" : "FAIL", name, o.detail);
        std::fflush(stdout);
    }
    return failures ? 1 : 0;
}
