#include <algorithm>
#include <cmath>
#include <complex>
#include <set>

#include <unsupported/Eigen/FFT>
#include <fmt/format.h>

#include "ideodepth/errors.hpp"
#include "ideodepth/irt.hpp"
#include "ideodepth/stats.hpp"

namespace ideodepth::irt {

using corpus::Response;

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::PriorsOnly: return "priors-only";
        case Strategy::TwoPoint: return "two-point";
        case Strategy::ThreePoint: return "three-point";
    }
    return "?";
}

Strategy parse_strategy(std::string_view s) {
    if (s == "priors-only") return Strategy::PriorsOnly;
    if (s == "two-point") return Strategy::TwoPoint;
    if (s == "three-point") return Strategy::ThreePoint;
    throw ConfigError("unknown identification strategy \"" + std::string(s) + "\"");
}

void IrtConfig::validate() const {
    if (dims < 1) throw ConfigError("irt: dims must be at least 1");
    if (strategy != Strategy::PriorsOnly && dims != 2)
        throw ConfigError("irt: " + std::string(to_string(strategy)) + " identification needs dims = 2");
    if (chains < 2) throw ConfigError("irt: at least two chains are required");
    if (burn_in >= iterations) throw ConfigError("irt: burn_in must be smaller than iterations");
    if (thin < 1) throw ConfigError("irt: thin must be at least 1");
    if (!(lkj_eta > 0)) throw ConfigError("irt: lkj_eta must be positive");
    if (!(beta_prior_sd > 0)) throw ConfigError("irt: beta_prior_sd must be positive");
    if (!(rhat_threshold > 1)) throw ConfigError("irt: rhat_threshold must exceed 1");
}

void IdentificationConstraints::validate() const {
    std::set<std::pair<std::string, std::size_t>> seen;
    for (const auto& f : fixed) {
        if (!std::isfinite(f.value))
            throw ConfigError("constraint on \"" + f.respondent + "\" has a non-finite value");
        if (!seen.emplace(f.respondent, f.dim).second)
            throw ConfigError(fmt::format("duplicate constraint on \"{}\" dim {}", f.respondent, f.dim + 1));
    }
}

IdentificationConstraints apply_constraints(Strategy strategy, const std::vector<std::string>& respondents) {
    const std::size_t need = strategy == Strategy::PriorsOnly ? 0 : strategy == Strategy::TwoPoint ? 2 : 3;
    if (respondents.size() < need)
        throw ConfigError(fmt::format("{} identification needs {} reference respondents, got {}",
                                      to_string(strategy), need, respondents.size()));
    for (std::size_t a = 0; a < need; ++a)
        for (std::size_t b = a + 1; b < need; ++b)
            if (respondents[a] == respondents[b])
                throw ConfigError("reference respondents must be distinct, \"" + respondents[a] + "\" repeats");
    IdentificationConstraints c;
    if (need >= 2) {
        c.fixed.push_back({respondents[0], 0, -2.0});
        c.fixed.push_back({respondents[1], 0, 2.0});
    }
    if (need == 3) {
        c.fixed.push_back({respondents[2], 0, 0.0});
        c.fixed.push_back({respondents[2], 1, 2.0});
    }
    return c;
}

// ---------------------------------------------------------------------------

double log_logistic(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double logistic(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_likelihood(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& alpha, const Eigen::VectorXd& beta,
                      const ResponseMatrix& y) {
    const auto j = static_cast<Eigen::Index>(y.rows());
    const auto k = static_cast<Eigen::Index>(y.cols());
    if (theta.rows() != j || alpha.rows() != k || beta.size() != k || theta.cols() != alpha.cols())
        throw ValidationError(fmt::format("log_likelihood: shapes theta {}x{}, alpha {}x{}, beta {} do not fit {}x{} votes",
                                          theta.rows(), theta.cols(), alpha.rows(), alpha.cols(), beta.size(), j, k));
    double ll = 0.0;
    for (Eigen::Index r = 0; r < j; ++r) {
        for (Eigen::Index c = 0; c < k; ++c) {
            const auto v = y(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            if (v == Response::Null) continue;
            const double eta = theta.row(r).dot(alpha.row(c)) - beta(c);
            ll += v == Response::Liberal ? log_logistic(eta) : log_logistic(-eta);
        }
    }
    return ll;
}

double sample_correlation_2d(double eta, Rng& rng) {
    if (!(eta > 0)) throw DomainError("LKJ eta must be positive");
    // (1 - rho^2)^(eta - 1) is the density of 2 * Beta(eta, eta) - 1.
    return 2.0 * rng.beta(eta, eta) - 1.0;
}

double sample_correlation_2d(double eta, std::uint64_t seed) {
    Rng rng(seed);
    return sample_correlation_2d(eta, rng);
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd DrawArray::mean() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (draws == 0) return m;
    for (std::size_t s = 0; s < draws; ++s)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) += (*this)(s, r, c);
    return m / static_cast<double>(draws);
}

Eigen::MatrixXd DrawArray::quantile(double q) const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::vector<double> buf(draws);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            for (std::size_t s = 0; s < draws; ++s) buf[s] = (*this)(s, r, c);
            std::sort(buf.begin(), buf.end());
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = stats::quantile_sorted(buf, q);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------

double split_rhat(const std::vector<std::vector<double>>& chains) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    if (chains.empty()) return nan;
    const std::size_t n_full = chains.front().size();
    const std::size_t half = n_full / 2;
    if (half < 2) return nan;
    std::vector<double> means, vars;
    for (const auto& ch : chains) {
        if (ch.size() != n_full) throw ValidationError("split_rhat: chains differ in length");
        for (std::size_t part = 0; part < 2; ++part) {
            const std::size_t off = part == 0 ? 0 : n_full - half;
            double m = 0.0;
            for (std::size_t i = 0; i < half; ++i) m += ch[off + i];
            m /= static_cast<double>(half);
            double ss = 0.0;
            for (std::size_t i = 0; i < half; ++i) ss += (ch[off + i] - m) * (ch[off + i] - m);
            means.push_back(m);
            vars.push_back(ss / static_cast<double>(half - 1));
        }
    }
    const double n = static_cast<double>(half);
    const double mbar = stats::mean(means);
    double b = 0.0;
    for (double m : means) b += (m - mbar) * (m - mbar);
    b *= n / static_cast<double>(means.size() - 1);
    const double w = stats::mean(vars);
    if (!(w > 0)) return nan;
    const double var_plus = (n - 1.0) / n * w + b / n;
    return std::sqrt(var_plus / w);
}

namespace {

/// Biased autocovariance (divides by n) for lags 0..n-1.
std::vector<double> autocovariance(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::size_t size = 1;
    while (size < 2 * n) size <<= 1;
    const double m = stats::mean(x);
    std::vector<double> padded(size, 0.0);
    for (std::size_t i = 0; i < n; ++i) padded[i] = x[i] - m;
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> freq;
    fft.fwd(freq, padded);
    for (auto& f : freq) f = std::complex<double>(std::norm(f), 0.0);
    std::vector<double> back;
    fft.inv(back, freq);
    std::vector<double> out(n);
    for (std::size_t t = 0; t < n; ++t) out[t] = back[t] / static_cast<double>(n);
    return out;
}

}  // namespace

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    if (chains.empty()) return nan;
    const std::size_t n = chains.front().size();
    if (n < 4) return nan;
    const double mc = static_cast<double>(chains.size());
    const double nd = static_cast<double>(n);

    std::vector<std::vector<double>> acov;
    std::vector<double> means;
    for (const auto& ch : chains) {
        if (ch.size() != n) throw ValidationError("effective_sample_size: chains differ in length");
        acov.push_back(autocovariance(ch));
        means.push_back(stats::mean(ch));
    }
    double w = 0.0;
    for (const auto& a : acov) w += a[0] * nd / (nd - 1.0);
    w /= mc;
    double var_plus = w * (nd - 1.0) / nd;
    if (chains.size() > 1) {
        const double mbar = stats::mean(means);
        double b = 0.0;
        for (double m : means) b += (m - mbar) * (m - mbar);
        var_plus += b / (mc - 1.0);
    }
    if (!(var_plus > 0)) return nan;

    auto rho = [&](std::size_t t) {
        double s = 0.0;
        for (const auto& a : acov) s += a[t];
        return 1.0 - (w - s / mc) / var_plus;
    };

    double tau_sum = 0.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t + 1 < n; t += 2) {
        double pair = rho(t) + rho(t + 1);
        if (pair <= 0) break;
        pair = std::min(pair, prev_pair);
        tau_sum += pair;
        prev_pair = pair;
    }
    const double tau = std::max(-1.0 + 2.0 * tau_sum, 1.0 / std::log10(mc * nd + 10.0));
    return mc * nd / tau;
}

// ---------------------------------------------------------------------------

double VoteSimulation::expected_yes_fraction() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (Eigen::Index r = 0; r < theta.rows(); ++r) {
        for (Eigen::Index c = 0; c < alpha.rows(); ++c) {
            if (votes(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) == Response::Null) continue;
            sum += logistic(fixed_linear_predictor ? *fixed_linear_predictor : theta.row(r).dot(alpha.row(c)) - beta(c));
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

VoteSimulation simulate_votes(std::size_t j, std::size_t k, std::size_t d, std::uint64_t seed,
                              const SimulationOptions& options) {
    if (j < 2 || k < 2) throw ConfigError("simulate_votes needs at least two respondents and two items");
    if (d < 1) throw ConfigError("simulate_votes needs at least one dimension");
    if (!(options.missing_rate >= 0.0 && options.missing_rate < 1.0))
        throw ConfigError("missing_rate must lie in [0, 1)");

    VoteSimulation sim;
    sim.seed = seed;
    sim.fixed_linear_predictor = options.fixed_linear_predictor;
    const auto jj = static_cast<Eigen::Index>(j), kk = static_cast<Eigen::Index>(k), dd = static_cast<Eigen::Index>(d);
    auto params = Rng::substream(seed, "simulate/params");
    sim.theta.resize(jj, dd);
    sim.alpha.resize(kk, dd);
    sim.beta.resize(kk);
    for (Eigen::Index r = 0; r < jj; ++r)
        for (Eigen::Index c = 0; c < dd; ++c) sim.theta(r, c) = params.normal();
    for (Eigen::Index r = 0; r < kk; ++r)
        for (Eigen::Index c = 0; c < dd; ++c) sim.alpha(r, c) = params.normal();
    for (Eigen::Index r = 0; r < kk; ++r) sim.beta(r) = params.normal();
    for (const auto& [idx, row] : options.fixed_theta) {
        if (idx >= j || row.size() != d) throw ConfigError("fixed_theta entry does not fit the simulation shape");
        for (std::size_t c = 0; c < d; ++c) sim.theta(static_cast<Eigen::Index>(idx), static_cast<Eigen::Index>(c)) = row[c];
    }

    auto votes = Rng::substream(seed, "simulate/votes");
    auto mask = Rng::substream(seed, "simulate/missing");
    std::vector<Response> cells(j * k);
    for (std::size_t r = 0; r < j; ++r) {
        for (std::size_t c = 0; c < k; ++c) {
            const double eta = options.fixed_linear_predictor
                                   ? *options.fixed_linear_predictor
                                   : sim.theta.row(static_cast<Eigen::Index>(r)).dot(sim.alpha.row(static_cast<Eigen::Index>(c))) -
                                         sim.beta(static_cast<Eigen::Index>(c));
            const bool yes = votes.uniform() < logistic(eta);
            const bool missing = mask.uniform() < options.missing_rate;
            cells[r * k + c] = missing ? Response::Null : yes ? Response::Liberal : Response::Conservative;
        }
    }
    std::vector<std::string> rows, cols;
    for (std::size_t r = 0; r < j; ++r) rows.push_back(fmt::format("r{:03}", r + 1));
    for (std::size_t c = 0; c < k; ++c) cols.push_back(fmt::format("i{:03}", c + 1));
    sim.votes = ResponseMatrix(std::move(rows), std::move(cols), std::move(cells));
    return sim;
}

}  // namespace ideodepth::irt
