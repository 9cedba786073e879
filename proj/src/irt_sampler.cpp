#include <algorithm>
#include <cmath>
#include <optional>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ideodepth/errors.hpp"
#include "ideodepth/irt.hpp"
#include "ideodepth/parallel.hpp"

namespace ideodepth::irt {

using corpus::Response;

namespace {

struct Cell {
    std::uint32_t other;  // item index in respondent lists, respondent index in item lists
    std::uint32_t slot;   // index into the dense cache
    bool yes;
};

/// A one-parameter family of affine maps of the latent space, applied to every
/// free coordinate, paired with the inverse map on item parameters. Linear
/// predictors of respondents without fixed coordinates are unchanged, so only
/// anchored rows enter the likelihood ratio.
///   Translate: theta_d += t
///   Scale:     theta_d = center + e^u (theta_d - center)
///   Shear:     theta_d += c (theta_e - center)
struct GroupMove {
    enum class Kind { Translate, Scale, Shear } kind;
    std::size_t d = 0, e = 0;
    double center = 0.0;
};

struct Problem {
    std::size_t j = 0, k = 0, d = 0;
    std::vector<std::vector<Cell>> by_respondent;
    std::vector<std::vector<Cell>> by_item;
    std::vector<std::uint8_t> fixed;  // J x D
    std::vector<double> fixed_value;  // J x D
    double eta = 1.0;
    double beta_var = 100.0;
    std::vector<GroupMove> moves;
    std::vector<std::size_t> anchored;  // respondents with a fixed coordinate

    bool is_fixed(std::size_t r, std::size_t c) const { return fixed[r * d + c] != 0; }
};

/// One translate, scale and shear per dimension (pair). Centers are chosen so
/// the map fixes the anchored coordinates exactly when that is possible.
std::vector<GroupMove> group_moves(const Problem& p) {
    // Shared theta_e of the respondents fixed on d, when all of them are fixed on e.
    auto common = [&](std::size_t d, std::size_t e) -> double {
        std::optional<double> v;
        for (std::size_t r = 0; r < p.j; ++r) {
            if (!p.is_fixed(r, d)) continue;
            if (!p.is_fixed(r, e)) return 0.0;
            const double x = p.fixed_value[r * p.d + e];
            if (v && *v != x) return 0.0;
            v = x;
        }
        return v.value_or(0.0);
    };
    std::vector<GroupMove> out;
    for (std::size_t d = 0; d < p.d; ++d) {
        out.push_back({GroupMove::Kind::Translate, d, d, 0.0});
        out.push_back({GroupMove::Kind::Scale, d, d, common(d, d)});
        for (std::size_t e = 0; e < p.d; ++e)
            if (e != d) out.push_back({GroupMove::Kind::Shear, d, e, common(d, e)});
    }
    return out;
}

/// Step size and acceptance counters for one Metropolis block.
struct Tuner {
    double step = 0.5;
    std::size_t accepted = 0, tried = 0;         // since last adaptation
    std::size_t kept_accepted = 0, kept_tried = 0;  // after burn-in

    void record(bool ok, bool burning) {
        ++tried;
        accepted += ok;
        if (!burning) {
            ++kept_tried;
            kept_accepted += ok;
        }
    }
    void adapt() {
        if (tried == 0) return;
        const double rate = static_cast<double>(accepted) / static_cast<double>(tried);
        if (rate < 0.20)
            step *= 0.7;
        else if (rate > 0.45)
            step *= 1.4;
        accepted = tried = 0;
    }
};

double cell_ll(double eta, bool yes) { return yes ? log_logistic(eta) : log_logistic(-eta); }

/// Log prior kernel of a D-vector under N(0, Omega); Omega has unit diagonal
/// and off-diagonal rho when D = 2, identity otherwise.
double mvn_kernel(const double* x, std::size_t d, double rho) {
    if (d == 2) return -(x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / (2.0 * (1.0 - rho * rho));
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += x[i] * x[i];
    return -0.5 * s;
}

constexpr int kGroupRounds = 5;
constexpr double kStartJitter = 0.3;

struct StartValues {
    std::vector<double> theta, alpha, beta;
};

/// Leading singular vectors of the centred +1/-1 vote matrix, mapped onto the
/// fixed coordinates by a ridge-regularized affine fit per dimension. Item
/// parameters come from a ridge regression of 1.5 * vote on the start points.
StartValues start_values(const Problem& p) {
    const auto jj = static_cast<Eigen::Index>(p.j), kk = static_cast<Eigen::Index>(p.k),
               dd = static_cast<Eigen::Index>(p.d);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(jj, kk);
    for (std::size_t c = 0; c < p.k; ++c) {
        const auto& cells = p.by_item[c];
        double mean = 0.0;
        for (const auto& cell : cells) mean += cell.yes ? 1.0 : -1.0;
        mean /= static_cast<double>(std::max<std::size_t>(cells.size(), 1));
        for (const auto& cell : cells)
            y(static_cast<Eigen::Index>(cell.other), static_cast<Eigen::Index>(c)) = (cell.yes ? 1.0 : -1.0) - mean;
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(y, Eigen::ComputeThinU);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(jj, dd);
    const Eigen::Index rank = std::min(dd, svd.matrixU().cols());
    x.leftCols(rank) = svd.matrixU().leftCols(rank) * std::sqrt(static_cast<double>(p.j));

    constexpr double ridge = 0.1;
    StartValues sv;
    sv.theta.assign(p.j * p.d, 0.0);
    for (Eigen::Index d = 0; d < dd; ++d) {
        Eigen::MatrixXd a = ridge * Eigen::MatrixXd::Identity(dd + 1, dd + 1);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dd + 1);
        rhs(d) = ridge;
        for (std::size_t r = 0; r < p.j; ++r) {
            if (!p.is_fixed(r, static_cast<std::size_t>(d))) continue;
            Eigen::VectorXd row(dd + 1);
            row << x.row(static_cast<Eigen::Index>(r)).transpose(), 1.0;
            a += row * row.transpose();
            rhs += row * p.fixed_value[r * p.d + static_cast<std::size_t>(d)];
        }
        const Eigen::VectorXd w = a.ldlt().solve(rhs);
        for (std::size_t r = 0; r < p.j; ++r) {
            const auto i = r * p.d + static_cast<std::size_t>(d);
            sv.theta[i] = p.fixed[i] ? p.fixed_value[i] : x.row(static_cast<Eigen::Index>(r)).dot(w.head(dd)) + w(dd);
        }
    }

    sv.alpha.assign(p.k * p.d, 0.0);
    sv.beta.assign(p.k, 0.0);
    for (std::size_t c = 0; c < p.k; ++c) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Identity(dd + 1, dd + 1);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dd + 1);
        for (const auto& cell : p.by_item[c]) {
            Eigen::VectorXd row(dd + 1);
            for (Eigen::Index i = 0; i < dd; ++i) row(i) = sv.theta[cell.other * p.d + static_cast<std::size_t>(i)];
            row(dd) = -1.0;
            a += row * row.transpose();
            rhs += row * (cell.yes ? 1.5 : -1.5);
        }
        const Eigen::VectorXd w = a.ldlt().solve(rhs);
        for (Eigen::Index i = 0; i < dd; ++i) sv.alpha[c * p.d + static_cast<std::size_t>(i)] = std::clamp(w(i), -3.0, 3.0);
        sv.beta[c] = std::clamp(w(dd), -3.0, 3.0);
    }
    return sv;
}

struct ChainOutput {
    std::vector<double> theta, alpha, beta, rho;  // per kept draw, concatenated
    Acceptance acceptance;
};

class Chain {
public:
    Chain(const Problem& p, const StartValues& start, Rng rng)
        : p_(p), rng_(std::move(rng)), theta_(start.theta), alpha_(start.alpha), beta_(start.beta) {
        for (std::size_t i = 0; i < theta_.size(); ++i)
            if (!p.fixed[i]) theta_[i] += kStartJitter * rng_.normal();
        for (auto& a : alpha_) a += kStartJitter * rng_.normal();
        for (auto& b : beta_) b += kStartJitter * rng_.normal();
        ll_.assign(p.j * p.k, 0.0);
        for (std::size_t r = 0; r < p.j; ++r)
            for (const auto& cell : p.by_respondent[r]) ll_[cell.slot] = cell_ll(linear(r, cell.other), cell.yes);
        theta_tuners_.assign(p.j, Tuner{});
        alpha_tuners_.assign(p.k, Tuner{});
        beta_tuners_.assign(p.k, Tuner{0.5});
        rho_theta_tuner_.step = rho_alpha_tuner_.step = 0.2;
        move_tuners_.assign(p.moves.size(), Tuner{0.05});
        std::size_t anchored_cells = 0;
        for (std::size_t r : p.anchored) anchored_cells += p.by_respondent[r].size();
        anchored_ll_.resize(anchored_cells);
        proposal_.resize(std::max(p.d, std::size_t{1}));
        buffer_.resize(std::max(p.j, p.k));
    }

    ChainOutput run(std::size_t iterations, std::size_t burn_in, std::size_t thin) {
        ChainOutput out;
        for (std::size_t it = 0; it < iterations; ++it) {
            const bool burning = it < burn_in;
            for (std::size_t r = 0; r < p_.j; ++r) update_theta(r, burning);
            for (std::size_t c = 0; c < p_.k; ++c) update_alpha(c, burning);
            for (std::size_t c = 0; c < p_.k; ++c) update_beta(c, burning);
            // Cheap next to the sweeps above, so several rounds per iteration.
            for (int round = 0; round < kGroupRounds; ++round) {
                for (std::size_t m = 0; m < p_.moves.size(); ++m) update_group(m, burning);
                if (p_.d == 2) {
                    update_rho(rho_theta_, theta_, p_.j, p_.eta, rho_theta_tuner_, burning);
                    update_rho(rho_alpha_, alpha_, p_.k, 1.0, rho_alpha_tuner_, burning);
                }
            }
            if (burning && (it + 1) % 50 == 0) {
                for (auto& t : theta_tuners_) t.adapt();
                for (auto& t : alpha_tuners_) t.adapt();
                for (auto& t : beta_tuners_) t.adapt();
                for (auto& t : move_tuners_) t.adapt();
                rho_theta_tuner_.adapt();
                rho_alpha_tuner_.adapt();
            }
            if (!burning && (it - burn_in) % thin == 0) {
                out.theta.insert(out.theta.end(), theta_.begin(), theta_.end());
                out.alpha.insert(out.alpha.end(), alpha_.begin(), alpha_.end());
                out.beta.insert(out.beta.end(), beta_.begin(), beta_.end());
                out.rho.push_back(rho_theta_);
                out.rho.push_back(rho_alpha_);
            }
        }
        out.acceptance.theta = rate(theta_tuners_);
        out.acceptance.alpha = rate(alpha_tuners_);
        out.acceptance.beta = rate(beta_tuners_);
        out.acceptance.rho_theta = rate_of(rho_theta_tuner_);
        out.acceptance.rho_alpha = rate_of(rho_alpha_tuner_);
        return out;
    }

private:
    double linear(std::size_t r, std::size_t c) const {
        double s = 0.0;
        for (std::size_t i = 0; i < p_.d; ++i) s += theta_[r * p_.d + i] * alpha_[c * p_.d + i];
        return s - beta_[c];
    }

    bool metropolis(double log_ratio) { return log_ratio >= 0 || std::log(rng_.uniform()) < log_ratio; }

    void update_theta(std::size_t r, bool burning) {
        const std::size_t d = p_.d;
        double* row = &theta_[r * d];
        bool any_free = false;
        for (std::size_t i = 0; i < d; ++i) {
            proposal_[i] = row[i];
            if (!p_.is_fixed(r, i)) {
                proposal_[i] += theta_tuners_[r].step * rng_.normal();
                any_free = true;
            }
        }
        if (!any_free) return;
        const auto& cells = p_.by_respondent[r];
        double old_ll = 0.0, new_ll = 0.0;
        for (std::size_t n = 0; n < cells.size(); ++n) {
            const auto& cell = cells[n];
            double eta = -beta_[cell.other];
            for (std::size_t i = 0; i < d; ++i) eta += proposal_[i] * alpha_[cell.other * d + i];
            buffer_[n] = cell_ll(eta, cell.yes);
            new_ll += buffer_[n];
            old_ll += ll_[cell.slot];
        }
        const double ratio =
            new_ll - old_ll + mvn_kernel(proposal_.data(), d, rho_theta_) - mvn_kernel(row, d, rho_theta_);
        const bool ok = metropolis(ratio);
        theta_tuners_[r].record(ok, burning);
        if (!ok) return;
        for (std::size_t i = 0; i < d; ++i) row[i] = proposal_[i];
        for (std::size_t n = 0; n < cells.size(); ++n) ll_[cells[n].slot] = buffer_[n];
    }

    void update_alpha(std::size_t c, bool burning) {
        const std::size_t d = p_.d;
        double* row = &alpha_[c * d];
        for (std::size_t i = 0; i < d; ++i) proposal_[i] = row[i] + alpha_tuners_[c].step * rng_.normal();
        const auto& cells = p_.by_item[c];
        double old_ll = 0.0, new_ll = 0.0;
        for (std::size_t n = 0; n < cells.size(); ++n) {
            const auto& cell = cells[n];
            double eta = -beta_[c];
            for (std::size_t i = 0; i < d; ++i) eta += theta_[cell.other * d + i] * proposal_[i];
            buffer_[n] = cell_ll(eta, cell.yes);
            new_ll += buffer_[n];
            old_ll += ll_[cell.slot];
        }
        const double ratio =
            new_ll - old_ll + mvn_kernel(proposal_.data(), d, rho_alpha_) - mvn_kernel(row, d, rho_alpha_);
        const bool ok = metropolis(ratio);
        alpha_tuners_[c].record(ok, burning);
        if (!ok) return;
        for (std::size_t i = 0; i < d; ++i) row[i] = proposal_[i];
        for (std::size_t n = 0; n < cells.size(); ++n) ll_[cells[n].slot] = buffer_[n];
    }

    void update_beta(std::size_t c, bool burning) {
        const double proposal = beta_[c] + beta_tuners_[c].step * rng_.normal();
        const auto& cells = p_.by_item[c];
        double old_ll = 0.0, new_ll = 0.0;
        for (std::size_t n = 0; n < cells.size(); ++n) {
            const auto& cell = cells[n];
            double eta = -proposal;
            for (std::size_t i = 0; i < p_.d; ++i) eta += theta_[cell.other * p_.d + i] * alpha_[c * p_.d + i];
            buffer_[n] = cell_ll(eta, cell.yes);
            new_ll += buffer_[n];
            old_ll += ll_[cell.slot];
        }
        const double ratio = new_ll - old_ll - (proposal * proposal - beta_[c] * beta_[c]) / (2.0 * p_.beta_var);
        const bool ok = metropolis(ratio);
        beta_tuners_[c].record(ok, burning);
        if (!ok) return;
        beta_[c] = proposal;
        for (std::size_t n = 0; n < cells.size(); ++n) ll_[cells[n].slot] = buffer_[n];
    }

    double log_prior(const std::vector<double>& theta, const std::vector<double>& alpha,
                     const std::vector<double>& beta) const {
        double lp = 0.0;
        for (std::size_t r = 0; r < p_.j; ++r) lp += mvn_kernel(&theta[r * p_.d], p_.d, rho_theta_);
        for (std::size_t c = 0; c < p_.k; ++c) lp += mvn_kernel(&alpha[c * p_.d], p_.d, rho_alpha_);
        for (double b : beta) lp -= b * b / (2.0 * p_.beta_var);
        return lp;
    }

    // The likelihood cancels, so the ratio is prior times Jacobian.
    void update_group(std::size_t m, bool burning) {
        const auto& mv = p_.moves[m];
        const std::size_t d = p_.d;
        const double z = move_tuners_[m].step * rng_.normal();
        theta_new_ = theta_;
        alpha_new_ = alpha_;
        beta_new_ = beta_;
        double log_jac = 0.0;
        switch (mv.kind) {
            case GroupMove::Kind::Translate:
                for (std::size_t r = 0; r < p_.j; ++r)
                    if (!p_.is_fixed(r, mv.d)) theta_new_[r * d + mv.d] += z;
                for (std::size_t c = 0; c < p_.k; ++c) beta_new_[c] += z * alpha_[c * d + mv.d];
                break;
            case GroupMove::Kind::Scale: {
                const double s = std::exp(z);
                std::size_t free = 0;
                for (std::size_t r = 0; r < p_.j; ++r) {
                    if (p_.is_fixed(r, mv.d)) continue;
                    auto& x = theta_new_[r * d + mv.d];
                    x = mv.center + s * (x - mv.center);
                    ++free;
                }
                for (std::size_t c = 0; c < p_.k; ++c) {
                    auto& a = alpha_new_[c * d + mv.d];
                    const double old = a;
                    a = old / s;
                    beta_new_[c] += mv.center * (a - old);
                }
                log_jac = z * (static_cast<double>(free) - static_cast<double>(p_.k));
                break;
            }
            case GroupMove::Kind::Shear:
                for (std::size_t r = 0; r < p_.j; ++r)
                    if (!p_.is_fixed(r, mv.d)) theta_new_[r * d + mv.d] += z * (theta_[r * d + mv.e] - mv.center);
                for (std::size_t c = 0; c < p_.k; ++c) {
                    alpha_new_[c * d + mv.e] -= z * alpha_[c * d + mv.d];
                    beta_new_[c] -= z * mv.center * alpha_[c * d + mv.d];
                }
                break;
        }
        double dll = 0.0;
        std::size_t n = 0;
        for (std::size_t r : p_.anchored)
            for (const auto& cell : p_.by_respondent[r]) {
                double eta = -beta_new_[cell.other];
                for (std::size_t i = 0; i < d; ++i) eta += theta_new_[r * d + i] * alpha_new_[cell.other * d + i];
                anchored_ll_[n] = cell_ll(eta, cell.yes);
                dll += anchored_ll_[n++] - ll_[cell.slot];
            }
        const double ratio =
            dll + log_prior(theta_new_, alpha_new_, beta_new_) - log_prior(theta_, alpha_, beta_) + log_jac;
        const bool ok = metropolis(ratio);
        move_tuners_[m].record(ok, burning);
        if (!ok) return;
        n = 0;
        for (std::size_t r : p_.anchored)
            for (const auto& cell : p_.by_respondent[r]) ll_[cell.slot] = anchored_ll_[n++];
        theta_.swap(theta_new_);
        alpha_.swap(alpha_new_);
        beta_.swap(beta_new_);
    }

    /// rho of a 2-D normal prior shared by `n` rows of `x`, with an
    /// (1 - rho^2)^(eta - 1) prior on rho.
    void update_rho(double& rho, const std::vector<double>& x, std::size_t n, double eta, Tuner& tuner, bool burning) {
        const double proposal = rho + tuner.step * rng_.normal();
        if (std::abs(proposal) >= 1.0) {
            tuner.record(false, burning);
            return;
        }
        double s11 = 0, s22 = 0, s12 = 0;
        for (std::size_t r = 0; r < n; ++r) {
            s11 += x[2 * r] * x[2 * r];
            s22 += x[2 * r + 1] * x[2 * r + 1];
            s12 += x[2 * r] * x[2 * r + 1];
        }
        auto logpost = [&](double q) {
            const double det = 1.0 - q * q;
            return (eta - 1.0) * std::log(det) - 0.5 * static_cast<double>(n) * std::log(det) -
                   (s11 - 2.0 * q * s12 + s22) / (2.0 * det);
        };
        const bool ok = metropolis(logpost(proposal) - logpost(rho));
        tuner.record(ok, burning);
        if (ok) rho = proposal;
    }

    static double rate_of(const Tuner& t) {
        return t.kept_tried ? static_cast<double>(t.kept_accepted) / static_cast<double>(t.kept_tried) : 0.0;
    }
    static double rate(const std::vector<Tuner>& ts) {
        std::size_t a = 0, n = 0;
        for (const auto& t : ts) {
            a += t.kept_accepted;
            n += t.kept_tried;
        }
        return n ? static_cast<double>(a) / static_cast<double>(n) : 0.0;
    }

    const Problem& p_;
    Rng rng_;
    std::vector<double> theta_, alpha_, beta_, ll_;
    double rho_theta_ = 0.0, rho_alpha_ = 0.0;
    std::vector<Tuner> theta_tuners_, alpha_tuners_, beta_tuners_;
    Tuner rho_theta_tuner_, rho_alpha_tuner_;
    std::vector<Tuner> move_tuners_;
    std::vector<double> proposal_, buffer_;
    std::vector<double> theta_new_, alpha_new_, beta_new_, anchored_ll_;
};

std::vector<std::vector<double>> per_chain(const DrawArray& a, std::size_t chains, std::size_t per, std::size_t r,
                                           std::size_t c) {
    std::vector<std::vector<double>> out(chains, std::vector<double>(per));
    for (std::size_t ch = 0; ch < chains; ++ch)
        for (std::size_t s = 0; s < per; ++s) out[ch][s] = a(ch * per + s, r, c);
    return out;
}

}  // namespace

Diagnostics compute_diagnostics(const IrtPosterior& post) {
    const std::size_t j = post.respondents.size(), k = post.items.size(), d = post.config.dims;
    const std::size_t chains_n = post.config.chains, per = post.draws_per_chain;
    if (post.theta.draws != chains_n * per) throw ValidationError("posterior draw count does not match chains x draws");
    std::vector<std::uint8_t> fixed(j * d, 0);
    for (const auto& f : post.constraints.fixed) {
        auto it = std::find(post.respondents.begin(), post.respondents.end(), f.respondent);
        if (it != post.respondents.end() && f.dim < d)
            fixed[static_cast<std::size_t>(it - post.respondents.begin()) * d + f.dim] = 1;
    }
    Diagnostics dg;
    const auto jj = static_cast<Eigen::Index>(j), kk = static_cast<Eigen::Index>(k),
               dd = static_cast<Eigen::Index>(d);
    dg.rhat_theta.resize(jj, dd);
    dg.ess_theta.resize(jj, dd);
    dg.rhat_alpha.resize(kk, dd);
    dg.ess_alpha.resize(kk, dd);
    dg.rhat_beta.resize(kk);
    dg.ess_beta.resize(kk);
    double max_rhat = 0.0, min_ess = std::numeric_limits<double>::infinity();
    auto track = [&](double rh, double es) {
        if (std::isfinite(rh)) max_rhat = std::max(max_rhat, rh);
        if (std::isfinite(es)) min_ess = std::min(min_ess, es);
    };
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t r = 0; r < j; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            double rh = nan, es = nan;
            if (!fixed[r * d + c]) {
                const auto chains = per_chain(post.theta, chains_n, per, r, c);
                rh = split_rhat(chains);
                es = effective_sample_size(chains);
            }
            dg.rhat_theta(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rh;
            dg.ess_theta(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = es;
            track(rh, es);
        }
    }
    for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const auto chains = per_chain(post.alpha, chains_n, per, r, c);
            const double rh = split_rhat(chains), es = effective_sample_size(chains);
            dg.rhat_alpha(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rh;
            dg.ess_alpha(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = es;
            track(rh, es);
        }
        const auto chains = per_chain(post.beta, chains_n, per, r, 0);
        dg.rhat_beta(static_cast<Eigen::Index>(r)) = split_rhat(chains);
        dg.ess_beta(static_cast<Eigen::Index>(r)) = effective_sample_size(chains);
        track(dg.rhat_beta(static_cast<Eigen::Index>(r)), dg.ess_beta(static_cast<Eigen::Index>(r)));
    }
    if (d == 2) {
        for (std::size_t i = 0; i < 2; ++i) {
            const auto chains = per_chain(post.rho, chains_n, per, i, 0);
            dg.rhat_rho(static_cast<Eigen::Index>(i)) = split_rhat(chains);
            dg.ess_rho(static_cast<Eigen::Index>(i)) = effective_sample_size(chains);
            track(dg.rhat_rho(static_cast<Eigen::Index>(i)), dg.ess_rho(static_cast<Eigen::Index>(i)));
        }
    }
    dg.max_rhat = max_rhat;
    dg.min_ess = std::isfinite(min_ess) ? min_ess : nan;
    return dg;
}

IrtPosterior sample_posterior(const ResponseMatrix& y, const IrtConfig& cfg,
                              const IdentificationConstraints& constraints) {
    cfg.validate();
    constraints.validate();

    IrtPosterior post;
    post.config = cfg;
    post.constraints = constraints;
    post.respondents = y.row_labels();

    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < y.cols(); ++c) {
        bool yes = false, no = false;
        for (std::size_t r = 0; r < y.rows(); ++r) {
            yes |= y(r, c) == Response::Liberal;
            no |= y(r, c) == Response::Conservative;
        }
        if (yes && no) {
            keep.push_back(c);
            post.items.push_back(y.col_labels()[c]);
        } else {
            post.dropped_items.push_back(y.col_labels()[c]);
        }
    }
    if (!post.dropped_items.empty())
        spdlog::warn("irt: dropped {} item(s) without vote variation, first \"{}\"", post.dropped_items.size(),
                     post.dropped_items.front());
    if (y.rows() < 2 || keep.size() < 2)
        throw InsufficientDataError(fmt::format("irt needs at least 2 respondents and 2 items with variation, got {} and {}",
                                                y.rows(), keep.size()));

    Problem p;
    p.j = y.rows();
    p.k = keep.size();
    p.d = cfg.dims;
    p.eta = cfg.lkj_eta;
    p.beta_var = cfg.beta_prior_sd * cfg.beta_prior_sd;
    p.by_respondent.resize(p.j);
    p.by_item.resize(p.k);
    for (std::size_t r = 0; r < p.j; ++r) {
        for (std::size_t c = 0; c < p.k; ++c) {
            const auto v = y(r, keep[c]);
            if (v == Response::Null) continue;
            const auto slot = static_cast<std::uint32_t>(r * p.k + c);
            const bool yes = v == Response::Liberal;
            p.by_respondent[r].push_back({static_cast<std::uint32_t>(c), slot, yes});
            p.by_item[c].push_back({static_cast<std::uint32_t>(r), slot, yes});
        }
    }
    p.fixed.assign(p.j * p.d, 0);
    p.fixed_value.assign(p.j * p.d, 0.0);
    std::vector<bool> sign_pinned(p.d, false);
    for (const auto& f : constraints.fixed) {
        auto r = y.row_index(f.respondent);
        if (!r) throw ConfigError("constraint names unknown respondent \"" + f.respondent + "\"");
        if (f.dim >= p.d) throw ConfigError(fmt::format("constraint dimension {} exceeds dims = {}", f.dim + 1, p.d));
        p.fixed[*r * p.d + f.dim] = 1;
        p.fixed_value[*r * p.d + f.dim] = f.value;
        if (f.value != 0.0) sign_pinned[f.dim] = true;
    }
    for (std::size_t r = 0; r < p.j; ++r)
        for (std::size_t c = 0; c < p.d; ++c)
            if (p.is_fixed(r, c)) {
                p.anchored.push_back(r);
                break;
            }
    p.moves = group_moves(p);

    const std::size_t per = (cfg.iterations - cfg.burn_in + cfg.thin - 1) / cfg.thin;
    std::vector<ChainOutput> outputs(cfg.chains);
    const auto start = start_values(p);
    parallel_for(cfg.chains, cfg.workers, [&](std::size_t ch) {
        Chain chain(p, start, Rng::substream(cfg.seed, "irt/chain", ch));
        outputs[ch] = chain.run(cfg.iterations, cfg.burn_in, cfg.thin);
    });

    const std::size_t s_total = cfg.chains * per;
    post.draws_per_chain = per;
    post.theta = DrawArray(s_total, p.j, p.d);
    post.alpha = DrawArray(s_total, p.k, p.d);
    post.beta = DrawArray(s_total, p.k, 1);
    post.rho = DrawArray(s_total, 2, 1);
    for (std::size_t ch = 0; ch < cfg.chains; ++ch) {
        const auto& o = outputs[ch];
        std::copy(o.theta.begin(), o.theta.end(), post.theta.values.begin() + static_cast<std::ptrdiff_t>(ch * per * p.j * p.d));
        std::copy(o.alpha.begin(), o.alpha.end(), post.alpha.values.begin() + static_cast<std::ptrdiff_t>(ch * per * p.k * p.d));
        std::copy(o.beta.begin(), o.beta.end(), post.beta.values.begin() + static_cast<std::ptrdiff_t>(ch * per * p.k));
        std::copy(o.rho.begin(), o.rho.end(), post.rho.values.begin() + static_cast<std::ptrdiff_t>(ch * per * 2));
        post.acceptance.push_back(o.acceptance);
    }

    // Reflection along a dimension no constraint pins is a label switch; align
    // every chain's sign with chain 0.
    auto chain_column_mean = [&](std::size_t ch, std::size_t r, std::size_t c) {
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) s += post.theta(ch * per + i, r, c);
        return s / static_cast<double>(per);
    };
    for (std::size_t dim = 0; dim < p.d; ++dim) {
        if (sign_pinned[dim]) continue;
        std::vector<double> ref(p.j);
        for (std::size_t r = 0; r < p.j; ++r) ref[r] = chain_column_mean(0, r, dim);
        const double ref_mean = stats::mean(ref);
        for (std::size_t ch = 1; ch < cfg.chains; ++ch) {
            std::vector<double> cur(p.j);
            for (std::size_t r = 0; r < p.j; ++r) cur[r] = chain_column_mean(ch, r, dim);
            const double cur_mean = stats::mean(cur);
            double dot = 0.0;
            for (std::size_t r = 0; r < p.j; ++r) dot += (ref[r] - ref_mean) * (cur[r] - cur_mean);
            if (dot >= 0) continue;
            for (std::size_t i = 0; i < per; ++i) {
                const std::size_t s = ch * per + i;
                for (std::size_t r = 0; r < p.j; ++r) post.theta(s, r, dim) = -post.theta(s, r, dim);
                for (std::size_t c = 0; c < p.k; ++c) post.alpha(s, c, dim) = -post.alpha(s, c, dim);
                if (p.d == 2) {
                    post.rho(s, 0, 0) = -post.rho(s, 0, 0);
                    post.rho(s, 1, 0) = -post.rho(s, 1, 0);
                }
            }
        }
    }

    post.diagnostics = compute_diagnostics(post);
    const double max_rhat = post.diagnostics.max_rhat;
    post.converged = max_rhat <= cfg.rhat_threshold;
    if (!post.converged)
        spdlog::warn("irt: max R-hat {:.3f} exceeds {:.2f}; posterior flagged as not converged", max_rhat,
                     cfg.rhat_threshold);
    return post;
}

IrtPosterior fit(const ResponseMatrix& y, const IrtConfig& cfg) {
    return sample_posterior(y, cfg, apply_constraints(cfg.strategy, cfg.anchors));
}

}  // namespace ideodepth::irt
