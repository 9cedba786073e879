#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "format.hpp"
#include "ideodepth/errors.hpp"
#include "ideodepth/irt.hpp"

namespace ideodepth::irt {

using detail::num;
using nlohmann::json;

std::vector<DimensionMatch> validate_against_reference(const Eigen::MatrixXd& estimate,
                                                       const Eigen::MatrixXd& reference) {
    if (estimate.rows() != reference.rows() || estimate.cols() != reference.cols())
        throw ValidationError(fmt::format("estimate is {}x{} but reference is {}x{}", estimate.rows(), estimate.cols(),
                                          reference.rows(), reference.cols()));
    const auto d = static_cast<std::size_t>(reference.cols());
    std::vector<std::vector<stats::Correlation>> corr(d, std::vector<stats::Correlation>(d));
    for (std::size_t a = 0; a < d; ++a) {
        const Eigen::VectorXd ref = reference.col(static_cast<Eigen::Index>(a));
        for (std::size_t b = 0; b < d; ++b) {
            const Eigen::VectorXd est = estimate.col(static_cast<Eigen::Index>(b));
            corr[a][b] = stats::pearson(std::span<const double>(ref.data(), static_cast<std::size_t>(ref.size())),
                                        std::span<const double>(est.data(), static_cast<std::size_t>(est.size())));
        }
    }
    std::vector<std::size_t> perm(d), best;
    std::iota(perm.begin(), perm.end(), 0);
    double best_score = -1.0;
    do {
        double score = 0.0;
        for (std::size_t a = 0; a < d; ++a) score += std::abs(corr[a][perm[a]].r);
        if (score > best_score) {
            best_score = score;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    std::vector<DimensionMatch> out;
    for (std::size_t a = 0; a < d; ++a) {
        DimensionMatch m;
        m.reference_dim = a;
        m.estimate_dim = best[a];
        m.fit = corr[a][best[a]];
        m.flipped = m.fit.r < 0;
        m.fit.r = std::abs(m.fit.r);
        out.push_back(m);
    }
    return out;
}

ReferenceScores parse_reference_scores(std::string_view text) {
    ReferenceScores out;
    std::vector<std::vector<double>> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() < 2) throw ParseError("reference row needs an id and at least one score", line_no);
        std::vector<double> vals;
        bool numeric = true;
        for (std::size_t i = 1; i < fields.size(); ++i) {
            try {
                std::size_t used = 0;
                vals.push_back(std::stod(fields[i], &used));
                if (used != fields[i].size()) numeric = false;
            } catch (const std::exception&) {
                numeric = false;
            }
        }
        if (!numeric) {
            if (rows.empty() && out.respondents.empty()) continue;  // header
            throw ParseError("non-numeric reference score", line_no);
        }
        if (width == 0) width = vals.size();
        if (vals.size() != width) throw ParseError("reference rows differ in width", line_no);
        out.respondents.push_back(fields[0]);
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw ValidationError("reference file has no rows");
    out.scores.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < width; ++c)
            out.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return out;
}

ReferenceScores read_reference_scores(const std::filesystem::path& path) {
    return parse_reference_scores(corpus::read_file(path));
}

std::vector<DimensionMatch> validate_against_reference(const IrtPosterior& posterior, const ReferenceScores& ref) {
    if (ref.respondents.size() != posterior.respondents.size())
        throw ValidationError(fmt::format("reference has {} respondents, posterior has {}", ref.respondents.size(),
                                          posterior.respondents.size()));
    const Eigen::MatrixXd means = posterior.theta_mean();
    Eigen::MatrixXd est(means.rows(), means.cols());
    for (std::size_t i = 0; i < ref.respondents.size(); ++i) {
        auto it = std::find(posterior.respondents.begin(), posterior.respondents.end(), ref.respondents[i]);
        if (it == posterior.respondents.end())
            throw ValidationError("reference respondent \"" + ref.respondents[i] + "\" is not in the posterior");
        est.row(static_cast<Eigen::Index>(i)) = means.row(it - posterior.respondents.begin());
    }
    return validate_against_reference(est, ref.scores);
}

// ---------------------------------------------------------------------------

IdealPointReport ideal_point_report(const IrtPosterior& posterior,
                                    const std::vector<std::pair<std::string, std::string>>& pairs) {
    IdealPointReport rep;
    const Eigen::MatrixXd mean = posterior.theta.mean();
    const Eigen::MatrixXd lo = posterior.theta.quantile(0.05);
    const Eigen::MatrixXd hi = posterior.theta.quantile(0.95);
    for (std::size_t r = 0; r < posterior.respondents.size(); ++r)
        for (std::size_t c = 0; c < posterior.theta.cols; ++c) {
            const auto ri = static_cast<Eigen::Index>(r), ci = static_cast<Eigen::Index>(c);
            rep.points.push_back({posterior.respondents[r], c, mean(ri, ci), lo(ri, ci), hi(ri, ci)});
        }

    auto index_of = [&](const std::string& id) {
        auto it = std::find(posterior.respondents.begin(), posterior.respondents.end(), id);
        if (it == posterior.respondents.end()) throw ValidationError("unknown respondent \"" + id + "\" in pair");
        return static_cast<std::size_t>(it - posterior.respondents.begin());
    };
    for (const auto& [a, b] : pairs) {
        const auto ia = index_of(a), ib = index_of(b);
        PairDistance pd{a, b};
        pd.distance = (mean.row(static_cast<Eigen::Index>(ia)) - mean.row(static_cast<Eigen::Index>(ib))).norm();
        std::vector<double> per_draw(posterior.theta.draws);
        for (std::size_t s = 0; s < posterior.theta.draws; ++s) {
            double sq = 0.0;
            for (std::size_t c = 0; c < posterior.theta.cols; ++c) {
                const double diff = posterior.theta(s, ia, c) - posterior.theta(s, ib, c);
                sq += diff * diff;
            }
            per_draw[s] = std::sqrt(sq);
        }
        std::sort(per_draw.begin(), per_draw.end());
        if (!per_draw.empty()) {
            pd.lower = stats::quantile_sorted(per_draw, 0.05);
            pd.upper = stats::quantile_sorted(per_draw, 0.95);
        }
        rep.pairs.push_back(pd);
    }
    return rep;
}

std::string ideal_points_csv(const IdealPointReport& r) {
    std::string out = "respondent,dim,mean,lower90,upper90\n";
    for (const auto& p : r.points)
        out += p.respondent + "," + std::to_string(p.dim + 1) + "," + num(p.mean) + "," + num(p.lower) + "," +
               num(p.upper) + "\n";
    return out;
}

std::string scatter_csv(const IrtPosterior& posterior) {
    const Eigen::MatrixXd mean = posterior.theta.mean();
    std::string out = "respondent";
    for (Eigen::Index c = 0; c < mean.cols(); ++c) out += ",dim" + std::to_string(c + 1);
    out += "\n";
    for (Eigen::Index r = 0; r < mean.rows(); ++r) {
        out += posterior.respondents[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < mean.cols(); ++c) out += "," + num(mean(r, c));
        out += "\n";
    }
    return out;
}

std::string pair_distances_csv(const IdealPointReport& r) {
    std::string out = "first,second,distance,lower90,upper90\n";
    for (const auto& p : r.pairs)
        out += p.first + "," + p.second + "," + num(p.distance) + "," + num(p.lower) + "," + num(p.upper) + "\n";
    return out;
}

namespace {

std::optional<double> finite(double x) { return std::isfinite(x) ? std::optional<double>(x) : std::nullopt; }

}  // namespace

std::string diagnostics_csv(const IrtPosterior& p) {
    const auto& dg = p.diagnostics;
    std::string out = "parameter,index,dim,rhat,ess\n";
    for (Eigen::Index r = 0; r < dg.rhat_theta.rows(); ++r)
        for (Eigen::Index c = 0; c < dg.rhat_theta.cols(); ++c)
            out += "theta," + p.respondents[static_cast<std::size_t>(r)] + "," + std::to_string(c + 1) + "," +
                   num(finite(dg.rhat_theta(r, c))) + "," + num(finite(dg.ess_theta(r, c))) + "\n";
    for (Eigen::Index r = 0; r < dg.rhat_alpha.rows(); ++r)
        for (Eigen::Index c = 0; c < dg.rhat_alpha.cols(); ++c)
            out += "alpha," + p.items[static_cast<std::size_t>(r)] + "," + std::to_string(c + 1) + "," +
                   num(finite(dg.rhat_alpha(r, c))) + "," + num(finite(dg.ess_alpha(r, c))) + "\n";
    for (Eigen::Index r = 0; r < dg.rhat_beta.size(); ++r)
        out += "beta," + p.items[static_cast<std::size_t>(r)] + ",," + num(finite(dg.rhat_beta(r))) + "," +
               num(finite(dg.ess_beta(r))) + "\n";
    out += "rho_theta,,," + num(finite(dg.rhat_rho(0))) + "," + num(finite(dg.ess_rho(0))) + "\n";
    out += "rho_alpha,,," + num(finite(dg.rhat_rho(1))) + "," + num(finite(dg.ess_rho(1))) + "\n";
    return out;
}

// ---------------------------------------------------------------------------

namespace {

corpus::TensorContainer to_tensor(const DrawArray& a, std::string_view block) {
    corpus::TensorContainer t;
    t.metadata["block"] = std::string(block);
    t.shape = {static_cast<std::int64_t>(a.draws), static_cast<std::int64_t>(a.rows), static_cast<std::int64_t>(a.cols)};
    t.data.reserve(a.values.size());
    for (double v : a.values) t.data.push_back(static_cast<float>(v));
    return t;
}

DrawArray from_tensor(const corpus::TensorContainer& t, std::string_view block) {
    if (t.shape.size() != 3) throw FormatError(std::string(block) + " tensor must be three-dimensional");
    DrawArray a(static_cast<std::size_t>(t.shape[0]), static_cast<std::size_t>(t.shape[1]),
                static_cast<std::size_t>(t.shape[2]));
    for (std::size_t i = 0; i < t.data.size(); ++i) a.values[i] = t.data[i];
    return a;
}

json config_json(const IrtConfig& c) {
    return json{{"dims", c.dims},         {"lkj_eta", c.lkj_eta},     {"beta_prior_sd", c.beta_prior_sd},
                {"strategy", std::string(to_string(c.strategy))}, {"anchors", c.anchors},
                {"chains", c.chains},     {"iterations", c.iterations}, {"burn_in", c.burn_in},
                {"thin", c.thin},         {"seed", c.seed},           {"rhat_threshold", c.rhat_threshold}};
}

IrtConfig config_from_json(const json& j) {
    IrtConfig c;
    c.dims = j.at("dims").get<std::size_t>();
    c.lkj_eta = j.at("lkj_eta").get<double>();
    c.beta_prior_sd = j.at("beta_prior_sd").get<double>();
    c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    c.anchors = j.at("anchors").get<std::vector<std::string>>();
    c.chains = j.at("chains").get<std::size_t>();
    c.iterations = j.at("iterations").get<std::size_t>();
    c.burn_in = j.at("burn_in").get<std::size_t>();
    c.thin = j.at("thin").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.rhat_threshold = j.at("rhat_threshold").get<double>();
    return c;
}

}  // namespace

void write_posterior(const IrtPosterior& p, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    corpus::write_tensor(to_tensor(p.theta, "theta"), dir / "theta.idpt");
    corpus::write_tensor(to_tensor(p.alpha, "alpha"), dir / "alpha.idpt");
    corpus::write_tensor(to_tensor(p.beta, "beta"), dir / "beta.idpt");
    corpus::write_tensor(to_tensor(p.rho, "rho"), dir / "rho.idpt");

    json constraints = json::array();
    for (const auto& f : p.constraints.fixed)
        constraints.push_back({{"respondent", f.respondent}, {"dim", f.dim + 1}, {"value", f.value}});
    json acceptance = json::array();
    for (const auto& a : p.acceptance)
        acceptance.push_back({{"theta", a.theta},
                              {"alpha", a.alpha},
                              {"beta", a.beta},
                              {"rho_theta", a.rho_theta},
                              {"rho_alpha", a.rho_alpha}});
    json meta{{"config", config_json(p.config)},
              {"constraints", constraints},
              {"respondents", p.respondents},
              {"items", p.items},
              {"dropped_items", p.dropped_items},
              {"draws_per_chain", p.draws_per_chain},
              {"acceptance", acceptance},
              {"max_rhat", p.diagnostics.max_rhat},
              {"min_ess", finite(p.diagnostics.min_ess) ? json(p.diagnostics.min_ess) : json(nullptr)},
              {"converged", p.converged}};
    corpus::write_file(dir / "posterior.json", meta.dump(2) + "\n");
}

IrtPosterior read_posterior(const std::filesystem::path& dir) {
    json meta;
    try {
        meta = json::parse(corpus::read_file(dir / "posterior.json"));
    } catch (const json::exception& e) {
        throw FormatError("posterior.json: " + std::string(e.what()));
    }
    IrtPosterior p;
    try {
        p.config = config_from_json(meta.at("config"));
        for (const auto& f : meta.at("constraints"))
            p.constraints.fixed.push_back({f.at("respondent").get<std::string>(), f.at("dim").get<std::size_t>() - 1,
                                           f.at("value").get<double>()});
        p.respondents = meta.at("respondents").get<std::vector<std::string>>();
        p.items = meta.at("items").get<std::vector<std::string>>();
        p.dropped_items = meta.at("dropped_items").get<std::vector<std::string>>();
        p.draws_per_chain = meta.at("draws_per_chain").get<std::size_t>();
        for (const auto& a : meta.at("acceptance"))
            p.acceptance.push_back({a.at("theta").get<double>(), a.at("alpha").get<double>(), a.at("beta").get<double>(),
                                    a.at("rho_theta").get<double>(), a.at("rho_alpha").get<double>()});
        p.converged = meta.at("converged").get<bool>();
    } catch (const json::exception& e) {
        throw FormatError("posterior.json: " + std::string(e.what()));
    }
    p.theta = from_tensor(corpus::read_tensor(dir / "theta.idpt"), "theta");
    p.alpha = from_tensor(corpus::read_tensor(dir / "alpha.idpt"), "alpha");
    p.beta = from_tensor(corpus::read_tensor(dir / "beta.idpt"), "beta");
    p.rho = from_tensor(corpus::read_tensor(dir / "rho.idpt"), "rho");
    if (p.theta.rows != p.respondents.size() || p.alpha.rows != p.items.size() || p.beta.rows != p.items.size())
        throw ValidationError("posterior tensors do not match posterior.json");
    p.diagnostics = compute_diagnostics(p);
    return p;
}

}  // namespace ideodepth::irt
