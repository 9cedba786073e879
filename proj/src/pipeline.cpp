#include "ideodepth/pipeline.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include <Eigen/Core>
#include <fmt/format.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "format.hpp"
#include "ideodepth/errors.hpp"

#ifndef IDEODEPTH_VERSION
#define IDEODEPTH_VERSION "0.0.0"
#endif

namespace ideodepth::pipeline {

using detail::num;
using json = nlohmann::json;
using namespace adjudicator;

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    std::string out;
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, std::string_view where) {
    if (!obj.is_object()) throw ConfigError(std::string(where) + " must be an object");
    for (const auto& [key, _] : obj.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError(fmt::format("unknown key \"{}\" in {}", key, where));
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path x(p);
    return x.is_absolute() || base.empty() ? x : base / x;
}

std::string relative_to(const fs::path& p, const fs::path& base) {
    if (base.empty()) return p.generic_string();
    auto rel = p.lexically_relative(base);
    return rel.empty() ? p.generic_string() : rel.generic_string();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& doc, const fs::path& base_dir) {
    PipelineConfig c;
    try {
        check_keys(doc, {"seed", "output_dir", "paths", "adjudicator", "split", "agreement", "fa", "irt", "steer"},
                   "config");
        read_opt(doc, "seed", c.seed);
        if (doc.contains("output_dir")) c.output_dir = resolve(base_dir, doc.at("output_dir").get<std::string>());

        if (doc.contains("paths")) {
            const auto& p = doc.at("paths");
            check_keys(p,
                       {"statements", "responses", "reference_scores", "positive_activations", "negative_activations",
                        "layer_sweeps", "multiplier_sweeps", "sae_positive", "sae_negative", "decoder",
                        "eval_activations", "intervention_records", "feature_descriptions"},
                       "paths");
            auto one = [&](const char* key, std::optional<fs::path>& out) {
                if (p.contains(key)) out = resolve(base_dir, p.at(key).get<std::string>());
            };
            auto many = [&](const char* key, std::map<std::string, fs::path>& out) {
                if (!p.contains(key)) return;
                for (const auto& [k, v] : p.at(key).items()) out[k] = resolve(base_dir, v.get<std::string>());
            };
            one("statements", c.paths.statements);
            one("responses", c.paths.responses);
            one("reference_scores", c.paths.reference_scores);
            one("positive_activations", c.paths.positive_activations);
            one("negative_activations", c.paths.negative_activations);
            many("layer_sweeps", c.paths.layer_sweeps);
            many("multiplier_sweeps", c.paths.multiplier_sweeps);
            one("sae_positive", c.paths.sae_positive);
            one("sae_negative", c.paths.sae_negative);
            one("decoder", c.paths.decoder);
            many("eval_activations", c.paths.eval_activations);
            many("intervention_records", c.paths.intervention_records);
            one("feature_descriptions", c.paths.feature_descriptions);
        }

        if (doc.contains("adjudicator")) {
            const auto& a = doc.at("adjudicator");
            check_keys(a,
                       {"endpoint", "model", "temperature", "votes_per_item", "max_retries", "concurrency",
                        "backoff_ms", "timeout_s", "mock"},
                       "adjudicator");
            read_opt(a, "endpoint", c.adjudicator.endpoint);
            read_opt(a, "model", c.adjudicator.model);
            read_opt(a, "temperature", c.adjudicator.temperature);
            read_opt(a, "votes_per_item", c.adjudicator.votes_per_item);
            read_opt(a, "max_retries", c.adjudicator.max_retries);
            read_opt(a, "concurrency", c.adjudicator.concurrency);
            if (a.contains("backoff_ms")) c.adjudicator.backoff = std::chrono::milliseconds(a.at("backoff_ms").get<long>());
            if (a.contains("timeout_s")) c.adjudicator.timeout = std::chrono::seconds(a.at("timeout_s").get<long>());
            read_opt(a, "mock", c.adjudicator.mock);
        }

        if (doc.contains("split")) {
            const auto& s = doc.at("split");
            check_keys(s, {"eval_size", "min_per_topic", "allocation"}, "split");
            read_opt(s, "eval_size", c.eval_size);
            read_opt(s, "min_per_topic", c.min_per_topic);
            if (s.contains("allocation")) {
                const auto v = s.at("allocation").get<std::string>();
                if (v == "proportional")
                    c.allocation = SplitAllocation::Proportional;
                else if (v == "minimum-only")
                    c.allocation = SplitAllocation::MinimumOnly;
                else
                    throw ConfigError("split.allocation must be \"proportional\" or \"minimum-only\"");
            }
        }

        if (doc.contains("agreement")) {
            const auto& a = doc.at("agreement");
            check_keys(a, {"focus", "kappa_categories"}, "agreement");
            read_opt(a, "focus", c.focus);
            if (a.contains("kappa_categories")) {
                const auto v = a.at("kappa_categories").get<std::string>();
                if (v == "with-null")
                    c.kappa_categories = agreement::KappaCategories::WithNull;
                else if (v == "binary")
                    c.kappa_categories = agreement::KappaCategories::Binary;
                else
                    throw ConfigError("agreement.kappa_categories must be \"with-null\" or \"binary\"");
            }
        }

        if (doc.contains("fa")) {
            const auto& f = doc.at("fa");
            check_keys(f, {"retention", "rotate", "tolerance", "max_iterations"}, "fa");
            if (f.contains("retention")) {
                const auto& r = f.at("retention");
                if (r.is_string() && r.get<std::string>() == "kaiser")
                    c.retention = factor::Retention::kaiser();
                else if (r.is_number_unsigned())
                    c.retention = factor::Retention::fixed(r.get<std::size_t>());
                else
                    throw ConfigError("fa.retention must be \"kaiser\" or a factor count");
            }
            read_opt(f, "rotate", c.rotate);
            read_opt(f, "tolerance", c.paf.tolerance);
            read_opt(f, "max_iterations", c.paf.max_iterations);
        }

        if (doc.contains("irt")) {
            const auto& i = doc.at("irt");
            check_keys(i,
                       {"dims", "lkj_eta", "beta_prior_sd", "strategy", "anchors", "chains", "iterations", "burn_in",
                        "thin", "workers", "rhat_threshold", "pairs"},
                       "irt");
            read_opt(i, "dims", c.irt.dims);
            read_opt(i, "lkj_eta", c.irt.lkj_eta);
            read_opt(i, "beta_prior_sd", c.irt.beta_prior_sd);
            if (i.contains("strategy")) c.irt.strategy = irt::parse_strategy(i.at("strategy").get<std::string>());
            read_opt(i, "anchors", c.irt.anchors);
            read_opt(i, "chains", c.irt.chains);
            read_opt(i, "iterations", c.irt.iterations);
            read_opt(i, "burn_in", c.irt.burn_in);
            read_opt(i, "thin", c.irt.thin);
            read_opt(i, "workers", c.irt.workers);
            read_opt(i, "rhat_threshold", c.irt.rhat_threshold);
            if (i.contains("pairs"))
                for (const auto& pr : i.at("pairs")) {
                    if (!pr.is_array() || pr.size() != 2) throw ConfigError("irt.pairs entries must be [a, b]");
                    c.irt_pairs.emplace_back(pr[0].get<std::string>(), pr[1].get<std::string>());
                }
        }

        if (doc.contains("steer")) {
            const auto& s = doc.at("steer");
            check_keys(s, {"selection_mode", "activation_threshold"}, "steer");
            if (s.contains("selection_mode"))
                c.selection_mode = steer::parse_selection_mode(s.at("selection_mode").get<std::string>());
            read_opt(s, "activation_threshold", c.activation_threshold);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.base_dir = base_dir;
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(corpus::read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(doc, path.parent_path());
}

json PipelineConfig::to_json() const {
    json paths_doc = json::object();
    auto one = [&](const char* key, const std::optional<fs::path>& p) {
        if (p) paths_doc[key] = relative_to(*p, base_dir);
    };
    auto many = [&](const char* key, const std::map<std::string, fs::path>& m) {
        if (m.empty()) return;
        json o = json::object();
        for (const auto& [k, v] : m) o[k] = relative_to(v, base_dir);
        paths_doc[key] = o;
    };
    one("statements", paths.statements);
    one("responses", paths.responses);
    one("reference_scores", paths.reference_scores);
    one("positive_activations", paths.positive_activations);
    one("negative_activations", paths.negative_activations);
    many("layer_sweeps", paths.layer_sweeps);
    many("multiplier_sweeps", paths.multiplier_sweeps);
    one("sae_positive", paths.sae_positive);
    one("sae_negative", paths.sae_negative);
    one("decoder", paths.decoder);
    many("eval_activations", paths.eval_activations);
    many("intervention_records", paths.intervention_records);
    one("feature_descriptions", paths.feature_descriptions);

    json pairs = json::array();
    for (const auto& [a, b] : irt_pairs) pairs.push_back({a, b});
    // output_dir is left out so runs into different directories share a digest.
    return json{
        {"seed", seed},
        {"paths", paths_doc},
        {"adjudicator",
         {{"endpoint", adjudicator.endpoint},
          {"model", adjudicator.model},
          {"temperature", adjudicator.temperature},
          {"votes_per_item", adjudicator.votes_per_item},
          {"max_retries", adjudicator.max_retries},
          {"concurrency", adjudicator.concurrency},
          {"backoff_ms", adjudicator.backoff.count()},
          {"timeout_s", adjudicator.timeout.count()},
          {"mock", adjudicator.mock}}},
        {"split",
         {{"eval_size", eval_size},
          {"min_per_topic", min_per_topic},
          {"allocation", allocation == SplitAllocation::Proportional ? "proportional" : "minimum-only"}}},
        {"agreement",
         {{"focus", focus},
          {"kappa_categories", kappa_categories == agreement::KappaCategories::WithNull ? "with-null" : "binary"}}},
        {"fa",
         {{"retention", retention.kind == factor::Retention::Kind::Kaiser ? json("kaiser") : json(retention.factors)},
          {"rotate", rotate},
          {"tolerance", paf.tolerance},
          {"max_iterations", paf.max_iterations}}},
        {"irt",
         {{"dims", irt.dims},
          {"lkj_eta", irt.lkj_eta},
          {"beta_prior_sd", irt.beta_prior_sd},
          {"strategy", std::string(irt::to_string(irt.strategy))},
          {"anchors", irt.anchors},
          {"chains", irt.chains},
          {"iterations", irt.iterations},
          {"burn_in", irt.burn_in},
          {"thin", irt.thin},
          {"workers", irt.workers},
          {"rhat_threshold", irt.rhat_threshold},
          {"pairs", pairs}}},
        {"steer",
         {{"selection_mode", std::string(steer::to_string(selection_mode))},
          {"activation_threshold", activation_threshold}}},
    };
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

std::string_view to_string(Command c) {
    switch (c) {
        case Command::Categorize: return "categorize";
        case Command::Split: return "split";
        case Command::Agreement: return "agreement";
        case Command::Fa: return "fa";
        case Command::Irt: return "irt";
        case Command::Caa: return "caa";
        case Command::Sta: return "sta";
        case Command::Score: return "score";
        case Command::Judge: return "judge";
        case Command::Report: return "report";
    }
    return "?";
}

const std::vector<Command>& all_commands() {
    static const std::vector<Command> cmds = {Command::Categorize, Command::Split, Command::Agreement, Command::Fa,
                                              Command::Irt,        Command::Caa,   Command::Sta,       Command::Score,
                                              Command::Judge,      Command::Report};
    return cmds;
}

Command parse_command(std::string_view s) {
    for (auto c : all_commands())
        if (to_string(c) == s) return c;
    throw ConfigError("unknown command \"" + std::string(s) + "\"");
}

bool has_inputs(Command c, const PipelineConfig& cfg) {
    const auto& p = cfg.paths;
    switch (c) {
        case Command::Categorize:
        case Command::Split: return p.statements.has_value();
        case Command::Agreement: return p.responses && p.statements;
        case Command::Fa:
        case Command::Irt: return p.responses.has_value();
        case Command::Caa:
            return (p.positive_activations && p.negative_activations) || !p.layer_sweeps.empty() ||
                   !p.multiplier_sweeps.empty();
        case Command::Sta: return (p.sae_positive && p.sae_negative) || !p.eval_activations.empty();
        case Command::Score: return !p.intervention_records.empty();
        case Command::Judge: return p.feature_descriptions && p.statements;
        case Command::Report: return true;
    }
    return false;
}

namespace {

struct Outcome {
    bool converged = true;
    std::vector<std::string> skipped;
};

void require_file(const std::optional<fs::path>& p, std::string_view key, Command c) {
    if (!p) throw ConfigError(fmt::format("{}: config has no paths.{}", to_string(c), key));
    if (!fs::is_regular_file(*p))
        throw ConfigError(fmt::format("{}: paths.{} does not exist: {}", to_string(c), key, p->string()));
}

void require_files(const std::map<std::string, fs::path>& m, std::string_view key, Command c) {
    for (const auto& [label, p] : m)
        if (!fs::is_regular_file(p))
            throw ConfigError(fmt::format("{}: paths.{}.{} does not exist: {}", to_string(c), key, label, p.string()));
}

void check_inputs(Command c, const PipelineConfig& cfg) {
    const auto& p = cfg.paths;
    if (!has_inputs(c, cfg)) throw ConfigError(fmt::format("{}: required inputs are not configured", to_string(c)));
    switch (c) {
        case Command::Categorize:
        case Command::Split: require_file(p.statements, "statements", c); break;
        case Command::Agreement:
            require_file(p.responses, "responses", c);
            require_file(p.statements, "statements", c);
            break;
        case Command::Fa: require_file(p.responses, "responses", c); break;
        case Command::Irt:
            require_file(p.responses, "responses", c);
            if (p.reference_scores) require_file(p.reference_scores, "reference_scores", c);
            break;
        case Command::Caa:
            if (p.positive_activations || p.negative_activations) {
                require_file(p.positive_activations, "positive_activations", c);
                require_file(p.negative_activations, "negative_activations", c);
            }
            require_files(p.layer_sweeps, "layer_sweeps", c);
            require_files(p.multiplier_sweeps, "multiplier_sweeps", c);
            break;
        case Command::Sta:
            if (p.sae_positive || p.sae_negative) {
                require_file(p.sae_positive, "sae_positive", c);
                require_file(p.sae_negative, "sae_negative", c);
            }
            if (p.decoder) require_file(p.decoder, "decoder", c);
            require_files(p.eval_activations, "eval_activations", c);
            break;
        case Command::Score: require_files(p.intervention_records, "intervention_records", c); break;
        case Command::Judge:
            require_file(p.feature_descriptions, "feature_descriptions", c);
            require_file(p.statements, "statements", c);
            break;
        case Command::Report: break;
    }
}

class Writer {
public:
    Writer(const PipelineConfig& cfg, std::string_view sub) : dir_(cfg.output_dir / std::string(sub)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw IoError("cannot create " + dir_.string() + ": " + ec.message());
    }
    void put(std::string_view name, std::string_view bytes) const { corpus::write_file(dir_ / std::string(name), bytes); }
    fs::path path(std::string_view name) const { return dir_ / std::string(name); }

private:
    fs::path dir_;
};

/// Joins CSV tables that share a header.
std::string concat_csv(const std::vector<std::string>& tables) {
    std::string out;
    for (std::size_t i = 0; i < tables.size(); ++i) {
        if (i == 0) {
            out += tables[i];
            continue;
        }
        const auto nl = tables[i].find('\n');
        if (nl != std::string::npos) out += tables[i].substr(nl + 1);
    }
    return out;
}

/// Most processed statement file available: split output, then categorize
/// output, then the configured input.
corpus::StatementSet load_statements(const PipelineConfig& cfg) {
    for (const auto* sub : {"split", "categorize"}) {
        const auto p = cfg.output_dir / sub / "statements.jsonl";
        if (fs::is_regular_file(p)) return corpus::parse_statements(p);
    }
    return corpus::parse_statements(*cfg.paths.statements);
}

std::unique_ptr<ChatBackend> backend_for(const PipelineConfig& cfg) { return make_backend(cfg.adjudicator); }

Outcome do_categorize(const PipelineConfig& cfg) {
    const auto set = corpus::parse_statements(*cfg.paths.statements);
    const auto taxonomy = corpus::TopicTaxonomy::defaults();
    auto backend = backend_for(cfg);
    const auto results = categorize_all(set, taxonomy, *backend, cfg.adjudicator, cfg.seed);
    Writer w(cfg, "categorize");
    w.put("statements.jsonl", corpus::serialize_statements(apply_categories(set, results)));
    std::string votes = "statement_id,chosen,tie,discarded,votes\n";
    for (const auto& r : results) {
        std::string joined;
        for (std::size_t i = 0; i < r.votes.size(); ++i) joined += (i ? ";" : "") + r.votes[i];
        votes += r.statement_id + ",\"" + r.chosen + "\"," + (r.tie ? "true" : "false") + "," +
                 std::to_string(r.discarded) + ",\"" + joined + "\"\n";
    }
    w.put("votes.csv", votes);
    return {};
}

Outcome do_split(const PipelineConfig& cfg) {
    const auto fresh = cfg.output_dir / "categorize" / "statements.jsonl";
    const auto set = fs::is_regular_file(fresh) ? corpus::parse_statements(fresh)
                                                : corpus::parse_statements(*cfg.paths.statements);
    const auto out = stratified_split(set, cfg.eval_size, cfg.min_per_topic, cfg.seed, cfg.allocation);
    const auto report = corpus::validate_split(out, cfg.min_per_topic);
    Writer w(cfg, "split");
    w.put("statements.jsonl", corpus::serialize_statements(out));
    std::string csv = "topic,eval_count\n";
    for (const auto& [topic, n] : report.eval_per_topic) csv += "\"" + topic + "\"," + std::to_string(n) + "\n";
    w.put("eval_per_topic.csv", csv);
    w.put("summary.csv", fmt::format("eval,train,unassigned,min_required,min_eval_per_topic,ok\n{},{},{},{},{},{}\n",
                                     report.eval_count, report.train_count, report.unassigned_count,
                                     report.min_required, report.min_eval_per_topic, report.ok() ? "true" : "false"));
    return {};
}

Outcome do_agreement(const PipelineConfig& cfg) {
    const auto m = corpus::parse_response_matrix(*cfg.paths.responses);
    const auto topics = agreement::topic_map(load_statements(cfg));

    // Rows are "<model>/<condition>"; unprefixed rows form a single group.
    std::vector<std::string> models;
    std::map<std::string, agreement::ConditionGrid> grids;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto& label = m.row_labels()[r];
        const auto slash = label.find('/');
        const std::string model = slash == std::string::npos ? "all" : label.substr(0, slash);
        const std::string condition = slash == std::string::npos ? label : label.substr(slash + 1);
        if (!grids.count(model)) models.push_back(model);
        grids[model].conditions.push_back(condition);
        grids[model].rows.push_back(r);
    }

    std::vector<agreement::AgreementReport> reports;
    std::vector<std::string> consistency, kappa, refusal, tendency, heatmap;
    for (const auto& model : models) {
        const auto& grid = grids[model];
        auto focus = grid.filter(cfg.focus);
        if (focus.size() == 0) {
            spdlog::warn("agreement: no \"{}\" conditions for {}, kappa uses every condition", cfg.focus, model);
            focus = grid;
        }
        reports.push_back(agreement::analyze(m, topics, grid, focus, cfg.kappa_categories, model));
        consistency.push_back(agreement::consistency_csv(reports.back()));
        kappa.push_back(agreement::kappa_csv(reports.back()));
        refusal.push_back(agreement::refusal_csv(reports.back()));
        tendency.push_back(agreement::tendency_csv(reports.back()));
        heatmap.push_back(agreement::heatmap_csv(m, topics, grid, model));
    }
    Writer w(cfg, "agreement");
    w.put("consistency.csv", concat_csv(consistency));
    w.put("kappa.csv", concat_csv(kappa));
    w.put("refusal.csv", concat_csv(refusal));
    w.put("tendency.csv", concat_csv(tendency));
    w.put("heatmap.csv", concat_csv(heatmap));
    w.put("long_format.csv", agreement::long_format_csv(reports));
    return {};
}

std::string correlation_csv(const factor::CorrelationMatrix& c) {
    std::string out = "item";
    for (const auto& l : c.labels) out += "," + l;
    out += "\n";
    for (std::size_t i = 0; i < c.size(); ++i) {
        out += c.labels[i];
        for (std::size_t j = 0; j < c.size(); ++j)
            out += "," + num(c.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        out += "\n";
    }
    return out;
}

Outcome do_fa(const PipelineConfig& cfg) {
    const auto m = corpus::parse_response_matrix(*cfg.paths.responses);
    const auto corr = factor::correlation_matrix(m);
    Outcome o;
    factor::FactorSolution sol;
    try {
        sol = factor::principal_axis_factor(corr, cfg.retention, cfg.paf);
    } catch (const factor::PafConvergenceError& e) {
        spdlog::warn("fa: {}; writing the last iterate", e.what());
        sol = e.last_iterate();
        o.converged = false;
    }
    Writer w(cfg, "fa");
    w.put("correlation.csv", correlation_csv(corr));
    w.put("eigenvalues.csv", factor::eigenvalues_csv(sol));
    w.put("loadings_unrotated.csv", factor::loadings_csv(sol));
    w.put("scree.csv", factor::scree_csv(sol));
    if (cfg.rotate && sol.factors() >= 2) {
        const auto rot = factor::rotate_varimax(sol);
        w.put("loadings_varimax.csv", factor::loadings_csv(rot));
        w.put("variance_varimax.csv", factor::scree_csv(rot));
    }
    json pairs = json::array();
    for (const auto& [a, b] : corr.degenerate_pairs) pairs.push_back({a, b});
    json summary{{"items", corr.size()},
                 {"factors", sol.factors()},
                 {"iterations", sol.iterations},
                 {"converged", sol.converged},
                 {"heywood", sol.heywood},
                 {"negative_eigenvalues", sol.negative_eigenvalues},
                 {"dropped_items", corr.dropped},
                 {"degenerate_pairs", pairs}};
    w.put("summary.json", summary.dump(2) + "\n");
    return o;
}

Outcome do_irt(const PipelineConfig& cfg) {
    const auto m = corpus::parse_response_matrix(*cfg.paths.responses);
    auto icfg = cfg.irt;
    icfg.seed = cfg.seed;
    const auto post = irt::fit(m, icfg);
    Writer w(cfg, "irt");
    irt::write_posterior(post, w.path("posterior"));
    const auto report = irt::ideal_point_report(post, cfg.irt_pairs);
    w.put("ideal_points.csv", irt::ideal_points_csv(report));
    w.put("scatter.csv", irt::scatter_csv(post));
    w.put("pairs.csv", irt::pair_distances_csv(report));
    w.put("diagnostics.csv", irt::diagnostics_csv(post));
    if (cfg.paths.reference_scores) {
        const auto ref = irt::read_reference_scores(*cfg.paths.reference_scores);
        std::string csv = "reference_dim,estimate_dim,flipped,r,p_value,n\n";
        for (const auto& d : irt::validate_against_reference(post, ref))
            csv += fmt::format("{},{},{},{},{},{}\n", d.reference_dim + 1, d.estimate_dim + 1, d.flipped, num(d.fit.r),
                               num(d.fit.p_value), d.fit.n);
        w.put("validation.csv", csv);
    }
    return {post.converged, {}};
}

Outcome do_caa(const PipelineConfig& cfg) {
    const auto& p = cfg.paths;
    Writer w(cfg, "caa");
    if (p.positive_activations && p.negative_activations) {
        const auto set = steer::ContrastSet::from_tensors(corpus::read_tensor(*p.positive_activations),
                                                          corpus::read_tensor(*p.negative_activations));
        const auto v = steer::compute_caa(set);
        corpus::write_tensor(v.to_tensor(), w.path("vector.idpt"));
        w.put("vector_summary.csv",
              fmt::format("model,layer,pairs,dim,norm\n{},{},{},{},{}\n", v.model, v.layer, v.pairs, v.vector.size(),
                          num(v.vector.norm())));
    }
    if (!p.layer_sweeps.empty()) {
        std::map<std::int64_t, steer::SweepCurve> curves;
        for (const auto& [label, path] : p.layer_sweeps) {
            std::int64_t layer = 0;
            try {
                layer = std::stoll(label);
            } catch (const std::exception&) {
                throw ConfigError("paths.layer_sweeps keys must be layer numbers, got \"" + label + "\"");
            }
            curves[layer] = steer::multiplier_sweep_table(corpus::parse_response_matrix(path), "layer" + label);
        }
        const auto chosen = steer::select_layer(curves);
        std::string csv = "layer,range,selected\n";
        std::vector<steer::SweepCurve> all;
        for (const auto& [layer, c] : curves) {
            csv += fmt::format("{},{},{}\n", layer, num(c.range()), layer == chosen);
            all.push_back(c);
        }
        w.put("layer_selection.csv", csv);
        w.put("layer_sweep.csv", steer::sweep_csv(all));
    }
    if (!p.multiplier_sweeps.empty()) {
        std::vector<steer::SweepCurve> curves;
        for (const auto& [label, path] : p.multiplier_sweeps)
            curves.push_back(steer::multiplier_sweep_table(corpus::parse_response_matrix(path), label));
        w.put("sweep.csv", steer::sweep_csv(curves));
    }
    return {};
}

Outcome do_sta(const PipelineConfig& cfg) {
    const auto& p = cfg.paths;
    Writer w(cfg, "sta");
    if (p.sae_positive && p.sae_negative) {
        const auto stats =
            steer::compute_feature_stats(corpus::parse_sae_matrix(*p.sae_positive), corpus::parse_sae_matrix(*p.sae_negative));
        const auto sel = steer::select_sta(stats, cfg.selection_mode);
        w.put("feature_stats.csv", steer::feature_stats_csv(stats));
        w.put("selection.csv", steer::selection_csv(sel, stats));
        std::size_t pos_a = 0, pos_f = 0;
        for (std::size_t k = 0; k < stats.size(); ++k) {
            pos_a += stats.delta_a[k] > 0;
            pos_f += stats.delta_f[k] > 0;
        }
        w.put("selection_counts.csv",
              fmt::format("delta_a_positive,delta_f_positive,union,intersection\n{},{},{},{}\n", pos_a, pos_f,
                          steer::select_sta(stats, steer::SelectionMode::Union).features.size(),
                          steer::select_sta(stats, steer::SelectionMode::Intersection).features.size()));
        if (p.decoder && !sel.features.empty()) {
            const auto decoder = steer::Decoder::from_tensor(corpus::read_tensor(*p.decoder));
            const auto v = steer::assemble_sta_vector(sel, decoder, stats);
            corpus::TensorContainer t;
            t.metadata["features"] = std::to_string(sel.features.size());
            t.metadata["mode"] = std::string(steer::to_string(sel.mode));
            t.shape = {static_cast<std::int64_t>(v.size())};
            for (Eigen::Index i = 0; i < v.size(); ++i) t.data.push_back(static_cast<float>(v(i)));
            corpus::write_tensor(t, w.path("vector.idpt"));
        }
    }
    if (!p.eval_activations.empty()) {
        std::string per = "label,prompt_id,active_features\n";
        std::string summary = "label,prompts,union,mean_per_prompt\n";
        for (const auto& [label, path] : p.eval_activations) {
            const auto acts = corpus::parse_sae_matrix(path);
            const auto counts = steer::count_active_features(acts, cfg.activation_threshold);
            for (std::size_t i = 0; i < counts.per_prompt.size(); ++i)
                per += label + "," + acts.prompt_ids()[i] + "," + std::to_string(counts.per_prompt[i]) + "\n";
            summary += fmt::format("{},{},{},{}\n", label, counts.per_prompt.size(), counts.union_count,
                                   num(counts.mean_per_prompt));
        }
        w.put("active_features.csv", per);
        w.put("active_summary.csv", summary);
    }
    return {};
}

Outcome do_score(const PipelineConfig& cfg) {
    Writer w(cfg, "score");
    std::vector<std::string> tables;
    std::vector<std::pair<std::string, steer::ScoreSummary>> summaries;
    for (const auto& [label, path] : cfg.paths.intervention_records) {
        const auto recs = steer::read_intervention_records(path);
        std::string t = steer::output_scores_csv(recs.records);
        // Prefix every row with the label.
        std::string labelled;
        std::size_t start = 0;
        bool header = true;
        while (start < t.size()) {
            const auto nl = t.find('\n', start);
            const auto line = t.substr(start, nl - start);
            labelled += (header ? std::string("label") : label) + "," + line + "\n";
            header = false;
            start = nl + 1;
        }
        tables.push_back(labelled);
        if (!recs.records.empty()) summaries.emplace_back(label, steer::score_summary(recs.records));
    }
    w.put("output_scores.csv", concat_csv(tables));
    w.put("summary.csv", steer::score_summary_csv(summaries));
    return {};
}

Outcome do_judge(const PipelineConfig& cfg) {
    const auto items = parse_feature_descriptions(*cfg.paths.feature_descriptions);
    const auto statements = load_statements(cfg);
    const auto taxonomy = corpus::TopicTaxonomy::defaults();
    auto backend = backend_for(cfg);
    const auto batch = judge_all(items, statements, taxonomy, *backend, cfg.adjudicator);
    Writer w(cfg, "judge");
    w.put("predictive.jsonl", serialize_verdicts(batch.predictive));
    w.put("coherence.jsonl", serialize_verdicts(batch.coherence));
    w.put("confusion.csv", confusion_csv(build_confusion(batch.predictive, statements, taxonomy)));
    std::string coh = "statement_id,coherence_score,primary_theme\n";
    for (const auto& v : batch.coherence)
        coh += v.statement_id + "," + std::to_string(v.coherence_score.value_or(0)) + ",\"" + v.theme.value_or("") +
               "\"\n";
    w.put("coherence.csv", coh);
    return {};
}

Outcome do_report(const PipelineConfig& cfg) {
    struct Source {
        const char* from;
        const char* to;
    };
    static const Source sources[] = {
        {"agreement/heatmap.csv", "heatmap.csv"},
        {"agreement/refusal.csv", "null_rate_bars.csv"},
        {"agreement/kappa.csv", "kappa_bars.csv"},
        {"agreement/tendency.csv", "conservative_rate_bars.csv"},
        {"caa/sweep.csv", "sweep_lines.csv"},
        {"caa/layer_sweep.csv", "layer_sweep_lines.csv"},
        {"irt/scatter.csv", "ideal_point_scatter.csv"},
        {"irt/pairs.csv", "ideal_point_pairs.csv"},
        {"fa/eigenvalues.csv", "scree.csv"},
        {"score/summary.csv", "output_score_summary.csv"},
        {"judge/confusion.csv", "confusion.csv"},
    };
    Writer w(cfg, "report");
    Outcome o;
    json emitted = json::array();
    for (const auto& s : sources) {
        const auto src = cfg.output_dir / s.from;
        if (!fs::is_regular_file(src)) {
            o.skipped.push_back(s.to);
            continue;
        }
        w.put(s.to, corpus::read_file(src));
        emitted.push_back({{"table", s.to}, {"source", s.from}});
    }
    json index{{"emitted", emitted}, {"skipped", o.skipped}};
    w.put("index.json", index.dump(2) + "\n");
    if (!o.skipped.empty()) spdlog::info("report: skipped {} plot table(s) without sources", o.skipped.size());
    return o;
}

std::vector<Artifact> scan(const fs::path& root) {
    std::vector<Artifact> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto rel = e.path().lexically_relative(root).generic_string();
        if (rel == "manifest.json") continue;
        const auto bytes = corpus::read_file(e.path());
        out.push_back({rel, sha256_hex(bytes), bytes.size()});
    }
    std::sort(out.begin(), out.end(), [](const Artifact& a, const Artifact& b) { return a.path < b.path; });
    return out;
}

ReportBundle finish(const PipelineConfig& cfg, std::string_view command, const Outcome& o) {
    ReportBundle b;
    b.files = scan(cfg.output_dir);
    b.skipped = o.skipped;
    b.converged = o.converged;
    const auto config_digest = sha256_hex(cfg.to_json().dump());
    json files = json::array();
    for (const auto& a : b.files) files.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
    json manifest{
        {"run_id", sha256_hex(config_digest + ":" + std::string(command)).substr(0, 16)},
        {"command", command},
        {"config_sha256", config_digest},
        {"seed", cfg.seed},
        {"versions",
         {{"ideodepth", IDEODEPTH_VERSION},
          {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)}}},
        {"converged", o.converged},
        {"files", files},
    };
    b.manifest = cfg.output_dir / "manifest.json";
    corpus::write_file(b.manifest, manifest.dump(2) + "\n");
    return b;
}

Outcome dispatch(Command c, const PipelineConfig& cfg) {
    switch (c) {
        case Command::Categorize: return do_categorize(cfg);
        case Command::Split: return do_split(cfg);
        case Command::Agreement: return do_agreement(cfg);
        case Command::Fa: return do_fa(cfg);
        case Command::Irt: return do_irt(cfg);
        case Command::Caa: return do_caa(cfg);
        case Command::Sta: return do_sta(cfg);
        case Command::Score: return do_score(cfg);
        case Command::Judge: return do_judge(cfg);
        case Command::Report: return do_report(cfg);
    }
    return {};
}

/// Prefixes module errors with the command name, keeping the error category.
template <typename Fn>
auto with_context(Command c, Fn&& fn) {
    const std::string ctx = std::string(to_string(c)) + ": ";
    try {
        return fn();
    } catch (const ConfigError& e) {
        if (std::string_view(e.what()).starts_with(ctx)) throw;
        throw ConfigError(ctx + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(ctx + e.what());
    } catch (const ConvergenceError& e) {
        throw ConvergenceError(ctx + e.what());
    } catch (const IoError& e) {
        throw IoError(ctx + e.what());
    } catch (const TransportError& e) {
        throw TransportError(ctx + e.what());
    } catch (const JudgeFormatError& e) {
        throw JudgeFormatError(ctx + e.what());
    }
}

}  // namespace

ReportBundle run(Command command, const PipelineConfig& cfg) {
    check_inputs(command, cfg);
    spdlog::info("running {}", to_string(command));
    const auto outcome = with_context(command, [&] { return dispatch(command, cfg); });
    return finish(cfg, to_string(command), outcome);
}

ReportBundle run_all(const PipelineConfig& cfg) {
    std::vector<Command> todo;
    for (auto c : all_commands()) {
        if (c == Command::Report) continue;
        if (!has_inputs(c, cfg)) {
            spdlog::info("all: skipping {} (inputs not configured)", to_string(c));
            continue;
        }
        check_inputs(c, cfg);
        todo.push_back(c);
    }
    Outcome total;
    for (auto c : todo) {
        spdlog::info("running {}", to_string(c));
        const auto o = with_context(c, [&] { return dispatch(c, cfg); });
        total.converged = total.converged && o.converged;
    }
    const auto rep = with_context(Command::Report, [&] { return dispatch(Command::Report, cfg); });
    total.skipped = rep.skipped;
    return finish(cfg, "all", total);
}

ReportBundle emit_plot_data(const PipelineConfig& cfg) { return run(Command::Report, cfg); }

}  // namespace ideodepth::pipeline
