// Writes the bundled synthetic fixture: every input the pipeline reads, small
// enough to run end to end in seconds.
//
//   make_fixture <out-dir> [seed]

#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ideodepth/corpus.hpp"
#include "ideodepth/irt.hpp"
#include "ideodepth/rng.hpp"
#include "ideodepth/steer.hpp"

namespace fs = std::filesystem;
using namespace ideodepth;
using json = nlohmann::json;

namespace {

struct Topic {
    const char* name;
    const char* subject;
};

constexpr std::array<Topic, 12> kTopics{{
    {"Abortion Rights", "abortion access"},
    {"Climate & Environment", "carbon emission limits"},
    {"Criminal Justice", "prison sentencing"},
    {"Economic Regulation", "corporate regulation"},
    {"Gun Control", "firearm ownership"},
    {"Healthcare", "public health insurance"},
    {"Immigration & Refugees", "asylum at the border"},
    {"Military & Defense Spending", "military spending"},
    {"Political & Ideological Stances", "progressive ideology"},
    {"Social Welfare & Poverty", "poverty relief"},
    {"Tax Policy", "tax cuts for the wealthy"},
    {"Traditional Values & Gender Roles", "traditional marriage"},
}};

constexpr std::array<const char*, 4> kTemplates{
    "Public support for {} should increase.",
    "Current rules on {} go too far.",
    "Voters care deeply about {}.",
    "Lawmakers should revisit {}.",
};

constexpr std::array<const char*, 2> kModels{"model-a", "model-b"};
constexpr int kHidden = 16;
constexpr std::size_t kFeatures = 64;

std::string sid(std::size_t i) { return fmt::format("s{:02}", i + 1); }

corpus::TensorContainer tensor(std::vector<std::int64_t> shape, const Eigen::MatrixXd& m,
                               std::map<std::string, std::string> meta) {
    corpus::TensorContainer t;
    t.metadata = std::move(meta);
    t.shape = std::move(shape);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
    return t;
}

// Liberal prompts light up features 0..23 more often, conservative prompts 24..47.
corpus::SaeActivationMatrix sae(Rng& rng, const std::string& prefix, std::size_t prompts, bool liberal) {
    std::vector<std::string> ids;
    std::vector<corpus::SaeEntry> entries;
    for (std::size_t p = 0; p < prompts; ++p) {
        ids.push_back(fmt::format("{}{:02}", prefix, p + 1));
        for (std::size_t f = 0; f < kFeatures; ++f) {
            const bool lib_feature = f < 24, con_feature = f >= 24 && f < 48;
            double rate = 0.1;
            if (lib_feature) rate = liberal ? 0.6 : 0.15;
            if (con_feature) rate = liberal ? 0.15 : 0.6;
            if (rng.uniform() >= rate) continue;
            const double a = std::round((0.2 + 2.0 * rng.uniform()) * 1e4) / 1e4;
            entries.push_back({p, f, a, 1 + static_cast<std::size_t>(rng.below(12))});
        }
    }
    return {std::move(ids), kFeatures, std::move(entries)};
}

corpus::ResponseMatrix sweep(Rng& rng, const std::vector<std::string>& cols, double base, double slope) {
    std::vector<std::string> rows;
    std::vector<corpus::Response> entries;
    for (int m = 0; m >= -5; --m) {
        rows.push_back(std::to_string(m));
        const double p_lib = irt::logistic(base + slope * m);
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const double u = rng.uniform();
            entries.push_back(u < 0.05          ? corpus::Response::Null
                              : u < 0.05 + 0.95 * p_lib ? corpus::Response::Liberal
                                                        : corpus::Response::Conservative);
        }
    }
    return {std::move(rows), cols, std::move(entries)};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: make_fixture <out-dir> [seed]\n";
        return 1;
    }
    const fs::path out = argv[1];
    const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 20240601;
    fs::create_directories(out);

    // Statements: four per topic, ground-truth topic attached.
    std::vector<corpus::Statement> stmts;
    for (std::size_t t = 0; t < kTopics.size(); ++t)
        for (std::size_t k = 0; k < kTemplates.size(); ++k)
            stmts.push_back({sid(stmts.size()), fmt::format(fmt::runtime(kTemplates[k]), kTopics[t].subject),
                             kTopics[t].name, corpus::Split::Unassigned});
    const corpus::StatementSet set(stmts);
    corpus::write_statements(set, out / "statements.jsonl");
    std::vector<std::string> cols;
    for (const auto& s : stmts) cols.push_back(s.id);

    // Responses: 2 models x 9 conditions, drawn from a 2-D logistic model.
    const auto& conditions = std::vector<std::string>{
        "role_original_argument_none",     "role_original_argument_liberal",     "role_original_argument_conservative",
        "role_liberal_argument_none",      "role_liberal_argument_liberal",      "role_liberal_argument_conservative",
        "role_conservative_argument_none", "role_conservative_argument_liberal", "role_conservative_argument_conservative",
    };
    auto params = Rng::substream(seed, "fixture/params");
    std::vector<std::string> rows;
    Eigen::MatrixXd theta(kModels.size() * conditions.size(), 2);
    for (std::size_t m = 0; m < kModels.size(); ++m)
        for (std::size_t c = 0; c < conditions.size(); ++c) {
            const auto& cond = conditions[c];
            const double role = cond.starts_with("role_liberal") ? 2.0 : cond.starts_with("role_conservative") ? -2.0 : 0.4;
            const double arg = cond.ends_with("argument_liberal") ? 0.6 : cond.ends_with("argument_conservative") ? -0.6 : 0.0;
            const auto r = static_cast<Eigen::Index>(rows.size());
            theta(r, 0) = role + arg + params.normal(0, 0.2);
            theta(r, 1) = (m == 0 ? -0.8 : 1.2) + params.normal(0, 0.5);
            rows.push_back(std::string(kModels[m]) + "/" + cond);
        }
    // Reference points for three-point identification sit exactly on their fixed values.
    const std::array<std::pair<std::string, std::array<double, 2>>, 3> anchors{{
        {"model-a/role_conservative_argument_none", {-2.0, 0.0}},
        {"model-a/role_liberal_argument_none", {2.0, 0.0}},
        {"model-b/role_original_argument_none", {0.0, 2.0}},
    }};
    for (const auto& [label, xy] : anchors) {
        const auto r = std::find(rows.begin(), rows.end(), label) - rows.begin();
        theta(r, 0) = xy[0];
        theta(r, 1) = xy[1];
    }
    Eigen::MatrixXd alpha(static_cast<Eigen::Index>(cols.size()), 2);
    Eigen::VectorXd beta(static_cast<Eigen::Index>(cols.size()));
    for (Eigen::Index k = 0; k < alpha.rows(); ++k) {
        alpha(k, 0) = (k % 2 == 0 ? 1.0 : -1.0) * (0.8 + 0.6 * params.uniform());
        alpha(k, 1) = params.normal(0, 0.8);
        beta(k) = params.normal(0, 0.5);
    }
    auto votes = Rng::substream(seed, "fixture/votes");
    std::vector<corpus::Response> entries;
    for (Eigen::Index r = 0; r < theta.rows(); ++r) {
        const bool refuser = rows[static_cast<std::size_t>(r)].starts_with("model-b");
        for (Eigen::Index k = 0; k < alpha.rows(); ++k) {
            const auto& topic = *stmts[static_cast<std::size_t>(k)].topic;
            const bool contentious = topic == "Abortion Rights" || topic == "Gun Control";
            if (votes.uniform() < (refuser && contentious ? 0.3 : 0.03)) {
                entries.push_back(corpus::Response::Null);
                continue;
            }
            const double p = irt::logistic(theta.row(r).dot(alpha.row(k)) - beta(k));
            entries.push_back(votes.uniform() < p ? corpus::Response::Liberal : corpus::Response::Conservative);
        }
    }
    corpus::write_response_matrix({rows, cols, entries}, out / "responses.csv");

    std::string ref = "respondent,dim1,dim2\n";
    for (Eigen::Index r = 0; r < theta.rows(); ++r)
        ref += fmt::format("{},{:.6f},{:.6f}\n", rows[static_cast<std::size_t>(r)], theta(r, 0), theta(r, 1));
    corpus::write_file(out / "reference_scores.csv", ref);

    // Contrastive residual dumps: 12 pairs along a hidden direction.
    auto acts = Rng::substream(seed, "fixture/activations");
    Eigen::VectorXd dir(kHidden);
    for (int h = 0; h < kHidden; ++h) dir(h) = acts.normal();
    dir.normalize();
    Eigen::MatrixXd pos(12, kHidden), neg(12, kHidden);
    for (int i = 0; i < 12; ++i)
        for (int h = 0; h < kHidden; ++h) {
            const double shared = acts.normal();
            pos(i, h) = shared + 1.5 * dir(h) + acts.normal(0, 0.1);
            neg(i, h) = shared - 1.5 * dir(h) + acts.normal(0, 0.1);
        }
    std::map<std::string, std::string> meta{{"model", "model-a"}, {"layer", "14"}};
    corpus::write_tensor(tensor({12, kHidden}, pos, meta), out / "caa_positive.idpt");
    corpus::write_tensor(tensor({12, kHidden}, neg, meta), out / "caa_negative.idpt");

    // Multiplier sweeps 0..-5 per layer and per model.
    auto sw = Rng::substream(seed, "fixture/sweeps");
    fs::create_directories(out / "sweeps");
    const std::array<std::pair<int, double>, 3> layers{{{10, 0.25}, {14, 0.6}, {18, 0.35}}};
    for (const auto& [layer, slope] : layers)
        corpus::write_response_matrix(sweep(sw, cols, 0.8, slope), out / "sweeps" / fmt::format("layer{}.csv", layer));
    corpus::write_response_matrix(sweep(sw, cols, 0.8, 0.6), out / "sweeps" / "model-a.csv");
    corpus::write_response_matrix(sweep(sw, cols, 1.2, 0.15), out / "sweeps" / "model-b.csv");

    // SAE activations and decoder.
    auto sa = Rng::substream(seed, "fixture/sae");
    corpus::write_sae_matrix(sae(sa, "lib", 10, true), out / "sae_liberal.jsonl");
    corpus::write_sae_matrix(sae(sa, "con", 10, false), out / "sae_conservative.jsonl");
    corpus::write_sae_matrix(sae(sa, "base", 8, true), out / "sae_eval_base.jsonl");
    corpus::write_sae_matrix(sae(sa, "steer", 8, false), out / "sae_eval_steered.jsonl");
    Eigen::MatrixXd dec(static_cast<Eigen::Index>(kFeatures), kHidden);
    for (Eigen::Index f = 0; f < dec.rows(); ++f) {
        for (int h = 0; h < kHidden; ++h) dec(f, h) = sa.normal();
        dec.row(f).normalize();
    }
    corpus::write_tensor(tensor({static_cast<std::int64_t>(kFeatures), kHidden}, dec, {{"model", "model-a"}}),
                         out / "decoder.idpt");

    // Intervention records over the first 40 features; vocabulary of 1000.
    auto iv = Rng::substream(seed, "fixture/interventions");
    steer::InterventionRecords recs;
    for (std::size_t f = 0; f < 40; ++f) {
        steer::OutputScoreRecord r{f, 1000, {0, 0.5}, {0, 0.5}};
        r.original.prob = std::round((0.3 + 0.5 * iv.uniform()) * 1e4) / 1e4;
        if (iv.uniform() < 0.6) {
            r.intervened.rank = iv.below(20);
            r.intervened.prob = std::round(0.9 * iv.uniform() * 1e4) / 1e4;
        } else {
            r.intervened.prob = r.original.prob;
        }
        recs.records.push_back(r);
    }
    corpus::write_file(out / "interventions.jsonl", steer::serialize_intervention_records(recs));

    // Activated-feature descriptions for the first two statements of each topic.
    std::string fd;
    for (std::size_t t = 0; t < kTopics.size(); ++t)
        for (std::size_t k = 0; k < 2; ++k) {
            const auto& s = stmts[t * kTemplates.size() + k];
            json j{{"statement_id", s.id},
                   {"features", {fmt::format("references to {}", kTopics[t].subject), "formal policy language",
                                 k == 0 ? "expressions of approval" : "expressions of concern"}}};
            fd += j.dump() + "\n";
        }
    corpus::write_file(out / "feature_descriptions.jsonl", fd);

    json cfg{
        {"seed", seed},
        {"output_dir", "out"},
        {"paths",
         {{"statements", "statements.jsonl"},
          {"responses", "responses.csv"},
          {"reference_scores", "reference_scores.csv"},
          {"positive_activations", "caa_positive.idpt"},
          {"negative_activations", "caa_negative.idpt"},
          {"layer_sweeps", {{"10", "sweeps/layer10.csv"}, {"14", "sweeps/layer14.csv"}, {"18", "sweeps/layer18.csv"}}},
          {"multiplier_sweeps", {{"model-a", "sweeps/model-a.csv"}, {"model-b", "sweeps/model-b.csv"}}},
          {"sae_positive", "sae_liberal.jsonl"},
          {"sae_negative", "sae_conservative.jsonl"},
          {"decoder", "decoder.idpt"},
          {"eval_activations", {{"base", "sae_eval_base.jsonl"}, {"steered", "sae_eval_steered.jsonl"}}},
          {"intervention_records", {{"model-a", "interventions.jsonl"}}},
          {"feature_descriptions", "feature_descriptions.jsonl"}}},
        {"adjudicator", {{"mock", true}, {"votes_per_item", 5}}},
        {"split", {{"eval_size", 40}, {"min_per_topic", 3}}},
        {"irt",
         {{"strategy", "three-point"},
          {"anchors", {anchors[0].first, anchors[1].first, anchors[2].first}},
          {"chains", 4},
          {"iterations", 4000},
          {"burn_in", 2000},
          {"workers", 1},
          {"pairs", json::array({json::array({"model-a/role_original_argument_none", "model-b/role_original_argument_none"})})}}},
    };
    corpus::write_file(out / "config.json", cfg.dump(2) + "\n");
    std::cout << "wrote fixture to " << out.string() << "\n";
    return 0;
}
