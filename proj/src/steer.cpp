#include "ideodepth/steer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "format.hpp"
#include "ideodepth/errors.hpp"
#include "ideodepth/stats.hpp"

namespace ideodepth::steer {

using corpus::Response;
using detail::num;
using json = nlohmann::json;

namespace {

Eigen::MatrixXd tensor_matrix(const corpus::TensorContainer& t, std::string_view what) {
    t.validate();
    if (t.shape.size() != 2) throw ValidationError(std::string(what) + " must be a rank-2 tensor");
    Eigen::MatrixXd m(t.shape[0], t.shape[1]);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[static_cast<std::size_t>(r * m.cols() + c)];
    return m;
}

std::int64_t metadata_int(const corpus::TensorContainer& t, const std::string& key, std::int64_t fallback) {
    auto it = t.metadata.find(key);
    if (it == t.metadata.end()) return fallback;
    try {
        std::size_t used = 0;
        const auto v = std::stoll(it->second, &used);
        if (used == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    throw FormatError("tensor metadata \"" + key + "\" is not an integer: " + it->second);
}

}  // namespace

ContrastSet ContrastSet::from_tensors(const corpus::TensorContainer& positive, const corpus::TensorContainer& negative) {
    ContrastSet s;
    s.positive = tensor_matrix(positive, "positive activations");
    s.negative = tensor_matrix(negative, "negative activations");
    if (auto it = positive.metadata.find("model"); it != positive.metadata.end()) s.model = it->second;
    s.layer = metadata_int(positive, "layer", 0);
    if (metadata_int(negative, "layer", s.layer) != s.layer)
        throw ValidationError("positive and negative activations come from different layers");
    return s;
}

CaaVector compute_caa(const ContrastSet& set) {
    if (set.positive.rows() < 1) throw InsufficientDataError("CAA needs at least one contrast pair");
    if (set.positive.rows() != set.negative.rows() || set.positive.cols() != set.negative.cols())
        throw ValidationError(fmt::format("contrast pairs disagree in shape: {}x{} vs {}x{}", set.positive.rows(),
                                          set.positive.cols(), set.negative.rows(), set.negative.cols()));
    CaaVector v;
    v.model = set.model;
    v.layer = set.layer;
    v.pairs = static_cast<std::size_t>(set.positive.rows());
    v.vector = Eigen::VectorXd::Zero(set.positive.cols());
    for (Eigen::Index i = 0; i < set.positive.rows(); ++i) v.vector += (set.positive.row(i) - set.negative.row(i)).transpose();
    v.vector /= static_cast<double>(set.positive.rows());
    if (!v.vector.allFinite()) throw ValidationError("CAA vector has non-finite entries");
    return v;
}

corpus::TensorContainer CaaVector::to_tensor() const {
    corpus::TensorContainer t;
    if (!model.empty()) t.metadata["model"] = model;
    t.metadata["layer"] = std::to_string(layer);
    t.metadata["pairs"] = std::to_string(pairs);
    t.shape = {static_cast<std::int64_t>(vector.size())};
    for (Eigen::Index i = 0; i < vector.size(); ++i) t.data.push_back(static_cast<float>(vector(i)));
    return t;
}

CaaVector CaaVector::from_tensor(const corpus::TensorContainer& t) {
    t.validate();
    if (t.shape.size() != 1) throw ValidationError("steering vector must be a rank-1 tensor");
    CaaVector v;
    if (auto it = t.metadata.find("model"); it != t.metadata.end()) v.model = it->second;
    v.layer = metadata_int(t, "layer", 0);
    v.pairs = static_cast<std::size_t>(metadata_int(t, "pairs", 0));
    v.vector.resize(t.shape[0]);
    for (Eigen::Index i = 0; i < v.vector.size(); ++i) v.vector(i) = t.data[static_cast<std::size_t>(i)];
    return v;
}

// ---------------------------------------------------------------------------

double SweepPoint::liberal_probability() const {
    if (p_liberal) return *p_liberal;
    const auto n = total();
    return n ? static_cast<double>(liberal) / static_cast<double>(n) : 0.0;
}

double SweepCurve::range() const {
    if (points.empty()) return 0.0;
    double lo = points.front().liberal_probability(), hi = lo;
    for (const auto& p : points) {
        lo = std::min(lo, p.liberal_probability());
        hi = std::max(hi, p.liberal_probability());
    }
    return hi - lo;
}

std::int64_t select_layer(const std::map<std::int64_t, SweepCurve>& curves) {
    if (curves.empty()) throw ValidationError("select_layer needs at least one layer curve");
    std::optional<std::int64_t> best;
    double best_range = -1.0;
    for (const auto& [layer, curve] : curves) {
        if (curve.points.size() < 2)
            throw ValidationError(fmt::format("layer {} curve has fewer than two multiplier points", layer));
        const double r = curve.range();
        if (r > best_range) {  // map order makes ties keep the lower layer
            best_range = r;
            best = layer;
        }
    }
    return *best;
}

SweepCurve multiplier_sweep_table(const std::vector<std::pair<double, std::vector<Response>>>& responses,
                                  std::string label) {
    SweepCurve curve;
    curve.label = std::move(label);
    if (responses.empty()) return curve;
    const std::size_t width = responses.front().second.size();
    int direction = 0;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const auto& [mult, row] = responses[i];
        if (row.size() != width)
            throw ValidationError(fmt::format("multiplier {} has {} responses, expected {}", mult, row.size(), width));
        if (i > 0) {
            const double prev = responses[i - 1].first;
            const int dir = mult > prev ? 1 : mult < prev ? -1 : 0;
            if (dir == 0 || (direction != 0 && dir != direction))
                throw ValidationError("multipliers must be strictly increasing or strictly decreasing");
            direction = dir;
        }
        SweepPoint p;
        p.multiplier = mult;
        for (auto r : row) {
            if (r == Response::Liberal)
                ++p.liberal;
            else if (r == Response::Conservative)
                ++p.conservative;
            else
                ++p.null;
        }
        curve.points.push_back(p);
    }
    return curve;
}

SweepCurve multiplier_sweep_table(const corpus::ResponseMatrix& m, std::string label) {
    std::vector<std::pair<double, std::vector<Response>>> rows;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto& lab = m.row_labels()[r];
        double mult = 0.0;
        try {
            std::size_t used = 0;
            mult = std::stod(lab, &used);
            if (used != lab.size()) throw std::invalid_argument(lab);
        } catch (const std::exception&) {
            throw ValidationError("sweep row label \"" + lab + "\" is not a multiplier value");
        }
        rows.emplace_back(mult, m.row(r));
    }
    return multiplier_sweep_table(rows, std::move(label));
}

std::string sweep_csv(std::span<const SweepCurve> curves) {
    std::string out = "label,multiplier,liberal,conservative,null,liberal_pct,conservative_pct,null_pct,p_liberal\n";
    for (const auto& c : curves) {
        for (const auto& p : c.points) {
            const double n = static_cast<double>(p.total());
            auto pct = [&](std::size_t k) { return n > 0 ? 100.0 * static_cast<double>(k) / n : 0.0; };
            out += c.label + "," + num(p.multiplier) + "," + std::to_string(p.liberal) + "," +
                   std::to_string(p.conservative) + "," + std::to_string(p.null) + "," + num(pct(p.liberal)) + "," +
                   num(pct(p.conservative)) + "," + num(pct(p.null)) + "," + num(p.liberal_probability()) + "\n";
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

FeatureStats compute_feature_stats(const SaeActivationMatrix& pos, const SaeActivationMatrix& neg) {
    if (pos.feature_dim() != neg.feature_dim())
        throw ValidationError(fmt::format("feature dimensions differ: {} vs {}", pos.feature_dim(), neg.feature_dim()));
    if (pos.prompt_count() != neg.prompt_count())
        throw ValidationError(
            fmt::format("prompt counts differ: {} positive vs {} negative", pos.prompt_count(), neg.prompt_count()));
    const std::size_t f = pos.feature_dim();
    const std::size_t n = pos.prompt_count();
    if (n == 0) throw InsufficientDataError("feature statistics need at least one prompt");

    FeatureStats s;
    s.delta_a_raw.assign(f, 0.0);
    std::vector<std::size_t> active_pos(f, 0), active_neg(f, 0);
    const auto& pe = pos.entries();
    const auto& ne = neg.entries();
    std::size_t i = 0, j = 0;
    // Per prompt, merge the two feature-sorted runs so every feature receives
    // (pos - neg) in prompt order.
    for (std::size_t prompt = 0; prompt < n; ++prompt) {
        while ((i < pe.size() && pe[i].prompt == prompt) || (j < ne.size() && ne[j].prompt == prompt)) {
            const bool has_p = i < pe.size() && pe[i].prompt == prompt;
            const bool has_n = j < ne.size() && ne[j].prompt == prompt;
            if (has_p && (!has_n || pe[i].feature < ne[j].feature)) {
                s.delta_a_raw[pe[i].feature] += pe[i].activation - 0.0;
                ++active_pos[pe[i].feature];
                ++i;
            } else if (has_n && (!has_p || ne[j].feature < pe[i].feature)) {
                s.delta_a_raw[ne[j].feature] += 0.0 - ne[j].activation;
                ++active_neg[ne[j].feature];
                ++j;
            } else {
                s.delta_a_raw[pe[i].feature] += pe[i].activation - ne[j].activation;
                ++active_pos[pe[i].feature];
                ++active_neg[ne[j].feature];
                ++i;
                ++j;
            }
        }
    }
    const double nd = static_cast<double>(n);
    double max_abs = 0.0;
    for (auto& v : s.delta_a_raw) {
        v /= nd;
        max_abs = std::max(max_abs, std::abs(v));
    }
    s.delta_a.resize(f);
    s.f_pos.resize(f);
    s.f_neg.resize(f);
    s.delta_f.resize(f);
    for (std::size_t k = 0; k < f; ++k) {
        s.delta_a[k] = max_abs > 0 ? s.delta_a_raw[k] / max_abs : 0.0;
        s.f_pos[k] = static_cast<double>(active_pos[k]) / nd;
        s.f_neg[k] = static_cast<double>(active_neg[k]) / nd;
        s.delta_f[k] = s.f_pos[k] - s.f_neg[k];
    }
    return s;
}

std::string_view to_string(SelectionMode m) { return m == SelectionMode::Union ? "union" : "intersection"; }

SelectionMode parse_selection_mode(std::string_view s) {
    if (s == "union") return SelectionMode::Union;
    if (s == "intersection") return SelectionMode::Intersection;
    throw ConfigError("unknown STA selection mode \"" + std::string(s) + "\"");
}

StaSelection select_sta(const FeatureStats& stats, SelectionMode mode) {
    StaSelection sel;
    sel.mode = mode;
    for (std::size_t k = 0; k < stats.size(); ++k) {
        const bool a = stats.delta_a[k] > 0, f = stats.delta_f[k] > 0;
        if (mode == SelectionMode::Union ? (a || f) : (a && f)) sel.features.push_back(k);
    }
    return sel;
}

Decoder Decoder::from_tensor(const corpus::TensorContainer& t) {
    Decoder d;
    d.rows = tensor_matrix(t, "decoder");
    auto it = t.metadata.find("feature_ids");
    if (it == t.metadata.end()) {
        for (Eigen::Index r = 0; r < d.rows.rows(); ++r) d.feature_ids.push_back(static_cast<std::size_t>(r));
        return d;
    }
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            d.feature_ids.push_back(static_cast<std::size_t>(std::stoull(tok)));
        } catch (const std::exception&) {
            throw FormatError("decoder feature_ids entry \"" + tok + "\" is not an integer");
        }
    }
    if (d.feature_ids.size() != static_cast<std::size_t>(d.rows.rows()))
        throw FormatError("decoder feature_ids count does not match its rows");
    return d;
}

std::optional<Eigen::Index> Decoder::row_of(std::size_t feature) const {
    auto it = std::find(feature_ids.begin(), feature_ids.end(), feature);
    if (it == feature_ids.end()) return std::nullopt;
    return static_cast<Eigen::Index>(it - feature_ids.begin());
}

Eigen::VectorXd assemble_sta_vector(const StaSelection& selection, const Decoder& decoder,
                                    std::span<const double> weights) {
    if (selection.features.empty()) throw ValidationError("STA selection is empty");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(decoder.rows.cols());
    for (auto f : selection.features) {
        auto row = decoder.row_of(f);
        if (!row) throw ValidationError(fmt::format("decoder has no row for feature {}", f));
        if (f >= weights.size()) throw ValidationError(fmt::format("no weight for feature {}", f));
        v += weights[f] * decoder.rows.row(*row).transpose();
    }
    return v;
}

Eigen::VectorXd assemble_sta_vector(const StaSelection& selection, const Decoder& decoder, const FeatureStats& stats) {
    return assemble_sta_vector(selection, decoder, std::span<const double>(stats.delta_a));
}

ActiveFeatureCounts count_active_features(const SaeActivationMatrix& acts, double threshold) {
    if (!(threshold >= 0)) throw DomainError("activation threshold must be non-negative");
    ActiveFeatureCounts c;
    c.per_prompt.assign(acts.prompt_count(), 0);
    std::vector<bool> seen(acts.feature_dim(), false);
    for (const auto& e : acts.entries()) {
        if (!(e.activation > threshold)) continue;
        ++c.per_prompt[e.prompt];
        if (!seen[e.feature]) {
            seen[e.feature] = true;
            ++c.union_count;
        }
    }
    if (!c.per_prompt.empty()) {
        std::size_t total = 0;
        for (auto k : c.per_prompt) total += k;
        c.mean_per_prompt = static_cast<double>(total) / static_cast<double>(c.per_prompt.size());
    }
    return c;
}

std::string feature_stats_csv(const FeatureStats& s) {
    std::string out = "feature,delta_a,delta_a_raw,f_pos,f_neg,delta_f\n";
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (s.delta_a_raw[k] == 0.0 && s.f_pos[k] == 0.0 && s.f_neg[k] == 0.0) continue;
        out += std::to_string(k) + "," + num(s.delta_a[k]) + "," + num(s.delta_a_raw[k]) + "," + num(s.f_pos[k]) +
               "," + num(s.f_neg[k]) + "," + num(s.delta_f[k]) + "\n";
    }
    return out;
}

std::string selection_csv(const StaSelection& sel, const FeatureStats& s) {
    std::string out = "feature,mode,delta_a,delta_f\n";
    for (auto k : sel.features)
        out += std::to_string(k) + "," + std::string(to_string(sel.mode)) + "," + num(s.delta_a[k]) + "," +
               num(s.delta_f[k]) + "\n";
    return out;
}

// ---------------------------------------------------------------------------

double rank_weighted_probability(TokenScore t, std::size_t vocab_size) {
    if (vocab_size == 0) throw DomainError("vocabulary size must be positive");
    if (t.rank >= vocab_size)
        throw DomainError(fmt::format("rank {} is outside a vocabulary of {}", t.rank, vocab_size));
    if (!(t.prob >= 0.0 && t.prob <= 1.0)) throw DomainError(fmt::format("probability {} outside [0, 1]", t.prob));
    return (1.0 - static_cast<double>(t.rank) / static_cast<double>(vocab_size)) * t.prob;
}

double output_score(TokenScore original, TokenScore intervened, std::size_t vocab_size) {
    return rank_weighted_probability(intervened, vocab_size) - rank_weighted_probability(original, vocab_size);
}

double output_score(const OutputScoreRecord& rec) { return output_score(rec.original, rec.intervened, rec.vocab_size); }

ScoreSummary score_summary(std::span<const double> scores) {
    if (scores.empty()) throw InsufficientDataError("score summary needs at least one score");
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    ScoreSummary s;
    s.n = sorted.size();
    s.mean = stats::mean(sorted);
    s.stddev = std::sqrt(stats::variance_pop(sorted));
    s.min = sorted.front();
    s.max = sorted.back();
    s.q1 = stats::quantile_sorted(sorted, 0.25);
    s.median = stats::quantile_sorted(sorted, 0.5);
    s.q3 = stats::quantile_sorted(sorted, 0.75);
    return s;
}

ScoreSummary score_summary(std::span<const OutputScoreRecord> records) {
    std::vector<double> v;
    v.reserve(records.size());
    for (const auto& r : records) v.push_back(output_score(r));
    return score_summary(v);
}

InterventionRecords parse_intervention_records(std::string_view text) {
    InterventionRecords out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto rec = json::parse(line);
            if (first && !rec.contains("feature")) {
                out.neutral_sentence = rec.at("neutral_sentence").get<std::string>();
                first = false;
                continue;
            }
            first = false;
            OutputScoreRecord r;
            r.feature = rec.at("feature").get<std::size_t>();
            r.vocab_size = rec.at("vocab_size").get<std::size_t>();
            r.original = {rec.at("original").at("rank").get<std::size_t>(), rec.at("original").at("prob").get<double>()};
            r.intervened = {rec.at("intervened").at("rank").get<std::size_t>(),
                            rec.at("intervened").at("prob").get<double>()};
            output_score(r);  // range checks
            out.records.push_back(r);
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed intervention record: ") + e.what(), line_no);
        } catch (const DomainError& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return out;
}

InterventionRecords read_intervention_records(const std::filesystem::path& path) {
    return parse_intervention_records(corpus::read_file(path));
}

std::string serialize_intervention_records(const InterventionRecords& recs) {
    std::string out = json{{"neutral_sentence", recs.neutral_sentence}}.dump() + "\n";
    for (const auto& r : recs.records) {
        json j{{"feature", r.feature},
               {"vocab_size", r.vocab_size},
               {"original", {{"rank", r.original.rank}, {"prob", r.original.prob}}},
               {"intervened", {{"rank", r.intervened.rank}, {"prob", r.intervened.prob}}}};
        out += j.dump() + "\n";
    }
    return out;
}

std::string output_scores_csv(std::span<const OutputScoreRecord> records) {
    std::string out = "feature,vocab_size,original_rank,original_prob,intervened_rank,intervened_prob,output_score\n";
    for (const auto& r : records)
        out += std::to_string(r.feature) + "," + std::to_string(r.vocab_size) + "," + std::to_string(r.original.rank) +
               "," + num(r.original.prob) + "," + std::to_string(r.intervened.rank) + "," + num(r.intervened.prob) +
               "," + num(output_score(r)) + "\n";
    return out;
}

std::string score_summary_csv(const std::vector<std::pair<std::string, ScoreSummary>>& rows) {
    std::string out = "label,n,mean,std,min,q1,median,q3,max\n";
    for (const auto& [label, s] : rows)
        out += label + "," + std::to_string(s.n) + "," + num(s.mean) + "," + num(s.stddev) + "," + num(s.min) + "," +
               num(s.q1) + "," + num(s.median) + "," + num(s.q3) + "," + num(s.max) + "\n";
    return out;
}

}  // namespace ideodepth::steer
