#include "ideodepth/adjudicator.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ideodepth/errors.hpp"
#include "ideodepth/parallel.hpp"
#include "ideodepth/rng.hpp"
#include "judge_templates.hpp"

namespace ideodepth::adjudicator {

using json = nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
               return std::tolower(x) == std::tolower(y);
           });
}

/// Maps a free-text vote onto a listed category, tolerating quotes, markdown
/// emphasis, list numbering and a trailing period.
std::optional<std::string> match_category(std::string_view reply, const TopicTaxonomy& taxonomy) {
    auto s = trim(reply);
    auto strip = [&s](std::string_view chars) {
        while (!s.empty() && chars.find(s.front()) != std::string_view::npos) s.remove_prefix(1);
        while (!s.empty() && chars.find(s.back()) != std::string_view::npos) s.remove_suffix(1);
        s = trim(s);
    };
    strip("\"'*`.");
    if (s.size() > 2 && s[0] == '-' && s[1] == ' ') s.remove_prefix(2);
    strip("\"'*`.");
    for (const auto& c : taxonomy.categories())
        if (s == c) return c;
    for (const auto& c : taxonomy.categories())
        if (iequals(s, c)) return c;
    return std::nullopt;
}

std::string replace_all(std::string text, std::string_view key, std::string_view value) {
    std::size_t pos = 0;
    while ((pos = text.find(key, pos)) != std::string::npos) {
        text.replace(pos, key.size(), value);
        pos += value.size();
    }
    return text;
}

/// Single pass over the template; substituted text is never rescanned.
std::string render(std::string_view tpl, const std::map<std::string_view, std::string_view>& values) {
    std::string out;
    out.reserve(tpl.size());
    std::size_t i = 0;
    while (i < tpl.size()) {
        if (tpl[i] == '{') {
            auto close = tpl.find('}', i);
            if (close != std::string_view::npos) {
                if (auto it = values.find(tpl.substr(i + 1, close - i - 1)); it != values.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tpl[i++];
    }
    return out;
}

std::string join(std::span<const std::string> items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

constexpr std::string_view kReformatRequest =
    "Your previous reply could not be used: {problem}\n"
    "Reply again with only the JSON object in a ```json fenced block, exactly as the OUTPUT FORMAT requests.";

template <typename Parse>
JudgeVerdict ask_judge(const std::string& prompt, ChatBackend& backend, const AdjudicatorConfig& cfg, Parse parse) {
    std::vector<ChatMessage> messages{{"user", prompt}};
    auto reply = complete_with_retry(backend, messages, cfg);
    try {
        return parse(reply);
    } catch (const JudgeFormatError& e) {
        spdlog::warn("judge reply rejected ({}); requesting reformat", e.what());
        messages.push_back({"assistant", reply});
        messages.push_back({"user", replace_all(std::string(kReformatRequest), "{problem}", e.what())});
    }
    reply = complete_with_retry(backend, messages, cfg);
    return parse(reply);
}

json parse_block(std::string_view reply) {
    auto block = extract_fenced_block(reply);
    if (!block) throw JudgeFormatError("reply has no fenced JSON block");
    try {
        auto j = json::parse(*block);
        if (!j.is_object()) throw JudgeFormatError("fenced block is not a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw JudgeFormatError(std::string("fenced block is not valid JSON: ") + e.what());
    }
}

int likert(const json& j, const char* field) {
    if (!j.contains(field)) throw JudgeFormatError(std::string("missing \"") + field + "\"");
    const auto& v = j[field];
    int score = 0;
    if (v.is_number_integer()) {
        score = v.get<int>();
    } else if (v.is_number_float() && v.get<double>() == static_cast<int>(v.get<double>())) {
        score = static_cast<int>(v.get<double>());
    } else {
        throw JudgeFormatError(std::string("\"") + field + "\" must be an integer");
    }
    if (score < 1 || score > 5)
        throw JudgeFormatError(std::string("\"") + field + "\" = " + std::to_string(score) + " outside 1-5");
    return score;
}

std::string text_field(const json& j, const char* field, bool required) {
    if (!j.contains(field) || j[field].is_null()) {
        if (required) throw JudgeFormatError(std::string("missing \"") + field + "\"");
        return {};
    }
    if (!j[field].is_string()) throw JudgeFormatError(std::string("\"") + field + "\" must be a string");
    return j[field].get<std::string>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Categorization
// ---------------------------------------------------------------------------

std::string categorization_prompt(const Statement& stmt, std::span<const std::string> categories) {
    std::string p = "Assign the following political statement to exactly one topic category.\n\n";
    p += "Statement: \"" + stmt.text + "\"\n\nCategories:\n";
    for (const auto& c : categories) p += "- " + c + "\n";
    p += "\nAnswer with the name of the single best-matching category, exactly as written above, and nothing else.";
    return p;
}

std::pair<std::string, bool> modal_vote(std::span<const std::string> votes) {
    if (votes.empty()) throw InsufficientDataError("no votes to aggregate");
    std::map<std::string, std::size_t> tally;  // ordered: first max is lexicographically smallest
    for (const auto& v : votes) ++tally[v];
    std::size_t best = 0;
    for (const auto& [_, n] : tally) best = std::max(best, n);
    std::string chosen;
    std::size_t at_best = 0;
    for (const auto& [name, n] : tally) {
        if (n == best) {
            if (at_best == 0) chosen = name;
            ++at_best;
        }
    }
    return {chosen, at_best > 1};
}

CategorizationResult categorize_statement(const Statement& stmt, const TopicTaxonomy& taxonomy, ChatBackend& backend,
                                          const AdjudicatorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CategorizationResult result;
    result.statement_id = stmt.id;
    auto rng = Rng::substream(seed, stmt.id);
    std::vector<std::string> order = taxonomy.categories();
    for (int v = 0; v < cfg.votes_per_item; ++v) {
        order = taxonomy.categories();
        rng.shuffle(std::span<std::string>(order));
        const auto reply = complete_with_retry(backend, {{"user", categorization_prompt(stmt, order)}}, cfg);
        if (auto cat = match_category(reply, taxonomy)) {
            result.votes.push_back(*cat);
        } else {
            ++result.discarded;
            spdlog::warn("statement {}: discarded vote \"{}\" (not in taxonomy)", stmt.id, std::string(trim(reply)));
        }
    }
    if (result.votes.empty())
        throw JudgeFormatError("statement \"" + stmt.id + "\": every categorization vote was outside the taxonomy");
    std::tie(result.chosen, result.tie) = modal_vote(result.votes);
    return result;
}

std::vector<CategorizationResult> categorize_all(const StatementSet& set, const TopicTaxonomy& taxonomy,
                                                 ChatBackend& backend, const AdjudicatorConfig& cfg,
                                                 std::uint64_t seed) {
    cfg.validate();
    std::vector<CategorizationResult> results(set.size());
    parallel_for(set.size(), static_cast<std::size_t>(cfg.concurrency),
                 [&](std::size_t i) { results[i] = categorize_statement(set[i], taxonomy, backend, cfg, seed); });
    return results;
}

StatementSet apply_categories(const StatementSet& set, std::span<const CategorizationResult> results) {
    std::map<std::string, std::string> chosen;
    for (const auto& r : results) chosen[r.statement_id] = r.chosen;
    std::vector<Statement> out(set.begin(), set.end());
    for (auto& s : out) {
        if (auto it = chosen.find(s.id); it != chosen.end()) s.topic = it->second;
    }
    return StatementSet(std::move(out));
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

StatementSet stratified_split(const StatementSet& set, std::size_t eval_size, std::size_t min_per_topic,
                              std::uint64_t seed, SplitAllocation allocation) {
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!set[i].topic) throw ConfigError("statement \"" + set[i].id + "\" has no topic; categorize first");
        members[*set[i].topic].push_back(i);
    }
    const std::size_t topics = members.size();
    if (eval_size > set.size())
        throw ConfigError("eval_size " + std::to_string(eval_size) + " exceeds " + std::to_string(set.size()) +
                          " statements");
    if (eval_size < min_per_topic * topics)
        throw ConfigError("eval_size " + std::to_string(eval_size) + " is below " + std::to_string(min_per_topic) +
                          " x " + std::to_string(topics) + " topics");
    for (const auto& [topic, idx] : members) {
        if (idx.size() < min_per_topic)
            throw ConfigError("topic \"" + topic + "\" has " + std::to_string(idx.size()) + " statements, fewer than " +
                              std::to_string(min_per_topic));
    }

    // Shuffle each topic once; a topic's eval picks are a prefix of its order.
    for (auto& [topic, idx] : members) {
        auto rng = Rng::substream(seed, "split/" + topic);
        rng.shuffle(std::span<std::size_t>(idx));
    }

    std::map<std::string, std::size_t> quota;
    for (const auto& [topic, _] : members) quota[topic] = min_per_topic;
    const std::size_t remainder = eval_size - min_per_topic * topics;

    std::vector<bool> is_eval(set.size(), false);
    if (allocation == SplitAllocation::Proportional) {
        std::size_t capacity = 0;
        for (const auto& [_, idx] : members) capacity += idx.size() - min_per_topic;
        std::vector<std::pair<std::string, double>> fractional;
        std::size_t assigned = 0;
        for (const auto& [topic, idx] : members) {
            const auto cap = idx.size() - min_per_topic;
            if (capacity == 0) break;
            // Exact integer floor, fractional part for largest-remainder ranking.
            const std::size_t num = remainder * cap;
            quota[topic] += num / capacity;
            assigned += num / capacity;
            fractional.emplace_back(topic, static_cast<double>(num % capacity) / static_cast<double>(capacity));
        }
        std::stable_sort(fractional.begin(), fractional.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        for (std::size_t k = 0; assigned < remainder; ++k, ++assigned) ++quota[fractional.at(k).first];
        for (const auto& [topic, idx] : members)
            for (std::size_t k = 0; k < quota[topic]; ++k) is_eval[idx[k]] = true;
    } else {
        std::vector<std::size_t> pool;
        for (const auto& [topic, idx] : members) {
            for (std::size_t k = 0; k < idx.size(); ++k) {
                if (k < min_per_topic)
                    is_eval[idx[k]] = true;
                else
                    pool.push_back(idx[k]);
            }
        }
        std::sort(pool.begin(), pool.end());
        auto rng = Rng::substream(seed, "split/pool");
        rng.shuffle(std::span<std::size_t>(pool));
        for (std::size_t k = 0; k < remainder; ++k) is_eval[pool[k]] = true;
    }

    std::vector<Statement> out(set.begin(), set.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i].split = is_eval[i] ? corpus::Split::Eval : corpus::Split::Train;
    return StatementSet(std::move(out));
}

// ---------------------------------------------------------------------------
// Judging
// ---------------------------------------------------------------------------

std::string_view to_string(JudgeKind kind) {
    return kind == JudgeKind::PredictiveValidity ? "predictive-validity" : "coherence";
}

std::string predictive_validity_prompt(std::string_view statement, std::span<const std::string> feature_descriptions,
                                       const TopicTaxonomy& taxonomy) {
    std::string features;
    for (const auto& f : feature_descriptions) features += "\n    - " + f;
    const auto categories = join(taxonomy.categories(), ", ");
    return render(templates::kPredictiveValidity,
                  {{"category_list", categories}, {"statement", statement}, {"feature_list", features}});
}

std::string coherence_prompt(std::span<const std::string> feature_descriptions) {
    const auto features = join(feature_descriptions, "; ");
    return render(templates::kCoherence, {{"feature_str", features}});
}

std::optional<std::string> extract_fenced_block(std::string_view reply) {
    auto open = reply.find("```");
    if (open == std::string_view::npos) return std::nullopt;
    auto body_start = reply.find('\n', open);
    if (body_start == std::string_view::npos) return std::nullopt;
    ++body_start;
    auto close = reply.find("```", body_start);
    if (close == std::string_view::npos) return std::nullopt;
    return std::string(reply.substr(body_start, close - body_start));
}

JudgeVerdict parse_predictive_reply(std::string_view reply, const TopicTaxonomy& taxonomy) {
    auto j = parse_block(reply);
    JudgeVerdict v;
    v.kind = JudgeKind::PredictiveValidity;
    auto cls = text_field(j, "classification", true);
    auto matched = match_category(cls, taxonomy);
    if (!matched) throw JudgeFormatError("classification \"" + cls + "\" is not a taxonomy category");
    v.classification = *matched;
    v.confidence = likert(j, "confidence_score");
    v.justification = text_field(j, "justification", false);
    return v;
}

JudgeVerdict parse_coherence_reply(std::string_view reply) {
    auto j = parse_block(reply);
    JudgeVerdict v;
    v.kind = JudgeKind::Coherence;
    v.coherence_score = likert(j, "coherence_score");
    auto theme = text_field(j, "primary_theme", true);
    if (trim(theme).empty()) throw JudgeFormatError("\"primary_theme\" is empty");
    v.theme = theme;
    v.justification = text_field(j, "justification", false);
    return v;
}

JudgeVerdict judge_predictive_validity(const Statement& stmt, std::span<const std::string> feature_descriptions,
                                       const TopicTaxonomy& taxonomy, ChatBackend& backend,
                                       const AdjudicatorConfig& cfg) {
    if (feature_descriptions.empty())
        throw ValidationError("statement \"" + stmt.id + "\": predictive-validity judging needs at least one feature");
    auto v = ask_judge(predictive_validity_prompt(stmt.text, feature_descriptions, taxonomy), backend, cfg,
                       [&](std::string_view r) { return parse_predictive_reply(r, taxonomy); });
    v.statement_id = stmt.id;
    return v;
}

JudgeVerdict judge_coherence(std::span<const std::string> feature_descriptions, ChatBackend& backend,
                             const AdjudicatorConfig& cfg, std::string statement_id) {
    if (feature_descriptions.empty()) throw ValidationError("coherence judging needs at least one feature");
    auto v = ask_judge(coherence_prompt(feature_descriptions), backend, cfg,
                       [](std::string_view r) { return parse_coherence_reply(r); });
    v.statement_id = std::move(statement_id);
    return v;
}

std::vector<FeatureDescriptions> parse_feature_descriptions_text(std::string_view text) {
    std::vector<FeatureDescriptions> out;
    std::size_t line_no = 0, start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = trim(text.substr(start, end - start));
        start = end + 1;
        ++line_no;
        if (line.empty()) continue;
        try {
            auto j = json::parse(line);
            out.push_back({j.at("statement_id").get<std::string>(), j.at("features").get<std::vector<std::string>>()});
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed feature-description record: ") + e.what(), line_no);
        }
    }
    return out;
}

std::vector<FeatureDescriptions> parse_feature_descriptions(const std::filesystem::path& path) {
    return parse_feature_descriptions_text(corpus::read_file(path));
}

JudgeBatch judge_all(std::span<const FeatureDescriptions> items, const StatementSet& statements,
                     const TopicTaxonomy& taxonomy, ChatBackend& backend, const AdjudicatorConfig& cfg) {
    cfg.validate();
    for (const auto& item : items)
        if (!statements.find(item.statement_id))
            throw ValidationError("feature descriptions reference unknown statement \"" + item.statement_id + "\"");
    JudgeBatch batch;
    batch.predictive.resize(items.size());
    batch.coherence.resize(items.size());
    parallel_for(items.size(), static_cast<std::size_t>(cfg.concurrency), [&](std::size_t i) {
        const auto& item = items[i];
        batch.predictive[i] =
            judge_predictive_validity(*statements.find(item.statement_id), item.features, taxonomy, backend, cfg);
        batch.coherence[i] = judge_coherence(item.features, backend, cfg, item.statement_id);
    });
    return batch;
}

std::string serialize_verdicts(std::span<const JudgeVerdict> verdicts) {
    std::string out;
    for (const auto& v : verdicts) {
        json j;
        j["statement_id"] = v.statement_id;
        j["kind"] = std::string(to_string(v.kind));
        if (v.classification) j["classification"] = *v.classification;
        if (v.confidence) j["confidence_score"] = *v.confidence;
        if (v.coherence_score) j["coherence_score"] = *v.coherence_score;
        if (v.theme) j["primary_theme"] = *v.theme;
        j["justification"] = v.justification;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<JudgeVerdict> parse_verdicts_text(std::string_view text) {
    std::vector<JudgeVerdict> out;
    std::size_t line_no = 0, start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = trim(text.substr(start, end - start));
        start = end + 1;
        ++line_no;
        if (line.empty()) continue;
        try {
            auto j = json::parse(line);
            JudgeVerdict v;
            v.statement_id = j.at("statement_id").get<std::string>();
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "predictive-validity")
                v.kind = JudgeKind::PredictiveValidity;
            else if (kind == "coherence")
                v.kind = JudgeKind::Coherence;
            else
                throw ParseError("unknown verdict kind \"" + kind + "\"", line_no);
            if (j.contains("classification")) v.classification = j["classification"].get<std::string>();
            if (j.contains("confidence_score")) v.confidence = j["confidence_score"].get<int>();
            if (j.contains("coherence_score")) v.coherence_score = j["coherence_score"].get<int>();
            if (j.contains("primary_theme")) v.theme = j["primary_theme"].get<std::string>();
            v.justification = j.value("justification", "");
            const bool ok = v.kind == JudgeKind::PredictiveValidity ? (v.classification && v.confidence)
                                                                    : (v.coherence_score && v.theme);
            if (!ok) throw ParseError("verdict record lacks the fields its kind requires", line_no);
            out.push_back(std::move(v));
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed verdict record: ") + e.what(), line_no);
        }
    }
    return out;
}

void write_verdicts(std::span<const JudgeVerdict> verdicts, const std::filesystem::path& path) {
    corpus::write_file(path, serialize_verdicts(verdicts));
}

std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path) {
    return parse_verdicts_text(corpus::read_file(path));
}

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

std::size_t ConfusionMatrix::at(std::string_view truth, std::string_view predicted) const {
    auto t = std::find(categories.begin(), categories.end(), truth);
    auto p = std::find(categories.begin(), categories.end(), predicted);
    if (t == categories.end() || p == categories.end()) throw ValidationError("unknown confusion-matrix category");
    return counts[static_cast<std::size_t>(t - categories.begin())][static_cast<std::size_t>(p - categories.begin())];
}

std::size_t ConfusionMatrix::total() const {
    std::size_t n = 0;
    for (const auto& row : counts) n = std::accumulate(row.begin(), row.end(), n);
    return n;
}

std::size_t ConfusionMatrix::trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) n += counts[i][i];
    return n;
}

std::vector<std::size_t> ConfusionMatrix::row_sums() const {
    std::vector<std::size_t> out;
    for (const auto& row : counts) out.push_back(std::accumulate(row.begin(), row.end(), std::size_t{0}));
    return out;
}

ConfusionMatrix build_confusion(std::span<const JudgeVerdict> verdicts, const StatementSet& truth,
                                const TopicTaxonomy& taxonomy) {
    ConfusionMatrix cm;
    cm.categories = taxonomy.categories();
    cm.counts.assign(cm.categories.size(), std::vector<std::size_t>(cm.categories.size(), 0));
    for (const auto& v : verdicts) {
        if (v.kind != JudgeKind::PredictiveValidity || !v.classification)
            throw ValidationError("confusion matrix needs predictive-validity verdicts (statement \"" + v.statement_id +
                                  "\")");
        const auto* s = truth.find(v.statement_id);
        if (!s) throw ValidationError("verdict for unknown statement \"" + v.statement_id + "\"");
        if (!s->topic) throw ValidationError("statement \"" + v.statement_id + "\" has no ground-truth topic");
        const auto t = taxonomy.index_of(*s->topic);
        const auto p = taxonomy.index_of(*v.classification);
        if (t == TopicTaxonomy::npos || p == TopicTaxonomy::npos)
            throw ValidationError("verdict for \"" + v.statement_id + "\" uses a category outside the taxonomy");
        ++cm.counts[t][p];
    }
    return cm;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
    std::string out = "truth\\predicted";
    for (const auto& c : cm.categories) out += "," + c;
    out += '\n';
    for (std::size_t i = 0; i < cm.categories.size(); ++i) {
        out += cm.categories[i];
        for (auto n : cm.counts[i]) out += "," + std::to_string(n);
        out += '\n';
    }
    return out;
}

}  // namespace ideodepth::adjudicator
