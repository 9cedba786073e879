#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ideodepth/adjudicator.hpp"
#include "ideodepth/errors.hpp"

namespace ideodepth::adjudicator {

using json = nlohmann::json;

void AdjudicatorConfig::validate() const {
    if (votes_per_item < 1) throw ConfigError("votes_per_item must be at least 1");
    if (concurrency < 1) throw ConfigError("concurrency limit must be at least 1");
    if (max_retries < 0) throw ConfigError("max_retries must be non-negative");
    if (!(temperature >= 0.0)) throw ConfigError("temperature must be non-negative");
    if (!mock && endpoint.empty()) throw ConfigError("adjudicator endpoint is empty and mock mode is off");
}

// ---------------------------------------------------------------------------

HttpChatBackend::HttpChatBackend(const AdjudicatorConfig& cfg) : model_(cfg.model), timeout_(cfg.timeout) {
    const auto& url = cfg.endpoint;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    scheme_host_port_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (const char* key = std::getenv("IDEODEPTH_API_KEY")) api_key_ = key;
}

std::string HttpChatBackend::complete(const std::vector<ChatMessage>& messages, double temperature) {
    json body;
    body["model"] = model_;
    body["temperature"] = temperature;
    body["messages"] = json::array();
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});

    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw TransportError("chat endpoint request failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw TransportError("chat endpoint returned HTTP " + std::to_string(res->status));
    try {
        auto reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError(std::string("malformed chat completion body: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string_view between(std::string_view text, std::string_view open, std::string_view close) {
    auto a = text.find(open);
    if (a == std::string_view::npos) return {};
    a += open.size();
    auto b = text.find(close, a);
    if (b == std::string_view::npos) b = text.size();
    return text.substr(a, b - a);
}

std::vector<std::string> bullet_items(std::string_view block) {
    std::vector<std::string> items;
    std::size_t start = 0;
    while (start < block.size()) {
        auto end = block.find('\n', start);
        if (end == std::string_view::npos) end = block.size();
        auto line = block.substr(start, end - start);
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.front()))) line.remove_prefix(1);
        if (line.size() > 2 && line.substr(0, 2) == "- ") items.emplace_back(line.substr(2));
        start = end + 1;
    }
    return items;
}

std::vector<std::string> split_on(std::string_view text, std::string_view sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = text.find(sep, start);
        out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + sep.size();
    }
    return out;
}

std::string fenced(const json& j) { return "```json\n" + j.dump(2) + "\n```"; }

}  // namespace

const MockAdjudicator::KeywordTable& MockAdjudicator::default_table() {
    static const KeywordTable table = {
        {"Abortion Rights", {"abortion", "pro-choice", "pro-life", "reproductive", "fetus", "pregnan"}},
        {"Climate & Environment", {"climate", "environment", "emission", "carbon", "fossil", "renewable", "pollution"}},
        {"Criminal Justice", {"crime", "criminal", "police", "prison", "sentenc", "incarcerat"}},
        {"Economic Regulation", {"regulat", "corporat", "minimum wage", "business", "antitrust", "wall street"}},
        {"Gun Control", {"gun", "firearm", "second amendment", "rifle", "shooting"}},
        {"Healthcare", {"health", "medicare", "medicaid", "insurance", "hospital"}},
        {"Immigration & Refugees", {"immigra", "refugee", "border", "asylum", "deport", "migrant"}},
        {"Military & Defense Spending", {"military", "defense", "troops", "army", "pentagon", "weapons"}},
        {"Political & Ideological Stances", {"liberal", "conservative", "progressive", "ideolog", "partisan", "political"}},
        {"Social Welfare & Poverty", {"welfare", "poverty", "poor", "food stamps", "homeless", "safety net"}},
        {"Tax Policy", {"tax", "irs", "wealthy"}},
        {"Traditional Values & Gender Roles", {"family", "marriage", "gender", "religio", "traditional", "church"}},
    };
    return table;
}

MockAdjudicator::MockAdjudicator() : table_(default_table()) {}
MockAdjudicator::MockAdjudicator(KeywordTable table) : table_(std::move(table)) {}

std::pair<std::string, std::size_t> MockAdjudicator::best_category(std::string_view text,
                                                                   const std::vector<std::string>& candidates) const {
    const auto hay = lower(text);
    std::string best;
    std::size_t best_hits = 0;
    bool have = false;
    for (const auto& cand : candidates) {
        std::size_t hits = 0;
        if (auto it = table_.find(cand); it != table_.end()) {
            for (const auto& kw : it->second)
                if (hay.find(kw) != std::string::npos) ++hits;
        }
        if (!have || hits > best_hits || (hits == best_hits && cand < best)) {
            best = cand;
            best_hits = hits;
            have = true;
        }
    }
    return {best, best_hits};
}

std::string MockAdjudicator::complete(const std::vector<ChatMessage>& messages, double) {
    auto first_user = std::find_if(messages.begin(), messages.end(), [](const auto& m) { return m.role == "user"; });
    if (first_user == messages.end()) throw TransportError("mock adjudicator received no user message");
    const std::string_view prompt = first_user->content;

    if (prompt.find("**Test Statement:**") != std::string_view::npos) {
        auto cats_line = between(prompt, "into one of the following categories: ", "\n");
        auto categories = split_on(cats_line, ", ");
        auto features = between(prompt, "**Extracted Features:**", "\n\n**OUTPUT FORMAT");
        auto [cat, hits] = best_category(features, categories);
        json j = {{"classification", cat},
                  {"confidence_score", static_cast<int>(std::min<std::size_t>(5, 1 + hits))},
                  {"justification", "Keyword overlap with " + cat + " in " + std::to_string(hits) + " cue(s)."}};
        return fenced(j);
    }

    if (prompt.find("**thematic coherence**") != std::string_view::npos) {
        auto feature_str = between(prompt, "**List of Activated Features (from Llama/Gemma):** ", "\n\n**OUTPUT FORMAT");
        auto features = split_on(feature_str, "; ");
        std::vector<std::string> cats;
        for (const auto& [name, _] : table_) cats.push_back(name);
        std::map<std::string, std::size_t> tally;
        for (const auto& f : features) {
            auto [cat, hits] = best_category(f, cats);
            if (hits > 0) ++tally[cat];
        }
        std::string theme = "Mixed references";
        std::size_t modal = 0;
        for (const auto& [cat, n] : tally) {
            if (n > modal) {
                modal = n;
                theme = cat;
            }
        }
        const double share = features.empty() ? 0.0 : static_cast<double>(modal) / static_cast<double>(features.size());
        const int score = 1 + static_cast<int>(std::lround(4.0 * share));
        json j = {{"coherence_score", score},
                  {"primary_theme", theme},
                  {"justification", std::to_string(modal) + " of " + std::to_string(features.size()) +
                                        " features share the dominant theme."}};
        return fenced(j);
    }

    if (prompt.find("\nCategories:\n") != std::string_view::npos) {
        auto statement = between(prompt, "Statement: \"", "\"\n\nCategories:");
        auto categories = bullet_items(between(prompt, "\nCategories:\n", "\n\n"));
        return best_category(statement, categories).first;
    }

    throw TransportError("mock adjudicator does not recognize the prompt");
}

// ---------------------------------------------------------------------------

std::unique_ptr<ChatBackend> make_backend(const AdjudicatorConfig& cfg) {
    cfg.validate();
    if (cfg.mock) return std::make_unique<MockAdjudicator>();
    return std::make_unique<HttpChatBackend>(cfg);
}

std::string complete_with_retry(ChatBackend& backend, const std::vector<ChatMessage>& messages,
                                const AdjudicatorConfig& cfg) {
    for (int attempt = 0;; ++attempt) {
        try {
            return backend.complete(messages, cfg.temperature);
        } catch (const TransportError& e) {
            if (attempt >= cfg.max_retries) throw;
            auto wait = cfg.backoff * (1 << std::min(attempt, 10));
            spdlog::warn("chat request failed ({}); retry {}/{} in {} ms", e.what(), attempt + 1, cfg.max_retries,
                         wait.count());
            std::this_thread::sleep_for(wait);
        }
    }
}

}  // namespace ideodepth::adjudicator
