#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ideodepth/corpus.hpp"

namespace ideodepth::adjudicator {

using corpus::Statement;
using corpus::StatementSet;
using corpus::TopicTaxonomy;

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

struct ChatMessage {
    std::string role;
    std::string content;
};

/// A chat-completion service. Implementations must tolerate concurrent calls.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// Reply text of the first choice. Throws TransportError on failure.
    virtual std::string complete(const std::vector<ChatMessage>& messages, double temperature) = 0;
};

struct AdjudicatorConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-4o-mini";
    double temperature = 0.0;
    int votes_per_item = 10;
    int max_retries = 3;
    int concurrency = 4;
    std::chrono::milliseconds backoff{500};
    std::chrono::seconds timeout{120};
    bool mock = false;

    void validate() const;
};

/// POSTs {model, messages, temperature} to an OpenAI-style endpoint. Uses the
/// IDEODEPTH_API_KEY environment variable for bearer auth when set.
class HttpChatBackend final : public ChatBackend {
public:
    explicit HttpChatBackend(const AdjudicatorConfig& cfg);
    std::string complete(const std::vector<ChatMessage>& messages, double temperature) override;

private:
    std::string scheme_host_port_;
    std::string path_;
    std::string model_;
    std::string api_key_;
    std::chrono::seconds timeout_;
};

/// Offline judge answering from a keyword table.
///
/// Recognizes the categorization prompt and both judge templates and answers
/// by meaning: scores each candidate category by keyword hits in the relevant
/// text, so the answer does not depend on the order categories are listed in.
/// Ties and no-hit cases resolve to the lexicographically smallest candidate.
class MockAdjudicator final : public ChatBackend {
public:
    using KeywordTable = std::map<std::string, std::vector<std::string>>;

    MockAdjudicator();
    explicit MockAdjudicator(KeywordTable table);

    static const KeywordTable& default_table();

    std::string complete(const std::vector<ChatMessage>& messages, double temperature) override;

    /// Category with the most keyword hits in `text` among `candidates`.
    std::pair<std::string, std::size_t> best_category(std::string_view text,
                                                      const std::vector<std::string>& candidates) const;

private:
    KeywordTable table_;
};

/// Adapter for tests and scripted replies.
class FunctionBackend final : public ChatBackend {
public:
    using Fn = std::function<std::string(const std::vector<ChatMessage>&)>;
    explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
    std::string complete(const std::vector<ChatMessage>& messages, double) override { return fn_(messages); }

private:
    Fn fn_;
};

std::unique_ptr<ChatBackend> make_backend(const AdjudicatorConfig& cfg);

/// Calls the backend, retrying transport failures with exponential backoff.
std::string complete_with_retry(ChatBackend& backend, const std::vector<ChatMessage>& messages,
                                const AdjudicatorConfig& cfg);

// ---------------------------------------------------------------------------
// Topic categorization
// ---------------------------------------------------------------------------

struct CategorizationResult {
    std::string statement_id;
    std::vector<std::string> votes;  // accepted votes, in query order
    std::string chosen;
    bool tie = false;
    std::size_t discarded = 0;  // replies that named no listed category
};

std::string categorization_prompt(const Statement& stmt, std::span<const std::string> categories);

/// Issues cfg.votes_per_item queries, each listing the taxonomy in a freshly
/// shuffled order, and takes the modal answer. Ties go to the
/// lexicographically smallest category and set `tie`.
CategorizationResult categorize_statement(const Statement& stmt, const TopicTaxonomy& taxonomy, ChatBackend& backend,
                                          const AdjudicatorConfig& cfg, std::uint64_t seed);

/// Categorizes every statement using up to cfg.concurrency workers. Results
/// follow the input order.
std::vector<CategorizationResult> categorize_all(const StatementSet& set, const TopicTaxonomy& taxonomy,
                                                 ChatBackend& backend, const AdjudicatorConfig& cfg,
                                                 std::uint64_t seed);

StatementSet apply_categories(const StatementSet& set, std::span<const CategorizationResult> results);

/// Mode of `votes` with the tie rule above.
std::pair<std::string, bool> modal_vote(std::span<const std::string> votes);

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

enum class SplitAllocation {
    /// Minimum per topic, remainder by largest-remainder apportionment over
    /// each topic's members beyond the minimum.
    Proportional,
    /// Minimum per topic, remainder drawn uniformly from the leftover pool.
    MinimumOnly,
};

StatementSet stratified_split(const StatementSet& set, std::size_t eval_size, std::size_t min_per_topic,
                              std::uint64_t seed, SplitAllocation allocation = SplitAllocation::Proportional);

// ---------------------------------------------------------------------------
// Feature-quality judging
// ---------------------------------------------------------------------------

enum class JudgeKind { PredictiveValidity, Coherence };

std::string_view to_string(JudgeKind kind);

struct JudgeVerdict {
    std::string statement_id;
    JudgeKind kind = JudgeKind::PredictiveValidity;
    std::optional<std::string> classification;
    std::optional<int> confidence;
    std::optional<int> coherence_score;
    std::optional<std::string> theme;
    std::string justification;

    bool operator==(const JudgeVerdict&) const = default;
};

std::string predictive_validity_prompt(std::string_view statement, std::span<const std::string> feature_descriptions,
                                       const TopicTaxonomy& taxonomy);
std::string coherence_prompt(std::span<const std::string> feature_descriptions);

/// Body of the first fenced block (``` or ```json), if any.
std::optional<std::string> extract_fenced_block(std::string_view reply);

/// Both throw JudgeFormatError on a missing block, bad JSON, missing fields,
/// out-of-range scores or an out-of-taxonomy classification.
JudgeVerdict parse_predictive_reply(std::string_view reply, const TopicTaxonomy& taxonomy);
JudgeVerdict parse_coherence_reply(std::string_view reply);

JudgeVerdict judge_predictive_validity(const Statement& stmt, std::span<const std::string> feature_descriptions,
                                       const TopicTaxonomy& taxonomy, ChatBackend& backend,
                                       const AdjudicatorConfig& cfg);
JudgeVerdict judge_coherence(std::span<const std::string> feature_descriptions, ChatBackend& backend,
                             const AdjudicatorConfig& cfg, std::string statement_id = {});

/// Per-statement activated-feature descriptions, one JSON record per line:
/// {"statement_id": "...", "features": ["...", ...]}.
struct FeatureDescriptions {
    std::string statement_id;
    std::vector<std::string> features;
};

std::vector<FeatureDescriptions> parse_feature_descriptions(const std::filesystem::path& path);
std::vector<FeatureDescriptions> parse_feature_descriptions_text(std::string_view text);

struct JudgeBatch {
    std::vector<JudgeVerdict> predictive;
    std::vector<JudgeVerdict> coherence;
};

/// Runs both evaluations for every item concurrently; output follows input order.
JudgeBatch judge_all(std::span<const FeatureDescriptions> items, const StatementSet& statements,
                     const TopicTaxonomy& taxonomy, ChatBackend& backend, const AdjudicatorConfig& cfg);

std::string serialize_verdicts(std::span<const JudgeVerdict> verdicts);
std::vector<JudgeVerdict> parse_verdicts_text(std::string_view text);
void write_verdicts(std::span<const JudgeVerdict> verdicts, const std::filesystem::path& path);
std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

/// Rows are ground-truth topics, columns predictions.
struct ConfusionMatrix {
    std::vector<std::string> categories;
    std::vector<std::vector<std::size_t>> counts;

    std::size_t at(std::string_view truth, std::string_view predicted) const;
    std::size_t total() const;
    std::size_t trace() const;
    std::vector<std::size_t> row_sums() const;
};

/// Counts predictive-validity verdicts against statement topics. Throws
/// ValidationError for coherence verdicts, unknown ids or untopiced statements.
ConfusionMatrix build_confusion(std::span<const JudgeVerdict> verdicts, const StatementSet& truth,
                                const TopicTaxonomy& taxonomy);

std::string confusion_csv(const ConfusionMatrix& cm);

}  // namespace ideodepth::adjudicator
