#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ideodepth::corpus {

// ---------------------------------------------------------------------------
// Statements and topics
// ---------------------------------------------------------------------------

enum class Split : std::uint8_t { Unassigned, Train, Eval };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct Statement {
    std::string id;
    std::string text;
    std::optional<std::string> topic;
    Split split = Split::Unassigned;

    bool operator==(const Statement&) const = default;
};

/// Ordered list of topic names. The default instance carries 12 categories.
class TopicTaxonomy {
public:
    static TopicTaxonomy defaults();

    explicit TopicTaxonomy(std::vector<std::string> categories);

    const std::vector<std::string>& categories() const noexcept { return categories_; }
    std::size_t size() const noexcept { return categories_.size(); }
    bool contains(std::string_view name) const;
    /// Position of `name`, or npos.
    std::size_t index_of(std::string_view name) const;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::vector<std::string> categories_;
};

/// Statements keyed by caller-supplied id. Ids are unique.
class StatementSet {
public:
    StatementSet() = default;
    explicit StatementSet(std::vector<Statement> statements);

    const std::vector<Statement>& statements() const noexcept { return statements_; }
    std::size_t size() const noexcept { return statements_.size(); }
    bool empty() const noexcept { return statements_.empty(); }
    const Statement& operator[](std::size_t i) const { return statements_[i]; }

    const Statement* find(std::string_view id) const;
    /// Throws ValidationError when a topic is set but absent from the taxonomy.
    void check_topics(const TopicTaxonomy& taxonomy) const;
    /// Distinct assigned topics, sorted.
    std::vector<std::string> topics() const;

    auto begin() const { return statements_.begin(); }
    auto end() const { return statements_.end(); }

private:
    std::vector<Statement> statements_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Reads one JSON object per line: {"id","text","topic","split"}.
/// Blank lines are ignored.
StatementSet parse_statements(const std::filesystem::path& path);
StatementSet parse_statements_text(std::string_view text);
void write_statements(const StatementSet& set, const std::filesystem::path& path);
std::string serialize_statements(const StatementSet& set);

struct SplitReport {
    std::size_t eval_count = 0;
    std::size_t train_count = 0;
    std::size_t unassigned_count = 0;
    std::size_t min_required = 0;
    std::map<std::string, std::size_t> eval_per_topic;
    std::size_t min_eval_per_topic = 0;
    /// Topics whose eval count falls below `min_required`.
    std::vector<std::string> violations;
    /// Eval statements without a topic.
    std::vector<std::string> untopiced_eval;
    bool train_empty = false;
    bool eval_empty = false;

    bool ok() const { return violations.empty() && untopiced_eval.empty() && !train_empty && !eval_empty; }
};

/// Summarizes an existing split; never throws on violations, it lists them.
SplitReport validate_split(const StatementSet& set, std::size_t min_per_topic = 3);

// ---------------------------------------------------------------------------
// Response matrix
// ---------------------------------------------------------------------------

/// liberal = 1, conservative = 0, null = refusal or unparseable answer.
enum class Response : std::uint8_t { Conservative = 0, Liberal = 1, Null = 2 };

std::string_view to_token(Response r);

/// J respondents (rows) by K statements (columns).
class ResponseMatrix {
public:
    ResponseMatrix() = default;
    ResponseMatrix(std::vector<std::string> row_labels, std::vector<std::string> col_labels,
                   std::vector<Response> entries);

    std::size_t rows() const noexcept { return row_labels_.size(); }
    std::size_t cols() const noexcept { return col_labels_.size(); }
    const std::vector<std::string>& row_labels() const noexcept { return row_labels_; }
    const std::vector<std::string>& col_labels() const noexcept { return col_labels_; }
    const std::vector<Response>& entries() const noexcept { return entries_; }

    Response operator()(std::size_t row, std::size_t col) const { return entries_[row * cols() + col]; }
    std::vector<Response> row(std::size_t r) const;
    std::vector<Response> column(std::size_t c) const;

    std::optional<std::size_t> row_index(std::string_view label) const;
    std::optional<std::size_t> col_index(std::string_view label) const;

    /// Matrix restricted to the given rows / columns, in the given order.
    ResponseMatrix select_rows(const std::vector<std::size_t>& rows) const;
    ResponseMatrix select_cols(const std::vector<std::size_t>& cols) const;

    bool operator==(const ResponseMatrix&) const = default;

private:
    std::vector<std::string> row_labels_;
    std::vector<std::string> col_labels_;
    std::vector<Response> entries_;
};

ResponseMatrix parse_response_matrix(const std::filesystem::path& path);
ResponseMatrix parse_response_matrix_text(std::string_view text);
std::string serialize_response_matrix(const ResponseMatrix& m);
void write_response_matrix(const ResponseMatrix& m, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Tensor container
// ---------------------------------------------------------------------------

inline constexpr std::string_view kTensorMagic = "IDPTENS1";

/// Dense f32 tensor with free-form metadata.
///
/// On disk: 8-byte magic, 4-byte big-endian header length, UTF-8 header of
/// "key:value" lines sorted by key (always including shape and dtype), then a
/// row-major little-endian f32 payload.
struct TensorContainer {
    std::map<std::string, std::string> metadata;  // model, layer, prompt_ids, ...
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    std::size_t element_count() const;
    /// Throws ValidationError on empty or non-positive shape, size mismatch or
    /// metadata that cannot be encoded.
    void validate() const;

    bool operator==(const TensorContainer& other) const;
};

std::string encode_tensor(const TensorContainer& c);
TensorContainer decode_tensor(std::string_view bytes);
void write_tensor(const TensorContainer& c, const std::filesystem::path& path);
TensorContainer read_tensor(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// SAE activations
// ---------------------------------------------------------------------------

/// Values below this are treated as serialization noise and dropped.
inline constexpr double kActivationDust = 1e-8;

struct SaeEntry {
    std::size_t prompt = 0;  // index into prompt_ids
    std::size_t feature = 0;
    double activation = 0.0;  // max over non-bos tokens
    std::size_t token = 0;    // argmax token position, never 0 (bos)

    bool operator==(const SaeEntry&) const = default;
};

/// Sparse per-prompt SAE feature activations, entries sorted by (prompt, feature).
class SaeActivationMatrix {
public:
    SaeActivationMatrix() = default;
    SaeActivationMatrix(std::vector<std::string> prompt_ids, std::size_t feature_dim,
                        std::vector<SaeEntry> entries);

    const std::vector<std::string>& prompt_ids() const noexcept { return prompt_ids_; }
    std::size_t prompt_count() const noexcept { return prompt_ids_.size(); }
    std::size_t feature_dim() const noexcept { return feature_dim_; }
    const std::vector<SaeEntry>& entries() const noexcept { return entries_; }

    bool operator==(const SaeActivationMatrix&) const = default;

private:
    std::vector<std::string> prompt_ids_;
    std::size_t feature_dim_ = 0;
    std::vector<SaeEntry> entries_;
};

/// JSONL: a header line {"feature_dim":F,"prompt_ids":[...]} followed by
/// {"prompt":id,"feature":j,"activation":a,"token":t} records.
SaeActivationMatrix parse_sae_matrix(const std::filesystem::path& path);
SaeActivationMatrix parse_sae_matrix_text(std::string_view text);
std::string serialize_sae_matrix(const SaeActivationMatrix& m);
void write_sae_matrix(const SaeActivationMatrix& m, const std::filesystem::path& path);

// Shared helpers.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ideodepth::corpus
