#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ideodepth/corpus.hpp"

namespace ideodepth::agreement {

using corpus::Response;
using corpus::ResponseMatrix;

/// 1 - 4 * population variance of the non-null answers.
/// Throws InsufficientDataError with fewer than two non-null answers.
double consistency(std::span<const Response> responses);

/// Fleiss' kappa over an item x category count table.
///
/// Every item must be rated by the same n >= 2 raters and there must be at
/// least two items. When expected agreement is 1 (all ratings in a single
/// category) kappa is defined as 1.
double fleiss_kappa(const std::vector<std::vector<std::size_t>>& counts);

enum class KappaCategories {
    /// liberal, conservative and null are three categories.
    WithNull,
    /// liberal vs conservative; items with any null are left out.
    Binary,
};

/// Item x category table with items = `cols` and raters = `rows`.
std::vector<std::vector<std::size_t>> rating_table(const ResponseMatrix& m, std::span<const std::size_t> rows,
                                                   std::span<const std::size_t> cols, KappaCategories mode);

/// Prompting conditions mapped onto response-matrix rows.
struct ConditionGrid {
    std::vector<std::string> conditions;
    std::vector<std::size_t> rows;

    /// The nine role x argument combinations.
    static const std::vector<std::string>& default_conditions();

    /// Rows labelled "<model>/<condition>" for each condition, in order.
    static ConditionGrid for_model(const ResponseMatrix& m, std::string_view model,
                                   const std::vector<std::string>& conditions = default_conditions());
    /// Every matrix row, labelled by its row label.
    static ConditionGrid all_rows(const ResponseMatrix& m);

    /// Conditions whose name contains `fragment` (e.g. "role_conservative").
    ConditionGrid filter(std::string_view fragment) const;

    std::size_t size() const noexcept { return rows.size(); }
};

/// statement id -> topic
using TopicMap = std::map<std::string, std::string>;

TopicMap topic_map(const corpus::StatementSet& set);

/// Column indices per topic (topics sorted). Throws ValidationError for a
/// column without a topic.
std::map<std::string, std::vector<std::size_t>> columns_by_topic(const ResponseMatrix& m, const TopicMap& topics);

struct RefusalTable {
    std::vector<std::string> topics;
    std::vector<std::string> conditions;
    /// rate[t][c] = nulls / statements in topic t under condition c.
    std::vector<std::vector<double>> rate;
    std::vector<std::size_t> topic_sizes;
};

RefusalTable refusal_rates(const ResponseMatrix& m, const TopicMap& topics, const ConditionGrid& grid);

struct TendencyRow {
    std::string topic;
    /// zeros / non-null answers; empty when the topic has only nulls.
    std::optional<double> rate;
    std::size_t conservative = 0;
    std::size_t answered = 0;
};

/// Conservative rate per topic over the given rows (all rows when `grid` is null).
std::vector<TendencyRow> conservative_tendency(const ResponseMatrix& m, const TopicMap& topics,
                                               const ConditionGrid* grid = nullptr);

struct KappaRow {
    std::string topic;
    std::optional<double> kappa;  // empty when fewer than two usable items
    std::size_t items = 0;
};

/// Fleiss' kappa per topic with statements as items and grid rows as raters.
std::vector<KappaRow> kappa_by_topic(const ResponseMatrix& m, const TopicMap& topics, const ConditionGrid& grid,
                                     KappaCategories mode = KappaCategories::WithNull);

struct ConsistencyRow {
    std::string statement_id;
    std::optional<double> consistency;  // empty with fewer than two answers
    std::size_t answered = 0;
};

std::vector<ConsistencyRow> consistency_by_statement(const ResponseMatrix& m, const ConditionGrid& grid);

struct AgreementReport {
    std::string model;
    std::vector<ConsistencyRow> consistency;
    std::vector<KappaRow> kappa;
    RefusalTable refusal;
    std::vector<TendencyRow> tendency;
};

/// Full behavioral summary for one model's condition grid. Kappa and
/// tendency use `focus` rows (e.g. the conservative-role conditions).
AgreementReport analyze(const ResponseMatrix& m, const TopicMap& topics, const ConditionGrid& grid,
                        const ConditionGrid& focus, KappaCategories mode = KappaCategories::WithNull,
                        std::string model = {});

// Comma-delimited emitters. Undefined values are written as "NA".
std::string consistency_csv(const AgreementReport& r);
std::string kappa_csv(const AgreementReport& r);
std::string refusal_csv(const AgreementReport& r);
std::string tendency_csv(const AgreementReport& r);
/// Plot-ready long format: model,topic,condition,metric,value.
std::string long_format_csv(std::span<const AgreementReport> reports);
/// Heatmap rows: model,condition,statement_id,topic,response.
std::string heatmap_csv(const ResponseMatrix& m, const TopicMap& topics, const ConditionGrid& grid,
                        std::string_view model);

}  // namespace ideodepth::agreement
