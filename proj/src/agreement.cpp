#include "ideodepth/agreement.hpp"

#include <algorithm>

#include "format.hpp"
#include "ideodepth/errors.hpp"

namespace ideodepth::agreement {

using detail::num;

double consistency(std::span<const Response> responses) {
    std::size_t n = 0;
    double sum = 0.0;
    for (auto r : responses) {
        if (r == Response::Null) continue;
        ++n;
        sum += r == Response::Liberal ? 1.0 : 0.0;
    }
    if (n < 2)
        throw InsufficientDataError("consistency needs at least two non-null answers, got " + std::to_string(n));
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (auto r : responses) {
        if (r == Response::Null) continue;
        const double d = (r == Response::Liberal ? 1.0 : 0.0) - mean;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(n);
    return 1.0 - 4.0 * var;
}

double fleiss_kappa(const std::vector<std::vector<std::size_t>>& counts) {
    if (counts.size() < 2) throw InsufficientDataError("Fleiss' kappa needs at least two items");
    const std::size_t categories = counts.front().size();
    if (categories == 0) throw ValidationError("Fleiss' kappa needs at least one category");
    std::size_t raters = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i].size() != categories) throw ValidationError("Fleiss' kappa table rows have unequal widths");
        std::size_t n = 0;
        for (auto c : counts[i]) n += c;
        if (i == 0) raters = n;
        if (n != raters)
            throw ValidationError("Fleiss' kappa needs equal rater counts per item (item " + std::to_string(i) +
                                  " has " + std::to_string(n) + ", expected " + std::to_string(raters) + ")");
    }
    if (raters < 2) throw InsufficientDataError("Fleiss' kappa needs at least two raters per item");

    const double n = static_cast<double>(raters);
    const double items = static_cast<double>(counts.size());
    double p_bar = 0.0;
    std::vector<double> column(categories, 0.0);
    for (const auto& row : counts) {
        double sq = 0.0;
        for (std::size_t j = 0; j < categories; ++j) {
            const double c = static_cast<double>(row[j]);
            sq += c * c;
            column[j] += c;
        }
        p_bar += (sq - n) / (n * (n - 1.0));
    }
    p_bar /= items;
    double p_e = 0.0;
    for (double c : column) {
        const double p = c / (items * n);
        p_e += p * p;
    }
    if (p_e == 1.0) return 1.0;
    return (p_bar - p_e) / (1.0 - p_e);
}

std::vector<std::vector<std::size_t>> rating_table(const ResponseMatrix& m, std::span<const std::size_t> rows,
                                                   std::span<const std::size_t> cols, KappaCategories mode) {
    std::vector<std::vector<std::size_t>> table;
    for (auto c : cols) {
        std::vector<std::size_t> counts(mode == KappaCategories::WithNull ? 3 : 2, 0);
        bool has_null = false;
        for (auto r : rows) {
            switch (m(r, c)) {
                case Response::Liberal: ++counts[0]; break;
                case Response::Conservative: ++counts[1]; break;
                case Response::Null:
                    has_null = true;
                    if (mode == KappaCategories::WithNull) ++counts[2];
                    break;
            }
        }
        if (mode == KappaCategories::Binary && has_null) continue;
        table.push_back(std::move(counts));
    }
    return table;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& ConditionGrid::default_conditions() {
    static const std::vector<std::string> names = {
        "role_original_argument_none",     "role_original_argument_liberal",     "role_original_argument_conservative",
        "role_liberal_argument_none",      "role_liberal_argument_liberal",      "role_liberal_argument_conservative",
        "role_conservative_argument_none", "role_conservative_argument_liberal", "role_conservative_argument_conservative",
    };
    return names;
}

ConditionGrid ConditionGrid::for_model(const ResponseMatrix& m, std::string_view model,
                                       const std::vector<std::string>& conditions) {
    ConditionGrid g;
    for (const auto& c : conditions) {
        const auto label = std::string(model) + "/" + c;
        auto row = m.row_index(label);
        if (!row) throw ValidationError("response matrix has no row \"" + label + "\"");
        g.conditions.push_back(c);
        g.rows.push_back(*row);
    }
    return g;
}

ConditionGrid ConditionGrid::all_rows(const ResponseMatrix& m) {
    ConditionGrid g;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        g.conditions.push_back(m.row_labels()[r]);
        g.rows.push_back(r);
    }
    return g;
}

ConditionGrid ConditionGrid::filter(std::string_view fragment) const {
    ConditionGrid g;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        if (conditions[i].find(fragment) != std::string::npos) {
            g.conditions.push_back(conditions[i]);
            g.rows.push_back(rows[i]);
        }
    }
    return g;
}

TopicMap topic_map(const corpus::StatementSet& set) {
    TopicMap out;
    for (const auto& s : set)
        if (s.topic) out[s.id] = *s.topic;
    return out;
}

std::map<std::string, std::vector<std::size_t>> columns_by_topic(const ResponseMatrix& m, const TopicMap& topics) {
    std::map<std::string, std::vector<std::size_t>> out;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        auto it = topics.find(m.col_labels()[c]);
        if (it == topics.end()) throw ValidationError("statement \"" + m.col_labels()[c] + "\" has no topic");
        out[it->second].push_back(c);
    }
    return out;
}

RefusalTable refusal_rates(const ResponseMatrix& m, const TopicMap& topics, const ConditionGrid& grid) {
    RefusalTable t;
    t.conditions = grid.conditions;
    for (const auto& [topic, cols] : columns_by_topic(m, topics)) {
        t.topics.push_back(topic);
        t.topic_sizes.push_back(cols.size());
        std::vector<double> rates;
        for (auto r : grid.rows) {
            std::size_t nulls = 0;
            for (auto c : cols)
                if (m(r, c) == Response::Null) ++nulls;
            rates.push_back(static_cast<double>(nulls) / static_cast<double>(cols.size()));
        }
        t.rate.push_back(std::move(rates));
    }
    return t;
}

std::vector<TendencyRow> conservative_tendency(const ResponseMatrix& m, const TopicMap& topics,
                                               const ConditionGrid* grid) {
    const auto all = ConditionGrid::all_rows(m);
    const auto& rows = grid ? grid->rows : all.rows;
    std::vector<TendencyRow> out;
    for (const auto& [topic, cols] : columns_by_topic(m, topics)) {
        TendencyRow row{topic, std::nullopt, 0, 0};
        for (auto r : rows) {
            for (auto c : cols) {
                const auto v = m(r, c);
                if (v == Response::Null) continue;
                ++row.answered;
                if (v == Response::Conservative) ++row.conservative;
            }
        }
        if (row.answered > 0) row.rate = static_cast<double>(row.conservative) / static_cast<double>(row.answered);
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<KappaRow> kappa_by_topic(const ResponseMatrix& m, const TopicMap& topics, const ConditionGrid& grid,
                                     KappaCategories mode) {
    std::vector<KappaRow> out;
    for (const auto& [topic, cols] : columns_by_topic(m, topics)) {
        auto table = rating_table(m, grid.rows, cols, mode);
        KappaRow row{topic, std::nullopt, table.size()};
        if (table.size() >= 2 && grid.size() >= 2) row.kappa = fleiss_kappa(table);
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<ConsistencyRow> consistency_by_statement(const ResponseMatrix& m, const ConditionGrid& grid) {
    std::vector<ConsistencyRow> out;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        std::vector<Response> answers;
        for (auto r : grid.rows) answers.push_back(m(r, c));
        ConsistencyRow row{m.col_labels()[c], std::nullopt, 0};
        row.answered = static_cast<std::size_t>(
            std::count_if(answers.begin(), answers.end(), [](Response x) { return x != Response::Null; }));
        if (row.answered >= 2) row.consistency = consistency(answers);
        out.push_back(std::move(row));
    }
    return out;
}

AgreementReport analyze(const ResponseMatrix& m, const TopicMap& topics, const ConditionGrid& grid,
                        const ConditionGrid& focus, KappaCategories mode, std::string model) {
    AgreementReport r;
    r.model = std::move(model);
    r.consistency = consistency_by_statement(m, grid);
    r.kappa = kappa_by_topic(m, topics, focus, mode);
    r.refusal = refusal_rates(m, topics, grid);
    r.tendency = conservative_tendency(m, topics, &focus);
    return r;
}

// ---------------------------------------------------------------------------

std::string consistency_csv(const AgreementReport& r) {
    std::string out = "model,statement_id,answered,consistency\n";
    for (const auto& row : r.consistency)
        out += r.model + "," + row.statement_id + "," + std::to_string(row.answered) + "," + num(row.consistency) + "\n";
    return out;
}

std::string kappa_csv(const AgreementReport& r) {
    std::string out = "model,topic,items,kappa\n";
    for (const auto& row : r.kappa)
        out += r.model + "," + row.topic + "," + std::to_string(row.items) + "," + num(row.kappa) + "\n";
    return out;
}

std::string refusal_csv(const AgreementReport& r) {
    std::string out = "model,topic,condition,statements,refusal_rate\n";
    for (std::size_t t = 0; t < r.refusal.topics.size(); ++t)
        for (std::size_t c = 0; c < r.refusal.conditions.size(); ++c)
            out += r.model + "," + r.refusal.topics[t] + "," + r.refusal.conditions[c] + "," +
                   std::to_string(r.refusal.topic_sizes[t]) + "," + num(r.refusal.rate[t][c]) + "\n";
    return out;
}

std::string tendency_csv(const AgreementReport& r) {
    std::string out = "model,topic,conservative,answered,conservative_rate\n";
    for (const auto& row : r.tendency)
        out += r.model + "," + row.topic + "," + std::to_string(row.conservative) + "," + std::to_string(row.answered) +
               "," + num(row.rate) + "\n";
    return out;
}

std::string long_format_csv(std::span<const AgreementReport> reports) {
    std::string out = "model,topic,condition,metric,value\n";
    for (const auto& r : reports) {
        for (const auto& row : r.kappa) out += r.model + "," + row.topic + ",,kappa," + num(row.kappa) + "\n";
        for (const auto& row : r.tendency)
            out += r.model + "," + row.topic + ",,conservative_rate," + num(row.rate) + "\n";
        for (std::size_t t = 0; t < r.refusal.topics.size(); ++t)
            for (std::size_t c = 0; c < r.refusal.conditions.size(); ++c)
                out += r.model + "," + r.refusal.topics[t] + "," + r.refusal.conditions[c] + ",refusal_rate," +
                       num(r.refusal.rate[t][c]) + "\n";
    }
    return out;
}

std::string heatmap_csv(const ResponseMatrix& m, const TopicMap& topics, const ConditionGrid& grid,
                        std::string_view model) {
    std::string out = "model,condition,statement_id,topic,response\n";
    for (std::size_t i = 0; i < grid.rows.size(); ++i) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            auto it = topics.find(m.col_labels()[c]);
            out += std::string(model) + "," + grid.conditions[i] + "," + m.col_labels()[c] + "," +
                   (it == topics.end() ? std::string() : it->second) + "," +
                   std::string(corpus::to_token(m(grid.rows[i], c))) + "\n";
        }
    }
    return out;
}

}  // namespace ideodepth::agreement
