#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <numeric>
#include <mutex>
#include <set>

#include "ideodepth/adjudicator.hpp"
#include "ideodepth/errors.hpp"

using namespace ideodepth;
using namespace ideodepth::adjudicator;
using corpus::Split;

namespace {

AdjudicatorConfig quick_cfg(int votes = 5) {
    AdjudicatorConfig cfg;
    cfg.mock = true;
    cfg.votes_per_item = votes;
    cfg.concurrency = 1;
    cfg.backoff = std::chrono::milliseconds(0);
    return cfg;
}

// Categories listed in a categorization prompt, in prompt order.
std::vector<std::string> listed(const std::string& prompt) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while ((pos = prompt.find("\n- ", pos)) != std::string::npos) {
        pos += 3;
        auto end = prompt.find('\n', pos);
        out.push_back(prompt.substr(pos, end - pos));
    }
    return out;
}

StatementSet topical_set(const std::map<std::string, int>& sizes) {
    std::vector<corpus::Statement> v;
    for (const auto& [topic, n] : sizes)
        for (int i = 0; i < n; ++i) v.push_back({topic + "#" + std::to_string(i), "x", topic, Split::Unassigned});
    return StatementSet(v);
}

}  // namespace

TEST(ModalVote, TiesGoToSmallestName) {
    std::vector<std::string> a{"b", "a", "b"};
    EXPECT_EQ(modal_vote(a), std::make_pair(std::string("b"), false));
    std::vector<std::string> b{"c", "b", "c", "b", "a"};
    EXPECT_EQ(modal_vote(b), std::make_pair(std::string("b"), true));
    std::vector<std::string> none;
    EXPECT_THROW(modal_vote(none), InsufficientDataError);
}

TEST(Categorize, ShufflesListingEveryVote) {
    auto tax = TopicTaxonomy::defaults();
    std::vector<std::vector<std::string>> orders;
    FunctionBackend fb([&](const std::vector<ChatMessage>& m) {
        orders.push_back(listed(m.back().content));
        return orders.back().front();
    });
    corpus::Statement s{"s1", "Some text", std::nullopt, Split::Unassigned};
    auto r = categorize_statement(s, tax, fb, quick_cfg(8), 42);
    ASSERT_EQ(orders.size(), 8u);
    std::set<std::vector<std::string>> distinct(orders.begin(), orders.end());
    EXPECT_GT(distinct.size(), 1u);
    for (const auto& o : orders) {
        auto sorted = o;
        std::sort(sorted.begin(), sorted.end());
        auto want = tax.categories();
        std::sort(want.begin(), want.end());
        EXPECT_EQ(sorted, want);
    }
    EXPECT_EQ(r.votes.size(), 8u);
    EXPECT_EQ(r.chosen, modal_vote(r.votes).first);

    // Same seed, same listing orders.
    auto first = orders;
    orders.clear();
    categorize_statement(s, tax, fb, quick_cfg(8), 42);
    EXPECT_EQ(orders, first);
}

TEST(Categorize, NormalizesRepliesAndDiscardsStrays) {
    auto tax = TopicTaxonomy::defaults();
    int n = 0;
    FunctionBackend fb([&](const std::vector<ChatMessage>&) -> std::string {
        switch (n++ % 4) {
            case 0: return "**Tax Policy**.";
            case 1: return "  \"tax policy\"\n";
            case 2: return "- Healthcare";
            default: return "I cannot decide";
        }
    });
    corpus::Statement s{"s", "x", std::nullopt, Split::Unassigned};
    auto r = categorize_statement(s, tax, fb, quick_cfg(8), 1);
    EXPECT_EQ(r.discarded, 2u);
    EXPECT_EQ(r.votes.size(), 6u);
    EXPECT_EQ(r.chosen, "Tax Policy");
    EXPECT_FALSE(r.tie);

    FunctionBackend junk([](const std::vector<ChatMessage>&) { return std::string("none"); });
    EXPECT_THROW(categorize_statement(s, tax, junk, quick_cfg(3), 1), JudgeFormatError);
}

TEST(Categorize, MockAnswerIgnoresListingOrder) {
    auto tax = TopicTaxonomy::defaults();
    MockAdjudicator mock;
    corpus::Statement s{"s", "Assault weapons and handguns need stricter background checks.", std::nullopt,
                        Split::Unassigned};
    auto cats = tax.categories();
    auto a = mock.complete({{"user", categorization_prompt(s, cats)}}, 0.0);
    std::reverse(cats.begin(), cats.end());
    auto b = mock.complete({{"user", categorization_prompt(s, cats)}}, 0.0);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, "Gun Control");
}

TEST(Categorize, AllKeepsInputOrderUnderConcurrency) {
    auto tax = TopicTaxonomy::defaults();
    MockAdjudicator mock;
    std::vector<corpus::Statement> v;
    for (int i = 0; i < 20; ++i) v.push_back({"s" + std::to_string(i), "Lower taxes on income.", std::nullopt, {}});
    StatementSet set(v);
    auto cfg = quick_cfg(3);
    cfg.concurrency = 4;
    auto res = categorize_all(set, tax, mock, cfg, 9);
    ASSERT_EQ(res.size(), 20u);
    for (std::size_t i = 0; i < res.size(); ++i) EXPECT_EQ(res[i].statement_id, v[i].id);
    auto applied = apply_categories(set, res);
    EXPECT_EQ(*applied[0].topic, res[0].chosen);
}

TEST(Transport, RetriesThenGivesUp) {
    int calls = 0;
    FunctionBackend flaky([&](const std::vector<ChatMessage>&) -> std::string {
        if (++calls < 3) throw TransportError("503");
        return "ok";
    });
    auto cfg = quick_cfg();
    cfg.max_retries = 3;
    EXPECT_EQ(complete_with_retry(flaky, {{"user", "x"}}, cfg), "ok");
    EXPECT_EQ(calls, 3);

    calls = 0;
    cfg.max_retries = 1;
    EXPECT_THROW(complete_with_retry(flaky, {{"user", "x"}}, cfg), TransportError);
    EXPECT_EQ(calls, 2);
}

TEST(AdjudicatorConfig, Validation) {
    auto cfg = quick_cfg();
    cfg.votes_per_item = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = quick_cfg();
    cfg.mock = false;
    cfg.endpoint.clear();
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Split, SizesMinimumsAndDeterminism) {
    auto set = topical_set({{"A", 10}, {"B", 4}, {"C", 20}, {"D", 6}});
    for (auto alloc : {SplitAllocation::Proportional, SplitAllocation::MinimumOnly}) {
        auto out = stratified_split(set, 17, 3, 5, alloc);
        auto rep = corpus::validate_split(out, 3);
        EXPECT_EQ(rep.eval_count, 17u);
        EXPECT_EQ(rep.train_count, 23u);
        EXPECT_TRUE(rep.violations.empty());
        EXPECT_EQ(serialize_statements(out), serialize_statements(stratified_split(set, 17, 3, 5, alloc)));
    }
    auto other = stratified_split(set, 17, 3, 6);
    EXPECT_NE(serialize_statements(other), serialize_statements(stratified_split(set, 17, 3, 5)));
}

TEST(Split, ProportionalQuotasWithinOneOfShare) {
    std::map<std::string, int> sizes{{"A", 7}, {"B", 13}, {"C", 29}, {"D", 4}, {"E", 11}};
    auto set = topical_set(sizes);
    for (std::size_t eval = 15; eval <= 64; eval += 7) {
        auto rep = corpus::validate_split(stratified_split(set, eval, 3, 11), 3);
        double capacity = 0;
        for (const auto& [_, n] : sizes) capacity += n - 3;
        const double rem = static_cast<double>(eval) - 15.0;
        for (const auto& [t, n] : sizes) {
            const double share = 3.0 + rem * (n - 3) / capacity;
            const double got = static_cast<double>(rep.eval_per_topic[t]);
            EXPECT_LE(std::abs(got - share), 1.0) << t << " eval=" << eval;
        }
    }
}

TEST(Split, RejectsImpossibleRequests) {
    auto set = topical_set({{"A", 5}, {"B", 2}});
    EXPECT_THROW(stratified_split(set, 4, 3, 1), ConfigError);
    auto ok = topical_set({{"A", 5}, {"B", 5}});
    EXPECT_THROW(stratified_split(ok, 5, 3, 1), ConfigError);
    EXPECT_THROW(stratified_split(ok, 11, 3, 1), ConfigError);
    std::vector<corpus::Statement> untopiced{{"a", "x", std::nullopt, Split::Unassigned}};
    EXPECT_THROW(stratified_split(StatementSet(untopiced), 1, 0, 1), ConfigError);
}

TEST(Judge, FencedBlockExtraction) {
    EXPECT_EQ(*extract_fenced_block("pre\n```json\n{\"a\":1}\n```\npost"), "{\"a\":1}\n");
    EXPECT_EQ(*extract_fenced_block("```\nx\n```"), "x\n");
    EXPECT_FALSE(extract_fenced_block("no block").has_value());
    EXPECT_FALSE(extract_fenced_block("```json\n{unterminated").has_value());
}

TEST(Judge, ParsePredictive) {
    auto tax = TopicTaxonomy::defaults();
    auto v = parse_predictive_reply(
        "```json\n{\"classification\":\"healthcare\",\"confidence_score\":4,\"justification\":\"j\"}\n```", tax);
    EXPECT_EQ(*v.classification, "Healthcare");
    EXPECT_EQ(*v.confidence, 4);
    EXPECT_THROW(parse_predictive_reply("{\"classification\":\"Healthcare\"}", tax), JudgeFormatError);
    EXPECT_THROW(parse_predictive_reply("```\n{\"classification\":\"Sports\",\"confidence_score\":3}\n```", tax),
                 JudgeFormatError);
    EXPECT_THROW(parse_predictive_reply("```\n{\"classification\":\"Healthcare\",\"confidence_score\":6}\n```", tax),
                 JudgeFormatError);
    EXPECT_THROW(parse_predictive_reply("```\n{\"classification\":\"Healthcare\",\"confidence_score\":2.5}\n```", tax),
                 JudgeFormatError);
    EXPECT_THROW(parse_predictive_reply("```\nnot json\n```", tax), JudgeFormatError);
}

TEST(Judge, ParseCoherence) {
    auto v = parse_coherence_reply("```json\n{\"coherence_score\":2,\"primary_theme\":\"tax\"}\n```");
    EXPECT_EQ(*v.coherence_score, 2);
    EXPECT_EQ(*v.theme, "tax");
    EXPECT_THROW(parse_coherence_reply("```json\n{\"coherence_score\":2,\"primary_theme\":\"  \"}\n```"),
                 JudgeFormatError);
    EXPECT_THROW(parse_coherence_reply("```json\n{\"primary_theme\":\"t\"}\n```"), JudgeFormatError);
}

TEST(Judge, ReformatRequestRecoversOnce) {
    auto tax = TopicTaxonomy::defaults();
    std::vector<std::size_t> turns;
    FunctionBackend fb([&](const std::vector<ChatMessage>& m) -> std::string {
        turns.push_back(m.size());
        if (m.size() == 1) return "Healthcare, confidence 5";
        return "```json\n{\"classification\":\"Healthcare\",\"confidence_score\":5}\n```";
    });
    corpus::Statement s{"s9", "x", std::nullopt, Split::Unassigned};
    std::vector<std::string> feats{"hospital costs"};
    auto v = judge_predictive_validity(s, feats, tax, fb, quick_cfg());
    EXPECT_EQ(v.statement_id, "s9");
    EXPECT_EQ(turns, (std::vector<std::size_t>{1, 3}));

    FunctionBackend never([](const std::vector<ChatMessage>&) { return std::string("nope"); });
    EXPECT_THROW(judge_predictive_validity(s, feats, tax, never, quick_cfg()), JudgeFormatError);
    std::vector<std::string> empty;
    EXPECT_THROW(judge_predictive_validity(s, empty, tax, never, quick_cfg()), ValidationError);
}

TEST(Judge, VerdictsRoundTrip) {
    std::vector<JudgeVerdict> v(2);
    v[0].statement_id = "a";
    v[0].classification = "Healthcare";
    v[0].confidence = 3;
    v[0].justification = "line\nbreak";
    v[1].statement_id = "a";
    v[1].kind = JudgeKind::Coherence;
    v[1].coherence_score = 5;
    v[1].theme = "health";
    EXPECT_EQ(parse_verdicts_text(serialize_verdicts(v)), v);
}

TEST(Judge, MockBatchOnFixture) {
    const std::filesystem::path d = IDEODEPTH_FIXTURE;
    auto stmts = corpus::parse_statements(d / "statements.jsonl");
    auto items = parse_feature_descriptions(d / "feature_descriptions.jsonl");
    ASSERT_FALSE(items.empty());
    MockAdjudicator mock;
    auto cfg = quick_cfg();
    cfg.concurrency = 3;
    auto tax = TopicTaxonomy::defaults();
    auto batch = judge_all(items, stmts, tax, mock, cfg);
    ASSERT_EQ(batch.predictive.size(), items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        EXPECT_EQ(batch.predictive[i].statement_id, items[i].statement_id);
        EXPECT_EQ(batch.coherence[i].kind, JudgeKind::Coherence);
    }
    auto cm = build_confusion(batch.predictive, stmts, tax);
    EXPECT_EQ(cm.total(), items.size());
    auto sums = cm.row_sums();
    EXPECT_EQ(std::accumulate(sums.begin(), sums.end(), std::size_t{0}), items.size());
    EXPECT_LE(cm.trace(), cm.total());
}

TEST(Confusion, CountsAndRejections) {
    auto tax = TopicTaxonomy::defaults();
    StatementSet truth({{"a", "x", "Healthcare", Split::Eval},
                        {"b", "x", "Tax Policy", Split::Eval},
                        {"c", "x", std::nullopt, Split::Eval}});
    std::vector<JudgeVerdict> v(2);
    v[0].statement_id = "a";
    v[0].classification = "Healthcare";
    v[1].statement_id = "b";
    v[1].classification = "Healthcare";
    auto cm = build_confusion(v, truth, tax);
    EXPECT_EQ(cm.at("Healthcare", "Healthcare"), 1u);
    EXPECT_EQ(cm.at("Tax Policy", "Healthcare"), 1u);
    EXPECT_EQ(cm.trace(), 1u);
    auto csv = confusion_csv(cm);
    EXPECT_EQ(csv.substr(0, csv.find(',')), "truth\\predicted");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);

    auto coh = v;
    coh[0].kind = JudgeKind::Coherence;
    EXPECT_THROW(build_confusion(coh, truth, tax), ValidationError);
    auto unk = v;
    unk[0].statement_id = "zz";
    EXPECT_THROW(build_confusion(unk, truth, tax), ValidationError);
    auto untopiced = v;
    untopiced[0].statement_id = "c";
    EXPECT_THROW(build_confusion(untopiced, truth, tax), ValidationError);
}
