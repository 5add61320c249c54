#include "ods/eval.hpp"

#include <doctest.h>

#include "support.hpp"

#include <set>

using namespace ods;
using namespace ods::eval;
using nlohmann::json;

namespace {

std::vector<EvalItem> make_items(std::size_t n) {
    std::vector<EvalItem> items;
    for (std::size_t i = 0; i < n; ++i) {
        char id[8];
        std::snprintf(id, sizeof id, "i%02zu", i);
        items.push_back({id, "question " + std::to_string(i), "gold" + std::to_string(i % 3),
                         i % 2 ? std::optional<std::string>("odd") : std::optional<std::string>("even")});
    }
    return items;
}

// Deterministic stand-in for an agent: the answer and search count derive from the id.
agent::AgentResult fake_agent(const EvalItem& it) {
    agent::AgentResult r;
    auto n = static_cast<std::size_t>(std::stoul(it.id.substr(1)));
    r.trace.searches_used = n % 7;
    if (n % 5 != 4) {
        r.final_answer = n % 4 == 0 ? "wrong" : it.gold_answer;
        r.terminated_by = agent::Termination::final_answer;
    }
    return r;
}

Verdict exact(const EvalItem& it, const std::optional<std::string>& a) { return grade_exact(a, it.gold_answer); }

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("dataset parsing") {
    auto items = parse_dataset("{\"id\": 1, \"question\": \"q\", \"answer\": \"a\"}\n\n"
                               "{\"id\": \"x\", \"question\": \"q2\", \"answer\": \"b\", \"topic\": \"t\"}\n");
    REQUIRE(items.size() == 2);
    CHECK(items[0].id == "1");
    CHECK_FALSE(items[0].topic);
    CHECK(items[1].topic == std::optional<std::string>("t"));

    auto line_of = [](const std::string& text) -> std::size_t {
        try {
            parse_dataset(text);
        } catch (const DatasetError& e) {
            return e.line();
        }
        return 0;
    };
    CHECK(line_of("{\"id\":1,\"question\":\"q\",\"answer\":\"a\"}\n{\"id\":2,\"question\":\"q\"}") == 2);
    CHECK(line_of("{\"id\":1,\"question\":\"q\",\"answer\":\"a\"}\nnot json") == 2);
    CHECK(line_of("[1]") == 1);
    CHECK(line_of("{\"id\":1,\"question\":\"  \",\"answer\":\"a\"}") == 1);
    CHECK_THROWS_AS(parse_dataset("{\"id\":1,\"question\":\"q\",\"answer\":\"a\"}\n{\"id\":1,\"question\":\"r\",\"answer\":\"b\"}"),
                    DuplicateId);
    CHECK(load_dataset(testing::fixtures() / "data" / "eval12.jsonl").size() == 12);
}

TEST_CASE("exact grading") {
    CHECK(grade_exact("Paris", "paris") == Verdict::correct);
    CHECK(grade_exact("The Amazon.", "Amazon") == Verdict::correct);
    CHECK(grade_exact("Lyon", "Paris") == Verdict::incorrect);
    CHECK(grade_exact(std::nullopt, "Paris") == Verdict::not_attempted);
    CHECK(grade_exact("2845 millimeters", "2,845 mm") == Verdict::incorrect);
}

TEST_CASE("judge grading") {
    json script = {{"completions",
                    {{{"when", {"Predicted answer: Paris"}}, {"replies", {"CORRECT"}}},
                     {{"when", {"Predicted answer: Lyon"}}, {"replies", {"INCORRECT"}}},
                     {{"when", {"Predicted answer: maybe"}}, {"replies", {"NOT_ATTEMPTED"}}},
                     {{"when", {"Predicted answer: "}}, {"replies", {"Probably correct!"}}}}}};
    auto m = testing::mock_gateway(script);
    CHECK(grade_judge(*m.gw, "q", "Paris", "Paris") == Verdict::correct);
    CHECK(grade_judge(*m.gw, "q", "Lyon", "Paris") == Verdict::incorrect);
    CHECK(grade_judge(*m.gw, "q", "maybe", "Paris") == Verdict::not_attempted);
    CHECK(grade_judge(*m.gw, "q", "garbage", "Paris") == Verdict::incorrect);
    CHECK(grade_judge(*m.gw, "q", std::nullopt, "Paris") == Verdict::not_attempted);
    auto req = judge_grading_request("Q", "A", "G");
    CHECK(req.messages[1].text == "Question: Q\nGold target: G\nPredicted answer: A");
}

TEST_CASE("judge grading replays from a cassette") {
    json script = {{"completions",
                    {{{"when", {"Predicted answer: right"}}, {"replies", {"CORRECT"}}},
                     {{"when", {"Predicted answer: "}}, {"replies", {"INCORRECT"}}}}}};
    std::vector<EvalItem> items = {{"a", "q1", "g", {}}, {"b", "q2", "g", {}}, {"c", "q3", "g", {}},
                                   {"d", "q4", "g", {}}};
    auto agent_fn = [](const EvalItem& it) {
        agent::AgentResult r;
        r.final_answer = it.id == "c" ? "wrong" : "right";
        return r;
    };
    auto dir = testing::scratch("eval_judge");
    {
        auto m = testing::mock_gateway(script);
        std::shared_ptr<Cassette> cas = Cassette::from_entries({});
        cas->open_for_record(dir / "j.cassette");
        Gateway gw({m.llm, m.llm, m.web, nullptr}, cas, CassetteMode::record, "m", "e", "judge-m");
        gw.set_retry({1, 0.0});
        EvalOptions o{dir / "rec1.jsonl", 2, json::object(), std::nullopt};
        auto rep = run_eval(items, agent_fn, [&](const EvalItem& it, const std::optional<std::string>& a) {
            return grade_judge(gw, it.question, a, it.gold_answer);
        }, o);
        CHECK(rep.n_correct == 3);
        CHECK(rep.n_incorrect == 1);
    }
    Gateway gw({}, std::shared_ptr<Cassette>(Cassette::load(dir / "j.cassette")), CassetteMode::replay, "m", "e",
               "judge-m");
    EvalOptions o{dir / "rec2.jsonl", 4, json::object(), std::nullopt};
    auto rep = run_eval(items, agent_fn, [&](const EvalItem& it, const std::optional<std::string>& a) {
        return grade_judge(gw, it.question, a, it.gold_answer);
    }, o);
    CHECK(rep.n_correct == 3);
    CHECK(rep.n_incorrect == 1);
    CHECK(rep.accuracy == doctest::Approx(0.75));
    CHECK(gw.live_calls() == 0);
}

TEST_CASE("histogram buckets and aggregation") {
    CHECK(histogram_bucket(0) == "0");
    CHECK(histogram_bucket(4) == "4");
    CHECK(histogram_bucket(5) == "5+");
    CHECK(histogram_bucket(70) == "5+");
    auto items = make_items(4);
    std::vector<EvalRecord> recs;
    std::size_t searches[] = {1, 2, 5, 7};
    for (std::size_t i = 0; i < 4; ++i) {
        EvalRecord r;
        r.item_id = items[i].id;
        r.searches_used = searches[i];
        r.verdict = i == 0 ? Verdict::correct : Verdict::incorrect;
        r.model_answer = "x";
        recs.push_back(r);
    }
    recs.push_back(recs[0]);  // duplicate id counts once
    auto rep = aggregate(items, recs);
    CHECK(rep.n_items == 4);
    CHECK(rep.histogram["1"] == 1);
    CHECK(rep.histogram["2"] == 1);
    CHECK(rep.histogram["5+"] == 2);
    CHECK(rep.histogram["0"] == 0);
    CHECK(rep.mean_searches == doctest::Approx(3.75));
    CHECK(rep.accuracy == doctest::Approx(0.25));
    CHECK(rep.per_topic["even"] == doctest::Approx(0.5));
    CHECK(rep.per_topic["odd"] == doctest::Approx(0.0));
    auto j = rep.to_json();
    for (auto key : {"accuracy", "per_topic", "mean_searches", "histogram", "n_items", "counts", "config"})
        CHECK(j.contains(key));
}

TEST_CASE("records round trip and tolerate a truncated tail") {
    EvalRecord r;
    r.item_id = "z";
    r.verdict = Verdict::correct;
    r.model_answer = "ans";
    r.searches_used = 3;
    r.metadata["k"] = "v";
    auto back = EvalRecord::from_json(r.to_json());
    CHECK(back.item_id == "z");
    CHECK(back.model_answer == r.model_answer);
    CHECK(back.metadata == r.metadata);
    auto dir = testing::scratch("eval_records");
    {
        std::ofstream out(dir / "r.jsonl");
        out << r.to_json().dump() << "\n" << "{\"item_id\": \"y\", \"verd";
    }
    CHECK(read_records(dir / "r.jsonl").size() == 1);
    CHECK(read_records(dir / "none.jsonl").empty());
}

TEST_CASE("not_attempted records carry no answer") {
    auto items = make_items(10);
    auto dir = testing::scratch("eval_hedge");
    EvalOptions o{dir / "r.jsonl", 3, json::object(), std::nullopt};
    auto hedge = [](const EvalItem& it, const std::optional<std::string>& a) {
        return it.id == "i01" ? Verdict::not_attempted : grade_exact(a, it.gold_answer);
    };
    run_eval(items, fake_agent, hedge, o);
    for (const auto& r : read_records(o.records_path)) {
        CHECK((r.verdict == Verdict::not_attempted) == !r.model_answer.has_value());
        if (r.item_id == "i01") CHECK(r.metadata.count("hedged_answer"));
    }
}

TEST_CASE("resume after interruption gives the same report") {
    auto items = make_items(23);
    auto dir = testing::scratch("eval_resume");
    EvalOptions full{dir / "full.jsonl", 4, json::object(), std::nullopt};
    auto want = run_eval(items, fake_agent, exact, full).to_json();

    EvalOptions part{dir / "part.jsonl", 4, json::object(), 9};
    run_eval(items, fake_agent, exact, part);
    CHECK(read_records(part.records_path).size() == 9);
    {
        std::ofstream out(part.records_path, std::ios::app);
        out << "{\"item_id\": \"i2";  // killed mid-write
    }
    std::atomic<int> reran{0};
    auto counting = [&](const EvalItem& it) {
        ++reran;
        return fake_agent(it);
    };
    part.stop_after.reset();
    auto got = run_eval(items, counting, exact, part).to_json();
    CHECK(reran == 14);
    CHECK(got == want);
}

TEST_CASE("reports do not depend on parallelism") {
    auto items = make_items(30);
    auto dir = testing::scratch("eval_parallel");
    json first;
    for (std::size_t p : {1u, 2u, 8u}) {
        EvalOptions o{dir / ("p" + std::to_string(p) + ".jsonl"), p, json::object(), std::nullopt};
        auto rep = run_eval(items, fake_agent, exact, o).to_json();
        if (first.is_null()) first = rep;
        CHECK(rep == first);
    }
}

TEST_CASE("sampling is a seeded prefix of a shuffle") {
    auto items = make_items(40);
    auto a = sample_items(items, 10, 7);
    auto b = sample_items(items, 10, 7);
    auto c = sample_items(items, 10, 8);
    REQUIRE(a.size() == 10);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        ids.insert(a[i].id);
    }
    CHECK(ids.size() == 10);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].id != c[i].id;
    CHECK(differs);
    CHECK(sample_items(items, 100, 1).size() == 40);
    // Same permutation for any n: smaller samples are prefixes.
    auto small = sample_items(items, 4, 7);
    for (std::size_t i = 0; i < small.size(); ++i) CHECK(small[i].id == a[i].id);
}

TEST_CASE("run_eval argument checks") {
    EvalOptions o;
    CHECK_THROWS_AS(run_eval({}, fake_agent, exact, o), std::invalid_argument);
    CHECK_THROWS_AS(run_eval(make_items(1), fake_agent, exact, o), std::invalid_argument);
}

}
