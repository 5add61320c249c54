#include "ods/codeact.hpp"

#include <doctest.h>

#include "support.hpp"

#include <random>

using namespace ods;
using namespace ods::codeact;
using nlohmann::json;

namespace {

struct Env {
    testing::MockSetup m;
    std::unique_ptr<tools::ToolRegistry> tools;
};

Env make_env(json script) {
    script["serp"] = {{"*", json::array()}};
    Env e{testing::mock_gateway(script), nullptr};
    tools::RegistryConfig rc;
    rc.search.reranker = "lexical";
    rc.search.k = 0;
    rc.calculator.remote_url = "https://math.example/v1/result";
    e.tools = std::make_unique<tools::ToolRegistry>(tools::registry_default(*e.m.gw, rc));
    return e;
}

ScriptError::Kind static_error(const std::string& src) {
    try {
        parse_script(src);
    } catch (const ScriptError& e) {
        return e.kind();
    }
    FAIL("no ScriptError for: " << src);
    return ScriptError::Kind::syntax;
}

ExecOutcome exec(const std::string& src, ExecEnv& env) { return execute_script(parse_script(src), env); }

std::string fenced(const std::string& body) { return "Here is my plan.\n```python\n" + body + "\n```\n"; }

}  // namespace

TEST_SUITE("codeact") {

TEST_CASE("binding table") {
    const auto& b = binding_table();
    CHECK(b == std::vector<std::string>{"search_internet", "search", "calculate", "continue_think"});
    ExecEnv env;
    CHECK(exec("final_answer(\"done\")", env).answer == "done");
}

TEST_CASE("static errors") {
    CHECK(static_error("x = ") == ScriptError::Kind::syntax);
    CHECK(static_error("x = (1 + 2") == ScriptError::Kind::syntax);
    CHECK(static_error("x = \"open") == ScriptError::Kind::syntax);
    CHECK(static_error("y = x + 1") == ScriptError::Kind::undefined_identifier);
    CHECK(static_error("import os") == ScriptError::Kind::undefined_identifier);
    CHECK(static_error("x = 1 2") == ScriptError::Kind::syntax);
    CHECK(static_error("open(\"/etc/passwd\")") == ScriptError::Kind::unknown_tool);
    CHECK(static_error("exec(\"1\")") == ScriptError::Kind::unknown_tool);
    try {
        parse_script("a = 1\nb = a +* 2");
    } catch (const ScriptError& e) {
        CHECK(e.line() == 2);
        CHECK(e.column() >= 7);
    }
    CHECK_NOTHROW(parse_script("# comment only\n\n"));
}

TEST_CASE("arithmetic, strings and lists") {
    ExecEnv env;
    auto out = exec("a = 1/3 + 2/3\nb = \"x\" + a\nc = [1, \"two\"] + [3]\nd = -(a * 4)", env);
    CHECK_FALSE(out.final);
    CHECK(env.bindings["a"].str() == "1");
    CHECK(env.bindings["b"].str() == "x1");
    CHECK(env.bindings["c"].str() == "[1, two, 3]");
    CHECK(env.bindings["d"].str() == "-4");
}

TEST_CASE("runtime errors bind to the target") {
    ExecEnv env;
    auto out = exec("a = 1 / 0\n[1] - 2\nfinal_answer(a)", env);
    CHECK(env.bindings["a"].str().rfind("ERROR: ", 0) == 0);
    REQUIRE(out.errors.size() == 1);
    CHECK(out.errors[0].rfind("line 2:", 0) == 0);
    CHECK(out.final);
}

TEST_CASE("tool calls and the log") {
    auto e = make_env({{"math", {{"14!", "87178291200"}}}});
    ExecEnv env;
    env.tools = e.tools.get();
    auto out = exec("f = calculate(\"14!\")\nhalf = f / 2\nx = calculate(\"2014-1924\")\nfinal_answer(half + x)", env);
    CHECK(out.final);
    CHECK(out.answer == "43589145690");
    REQUIRE(env.log.size() == 2);
    CHECK(env.log[0].tool == "calculate");
    CHECK(env.log[0].input == "14!");
    CHECK(env.log[0].statement == "f = calculate(\"14!\")");
    auto obs = render_log(env.log, out);
    CHECK(obs.find("[1] calculate(14!)") != std::string::npos);
}

TEST_CASE("search alias resolves to search_internet") {
    auto e = make_env({});
    ExecEnv env;
    env.tools = e.tools.get();
    exec("r = search(\"anything\")", env);
    REQUIRE(env.log.size() == 1);
    CHECK(env.log[0].tool == "search_internet");
}

TEST_CASE("tool call budget") {
    auto e = make_env({});
    ExecEnv env;
    env.tools = e.tools.get();
    env.step_budget = 3;
    std::string src;
    for (int i = 0; i < 5; ++i) src += "v" + std::to_string(i) + " = calculate(\"" + std::to_string(i) + "+1\")\n";
    auto out = exec(src, env);
    CHECK(out.budget_exhausted);
    CHECK(env.log.size() == 3);
    CHECK(render_log(env.log, out).find("budget exhausted") != std::string::npos);
}

TEST_CASE("resource limits") {
    ExecEnv env;
    std::string src = "a = \"xxxxxxxxxxxxxxxx\"\n";
    for (int i = 0; i < 20; ++i) src += "a = a + a\n";
    exec(src, env);
    CHECK(env.bindings["a"].str().rfind("ERROR: ", 0) == 0);
    std::string nest(200, '(');
    CHECK(static_error("x = " + nest + "1" + std::string(200, ')')) == ScriptError::Kind::syntax);
    CHECK_THROWS_AS(parse_script(std::string(70 * 1024, '#')), ScriptError);
}

TEST_CASE("parser survives arbitrary input") {
    std::mt19937_64 rng(31);
    const char* pieces[] = {"x", "=", "(", ")", "[", "]", ",", "\"", "'", "1", "2.5", "+", "-", "*", "/", "\n",
                            " ", "search", "calculate", "final_answer", "#", "\\", "\xC3\xA9", "\xFF", "import"};
    for (int i = 0; i < 3000; ++i) {
        std::string s;
        auto n = rng() % 16;
        for (std::size_t k = 0; k < n; ++k) s += pieces[rng() % (sizeof pieces / sizeof *pieces)];
        try {
            auto script = parse_script(s);
            ExecEnv env;
            execute_script(script, env);
        } catch (const ScriptError&) {
        } catch (...) {
            FAIL("unexpected exception for: " << s);
        }
    }
}

TEST_CASE("extract_code") {
    CHECK(extract_code("```python\na = 1\n```") == "a = 1\n");
    CHECK(extract_code("text\n```\nb = 2\n```\n```\nc = 3\n```") == "b = 2\n");
    CHECK(extract_code("  final_answer(1)  ") == "final_answer(1)");
}

TEST_CASE("run_codeact counts searches per round") {
    json script = {{"completions",
                    {{{"when", {"action scripts"}},
                      {"replies",
                       {fenced("a = search_internet(\"first\")\nb = search(\"second\")"),
                        fenced("final_answer(\"Paris\")")}}}}}};
    auto e = make_env(script);
    CodeActConfig cfg;
    auto r = run_codeact(*e.m.gw, "capital of France?", cfg, *e.tools);
    CHECK(r.terminated_by == agent::Termination::final_answer);
    CHECK(r.final_answer == std::optional<std::string>("Paris"));
    CHECK(r.trace.searches_used == 2);
    CHECK_FALSE(r.trace.initial_search);
    CHECK(r.round_searches == std::vector<std::size_t>{2, 0});
    REQUIRE(r.trace.history.size() == 3);
    CHECK(r.trace.history[0].thought == "a = search_internet(\"first\")");
    CHECK(r.trace.history.back().action == agent::Action::done);
}

TEST_CASE("run_codeact falls back when every round is invalid") {
    json script = {{"completions",
                    {{{"when", {"'Final Answer: <answer>'"}}, {"replies", {"Final Answer: Lyon"}}},
                     {{"when", {"action scripts"}}, {"replies", {fenced("x = = 1")}}}}}};
    auto e = make_env(script);
    CodeActConfig cfg;
    cfg.max_rounds = 3;
    auto r = run_codeact(*e.m.gw, "where?", cfg, *e.tools);
    CHECK(r.terminated_by == agent::Termination::fallback);
    CHECK(r.answer() == std::optional<std::string>("Lyon"));
    CHECK(r.metadata["rounds"] == "3");
    CHECK(r.trace.history.empty());
}

TEST_CASE("observations are fed back to the next round") {
    auto req = build_codeact_prompt("Q", {"s1", "s2"}, {"o1"});
    REQUIRE(req.messages.size() == 5);
    CHECK(req.messages[1].text == "Question: Q");
    CHECK(req.messages[3].text == "Observations:\no1");
    CHECK(req.messages[4].text == "s2");
}

}
