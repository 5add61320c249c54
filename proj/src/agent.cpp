#include "ods/agent.hpp"

#include "ods/kernels.hpp"
#include "ods/text.hpp"
#include "ods/worker_pool.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace ods::agent {

using nlohmann::json;

const char* to_string(Action a) {
    switch (a) {
        case Action::search_internet: return "search_internet";
        case Action::calculate: return "calculate";
        case Action::continue_think: return "continue_think";
        case Action::done: return "done";
    }
    return "done";
}

std::optional<Action> action_from(std::string_view raw) {
    std::string name;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        char c = raw[i];
        if (c == '\\' && i + 1 < raw.size() && raw[i + 1] == '_') continue;  // LaTeX-escaped underscore
        if (c == '$' || c == '`' || c == '"' || c == '\'' || c == '*') continue;
        name.push_back(c);
    }
    name = text::to_lower(text::trim(name));
    if (name == "search_internet") return Action::search_internet;
    if (name == "calculate") return Action::calculate;
    if (name == "continue_think") return Action::continue_think;
    if (name == "done") return Action::done;
    return std::nullopt;
}

const char* to_string(Termination t) {
    switch (t) {
        case Termination::final_answer: return "final_answer";
        case Termination::fallback: return "fallback";
        case Termination::step_budget: return "step_budget";
    }
    return "step_budget";
}

void AgentState::push(AgentStep step) {
    if (step.action == Action::search_internet) ++searches_used;
    history.push_back(std::move(step));
    step_index = history.size();
}

ParseError::ParseError(Kind kind, std::string detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

const char* to_string(ParseError::Kind k) {
    switch (k) {
        case ParseError::Kind::missing_thought: return "missing_thought";
        case ParseError::Kind::unknown_action: return "unknown_action";
        case ParseError::Kind::missing_input: return "missing_input";
        case ParseError::Kind::unclosed_tag: return "unclosed_tag";
        case ParseError::Kind::empty_output: return "empty_output";
    }
    return "unclosed_tag";
}

// ---------------------------------------------------------------------------
// Tag parsing

namespace {

constexpr std::size_t npos = std::string_view::npos;

std::size_t find_open(std::string_view text, std::string_view name, std::size_t from) {
    return text::ifind(text, "<" + std::string(name) + ">", from);
}

struct Tag {
    std::string content;
    std::size_t end = 0;  // just past the closing tag
};

// Content of the tag opening at `open`; ParseError(unclosed_tag) without a closer.
Tag read_tag(std::string_view text, std::string_view name, std::size_t open) {
    auto content_start = open + name.size() + 2;
    auto close = text::ifind(text, "</" + std::string(name) + ">", content_start);
    if (close == npos) throw ParseError(ParseError::Kind::unclosed_tag, "<" + std::string(name) + "> is never closed");
    return {text::trim(text.substr(content_start, close - content_start)), close + name.size() + 3};
}

// First of the given tags at or after `from`; returns npos when none.
std::size_t first_of(std::string_view text, std::size_t from, std::initializer_list<std::string_view> names,
                     std::string_view* which) {
    std::size_t best = npos;
    for (auto n : names) {
        auto p = find_open(text, n, from);
        if (p < best) {
            best = p;
            *which = n;
        }
    }
    return best;
}

std::string strip_quotes(std::string s) {
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
        return s.substr(1, s.size() - 2);
    return s;
}

// Position of `name` if it occurs before `limit`, else npos.
std::size_t open_before(std::string_view text, std::string_view name, std::size_t from, std::size_t limit) {
    auto p = find_open(text, name, from);
    return p < limit ? p : npos;
}

}  // namespace

AgentStep parse_step_at(std::string_view text, std::size_t pos, std::size_t* end) {
    std::string_view which;
    auto first = first_of(text, pos, {"Thought", "Action", "Final_Answer"}, &which);
    if (first == npos) {
        if (text::trim(text.substr(std::min(pos, text.size()))).empty())
            throw ParseError(ParseError::Kind::missing_thought, "output is empty");
        throw ParseError(ParseError::Kind::missing_thought, "no <Thought> tag found");
    }

    AgentStep step;
    if (which == "Final_Answer") {
        auto fa = read_tag(text, "Final_Answer", first);
        step.action = Action::done;
        step.action_input = fa.content;
        *end = fa.end;
        return step;
    }
    if (which == "Action") throw ParseError(ParseError::Kind::missing_thought, "<Action> without a preceding <Thought>");

    auto thought = read_tag(text, "Thought", first);
    step.thought = thought.content;

    std::string_view next_tag;
    auto next = first_of(text, thought.end, {"Action", "Final_Answer", "Thought"}, &next_tag);
    if (next == npos || next_tag == "Thought")
        throw ParseError(ParseError::Kind::unknown_action, "<Thought> is not followed by an <Action>");
    if (next_tag == "Final_Answer") {
        auto fa = read_tag(text, "Final_Answer", next);
        step.action = Action::done;
        step.action_input = fa.content;
        *end = fa.end;
        return step;
    }

    auto action_tag = read_tag(text, "Action", next);
    auto action = action_from(action_tag.content);
    if (!action) throw ParseError(ParseError::Kind::unknown_action, "unknown action '" + action_tag.content + "'");
    step.action = *action;

    // Everything belonging to this step lies before the next Thought/Action.
    std::string_view boundary_tag;
    auto boundary = first_of(text, action_tag.end, {"Thought", "Action"}, &boundary_tag);
    std::size_t cursor = action_tag.end;

    if (step.action == Action::done) {
        auto fa_pos = open_before(text, "Final_Answer", cursor, boundary);
        if (fa_pos != npos) {
            auto fa = read_tag(text, "Final_Answer", fa_pos);
            step.action_input = fa.content;
            cursor = fa.end;
        }
        *end = cursor;
        return step;
    }

    auto input_pos = open_before(text, "Action_Input", cursor, boundary);
    if (input_pos != npos) {
        auto input = read_tag(text, "Action_Input", input_pos);
        step.action_input = strip_quotes(input.content);
        cursor = input.end;
    }
    if (step.action_input.empty() && step.action != Action::continue_think)
        throw ParseError(ParseError::Kind::missing_input,
                         std::string("action ") + to_string(step.action) + " needs a non-empty <Action_Input>");

    auto obs_pos = open_before(text, "Observation", cursor, boundary);
    if (obs_pos != npos) {
        // An unterminated observation (cut by a stop sequence) is ignored.
        auto content_start = obs_pos + std::string_view("<Observation>").size();
        auto close = text::ifind(text, "</Observation>", content_start);
        if (close != npos && close < boundary) {
            step.observation = text::trim(text.substr(content_start, close - content_start));
            cursor = close + std::string_view("</Observation>").size();
        }
    }
    *end = cursor;
    return step;
}

AgentStep parse_step(std::string_view text) {
    std::size_t end = 0;
    try {
        return parse_step_at(text, 0, &end);
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(ParseError::Kind::unclosed_tag, e.what());
    }
}

std::string render_step(const AgentStep& step) {
    std::string out = "<Thought>\n" + step.thought + "\n</Thought>\n";
    if (step.action == Action::done) {
        out += "<Action>\nDone\n</Action>\n<Final_Answer>\n" + step.action_input + "\n</Final_Answer>\n";
        return out;
    }
    out += std::string("<Action>\n") + to_string(step.action) + "\n</Action>\n";
    const auto& in = step.action_input;
    bool needs_quotes = in.size() >= 2 && (in.front() == '"' || in.front() == '\'') && in.back() == in.front();
    out += "<Action_Input>\n" + (needs_quotes ? "\"" + in + "\"" : in) + "\n</Action_Input>\n";
    if (step.observation) out += "<Observation>\n" + *step.observation + "\n</Observation>\n";
    return out;
}

Transcript parse_transcript(std::string_view text) {
    auto q = find_open(text, "Question", 0);
    if (q == npos) throw ParseError(ParseError::Kind::missing_thought, "transcript has no <Question>");
    auto question = read_tag(text, "Question", q);
    Transcript t;
    t.question = question.content;
    std::size_t pos = question.end;
    for (;;) {
        std::size_t end = pos;
        auto step = parse_step_at(text, pos, &end);
        t.steps.push_back(step);
        if (step.action == Action::done) break;
        if (end <= pos) throw ParseError(ParseError::Kind::unclosed_tag, "transcript parser made no progress");
        pos = end;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Few-shot pool

std::vector<FewShotExample> load_pool_text(std::string_view text) {
    std::vector<FewShotExample> pool;
    auto start = find_open(text, "Question", 0);
    while (start != npos) {
        auto next = find_open(text, "Question", start + 1);
        auto record = text::trim(text.substr(start, next == npos ? npos : next - start));
        auto t = parse_transcript(record);
        pool.push_back({t.question, record, {}});
        start = next;
    }
    return pool;
}

std::vector<FewShotExample> load_pool(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open few-shot pool: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return load_pool_text(ss.str());
}

void write_pool_embeddings(const std::filesystem::path& path, const std::vector<FewShotExample>& pool) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& ex : pool) {
        if (ex.embedding.values.empty()) throw std::runtime_error("pool example has no embedding: " + ex.question);
        out << json{{"question", ex.question}, {"model", ex.embedding.model_id}, {"embedding", ex.embedding.values}}
                   .dump()
            << "\n";
    }
}

void attach_pool_embeddings(const std::filesystem::path& path, std::vector<FewShotExample>& pool) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open pool embeddings: " + path.string());
    std::map<std::string, EmbeddingVector> by_question;
    std::string line;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        auto j = json::parse(line);
        by_question[j.at("question").get<std::string>()] = {j.at("embedding").get<std::vector<double>>(),
                                                            j.value("model", std::string())};
    }
    for (auto& ex : pool) {
        auto it = by_question.find(ex.question);
        if (it == by_question.end()) throw std::runtime_error("no sidecar embedding for: " + ex.question);
        ex.embedding = it->second;
    }
}

void embed_pool(Gateway& gw, std::vector<FewShotExample>& pool) {
    std::vector<std::string> texts;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (!pool[i].embedding.values.empty()) continue;
        texts.push_back(pool[i].question);
        idx.push_back(i);
    }
    if (texts.empty()) return;
    auto vecs = gw.embed(texts);
    for (std::size_t k = 0; k < idx.size(); ++k) pool[idx[k]].embedding = std::move(vecs[k]);
}

std::vector<FewShotExample> select_few_shots(const std::vector<double>& query_embedding,
                                             const std::vector<FewShotExample>& pool, std::size_t j) {
    if (j == 0 || pool.empty()) return {};
    std::vector<std::vector<double>> rows;
    rows.reserve(pool.size());
    for (const auto& ex : pool) rows.push_back(ex.embedding.values);
    std::size_t dim = 0;
    auto packed = kernels::pack_rows(rows, dim);
    auto scores = kernels::cosine_scores(query_embedding, {packed, rows.size(), dim});
    // Equal cosines can differ in the last bits; rank on rounded scores so
    // such ties fall back to pool order.
    for (auto& s : scores) s = std::round(s * 1e12) / 1e12;
    std::vector<FewShotExample> out;
    for (auto i : kernels::top_k(scores, j)) out.push_back(pool[i]);
    return out;
}

std::vector<FewShotExample> select_few_shots(Gateway& gw, const std::string& query,
                                             const std::vector<FewShotExample>& pool, std::size_t j) {
    if (j == 0 || pool.empty()) return {};
    auto q = gw.embed({query});
    return select_few_shots(q.front().values, pool, j);
}

// ---------------------------------------------------------------------------
// Prompting

namespace {

constexpr const char* kReactSystem =
    "You are a research agent that answers questions using tools. Work in steps. Each step "
    "is written with these tags:\n"
    "<Thought> your reasoning about what is known and what is missing </Thought>\n"
    "<Action> one of: search_internet, calculate, continue_think, Done </Action>\n"
    "<Action_Input> the search query, the expression to compute, or the sub-problem to "
    "think about </Action_Input>\n"
    "After each action you will be shown an <Observation> with the result. Never write an "
    "observation yourself.\n"
    "search_internet looks facts up on the web. calculate evaluates arithmetic and unit "
    "conversions such as '112 inches to millimeters'. continue_think breaks a hard problem "
    "into smaller parts.\n"
    "When you can answer, write <Action>Done</Action> followed by "
    "<Final_Answer> a short, direct answer </Final_Answer>. Use the search context and prior "
    "observations; search again only if they are insufficient.";

constexpr const char* kCorrection =
    "Your last reply did not follow the step format. Reply with <Thought>...</Thought>, then "
    "<Action>...</Action> naming search_internet, calculate, continue_think or Done, then "
    "<Action_Input>...</Action_Input> (or <Final_Answer>...</Final_Answer> after Done).";

std::string render_history(const std::vector<AgentStep>& history) {
    std::string out;
    for (const auto& s : history) out += render_step(s);
    return out;
}

}  // namespace

CompletionRequest build_react_prompt(const AgentState& state, const std::vector<FewShotExample>& shots) {
    std::string user;
    if (!shots.empty()) {
        user += "Worked examples:\n\n";
        for (const auto& s : shots) user += s.transcript + "\n\n";
    }
    user += "Search context:\n" + state.context.rendered + "\n";
    user += "<Question>\n" + state.query + "\n</Question>\n";
    user += render_history(state.history);

    CompletionRequest req;
    req.messages.push_back({Role::system, kReactSystem});
    req.messages.push_back({Role::user, user});
    req.temperature = 0.0;
    req.max_tokens = 1024;
    req.stop_sequences = {"<Observation>", "</Observation>"};
    return req;
}

std::string dispatch_action(const AgentStep& step, const tools::ToolRegistry& tools, const AgentState& state) {
    if (step.action == Action::done) throw std::invalid_argument("dispatch_action: done has no tool");
    const auto* tool = tools.find(to_string(step.action));
    if (!tool) return std::string("ERROR: unknown tool ") + to_string(step.action);
    tools::ToolContext ctx{state.query, render_history(state.history)};
    try {
        return tool->invoke(step.action_input, ctx).text;
    } catch (const std::exception& e) {
        return std::string("ERROR: ") + e.what();
    }
}

Verdict judge_answer(Gateway& gw, const std::string& query, const std::string& answer) {
    if (text::trim(answer).empty()) return Verdict::insufficient;
    CompletionRequest req;
    req.messages.push_back({Role::system,
                            "You decide whether a proposed answer actually answers a question. A "
                            "refusal, a hedge, or a statement that the information is unavailable "
                            "does not answer it. Reply with exactly one word: SUFFICIENT or "
                            "INSUFFICIENT."});
    req.messages.push_back({Role::user, "Question: " + query + "\nProposed answer: " + answer});
    req.temperature = 0.0;
    req.max_tokens = 8;
    try {
        return text::trim(gw.judge(req)) == "SUFFICIENT" ? Verdict::sufficient : Verdict::insufficient;
    } catch (const std::exception&) {
        return Verdict::insufficient;
    }
}

// ---------------------------------------------------------------------------
// Self-consistency

std::string extract_final_answer(std::string_view completion) {
    auto fa = find_open(completion, "Final_Answer", 0);
    if (fa != npos) {
        try {
            return read_tag(completion, "Final_Answer", fa).content;
        } catch (const ParseError&) {
        }
    }
    auto lines = text::split_lines(completion);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        auto p = text::ifind(*it, "final answer");
        if (p == npos) continue;
        auto colon = it->find(':', p);
        if (colon == std::string::npos) continue;
        auto rest = text::trim(std::string_view(*it).substr(colon + 1));
        while (rest.starts_with("**")) rest = text::trim(std::string_view(rest).substr(2));
        while (rest.ends_with("**")) rest = text::trim(std::string_view(rest).substr(0, rest.size() - 2));
        if (!rest.empty()) return rest;
        // Answer on the following non-empty line.
        auto idx = static_cast<std::size_t>(std::distance(lines.begin(), it.base()));
        for (; idx < lines.size(); ++idx)
            if (!text::trim(lines[idx]).empty()) return text::trim(lines[idx]);
    }
    for (auto it = lines.rbegin(); it != lines.rend(); ++it)
        if (!text::trim(*it).empty()) return text::trim(*it);
    return {};
}

std::optional<std::size_t> select_consistent(const std::vector<std::string>& answers, std::uint64_t seed) {
    std::vector<std::string> keys;
    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        auto key = text::normalize_answer(answers[i]);
        if (key.empty()) continue;
        auto it = std::find(keys.begin(), keys.end(), key);
        if (it == keys.end()) {
            keys.push_back(key);
            clusters.push_back({i});
        } else {
            clusters[static_cast<std::size_t>(it - keys.begin())].push_back(i);
        }
    }
    if (clusters.empty()) return std::nullopt;
    // Clusters are in order of first draw, so the first maximal one holds the earliest sample.
    std::size_t best = 0;
    for (std::size_t c = 1; c < clusters.size(); ++c)
        if (clusters[c].size() > clusters[best].size()) best = c;
    std::mt19937_64 rng(seed);
    const auto& members = clusters[best];
    return members[rng() % members.size()];
}

std::string self_consistency_fallback(Gateway& gw, const std::string& query, const search::SearchContext& context,
                                      const ConsistencyConfig& cfg) {
    if (cfg.r == 0) throw std::invalid_argument("self-consistency needs r >= 1");
    std::vector<std::string> answers(cfg.r);
    run_bounded(cfg.r, std::min<std::size_t>(cfg.r, 4), [&](std::size_t i) {
        CompletionRequest req;
        req.messages.push_back({Role::system,
                                "Answer the question using the search context. Think step by step, "
                                "then end with a line of the form 'Final Answer: <answer>' giving a "
                                "short, direct answer."});
        std::string user;
        if (!context.rendered.empty()) user += "Search context:\n" + context.rendered + "\n";
        user += "Question: " + query;
        req.messages.push_back({Role::user, user});
        req.temperature = cfg.temperature;
        req.max_tokens = 1024;
        req.seed = cfg.seed + i;
        try {
            answers[i] = extract_final_answer(gw.complete(req));
        } catch (const std::exception&) {
            answers[i].clear();
        }
    });
    auto pick = select_consistent(answers, cfg.seed);
    if (!pick) throw FallbackExhausted("all " + std::to_string(cfg.r) + " self-consistency samples failed");
    return answers[*pick];
}

// ---------------------------------------------------------------------------
// Loop

AgentResult run(Gateway& gw, const std::string& query, const AgentConfig& cfg, const tools::ToolRegistry& tools,
                const std::vector<FewShotExample>& pool) {
    if (text::trim(query).empty()) throw std::invalid_argument("agent run: empty query");
    AgentResult res;
    res.metadata["agent"] = "v1";
    auto& state = res.trace;
    state.query = query;

    state.initial_search = true;
    state.searches_used = 1;
    try {
        state.context = search::build_context(gw, query, cfg.search);
    } catch (const std::exception& e) {
        state.context = {};
        state.context.query = query;
        state.context.rendered = search::format_context(state.context, cfg.search);
        res.metadata["initial_search_error"] = e.what();
    }

    std::vector<FewShotExample> shots;
    try {
        shots = select_few_shots(gw, query, pool, cfg.shots);
    } catch (const std::exception& e) {
        res.metadata["few_shot_error"] = e.what();
    }

    std::optional<std::string> proposed;
    bool first_completion = true;
    bool provider_failed = false;
    while (state.step_index < cfg.max_steps && !provider_failed) {
        auto req = build_react_prompt(state, shots);
        std::string output;
        try {
            output = gw.complete(req);
        } catch (const std::exception&) {
            if (first_completion) throw;
            provider_failed = true;
            break;
        }
        first_completion = false;

        AgentStep step;
        try {
            step = parse_step(output);
        } catch (const ParseError& first_error) {
            auto retry = req;
            retry.messages.push_back({Role::assistant, output});
            retry.messages.push_back(
                {Role::user, "<Observation>\nERROR: " + std::string(first_error.what()) + ". " + kCorrection +
                                 "\n</Observation>"});
            try {
                step = parse_step(gw.complete(retry));
            } catch (const ParseError& second_error) {
                state.push({"(unparseable output)", Action::continue_think, "",
                            "ERROR: " + std::string(second_error.what())});
                continue;
            } catch (const std::exception&) {
                provider_failed = true;
                break;
            }
        }

        if (step.action == Action::done) {
            step.observation.reset();
            proposed = step.action_input;
            state.push(std::move(step));
            break;
        }
        step.observation = dispatch_action(step, tools, state);
        state.push(std::move(step));
    }

    if (proposed) {
        auto verdict = judge_answer(gw, query, *proposed);
        res.metadata["judge"] = verdict == Verdict::sufficient ? "sufficient" : "insufficient";
        if (verdict == Verdict::sufficient) {
            res.final_answer = proposed;
            res.terminated_by = Termination::final_answer;
            return res;
        }
        res.metadata["rejected_answer"] = *proposed;
    }
    if (provider_failed) res.metadata["provider_error"] = "completion failed mid-run";

    try {
        res.fallback_answer = self_consistency_fallback(gw, query, state.context, cfg.consistency);
        res.terminated_by = Termination::fallback;
    } catch (const FallbackExhausted& e) {
        res.terminated_by = Termination::step_budget;
        res.metadata["fallback_error"] = e.what();
    }
    return res;
}

}  // namespace ods::agent
