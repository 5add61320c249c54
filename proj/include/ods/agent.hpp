#pragma once

// ReAct reasoning agent: a Thought/Action/Action_Input/Observation loop over
// tools, with dynamic few-shot selection and a judge-gated self-consistency
// fallback.

#include "ods/gateway.hpp"
#include "ods/search.hpp"
#include "ods/toolbox.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ods::agent {

enum class Action { search_internet, calculate, continue_think, done };
const char* to_string(Action a);
std::optional<Action> action_from(std::string_view name);

struct AgentStep {
    std::string thought;
    Action action = Action::continue_think;
    // For `done`, carries the final answer.
    std::string action_input;
    std::optional<std::string> observation;

    bool operator==(const AgentStep&) const = default;
};

struct AgentState {
    std::string query;
    search::SearchContext context;
    bool initial_search = false;  // the up-front context search was performed
    std::vector<AgentStep> history;
    std::size_t step_index = 0;
    std::size_t searches_used = 0;  // initial search + search_internet steps

    /// Append a step and keep step_index / searches_used consistent.
    void push(AgentStep step);
};

struct FewShotExample {
    std::string question;
    std::string transcript;
    EmbeddingVector embedding;
};

enum class Termination { final_answer, fallback, step_budget };
const char* to_string(Termination t);

struct AgentResult {
    std::optional<std::string> final_answer;
    AgentState trace;
    Termination terminated_by = Termination::step_budget;
    std::optional<std::string> fallback_answer;
    std::map<std::string, std::string> metadata;
    // Searches issued per round (codeact only).
    std::vector<std::size_t> round_searches;

    /// The answer to report, whichever path produced it.
    std::optional<std::string> answer() const { return final_answer ? final_answer : fallback_answer; }
};

struct ConsistencyConfig {
    std::size_t r = 5;
    double temperature = 0.7;
    std::uint64_t seed = 0;
};

struct AgentConfig {
    std::size_t max_steps = 8;
    std::size_t shots = 5;
    ConsistencyConfig consistency;
    search::SearchConfig search;
};

// ---------------------------------------------------------------------------
// Parsing

class ParseError : public std::runtime_error {
public:
    enum class Kind { missing_thought, unknown_action, missing_input, unclosed_tag, empty_output };
    ParseError(Kind kind, std::string detail);
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};
const char* to_string(ParseError::Kind k);

/// Parse the first well-formed step in `text`. Tag names match
/// case-insensitively; `<Final_Answer>` yields a `done` step whose
/// action_input is the answer. Only ever throws ParseError.
AgentStep parse_step(std::string_view text);

/// Like parse_step, starting at `pos`; returns the offset just past the step.
AgentStep parse_step_at(std::string_view text, std::size_t pos, std::size_t* end);

/// Tagged rendering; parse_step(render_step(s)) == s for well-formed steps.
std::string render_step(const AgentStep& step);

struct Transcript {
    std::string question;
    std::vector<AgentStep> steps;  // last step is `done`
};

/// Parse a full `<Question>...<Final_Answer>` block.
Transcript parse_transcript(std::string_view text);

// ---------------------------------------------------------------------------
// Few-shot pool

/// Records start at each `<Question>` tag; text before the first is ignored.
std::vector<FewShotExample> load_pool_text(std::string_view text);
std::vector<FewShotExample> load_pool(const std::filesystem::path& path);

/// Sidecar format: one JSON object per line {"question", "model", "embedding"}.
void write_pool_embeddings(const std::filesystem::path& path, const std::vector<FewShotExample>& pool);
/// Attach sidecar embeddings by question text; throws if any is missing.
void attach_pool_embeddings(const std::filesystem::path& path, std::vector<FewShotExample>& pool);
/// Embed any pool question that has no embedding yet.
void embed_pool(Gateway& gw, std::vector<FewShotExample>& pool);

/// Top-j pool examples by cosine to the query, descending. Scores are
/// compared after rounding to 1e-12; ties keep pool order.
std::vector<FewShotExample> select_few_shots(const std::vector<double>& query_embedding,
                                             const std::vector<FewShotExample>& pool, std::size_t j);
std::vector<FewShotExample> select_few_shots(Gateway& gw, const std::string& query,
                                             const std::vector<FewShotExample>& pool, std::size_t j);

// ---------------------------------------------------------------------------
// Loop pieces

CompletionRequest build_react_prompt(const AgentState& state, const std::vector<FewShotExample>& shots);

/// Run a non-terminal step's tool. Tool failures come back as "ERROR: ..." text.
std::string dispatch_action(const AgentStep& step, const tools::ToolRegistry& tools, const AgentState& state);

enum class Verdict { sufficient, insufficient };
Verdict judge_answer(Gateway& gw, const std::string& query, const std::string& answer);

class FallbackExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Final answer line of a sampled reasoning completion.
std::string extract_final_answer(std::string_view completion);

/// Index of the chosen sample: partition `answers` by normalized equality,
/// take the largest cluster (earliest-drawn sample breaks ties) and pick a
/// member uniformly with `seed`. Empty answers are ignored; returns nullopt
/// when none remain.
std::optional<std::size_t> select_consistent(const std::vector<std::string>& answers, std::uint64_t seed);

std::string self_consistency_fallback(Gateway& gw, const std::string& query, const search::SearchContext& context,
                                      const ConsistencyConfig& cfg);

AgentResult run(Gateway& gw, const std::string& query, const AgentConfig& cfg, const tools::ToolRegistry& tools,
                const std::vector<FewShotExample>& pool);

}  // namespace ods::agent
