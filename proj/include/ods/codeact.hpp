#pragma once

// Code-as-action agent. The model writes a small action script; a sandboxed
// interpreter runs it against the tool registry and feeds the log back.
//
// Script grammar (newline separated, `#` comments):
//   stmt  := ident "=" expr | expr
//   expr  := term (("+" | "-") term)*
//   term  := unary (("*" | "/") unary)*
//   unary := "-" unary | atom
//   atom  := number | string | ident | call | "[" [expr ("," expr)*] "]" | "(" expr ")"
//   call  := toolname "(" [expr ("," expr)*] ")"

#include "ods/agent.hpp"
#include "ods/toolbox.hpp"

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace ods::codeact {

using tools::Rational;

class ScriptError : public std::runtime_error {
public:
    enum class Kind { syntax, undefined_identifier, unknown_tool };
    ScriptError(Kind kind, std::size_t line, std::size_t column, const std::string& msg);
    Kind kind() const { return kind_; }
    std::size_t line() const { return line_; }
    std::size_t column() const { return column_; }

private:
    Kind kind_;
    std::size_t line_;
    std::size_t column_;
};
const char* to_string(ScriptError::Kind k);

struct Value;
using List = std::vector<Value>;
struct Value {
    std::variant<Rational, std::string, List> v;

    bool is_number() const { return v.index() == 0; }
    bool is_string() const { return v.index() == 1; }
    bool is_list() const { return v.index() == 2; }
    /// Display form: numbers via render_number, lists as [a, b].
    std::string str() const;
    bool operator==(const Value&) const = default;
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;
struct Expr {
    enum class Kind { number, string, ident, binary, negate, list, call };
    Kind kind;
    Rational number;
    std::string text;  // string literal, identifier, callee or operator
    std::vector<ExprPtr> args;
    std::size_t line = 0, column = 0;
};

struct Statement {
    std::optional<std::string> target;
    ExprPtr expr;
    std::size_t line = 0;
    std::string source;
};

struct ActionScript {
    std::string source;
    std::vector<Statement> statements;
};

/// Callables every script may name; `search` aliases search_internet.
const std::vector<std::string>& binding_table();

ActionScript parse_script(std::string_view source);

struct LogEntry {
    std::string statement;
    std::string tool;  // registry name, alias resolved
    std::string input;
    std::string result;
};

struct ExecEnv {
    std::map<std::string, Value> bindings;
    std::size_t step_budget = 10;
    const tools::ToolRegistry* tools = nullptr;
    tools::ToolContext context;
    std::vector<LogEntry> log;
};

struct ExecOutcome {
    bool final = false;
    std::string answer;
    bool budget_exhausted = false;
    // Runtime errors from statements that had no target to bind them to.
    std::vector<std::string> errors;
};

ExecOutcome execute_script(const ActionScript& script, ExecEnv& env);

/// Observation text for the model: the tool log plus errors.
std::string render_log(const std::vector<LogEntry>& log, const ExecOutcome& outcome, std::size_t first_entry = 0);

/// Body of the first fenced code block in a model reply, or the whole reply.
std::string extract_code(std::string_view reply);

struct CodeActConfig {
    std::size_t max_rounds = 6;
    std::size_t step_budget = 10;
    agent::ConsistencyConfig consistency;
};

CompletionRequest build_codeact_prompt(const std::string& query, const std::vector<std::string>& scripts,
                                       const std::vector<std::string>& observations);

agent::AgentResult run_codeact(Gateway& gw, const std::string& query, const CodeActConfig& cfg,
                               const tools::ToolRegistry& tools);

}  // namespace ods::codeact
