#include "ods/codeact.hpp"

#include "ods/text.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace ods::codeact {

namespace {

constexpr std::size_t kMaxSource = 64 * 1024;
constexpr int kMaxDepth = 64;
constexpr std::size_t kMaxString = 1 << 20;
constexpr std::size_t kMaxList = 4096;
constexpr std::size_t kMaxBits = 4096;

std::string position_message(std::size_t line, std::size_t column, const std::string& msg) {
    return "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + msg;
}

}  // namespace

ScriptError::ScriptError(Kind kind, std::size_t line, std::size_t column, const std::string& msg)
    : std::runtime_error(std::string(to_string(kind)) + " at " + position_message(line, column, msg)),
      kind_(kind),
      line_(line),
      column_(column) {}

const char* to_string(ScriptError::Kind k) {
    switch (k) {
        case ScriptError::Kind::syntax: return "SyntaxError";
        case ScriptError::Kind::undefined_identifier: return "UndefinedIdentifier";
        case ScriptError::Kind::unknown_tool: return "UnknownTool";
    }
    return "SyntaxError";
}

std::string Value::str() const {
    if (is_number()) return tools::render_number(std::get<Rational>(v));
    if (is_string()) return std::get<std::string>(v);
    std::string out = "[";
    const auto& items = std::get<List>(v);
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ", ";
        out += items[i].str();
    }
    return out + "]";
}

const std::vector<std::string>& binding_table() {
    static const std::vector<std::string> names = {"search_internet", "search", "calculate", "continue_think"};
    return names;
}

// ---------------------------------------------------------------------------
// Lexer

namespace {

struct Token {
    enum class Kind { ident, number, string, op, newline, end };
    Kind kind;
    std::string text;
    std::size_t line, column;
    std::size_t offset;
};

std::vector<Token> lex(std::string_view src) {
    std::vector<Token> out;
    std::size_t i = 0, line = 1, col = 1;
    int depth = 0;
    auto advance = [&](std::size_t n) {
        for (std::size_t k = 0; k < n; ++k, ++i) {
            if (src[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
    };
    while (i < src.size()) {
        char c = src[i];
        if (c == '#') {
            while (i < src.size() && src[i] != '\n') advance(1);
            continue;
        }
        if (c == '\n') {
            if (depth == 0) out.push_back({Token::Kind::newline, "\n", line, col, i});
            advance(1);
            continue;
        }
        if (c == ' ' || c == '\t' || c == '\r') {
            advance(1);
            continue;
        }
        auto start_line = line, start_col = col;
        auto start = i;
        auto uc = static_cast<unsigned char>(c);
        if (std::isalpha(uc) || c == '_') {
            std::size_t j = i;
            while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
            out.push_back({Token::Kind::ident, std::string(src.substr(i, j - i)), start_line, start_col, start});
            advance(j - i);
            continue;
        }
        if (std::isdigit(uc)) {
            std::size_t j = i;
            while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
            if (j + 1 < src.size() && src[j] == '.' && std::isdigit(static_cast<unsigned char>(src[j + 1]))) {
                ++j;
                while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
            }
            if (j - i > 400) throw ScriptError(ScriptError::Kind::syntax, line, col, "numeric literal too long");
            out.push_back({Token::Kind::number, std::string(src.substr(i, j - i)), start_line, start_col, start});
            advance(j - i);
            continue;
        }
        if (c == '"' || c == '\'') {
            std::string value;
            std::size_t j = i + 1;
            bool closed = false;
            while (j < src.size()) {
                char d = src[j];
                if (d == c) {
                    closed = true;
                    ++j;
                    break;
                }
                if (d == '\n') break;
                if (d == '\\' && j + 1 < src.size()) {
                    char e = src[j + 1];
                    switch (e) {
                        case 'n': value.push_back('\n'); break;
                        case 't': value.push_back('\t'); break;
                        case '\\': value.push_back('\\'); break;
                        case '"': value.push_back('"'); break;
                        case '\'': value.push_back('\''); break;
                        default:
                            value.push_back('\\');
                            value.push_back(e);
                    }
                    j += 2;
                    continue;
                }
                value.push_back(d);
                ++j;
            }
            if (!closed) throw ScriptError(ScriptError::Kind::syntax, start_line, start_col, "unterminated string");
            out.push_back({Token::Kind::string, value, start_line, start_col, start});
            advance(j - i);
            continue;
        }
        if (std::string_view("+-*/=,()[]").find(c) != std::string_view::npos) {
            if (c == '(' || c == '[') ++depth;
            if ((c == ')' || c == ']') && depth > 0) --depth;
            out.push_back({Token::Kind::op, std::string(1, c), start_line, start_col, start});
            advance(1);
            continue;
        }
        throw ScriptError(ScriptError::Kind::syntax, line, col,
                          "unexpected character '" + std::string(1, c) + "'");
    }
    out.push_back({Token::Kind::end, "", line, col, src.size()});
    return out;
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
public:
    Parser(std::string_view src, std::vector<Token> toks) : src_(src), toks_(std::move(toks)) {}

    ActionScript parse() {
        ActionScript script;
        script.source = std::string(src_);
        for (;;) {
            while (at(Token::Kind::newline)) ++pos_;
            if (at(Token::Kind::end)) break;
            script.statements.push_back(statement());
        }
        return script;
    }

private:
    std::string_view src_;
    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    std::set<std::string> defined_;

    const Token& cur() const { return toks_[pos_]; }
    bool at(Token::Kind k) const { return cur().kind == k; }
    bool at_op(char c) const { return at(Token::Kind::op) && cur().text[0] == c; }

    [[noreturn]] void fail(const Token& t, const std::string& msg) const {
        throw ScriptError(ScriptError::Kind::syntax, t.line, t.column, msg);
    }

    void expect_op(char c) {
        if (!at_op(c)) fail(cur(), std::string("expected '") + c + "'" + found());
        ++pos_;
    }

    std::string found() const {
        if (at(Token::Kind::end)) return " but reached end of script";
        if (at(Token::Kind::newline)) return " but reached end of line";
        return " but found '" + cur().text + "'";
    }

    static bool is_callable(const std::string& name) {
        const auto& t = binding_table();
        return name == "final_answer" || std::find(t.begin(), t.end(), name) != t.end();
    }

    Statement statement() {
        Statement st;
        const auto& first = cur();
        st.line = first.line;
        auto start = first.offset;
        std::optional<std::string> target;
        if (at(Token::Kind::ident) && toks_[pos_ + 1].kind == Token::Kind::op && toks_[pos_ + 1].text == "=") {
            if (is_callable(first.text)) fail(first, "cannot assign to '" + first.text + "'");
            target = first.text;
            pos_ += 2;
        }
        st.expr = expr(0);
        if (!at(Token::Kind::newline) && !at(Token::Kind::end)) fail(cur(), "expected end of statement" + found());
        auto end = cur().offset;
        st.source = text::trim(src_.substr(start, end - start));
        if (target) defined_.insert(*target);
        st.target = std::move(target);
        return st;
    }

    std::shared_ptr<Expr> make(Expr::Kind k, const Token& t) {
        auto e = std::make_shared<Expr>();
        e->kind = k;
        e->line = t.line;
        e->column = t.column;
        return e;
    }

    ExprPtr expr(int depth) {
        if (depth > kMaxDepth) fail(cur(), "expression nested too deeply");
        auto lhs = term(depth + 1);
        while (at_op('+') || at_op('-')) {
            auto op = cur();
            ++pos_;
            auto e = make(Expr::Kind::binary, op);
            e->text = op.text;
            auto rhs = term(depth + 1);
            e->args = {lhs, rhs};
            lhs = e;
        }
        return lhs;
    }

    ExprPtr term(int depth) {
        auto lhs = unary(depth + 1);
        while (at_op('*') || at_op('/')) {
            auto op = cur();
            ++pos_;
            auto e = make(Expr::Kind::binary, op);
            e->text = op.text;
            auto rhs = unary(depth + 1);
            e->args = {lhs, rhs};
            lhs = e;
        }
        return lhs;
    }

    ExprPtr unary(int depth) {
        if (depth > kMaxDepth) fail(cur(), "expression nested too deeply");
        if (at_op('-')) {
            auto t = cur();
            ++pos_;
            auto e = make(Expr::Kind::negate, t);
            e->args.push_back(unary(depth + 1));
            return e;
        }
        return atom(depth + 1);
    }

    std::vector<ExprPtr> arguments(char close, int depth) {
        std::vector<ExprPtr> args;
        if (at_op(close)) {
            ++pos_;
            return args;
        }
        for (;;) {
            args.push_back(expr(depth + 1));
            if (at_op(',')) {
                ++pos_;
                continue;
            }
            expect_op(close);
            return args;
        }
    }

    ExprPtr atom(int depth) {
        if (depth > kMaxDepth) fail(cur(), "expression nested too deeply");
        const auto t = cur();
        switch (t.kind) {
            case Token::Kind::number: {
                ++pos_;
                auto e = make(Expr::Kind::number, t);
                e->number = tools::evaluate_arithmetic(t.text);
                return e;
            }
            case Token::Kind::string: {
                ++pos_;
                auto e = make(Expr::Kind::string, t);
                e->text = t.text;
                return e;
            }
            case Token::Kind::ident: {
                ++pos_;
                if (at_op('(')) {
                    if (!is_callable(t.text))
                        throw ScriptError(ScriptError::Kind::unknown_tool, t.line, t.column,
                                          "'" + t.text + "' is not an available tool");
                    ++pos_;
                    auto e = make(Expr::Kind::call, t);
                    e->text = t.text;
                    e->args = arguments(')', depth);
                    return e;
                }
                if (is_callable(t.text)) fail(t, "tool '" + t.text + "' must be called");
                if (!defined_.count(t.text))
                    throw ScriptError(ScriptError::Kind::undefined_identifier, t.line, t.column,
                                      "'" + t.text + "' is used before it is assigned");
                auto e = make(Expr::Kind::ident, t);
                e->text = t.text;
                return e;
            }
            case Token::Kind::op:
                if (t.text == "(") {
                    ++pos_;
                    auto inner = expr(depth + 1);
                    expect_op(')');
                    return inner;
                }
                if (t.text == "[") {
                    ++pos_;
                    auto e = make(Expr::Kind::list, t);
                    e->args = arguments(']', depth);
                    return e;
                }
                break;
            default:
                break;
        }
        fail(t, "expected a value" + found());
    }
};

}  // namespace

ActionScript parse_script(std::string_view source) {
    if (source.size() > kMaxSource) throw ScriptError(ScriptError::Kind::syntax, 1, 1, "script is too long");
    Parser p(source, lex(source));
    return p.parse();
}

// ---------------------------------------------------------------------------
// Interpreter

namespace {

struct RuntimeFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FinalSignal {
    std::string answer;
};
struct BudgetSignal {};

std::size_t bits(const Rational& r) {
    using boost::multiprecision::abs;
    boost::multiprecision::cpp_int n = abs(boost::multiprecision::numerator(r));
    boost::multiprecision::cpp_int d = boost::multiprecision::denominator(r);
    std::size_t b = 0;
    if (n != 0) b = std::max<std::size_t>(b, boost::multiprecision::msb(n));
    if (d != 0) b = std::max<std::size_t>(b, boost::multiprecision::msb(d));
    return b;
}

Value checked(Value v) {
    if (v.is_string() && std::get<std::string>(v.v).size() > kMaxString) throw RuntimeFault("string value too large");
    if (v.is_list() && std::get<List>(v.v).size() > kMaxList) throw RuntimeFault("list value too large");
    if (v.is_number() && bits(std::get<Rational>(v.v)) > kMaxBits) throw RuntimeFault("number too large");
    return v;
}

bool plain_number(const std::string& s) {
    std::size_t i = s.starts_with('-') ? 1 : 0;
    if (i >= s.size() || s.size() > 64) return false;
    bool dot = false, digit = false;
    for (; i < s.size(); ++i) {
        if (std::isdigit(static_cast<unsigned char>(s[i]))) {
            digit = true;
        } else if (s[i] == '.' && !dot && digit) {
            dot = true;
            digit = false;
        } else {
            return false;
        }
    }
    return digit;
}

class Interpreter {
public:
    Interpreter(ExecEnv& env, const Statement*& current) : env_(env), current_(current) {}

    Value eval(const Expr& e) {
        switch (e.kind) {
            case Expr::Kind::number: return Value{e.number};
            case Expr::Kind::string: return Value{e.text};
            case Expr::Kind::ident: {
                auto it = env_.bindings.find(e.text);
                if (it == env_.bindings.end()) throw RuntimeFault("'" + e.text + "' has no value");
                return it->second;
            }
            case Expr::Kind::negate: {
                auto v = eval(*e.args[0]);
                if (!v.is_number()) throw RuntimeFault("cannot negate a non-number");
                return Value{Rational(-std::get<Rational>(v.v))};
            }
            case Expr::Kind::list: {
                List items;
                for (const auto& a : e.args) items.push_back(eval(*a));
                return checked(Value{std::move(items)});
            }
            case Expr::Kind::binary: return binary(e.text[0], eval(*e.args[0]), eval(*e.args[1]));
            case Expr::Kind::call: return call(e);
        }
        throw RuntimeFault("bad expression");
    }

private:
    ExecEnv& env_;
    const Statement*& current_;

    static Value binary(char op, const Value& a, const Value& b) {
        if (a.is_number() && b.is_number()) {
            const auto& x = std::get<Rational>(a.v);
            const auto& y = std::get<Rational>(b.v);
            switch (op) {
                case '+': return checked(Value{Rational(x + y)});
                case '-': return checked(Value{Rational(x - y)});
                case '*': return checked(Value{Rational(x * y)});
                case '/':
                    if (y == 0) throw RuntimeFault("division by zero");
                    return checked(Value{Rational(x / y)});
            }
        }
        if (op == '+') {
            if (a.is_list() && b.is_list()) {
                auto items = std::get<List>(a.v);
                const auto& more = std::get<List>(b.v);
                if (items.size() + more.size() > kMaxList) throw RuntimeFault("list value too large");
                items.insert(items.end(), more.begin(), more.end());
                return Value{std::move(items)};
            }
            if (!a.is_list() && !b.is_list()) {
                auto sa = a.str(), sb = b.str();
                if (sa.size() + sb.size() > kMaxString) throw RuntimeFault("string value too large");
                return Value{sa + sb};
            }
        }
        throw RuntimeFault(std::string("operator ") + op + " does not apply to these values");
    }

    Value call(const Expr& e) {
        std::vector<Value> args;
        for (const auto& a : e.args) args.push_back(eval(*a));
        if (args.size() != 1) throw RuntimeFault(e.text + " takes exactly one argument");
        if (e.text == "final_answer") throw FinalSignal{args[0].str()};
        if (args[0].is_list()) throw RuntimeFault(e.text + " expects a string or number");

        if (env_.log.size() >= env_.step_budget) throw BudgetSignal{};
        std::string tool = e.text == "search" ? "search_internet" : e.text;
        std::string input = args[0].str();
        std::string result;
        const tools::ToolSpec* spec = env_.tools ? env_.tools->find(tool) : nullptr;
        if (!spec) {
            result = "ERROR: unknown tool " + tool;
        } else {
            try {
                result = spec->invoke(input, env_.context).text;
            } catch (const std::exception& ex) {
                result = std::string("ERROR: ") + ex.what();
            }
        }
        env_.log.push_back({current_ ? current_->source : "", tool, input, result});
        if (plain_number(result)) return Value{tools::evaluate_arithmetic(result)};
        return Value{result};
    }
};

}  // namespace

ExecOutcome execute_script(const ActionScript& script, ExecEnv& env) {
    ExecOutcome out;
    const Statement* current = nullptr;
    Interpreter interp(env, current);
    for (const auto& st : script.statements) {
        current = &st;
        try {
            auto v = interp.eval(*st.expr);
            if (st.target) env.bindings[*st.target] = std::move(v);
        } catch (const FinalSignal& f) {
            out.final = true;
            out.answer = f.answer;
            return out;
        } catch (const BudgetSignal&) {
            out.budget_exhausted = true;
            return out;
        } catch (const std::exception& ex) {
            std::string msg = std::string("ERROR: ") + ex.what();
            if (st.target)
                env.bindings[*st.target] = Value{msg};
            else
                out.errors.push_back("line " + std::to_string(st.line) + ": " + msg);
        }
    }
    return out;
}

std::string render_log(const std::vector<LogEntry>& log, const ExecOutcome& outcome, std::size_t first_entry) {
    std::string out;
    for (std::size_t i = first_entry; i < log.size(); ++i) {
        const auto& e = log[i];
        out += "[" + std::to_string(i - first_entry + 1) + "] " + e.tool + "(" + e.input + ")\n" + e.result + "\n";
    }
    for (const auto& err : outcome.errors) out += err + "\n";
    if (outcome.budget_exhausted) out += "ERROR: tool call budget exhausted for this script\n";
    if (out.empty()) out = "No tool was called. Call final_answer(...) once you know the answer.\n";
    return out;
}

std::string extract_code(std::string_view reply) {
    auto open = reply.find("```");
    if (open == std::string_view::npos) return text::trim(reply);
    auto body = reply.find('\n', open);
    if (body == std::string_view::npos) return text::trim(reply);
    ++body;
    auto close = reply.find("```", body);
    return std::string(reply.substr(body, close == std::string_view::npos ? std::string_view::npos : close - body));
}

// ---------------------------------------------------------------------------
// Loop

namespace {

constexpr const char* kCodeActSystem =
    "You answer questions by writing short action scripts. A script has one statement per line:\n"
    "  name = expression\n"
    "  expression\n"
    "Expressions are numbers, quoted strings, [lists], variables, the operators + - * / and tool "
    "calls. + joins strings. Comments start with #. There are no loops, conditionals, imports or "
    "other functions.\n"
    "Tools:\n"
    "  search_internet(query): web search results and relevant passages as text. search(query) is "
    "the same tool.\n"
    "  calculate(expression): arithmetic or a unit conversion such as \"112 inches to millimeters\".\n"
    "  continue_think(problem): a step-by-step breakdown of a sub-problem.\n"
    "  final_answer(value): finish with a short, direct answer.\n"
    "A script may call at most 10 tools. If a script ends without final_answer you will be shown its "
    "tool results and can write another one. Reply with one fenced code block.";

agent::Action action_for(const std::string& tool) {
    auto a = agent::action_from(tool);
    return a && *a != agent::Action::done ? *a : agent::Action::continue_think;
}

}  // namespace

CompletionRequest build_codeact_prompt(const std::string& query, const std::vector<std::string>& scripts,
                                       const std::vector<std::string>& observations) {
    CompletionRequest req;
    req.messages.push_back({Role::system, kCodeActSystem});
    req.messages.push_back({Role::user, "Question: " + query});
    for (std::size_t i = 0; i < scripts.size(); ++i) {
        req.messages.push_back({Role::assistant, scripts[i]});
        if (i < observations.size()) req.messages.push_back({Role::user, "Observations:\n" + observations[i]});
    }
    req.temperature = 0.0;
    req.max_tokens = 1024;
    return req;
}

agent::AgentResult run_codeact(Gateway& gw, const std::string& query, const CodeActConfig& cfg,
                               const tools::ToolRegistry& tools) {
    if (text::trim(query).empty()) throw std::invalid_argument("codeact run: empty query");
    if (cfg.max_rounds == 0 || cfg.step_budget == 0) throw std::invalid_argument("codeact: rounds and budget must be positive");
    agent::AgentResult res;
    res.metadata["agent"] = "v2";
    auto& state = res.trace;
    state.query = query;
    state.context.query = query;

    std::vector<std::string> scripts, observations;
    for (std::size_t round = 0; round < cfg.max_rounds; ++round) {
        std::string reply;
        try {
            reply = gw.complete(build_codeact_prompt(query, scripts, observations));
        } catch (const std::exception&) {
            if (round == 0) throw;
            res.metadata["provider_error"] = "completion failed mid-run";
            break;
        }
        scripts.push_back(reply);
        res.metadata["rounds"] = std::to_string(round + 1);

        ActionScript script;
        try {
            script = parse_script(extract_code(reply));
        } catch (const ScriptError& e) {
            observations.push_back(std::string("ERROR: ") + e.what() + "\n");
            res.round_searches.push_back(0);
            continue;
        }

        ExecEnv env;
        env.step_budget = cfg.step_budget;
        env.tools = &tools;
        env.context = {query, text::join(observations, "\n")};
        auto outcome = execute_script(script, env);

        std::size_t searches = 0;
        for (const auto& entry : env.log) {
            agent::AgentStep step{entry.statement, action_for(entry.tool), entry.input, entry.result};
            if (step.action == agent::Action::search_internet) ++searches;
            state.push(std::move(step));
        }
        res.round_searches.push_back(searches);

        if (outcome.final && !text::trim(outcome.answer).empty()) {
            state.push({"", agent::Action::done, outcome.answer, std::nullopt});
            res.final_answer = outcome.answer;
            res.terminated_by = agent::Termination::final_answer;
            return res;
        }
        auto obs = render_log(env.log, outcome);
        if (outcome.final) obs += "ERROR: final_answer was given an empty value\n";
        observations.push_back(obs);
    }

    try {
        res.fallback_answer = agent::self_consistency_fallback(gw, query, state.context, cfg.consistency);
        res.terminated_by = agent::Termination::fallback;
    } catch (const agent::FallbackExhausted& e) {
        res.terminated_by = agent::Termination::step_budget;
        res.metadata["fallback_error"] = e.what();
    }
    return res;
}

}  // namespace ods::codeact
