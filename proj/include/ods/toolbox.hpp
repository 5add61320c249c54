#pragma once

// Tools behind the agents' action names.

#include "ods/gateway.hpp"
#include "ods/search.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ods::tools {

using Rational = boost::multiprecision::cpp_rational;

struct ToolResult {
    std::string text;
    bool is_error = false;
    std::map<std::string, std::string> metadata;

    static ToolResult ok(std::string text, std::map<std::string, std::string> meta = {});
    /// `message` is prefixed with "ERROR: ".
    static ToolResult error(const std::string& message, std::map<std::string, std::string> meta = {});
};

/// What a tool may see of the calling agent.
struct ToolContext {
    std::string query;
    std::string transcript;
};

struct ToolSpec {
    std::string name;
    std::string description;
    std::function<ToolResult(const std::string& input, const ToolContext& ctx)> invoke;
};

/// Immutable name -> tool map.
class ToolRegistry {
public:
    explicit ToolRegistry(std::vector<ToolSpec> specs);
    const ToolSpec* find(const std::string& name) const;
    std::vector<std::string> names() const;
    std::size_t size() const { return specs_.size(); }

private:
    std::map<std::string, ToolSpec> specs_;
};

// ---------------------------------------------------------------------------
// Calculator

class CalcError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exact evaluation of `+ - * /` (also `×`, `÷`) over integers and decimals
/// with parentheses and unary minus. Integers may use thousands separators
/// ("1,127"). Throws CalcError when the input is outside the grammar and
/// std::domain_error on division by zero.
Rational evaluate_arithmetic(std::string_view expr);

/// Integers render without a decimal point; anything else with 6
/// significant digits.
std::string render_number(const Rational& value);

struct UnitConversion {
    Rational value;
    std::string unit;  // canonical symbol, e.g. "mm"
};

/// `<number> <unit> to <unit>` over the supported unit table. Returns
/// nullopt when the input does not match the pattern or units are unknown or
/// of different dimensions.
std::optional<UnitConversion> convert_units(std::string_view input);

/// Render a conversion result. Integral sources round the target to the
/// nearest integer.
std::string render_conversion(const UnitConversion& c, bool integral_source);

struct CalculatorConfig {
    // Remote math API; empty disables it.
    std::string remote_url;
    std::string remote_key;
};

ToolResult calculate(const std::string& input, Gateway* gw = nullptr, const CalculatorConfig& cfg = {});

// ---------------------------------------------------------------------------

struct RegistryConfig {
    search::SearchConfig search;
    CalculatorConfig calculator;
};

/// Text of the single-completion decomposition prompt used by continue_think.
CompletionRequest continue_think_request(const ToolContext& ctx, const std::string& input);

/// {search_internet, calculate, continue_think}.
ToolRegistry registry_default(Gateway& gw, const RegistryConfig& cfg);

}  // namespace ods::tools
