#include "ods/toolbox.hpp"

#include "ods/text.hpp"

#include <cctype>
#include <cstdio>

namespace ods::tools {

using boost::multiprecision::cpp_int;

ToolResult ToolResult::ok(std::string text, std::map<std::string, std::string> meta) {
    return {std::move(text), false, std::move(meta)};
}

ToolResult ToolResult::error(const std::string& message, std::map<std::string, std::string> meta) {
    return {"ERROR: " + message, true, std::move(meta)};
}

ToolRegistry::ToolRegistry(std::vector<ToolSpec> specs) {
    for (auto& s : specs) {
        if (!s.invoke) throw std::invalid_argument("tool '" + s.name + "' has no implementation");
        auto name = s.name;
        if (!specs_.emplace(name, std::move(s)).second)
            throw std::invalid_argument("duplicate tool name: " + name);
    }
}

const ToolSpec* ToolRegistry::find(const std::string& name) const {
    auto it = specs_.find(name);
    return it == specs_.end() ? nullptr : &it->second;
}

std::vector<std::string> ToolRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : specs_) out.push_back(k);
    return out;
}

// ---------------------------------------------------------------------------
// Arithmetic

namespace {

constexpr int kMaxDepth = 200;

class ArithmeticParser {
public:
    explicit ArithmeticParser(std::string_view s) : s_(s) {}

    Rational parse() {
        skip_ws();
        if (pos_ == s_.size()) throw CalcError("empty expression");
        auto v = expr(0);
        skip_ws();
        if (pos_ != s_.size()) throw CalcError("unexpected input at offset " + std::to_string(pos_));
        return v;
    }

private:
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    // Returns the operator at the cursor ('+', '-', '*', '/') without consuming it.
    char peek_op(std::size_t* width) {
        skip_ws();
        if (pos_ >= s_.size()) return 0;
        char c = s_[pos_];
        *width = 1;
        if (c == '+' || c == '-' || c == '*' || c == '/') return c;
        auto rest = s_.substr(pos_);
        *width = 2;
        if (rest.starts_with("\xC3\x97")) return '*';  // multiplication sign
        if (rest.starts_with("\xC3\xB7")) return '/';  // division sign
        *width = 3;
        if (rest.starts_with("\xE2\x88\x92")) return '-';  // minus sign
        return 0;
    }

    Rational expr(int depth) {
        auto v = term(depth);
        for (;;) {
            std::size_t w = 0;
            char op = peek_op(&w);
            if (op != '+' && op != '-') return v;
            pos_ += w;
            auto rhs = term(depth);
            v = op == '+' ? Rational(v + rhs) : Rational(v - rhs);
        }
    }

    Rational term(int depth) {
        auto v = unary(depth);
        for (;;) {
            std::size_t w = 0;
            char op = peek_op(&w);
            if (op != '*' && op != '/') return v;
            pos_ += w;
            auto rhs = unary(depth);
            if (op == '*') {
                v *= rhs;
            } else {
                if (rhs == 0) throw std::domain_error("division by zero");
                v /= rhs;
            }
        }
    }

    Rational unary(int depth) {
        if (depth > kMaxDepth) throw CalcError("expression nested too deeply");
        std::size_t w = 0;
        char op = peek_op(&w);
        if (op == '-') {
            pos_ += w;
            return -unary(depth + 1);
        }
        if (op == '+') {
            pos_ += w;
            return unary(depth + 1);
        }
        return primary(depth);
    }

    Rational primary(int depth) {
        skip_ws();
        if (pos_ >= s_.size()) throw CalcError("unexpected end of expression");
        if (s_[pos_] == '(') {
            ++pos_;
            auto v = expr(depth + 1);
            skip_ws();
            if (pos_ >= s_.size() || s_[pos_] != ')') throw CalcError("missing ')'");
            ++pos_;
            return v;
        }
        return number();
    }

    Rational number() {
        std::string digits;
        std::size_t start = pos_;
        auto is_digit = [&](std::size_t i) {
            return i < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i]));
        };
        while (is_digit(pos_)) digits.push_back(s_[pos_++]);
        // Thousands separators: groups of exactly three digits after a 1-3 digit head.
        if (!digits.empty() && digits.size() <= 3 && pos_ < s_.size() && s_[pos_] == ',' && is_digit(pos_ + 1) &&
            is_digit(pos_ + 2) && is_digit(pos_ + 3) && !is_digit(pos_ + 4)) {
            while (pos_ < s_.size() && s_[pos_] == ',' && is_digit(pos_ + 1) && is_digit(pos_ + 2) &&
                   is_digit(pos_ + 3) && !is_digit(pos_ + 4)) {
                digits.append(s_.substr(pos_ + 1, 3));
                pos_ += 4;
            }
        }
        std::string frac;
        if (pos_ < s_.size() && s_[pos_] == '.' && is_digit(pos_ + 1)) {
            ++pos_;
            while (is_digit(pos_)) frac.push_back(s_[pos_++]);
        }
        if (digits.empty() && frac.empty()) throw CalcError("expected a number at offset " + std::to_string(start));
        // cpp_int reads a leading 0 as an octal prefix.
        auto nz = digits.find_first_not_of('0');
        cpp_int num(nz == std::string::npos ? std::string("0") : digits.substr(nz));
        cpp_int den = 1;
        for (char c : frac) {
            num = num * 10 + (c - '0');
            den *= 10;
        }
        return Rational(num, den);
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

// Round-half-to-even of an exact non-negative rational to an integer.
cpp_int round_half_even(const Rational& a) {
    cpp_int num = boost::multiprecision::numerator(a);
    cpp_int den = boost::multiprecision::denominator(a);
    cpp_int q = num / den;
    cpp_int r = num % den;
    if (r * 2 > den || (r * 2 == den && (q % 2) != 0)) ++q;
    return q;
}

cpp_int pow10(int e) {
    cpp_int p = 1;
    for (int i = 0; i < e; ++i) p *= 10;
    return p;
}

}  // namespace

Rational evaluate_arithmetic(std::string_view expr) { return ArithmeticParser(expr).parse(); }

std::string render_number(const Rational& value) {
    if (boost::multiprecision::denominator(value) == 1) return boost::multiprecision::numerator(value).str();
    constexpr int kSig = 6;
    bool neg = value < 0;
    Rational a = neg ? Rational(-value) : value;
    // Decimal exponent e with 10^e <= a < 10^(e+1).
    int e = 0;
    while (a >= Rational(pow10(e + 1))) ++e;
    while (a < Rational(cpp_int(1), pow10(-e))) --e;
    auto scale = [&](int exp) {
        int shift = kSig - 1 - exp;
        return shift >= 0 ? a * Rational(pow10(shift)) : a / Rational(pow10(-shift));
    };
    cpp_int d = round_half_even(scale(e));
    if (d >= pow10(kSig)) {
        ++e;
        d = round_half_even(scale(e));
    }
    std::string digits = d.str();  // exactly kSig digits
    std::string out = neg ? "-" : "";
    if (e < -4 || e >= kSig) {
        std::string mant = digits.substr(0, 1);
        std::string rest = digits.substr(1);
        while (!rest.empty() && rest.back() == '0') rest.pop_back();
        if (!rest.empty()) mant += "." + rest;
        char exp[16];
        std::snprintf(exp, sizeof exp, "e%c%02d", e < 0 ? '-' : '+', e < 0 ? -e : e);
        return out + mant + exp;
    }
    std::string fixed;
    if (e >= 0) {
        fixed = digits.substr(0, static_cast<std::size_t>(e) + 1) + "." + digits.substr(static_cast<std::size_t>(e) + 1);
    } else {
        fixed = "0." + std::string(static_cast<std::size_t>(-e - 1), '0') + digits;
    }
    while (fixed.back() == '0') fixed.pop_back();
    if (fixed.back() == '.') fixed.pop_back();
    return out + fixed;
}

// ---------------------------------------------------------------------------
// Units

namespace {

enum class Dimension { length, mass, temperature };

struct UnitInfo {
    Dimension dim;
    std::string symbol;
    Rational to_base;  // multiplicative factor to the base unit (mm, g); unused for temperature
};

const std::map<std::string, UnitInfo>& unit_table() {
    static const std::map<std::string, UnitInfo> table = [] {
        std::map<std::string, UnitInfo> t;
        auto add = [&](std::initializer_list<const char*> names, Dimension d, const char* sym, Rational f) {
            for (auto* n : names) t.emplace(n, UnitInfo{d, sym, f});
        };
        add({"in", "inch", "inches"}, Dimension::length, "in", Rational(254, 10));
        add({"mm", "millimeter", "millimeters", "millimetre", "millimetres"}, Dimension::length, "mm", Rational(1));
        add({"cm", "centimeter", "centimeters", "centimetre", "centimetres"}, Dimension::length, "cm", Rational(10));
        add({"m", "meter", "meters", "metre", "metres"}, Dimension::length, "m", Rational(1000));
        add({"mi", "mile", "miles"}, Dimension::length, "mi", Rational(1609344));
        add({"km", "kilometer", "kilometers", "kilometre", "kilometres"}, Dimension::length, "km",
            Rational(1000000));
        add({"lb", "lbs", "pound", "pounds"}, Dimension::mass, "lb", Rational(45359237, 100000));
        add({"kg", "kilogram", "kilograms"}, Dimension::mass, "kg", Rational(1000));
        add({"f", "fahrenheit"}, Dimension::temperature, "\xC2\xB0" "F", Rational(0));
        add({"c", "celsius", "centigrade"}, Dimension::temperature, "\xC2\xB0" "C", Rational(0));
        return t;
    }();
    return table;
}

const UnitInfo* lookup_unit(std::string_view raw) {
    std::string u = text::to_lower(text::trim(raw));
    for (std::string_view prefix : {"degrees ", "degree "})
        if (u.starts_with(prefix)) u = text::trim(std::string_view(u).substr(prefix.size()));
    if (u.starts_with("\xC2\xB0")) u = text::trim(std::string_view(u).substr(2));
    if (u.ends_with(".")) u.pop_back();
    auto it = unit_table().find(u);
    return it == unit_table().end() ? nullptr : &it->second;
}

}  // namespace

std::optional<UnitConversion> convert_units(std::string_view input) {
    std::string s = text::collapse_whitespace(input);
    auto lower = text::to_lower(s);
    auto to = lower.rfind(" to ");
    if (to == std::string::npos) return std::nullopt;
    std::string left = s.substr(0, to);
    std::string target = s.substr(to + 4);

    // Split "<number><ws?><unit>" where the number is the longest numeric prefix.
    std::size_t i = 0;
    if (i < left.size() && (left[i] == '-' || left[i] == '+')) ++i;
    while (i < left.size() && (std::isdigit(static_cast<unsigned char>(left[i])) || left[i] == '.' || left[i] == ','))
        ++i;
    if (i == 0) return std::nullopt;
    std::string num_text = text::trim(std::string_view(left).substr(0, i));
    std::string unit_text = text::trim(std::string_view(left).substr(i));
    if (unit_text.empty()) return std::nullopt;

    const UnitInfo* from = lookup_unit(unit_text);
    const UnitInfo* dest = lookup_unit(target);
    if (!from || !dest || from->dim != dest->dim) return std::nullopt;

    Rational value;
    try {
        value = evaluate_arithmetic(num_text);
    } catch (const std::exception&) {
        return std::nullopt;
    }

    Rational out;
    if (from->dim == Dimension::temperature) {
        if (from->symbol == dest->symbol) out = value;
        else if (from->symbol.ends_with("F")) out = (value - 32) * Rational(5, 9);
        else out = value * Rational(9, 5) + 32;
    } else {
        out = value * from->to_base / dest->to_base;
    }
    return UnitConversion{out, dest->symbol};
}

std::string render_conversion(const UnitConversion& c, bool integral_source) {
    std::string value;
    if (integral_source) {
        // Nearest integer, halves away from zero.
        bool neg = c.value < 0;
        Rational a = neg ? Rational(-c.value) : c.value;
        cpp_int num = boost::multiprecision::numerator(a);
        cpp_int den = boost::multiprecision::denominator(a);
        cpp_int q = (num * 2 + den) / (den * 2);
        if (neg && q != 0) q = -q;
        value = q.str();
    } else {
        value = render_number(c.value);
    }
    return value + " " + c.unit;
}

// ---------------------------------------------------------------------------

namespace {

std::string url_encode(std::string_view s) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') out.push_back(static_cast<char>(c));
        else if (c == ' ') out.push_back('+');
        else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xF]);
        }
    }
    return out;
}

bool integral_number_prefix(std::string_view input) {
    auto s = text::trim(input);
    std::size_t i = 0;
    if (i < s.size() && (s[i] == '-' || s[i] == '+')) ++i;
    bool digit = false;
    while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == ',')) {
        digit = true;
        ++i;
    }
    if (i < s.size() && s[i] == '.') {
        ++i;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
            if (s[i] != '0') return false;
            ++i;
        }
    }
    return digit;
}

}  // namespace

ToolResult calculate(const std::string& input, Gateway* gw, const CalculatorConfig& cfg) {
    auto expr = text::trim(input);
    if (expr.empty()) return ToolResult::error("empty expression", {{"route", "local"}});

    try {
        auto v = evaluate_arithmetic(expr);
        return ToolResult::ok(render_number(v), {{"route", "local"}});
    } catch (const std::domain_error&) {
        return ToolResult::error("division by zero", {{"route", "local"}});
    } catch (const CalcError&) {
        // not plain arithmetic
    }

    if (auto conv = convert_units(expr))
        return ToolResult::ok(render_conversion(*conv, integral_number_prefix(expr)), {{"route", "units"}});

    if (!cfg.remote_url.empty() && gw) {
        HttpRequest req;
        req.url = cfg.remote_url + (cfg.remote_url.find('?') == std::string::npos ? "?" : "&") +
                  "i=" + url_encode(expr);
        if (!cfg.remote_key.empty()) req.url += "&appid=" + url_encode(cfg.remote_key);
        req.timeout_s = 10.0;
        try {
            auto resp = gw->http(req);
            if (resp.status != 200)
                return ToolResult::error("remote math API returned HTTP " + std::to_string(resp.status),
                                         {{"route", "remote"}, {"status", std::to_string(resp.status)}});
            return ToolResult::ok(text::trim(resp.body), {{"route", "remote"}});
        } catch (const std::exception& e) {
            return ToolResult::error(std::string("remote math API failed: ") + e.what(), {{"route", "remote"}});
        }
    }
    return ToolResult::error("unsupported expression", {{"route", "none"}});
}

// ---------------------------------------------------------------------------

CompletionRequest continue_think_request(const ToolContext& ctx, const std::string& input) {
    CompletionRequest req;
    req.messages.push_back({Role::system,
                            "You break hard questions into smaller sub-questions. List the sub-questions "
                            "that still need answering and what is already known. Be brief."});
    std::string user = "Question: " + ctx.query + "\n";
    if (!ctx.transcript.empty()) user += "\nProgress so far:\n" + ctx.transcript + "\n";
    if (!text::trim(input).empty()) user += "\nFocus: " + input + "\n";
    user += "\nDecompose what remains.";
    req.messages.push_back({Role::user, user});
    req.temperature = 0.0;
    req.max_tokens = 512;
    return req;
}

ToolRegistry registry_default(Gateway& gw, const RegistryConfig& cfg) {
    std::vector<ToolSpec> specs;
    specs.push_back({"search_internet", "Search the web and return ranked evidence for a query.",
                     [&gw, search_cfg = cfg.search](const std::string& input, const ToolContext&) {
                         if (text::trim(input).empty()) return ToolResult::error("empty search query");
                         try {
                             auto ctx = search::build_context(gw, input, search_cfg);
                             return ToolResult::ok(ctx.rendered, {{"route", "search"}});
                         } catch (const std::exception& e) {
                             return ToolResult::error(e.what(), {{"route", "search"}});
                         }
                     }});
    specs.push_back({"calculate", "Evaluate arithmetic or convert units.",
                     [&gw, calc_cfg = cfg.calculator](const std::string& input, const ToolContext&) {
                         return calculate(input, &gw, calc_cfg);
                     }});
    specs.push_back({"continue_think", "Decompose the problem further with one extra completion.",
                     [&gw](const std::string& input, const ToolContext& ctx) {
                         try {
                             return ToolResult::ok(gw.complete(continue_think_request(ctx, input)),
                                                   {{"route", "llm"}});
                         } catch (const std::exception& e) {
                             return ToolResult::error(e.what(), {{"route", "llm"}});
                         }
                     }});
    return ToolRegistry(std::move(specs));
}

}  // namespace ods::tools
