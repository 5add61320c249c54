#pragma once
// Reference implementations used to check the library. None of these call
// into the code they check.

#include "ods/agent.hpp"
#include "ods/text.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Rational = boost::multiprecision::cpp_rational;
using boost::multiprecision::cpp_int;

struct GeneratedExpr {
    std::string text;
    std::optional<Rational> value;  // nullopt when a division by zero occurs
};

namespace detail {

inline std::string spaced(std::mt19937_64& rng, const std::string& op) {
    switch (rng() % 3) {
        case 0: return op;
        case 1: return " " + op + " ";
        default: return " " + op;
    }
}

inline GeneratedExpr literal(std::mt19937_64& rng) {
    GeneratedExpr g;
    cpp_int whole = rng() % 100000;
    if (rng() % 4 == 0) {
        // decimal with 1-3 fractional digits
        int digits = 1 + static_cast<int>(rng() % 3);
        cpp_int frac = rng() % static_cast<std::uint64_t>(std::pow(10, digits));
        std::string f = frac.str();
        f = std::string(static_cast<std::size_t>(digits) - f.size(), '0') + f;
        g.text = whole.str() + "." + f;
        cpp_int den = 1;
        for (int i = 0; i < digits; ++i) den *= 10;
        g.value = Rational(whole * den + frac, den);
    } else if (whole >= 1000 && rng() % 3 == 0) {
        // thousands separators
        std::string s = whole.str(), out;
        int n = 0;
        for (auto it = s.rbegin(); it != s.rend(); ++it) {
            if (n && n % 3 == 0) out.push_back(',');
            out.push_back(*it);
            ++n;
        }
        std::reverse(out.begin(), out.end());
        g.text = out;
        g.value = Rational(whole);
    } else {
        g.text = whole.str();
        g.value = Rational(whole);
    }
    return g;
}

}  // namespace detail

/// Random arithmetic expression together with its value, computed on the
/// generated tree rather than by parsing the text.
inline GeneratedExpr random_expression(std::mt19937_64& rng, int depth = 0) {
    if (depth >= 4 || rng() % 3 == 0) return detail::literal(rng);
    auto kind = rng() % 6;
    if (kind == 0) {
        auto inner = random_expression(rng, depth + 1);
        return {"(" + inner.text + ")", inner.value};
    }
    if (kind == 1) {
        auto inner = random_expression(rng, depth + 1);
        std::optional<Rational> v;
        if (inner.value) v = Rational(-*inner.value);
        return {"-(" + inner.text + ")", v};
    }
    auto a = random_expression(rng, depth + 1);
    auto b = random_expression(rng, depth + 1);
    static const char* ops[] = {"+", "-", "*", "/"};
    std::string op = ops[rng() % 4];
    GeneratedExpr g;
    // Always parenthesize operands so the tree shape is the text's shape.
    g.text = "(" + a.text + ")" + detail::spaced(rng, op) + "(" + b.text + ")";
    if (!a.value || !b.value) return g;
    if (op == "+") g.value = Rational(*a.value + *b.value);
    else if (op == "-") g.value = Rational(*a.value - *b.value);
    else if (op == "*") g.value = Rational(*a.value * *b.value);
    else if (*b.value != 0) g.value = Rational(*a.value / *b.value);
    return g;
}

/// Relative error between a printed number and an exact value.
inline bool close_to(const std::string& printed, const Rational& exact, double rel) {
    double p = std::stod(printed);
    double e = static_cast<double>(exact);
    if (e == 0) return std::abs(p) < 1e-12;
    return std::abs(p - e) <= rel * std::abs(e);
}

// ---------------------------------------------------------------------------

/// Members of the winning cluster by pairwise comparison: the largest
/// partition class, ties broken by the class holding the lowest index.
inline std::vector<std::size_t> winning_cluster(const std::vector<std::string>& answers) {
    const std::size_t n = answers.size();
    std::vector<std::string> keys(n);
    for (std::size_t i = 0; i < n; ++i) keys[i] = ods::text::normalize_answer(answers[i]);
    std::size_t best_count = 0, best_first = n;
    for (std::size_t i = 0; i < n; ++i) {
        if (keys[i].empty()) continue;
        std::size_t count = 0;
        for (std::size_t j = 0; j < n; ++j) count += keys[j] == keys[i];
        if (count > best_count) {
            best_count = count;
            best_first = i;
        }
    }
    std::vector<std::size_t> members;
    if (best_first == n) return members;
    for (std::size_t j = 0; j < n; ++j)
        if (keys[j] == keys[best_first]) members.push_back(j);
    return members;
}

/// Full sort of the pool by cosine rounded to 1e-12 (descending, index
/// ascending), first j.
inline std::vector<std::size_t> exhaustive_top(const std::vector<double>& q,
                                               const std::vector<std::vector<double>>& rows, std::size_t j) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        long double dot = 0, na = 0, nb = 0;
        for (std::size_t d = 0; d < q.size(); ++d) {
            dot += static_cast<long double>(q[d]) * rows[i][d];
            na += static_cast<long double>(q[d]) * q[d];
            nb += static_cast<long double>(rows[i][d]) * rows[i][d];
        }
        long double c = (na == 0 || nb == 0) ? 0.0L : dot / std::sqrt(na * nb);
        double s = static_cast<double>(std::round(c * 1e12L) / 1e12L);
        scored.push_back({s, i});
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(j, scored.size()); ++i) out.push_back(scored[i].second);
    return out;
}

// ---------------------------------------------------------------------------

/// Random well-formed step: free text without tag characters.
inline ods::agent::AgentStep random_step(std::mt19937_64& rng) {
    static const char* words[] = {"paris", "1946", "what", "is", "the", "capital", "2,845", "mm", "(a)", "'x'",
                                  "\"q\"", "café", "-", "+", "÷", "?"};
    auto phrase = [&](std::size_t min_words) {
        std::size_t n = min_words + rng() % 6;
        std::string s;
        for (std::size_t i = 0; i < n; ++i) {
            if (i) s += (rng() % 5 == 0) ? "\n" : " ";
            s += words[rng() % (sizeof words / sizeof *words)];
        }
        return s;
    };
    using ods::agent::Action;
    static const Action actions[] = {Action::search_internet, Action::calculate, Action::continue_think,
                                     Action::done};
    ods::agent::AgentStep s;
    s.thought = phrase(1);
    s.action = actions[rng() % 4];
    s.action_input = phrase(1);
    if (s.action != Action::done && rng() % 2) s.observation = phrase(0);
    return s;
}

}  // namespace oracle
