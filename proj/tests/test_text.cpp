#include "ods/text.hpp"

#include <doctest.h>

#include "support.hpp"

using namespace ods::text;

TEST_SUITE("text") {

TEST_CASE("trim and case helpers") {
    CHECK(trim("  a b \n") == "a b");
    CHECK(trim_right("x  \t") == "x");
    CHECK(to_lower("AbC") == "abc");
    CHECK(iequals("Final_Answer", "final_answer"));
    CHECK(ifind("xx<ACTION>", "<action>") == 2);
    CHECK(ifind("abc", "d") == std::string_view::npos);
    CHECK(collapse_whitespace("  a \n\t b  ") == "a b");
}

TEST_CASE("normalize_answer") {
    CHECK(normalize_answer("paris.") == normalize_answer("Paris"));
    CHECK(normalize_answer("KVOS-TV") == normalize_answer("KVOS-TV"));
    CHECK(normalize_answer("The Amazon") == "amazon");
    CHECK(normalize_answer("an apple") == "apple");
    CHECK(normalize_answer("A  B") == "b");
    CHECK(normalize_answer("Theodore") == "theodore");
    CHECK(normalize_answer("...") == "");
    CHECK(normalize_answer("2,845 mm") == "2 845 mm");
}

TEST_CASE("utf8 boundaries and truncation") {
    std::string s = "a\xC3\xA9\xE2\x82\xAC";  // a, e-acute, euro sign
    auto b = utf8_boundaries(s);
    REQUIRE(b.size() == 4);
    CHECK(b[0] == 0);
    CHECK(b[1] == 1);
    CHECK(b[2] == 3);
    CHECK(b[3] == 6);
    CHECK(utf8_truncate(s, 2) == "a");
    CHECK(utf8_truncate(s, 3) == "a\xC3\xA9");
    CHECK(utf8_truncate(s, 100) == s);
}

TEST_CASE("word tokens and join") {
    auto t = word_tokens("Hello, World! 42x");
    REQUIRE(t.size() == 3);
    CHECK(t[0] == "hello");
    CHECK(t[2] == "42x");
    CHECK(join({"a", "b"}, ", ") == "a, b");
    CHECK(split_lines("a\r\nb\n").size() >= 2);
}

}
