#include "ods/search.hpp"

#include <doctest.h>

#include "support.hpp"

#include <random>
#include <set>

using namespace ods;
using namespace ods::search;
using nlohmann::json;

namespace {

class FixedReranker : public Reranker {
public:
    explicit FixedReranker(std::vector<std::vector<double>> s) : scores_(std::move(s)) {}
    std::vector<double> score(const std::string&, const std::vector<std::string>& texts) override {
        auto out = scores_.at(next_++);
        REQUIRE(out.size() == texts.size());
        return out;
    }

private:
    std::vector<std::vector<double>> scores_;
    std::size_t next_ = 0;
};

SerpResult serp(std::string url, std::size_t rank) {
    SerpResult r;
    r.url = std::move(url);
    r.rank = rank;
    r.title = "t";
    return r;
}

}  // namespace

TEST_SUITE("search") {

TEST_CASE("config validation") {
    SearchConfig c;
    CHECK_NOTHROW(c.validate());
    c.m = c.top_n_snippets + 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.chunk_overlap = c.chunk_size;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.relevance_threshold = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.reranker = "bm25";
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("parse_rephrasings") {
    auto a = parse_rephrasings(R"(["one", "  two ", ""])");
    REQUIRE(a.size() == 2);
    CHECK(a[1] == "two");
    auto b = parse_rephrasings("1. first query\n2) second\n- third\n\"fourth\"\n");
    REQUIRE(b.size() == 4);
    CHECK(b[0] == "first query");
    CHECK(b[1] == "second");
    CHECK(b[2] == "third");
    CHECK(b[3] == "fourth");
    CHECK_THROWS_AS(parse_rephrasings("  "), RephraseParseError);
    CHECK_THROWS_AS(parse_rephrasings("[1, 2]"), RephraseParseError);
    CHECK_THROWS_AS(parse_rephrasings("{\"a\":1}"), RephraseParseError);
}

TEST_CASE("rephrase_query keeps the original first and dedups") {
    json script = {{"completions",
                    {{{"when", {"rephrased search queries"}},
                      {"replies", {R"(["Capital of France", "french capital city", "paris capital"])"}}}}}};
    auto m = testing::mock_gateway(script);
    auto q = rephrase_query(*m.gw, "capital of france", 2);
    REQUIRE(q.size() == 3);
    CHECK(q[0] == "capital of france");
    CHECK(q[1] == "french capital city");
    CHECK(q[2] == "paris capital");
    CHECK(rephrase_query(*m.gw, "x", 0).size() == 1);
}

TEST_CASE("parse_serp skips relative links and numbers ranks") {
    auto body = R"({"organic":[{"title":"a","link":"/rel"},{"title":"b","link":"https://b.example","snippet":"s",
                 "date":"2020"},{"title":"c","link":"https://c.example"}]})";
    auto r = parse_serp(body, "q", 5);
    REQUIRE(r.size() == 2);
    CHECK(r[0].url == "https://b.example");
    CHECK(r[0].rank == 1);
    CHECK(r[0].date == std::optional<std::string>("2020"));
    CHECK(r[1].rank == 2);
    CHECK(parse_serp(body, "q", 1).size() == 1);
    CHECK(parse_serp("{}", "q", 3).empty());
    CHECK_THROWS_AS(parse_serp("nope", "q", 3), ProviderError);
}

TEST_CASE("merge_snippets keeps each url once at its minimum rank") {
    std::vector<std::vector<SerpResult>> lists = {
        {serp("https://a", 1), serp("https://b", 2), serp("https://c", 3)},
        {serp("https://c", 1), serp("https://d", 2)},
    };
    auto m = merge_snippets(lists);
    REQUIRE(m.size() == 4);
    std::set<std::string> urls;
    for (const auto& r : m) urls.insert(r.url);
    CHECK(urls.size() == 4);
    for (const auto& r : m)
        if (r.url == "https://c") CHECK(r.rank == 1);
    for (std::size_t i = 1; i < m.size(); ++i) CHECK(m[i - 1].rank <= m[i].rank);
    CHECK(m[0].url == "https://a");
    CHECK(m[1].url == "https://c");
}

TEST_CASE("html_to_text") {
    CHECK(html_to_text("<p>Hello&nbsp;<b>world</b></p><script>var x=1;</script>") == "Hello world");
    CHECK(html_to_text("<style>p{}</style><!-- c -->a &amp; b") == "a & b");
    CHECK(html_to_text("1 < 2") == "1 < 2");
    CHECK(html_to_text("").empty());
}

TEST_CASE("route_for") {
    SearchConfig c;
    CHECK(route_for("https://en.wikipedia.org/wiki/Paris", c) == ScrapeRoute::encyclopedia);
    CHECK(route_for("https://arxiv.org/abs/1234.5678", c) == ScrapeRoute::preprint);
    CHECK(route_for("https://pubmed.ncbi.nlm.nih.gov/123/", c) == ScrapeRoute::biomedical);
    CHECK(route_for("https://notwikipedia.org/x", c) == ScrapeRoute::html);
    CHECK(route_for("https://example.com", c) == ScrapeRoute::html);
}

TEST_CASE("chunking reconstructs the document and spans point at the chunk text") {
    std::mt19937_64 rng(3);
    const char* alphabet[] = {"a", "b", " ", "\xC3\xA9", "\xE2\x82\xAC", "\n"};
    for (int iter = 0; iter < 200; ++iter) {
        std::string doc;
        std::size_t len = rng() % 300;
        for (std::size_t i = 0; i < len; ++i) doc += alphabet[rng() % 6];
        std::size_t size = 1 + rng() % 40;
        std::size_t overlap = rng() % size;
        auto chunks = chunk_document(doc, size, overlap);
        if (doc.empty()) {
            CHECK(chunks.empty());
            continue;
        }
        std::string rebuilt;
        std::size_t covered = 0;
        for (const auto& c : chunks) {
            CHECK(doc.substr(c.span.start, c.span.end - c.span.start) == c.text);
            CHECK(c.span.start <= covered);
            if (c.span.end > covered) {
                rebuilt += doc.substr(covered, c.span.end - covered);
                covered = c.span.end;
            }
        }
        CHECK(rebuilt == doc);
        CHECK(chunks.back().span.end == doc.size());
    }
    CHECK_THROWS_AS(chunk_document("abc", 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(chunk_document("abc", 2, 2), std::invalid_argument);
}

TEST_CASE("rerank_chunks thresholds and caps per page") {
    SearchConfig cfg;
    cfg.relevance_threshold = 0.5;
    cfg.n = 2;
    std::vector<PageChunks> pages = {
        {"https://p1", {{"a", {0, 1}}, {"b", {1, 2}}, {"c", {2, 3}}, {"d", {3, 4}}}},
        {"https://p2", {{"e", {0, 1}}, {"f", {1, 2}}}},
    };
    FixedReranker rr({{0.9, 0.6, 0.7, 0.4}, {0.49, 0.95}});
    auto out = rerank_chunks("q", pages, cfg, rr);
    REQUIRE(out.size() == 3);
    CHECK(out[0].text == "f");
    CHECK(out[1].text == "a");
    CHECK(out[2].text == "c");
    for (const auto& p : out) CHECK(p.score >= cfg.relevance_threshold);
}

TEST_CASE("lexical reranker scores lie in [0,1]") {
    LexicalReranker lr;
    auto s = lr.score("capital of france", {"Paris is the capital of France", "nothing here", ""});
    REQUIRE(s.size() == 3);
    CHECK(s[0] == doctest::Approx(1.0));
    CHECK(s[1] == doctest::Approx(0.0));
    for (double x : s) CHECK((x >= 0.0 && x <= 1.0));
}

TEST_CASE("format_context lists snippets, passages and the reliability note") {
    SearchContext ctx;
    ctx.query = "q";
    ctx.snippets = {serp("https://a", 1)};
    ctx.passages = {{"passage text", "https://a", 0.75, {0, 12}}};
    auto s = format_context(ctx, {});
    CHECK(s.find("Search query: q") == 0);
    CHECK(s.find("url: https://a") != std::string::npos);
    CHECK(s.find("date: unknown") != std::string::npos);
    CHECK(s.find("score: 0.750") != std::string::npos);
    CHECK(s.find("passage text") != std::string::npos);
    CHECK(s.find("reliable sources") != std::string::npos);
}

TEST_CASE("build_context end to end with scripted providers") {
    json organic = json::array({{{"title", "Paris"}, {"link", "https://a.example/paris"}, {"snippet", "capital"}},
                                {{"title", "Broken"}, {"link", "https://b.example/gone"}, {"snippet", "x"}}});
    json script = {{"completions",
                    {{{"when", {"rephrased search queries"}}, {"replies", {R"(["france capital city"])"}}}}},
                   {"serp", {{"*", organic}}},
                   {"pages", {{"https://a.example/paris", "<p>Paris is the capital of France.</p>"}}}};
    auto m = testing::mock_gateway(script);
    SearchConfig cfg;
    cfg.k = 1;
    cfg.m = 2;
    cfg.reranker = "lexical";
    cfg.relevance_threshold = 0.3;
    auto ctx = build_context(*m.gw, "capital of france", cfg);
    CHECK(ctx.rephrasings.size() == 1);
    CHECK(ctx.snippets.size() == 2);
    REQUIRE(ctx.passages.size() == 1);
    CHECK(ctx.passages[0].source_url == "https://a.example/paris");
    bool noted = false;
    for (const auto& n : ctx.notes) noted |= n.find("b.example/gone") != std::string::npos;
    CHECK(noted);
    CHECK(ctx.rendered == format_context(ctx, cfg));
}

TEST_CASE("build_context survives a failed rephraser") {
    json script = {{"completions", {{{"when", {"rephrased"}}, {"replies", {"[]"}}}}},
                   {"serp", {{"*", json::array()}}}};
    auto m = testing::mock_gateway(script);
    SearchConfig cfg;
    cfg.reranker = "lexical";
    auto ctx = build_context(*m.gw, "anything", cfg);
    CHECK(ctx.rephrasings.empty());
    CHECK(ctx.snippets.empty());
    CHECK_FALSE(ctx.notes.empty());
}

}
