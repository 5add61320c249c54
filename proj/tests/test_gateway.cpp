#include "ods/gateway.hpp"

#include <doctest.h>

#include "support.hpp"

#include <thread>

using namespace ods;
using nlohmann::json;

namespace {

CompletionRequest simple_request(const std::string& user, std::optional<std::uint64_t> seed = std::nullopt) {
    CompletionRequest req;
    req.messages = {{Role::system, "sys"}, {Role::user, user}};
    req.temperature = 0.0;
    req.seed = seed;
    return req;
}

json echo_script() {
    return json{{"completions",
                 {{{"when", {"alpha"}}, {"replies", {"first", "second"}}},
                  {{"when", {"beta"}}, {"unless", {"gamma"}}, {"replies", {"B"}}}}},
                {"serp", {{"*", json::array({{{"title", "t"}, {"link", "https://a.example/x"}, {"snippet", "s"}}})}}},
                {"pages", {{"https://a.example/x", "<p>hello</p>"}}},
                {"math", {{"2+2", "4"}}}};
}

}  // namespace

TEST_SUITE("gateway") {

TEST_CASE("sha256 and base64 known vectors") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(base64_encode("Man") == "TWFu");
    CHECK(base64_encode("Ma") == "TWE=");
    CHECK(base64_decode("TWE=") == "Ma");
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        std::string s;
        auto n = rng() % 40;
        for (std::size_t k = 0; k < n; ++k) s.push_back(static_cast<char>(rng() & 0xFF));
        CHECK(base64_decode(base64_encode(s)) == s);
    }
}

TEST_CASE("canonical completion is whitespace and line-ending insensitive") {
    auto a = simple_request("line one  \r\nline two");
    auto b = simple_request("line one\nline two");
    CHECK(canonical_completion(a, "m") == canonical_completion(b, "m"));
    CHECK(canonical_completion(a, "m") != canonical_completion(a, "other"));
    CHECK(canonical_completion(simple_request("x", 1), "m") != canonical_completion(simple_request("x", 2), "m"));
    auto t = simple_request("x");
    t.temperature = 0.7;
    CHECK(canonical_completion(t, "m").find("0.700000") != std::string::npos);
}

TEST_CASE("canonical http redacts secret query parameters") {
    HttpRequest a{"GET", "https://m.example/r?i=2%2B2&appid=SECRET", {}, "", 10};
    HttpRequest b{"GET", "https://m.example/r?i=2%2B2", {}, "", 10};
    CHECK(canonical_http(a) == canonical_http(b));
    CHECK(canonical_http(a).find("SECRET") == std::string::npos);
    HttpRequest c{"POST", "https://s.example", {{"X-API-KEY", "k1"}}, R"({"q": "x", "num": 3})", 10};
    HttpRequest d{"POST", "https://s.example", {{"X-API-KEY", "k2"}}, R"({"num":3,"q":"x"})", 10};
    CHECK(canonical_http(c) == canonical_http(d));
}

TEST_CASE("request validation") {
    CompletionRequest r;
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    r.messages = {{Role::assistant, "x"}};
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    r.messages = {{Role::user, "x"}};
    r.temperature = -1;
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
}

TEST_CASE("mock provider rules") {
    auto m = testing::mock_gateway(echo_script());
    CHECK(m.gw->complete(simple_request("alpha")) == "first");
    CHECK(m.gw->complete(simple_request("alpha")) == "second");
    CHECK(m.gw->complete(simple_request("alpha")) == "second");
    CHECK(m.gw->complete(simple_request("beta")) == "B");
    CHECK_THROWS_AS(m.gw->complete(simple_request("beta gamma")), ProviderError);
    auto v = m.gw->embed({"hello world", "hello"});
    REQUIRE(v.size() == 2);
    CHECK(v[0].values.size() == 64);
    CHECK_THROWS_AS(m.gw->embed({}), std::invalid_argument);
    CHECK_THROWS_AS(m.gw->embed({"  "}), std::invalid_argument);
}

TEST_CASE("mock web") {
    auto m = testing::mock_gateway(echo_script());
    auto serp = m.gw->http({"POST", "https://serp", {}, R"({"q":"anything"})", 5});
    CHECK(serp.status == 200);
    CHECK(json::parse(serp.body)["organic"].size() == 1);
    CHECK(m.gw->http({"GET", "https://a.example/x", {}, "", 5}).body == "<p>hello</p>");
    CHECK(m.gw->http({"GET", "https://a.example/missing", {}, "", 5}).status == 404);
    CHECK(m.gw->http({"GET", "https://m.example/r?i=2%2B2", {}, "", 5}).body == "4");
    CHECK(m.gw->http({"GET", "https://m.example/r?i=nope", {}, "", 5}).status == 501);
}

TEST_CASE("record then replay reproduces responses without providers") {
    auto dir = testing::scratch("gateway_record");
    auto path = dir / "c.cassette";
    {
        auto m = testing::mock_gateway(echo_script());
        std::shared_ptr<Cassette> cas = Cassette::from_entries({});
        cas->open_for_record(path);
        Gateway gw({m.llm, m.llm, m.web, nullptr}, cas, CassetteMode::record, "model-x", "embed-x");
        gw.set_retry({1, 0.0});
        CHECK(gw.complete(simple_request("alpha")) == "first");
        CHECK(gw.complete(simple_request("alpha")) == "second");
        CHECK_THROWS_AS(gw.complete(simple_request("nothing matches")), ProviderError);
        gw.embed({"hello"});
        gw.http({"GET", "https://a.example/x", {}, "", 5});
        CHECK(gw.live_calls() == 5);
    }
    auto cas = Cassette::load(path);
    CHECK(cas->size() == 5);
    Gateway gw({}, std::shared_ptr<Cassette>(std::move(cas)), CassetteMode::replay, "model-x", "embed-x");
    // Same digest twice: recorded order.
    CHECK(gw.complete(simple_request("alpha")) == "first");
    CHECK(gw.complete(simple_request("alpha")) == "second");
    CHECK_THROWS_AS(gw.complete(simple_request("alpha")), CassetteMiss);
    // Recorded provider errors replay as errors.
    CHECK_THROWS_AS(gw.complete(simple_request("nothing matches")), ProviderError);
    CHECK(gw.embed({"hello"}).front().values.size() == 64);
    CHECK(gw.http({"GET", "https://a.example/x", {}, "", 5}).body == "<p>hello</p>");
    CHECK_THROWS_AS(gw.complete(simple_request("never recorded")), CassetteMiss);
    CHECK(gw.live_calls() == 0);
}

TEST_CASE("replay with a different model misses") {
    auto dir = testing::scratch("gateway_model");
    auto path = dir / "c.cassette";
    {
        auto m = testing::mock_gateway(echo_script());
        std::shared_ptr<Cassette> cas = Cassette::from_entries({});
        cas->open_for_record(path);
        Gateway gw({m.llm, m.llm, m.web, nullptr}, cas, CassetteMode::record, "model-a");
        gw.complete(simple_request("alpha"));
    }
    Gateway gw({}, std::shared_ptr<Cassette>(Cassette::load(path)), CassetteMode::replay, "model-b");
    CHECK_THROWS_AS(gw.complete(simple_request("alpha")), CassetteMiss);
}

TEST_CASE("cassette line format") {
    CassetteEntry e{CassetteKind::completion, std::string(64, 'a'), "body\twith\ttabs\nand newline"};
    auto line = Cassette::serialize_line(e);
    CHECK(line.find('\n') == line.size() - 1);
    auto first_tab = line.find('\t');
    CHECK(line.substr(0, first_tab) == "completion");
    auto dir = testing::scratch("gateway_lines");
    {
        std::ofstream out(dir / "x.cassette");
        out << line;
        out << "bogus line\n";
    }
    CHECK_THROWS(Cassette::load(dir / "x.cassette"));
    {
        std::ofstream out(dir / "y.cassette");
        out << line;
    }
    auto c = Cassette::load(dir / "y.cassette");
    CHECK(c->take(CassetteKind::completion, std::string(64, 'a')) == e.body);
}

TEST_CASE("concurrent replay of distinct digests") {
    auto dir = testing::scratch("gateway_concurrent");
    auto path = dir / "c.cassette";
    json script = {{"completions", {{{"when", json::array()}, {"replies", {"ok"}}}}}};
    {
        auto m = testing::mock_gateway(script);
        std::shared_ptr<Cassette> cas = Cassette::from_entries({});
        cas->open_for_record(path);
        Gateway gw({m.llm, m.llm, m.web, nullptr}, cas, CassetteMode::record, "m");
        for (int i = 0; i < 64; ++i) gw.complete(simple_request("q" + std::to_string(i)));
    }
    Gateway gw({}, std::shared_ptr<Cassette>(Cassette::load(path)), CassetteMode::replay, "m");
    std::vector<std::thread> ts;
    std::atomic<int> ok{0};
    for (int t = 0; t < 8; ++t)
        ts.emplace_back([&, t] {
            for (int i = t; i < 64; i += 8)
                if (gw.complete(simple_request("q" + std::to_string(i))) == "ok") ++ok;
        });
    for (auto& t : ts) t.join();
    CHECK(ok == 64);
}

}
