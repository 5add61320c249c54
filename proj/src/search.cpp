#include "ods/search.hpp"

#include "ods/kernels.hpp"
#include "ods/text.hpp"
#include "ods/worker_pool.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <set>
#include <unordered_map>

#include <json.hpp>

namespace ods::search {

using nlohmann::json;

void SearchConfig::validate() const {
    if (top_n_snippets == 0) throw std::invalid_argument("top_n_snippets must be positive");
    if (m == 0) throw std::invalid_argument("m must be positive");
    if (n == 0) throw std::invalid_argument("n must be positive");
    if (m > top_n_snippets) throw std::invalid_argument("m must not exceed top_n_snippets");
    if (!(relevance_threshold >= 0.0 && relevance_threshold <= 1.0))
        throw std::invalid_argument("relevance_threshold must lie in [0,1]");
    if (chunk_size == 0) throw std::invalid_argument("chunk_size must be positive");
    if (chunk_overlap >= chunk_size) throw std::invalid_argument("chunk_overlap must be < chunk_size");
    if (reranker != "embedding" && reranker != "lexical")
        throw std::invalid_argument("unknown reranker: " + reranker);
}

// ---------------------------------------------------------------------------
// Rephrasing

namespace {

std::string strip_list_marker(std::string line) {
    line = text::trim(line);
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')' || line[i] == ':')) {
        line = text::trim(std::string_view(line).substr(i + 1));
    } else if (!line.empty() && (line[0] == '-' || line[0] == '*')) {
        line = text::trim(std::string_view(line).substr(1));
    } else if (line.starts_with("\xE2\x80\xA2")) {  // bullet
        line = text::trim(std::string_view(line).substr(3));
    }
    if (line.size() >= 2 && (line.front() == '"' || line.front() == '\'') && line.back() == line.front())
        line = text::trim(std::string_view(line).substr(1, line.size() - 2));
    return line;
}

}  // namespace

std::vector<std::string> parse_rephrasings(const std::string& llm_output) {
    auto trimmed = text::trim(llm_output);
    if (trimmed.empty()) throw RephraseParseError("rephraser returned no text");
    std::vector<std::string> out;
    if (trimmed.front() == '[' || trimmed.front() == '{') {
        auto j = json::parse(trimmed, nullptr, false);
        if (j.is_discarded() || !j.is_array())
            throw RephraseParseError("rephraser returned structured output that is not a list");
        for (const auto& item : j) {
            if (!item.is_string()) throw RephraseParseError("rephraser list holds a non-string item");
            auto s = text::trim(item.get<std::string>());
            if (!s.empty()) out.push_back(std::move(s));
        }
    } else {
        for (const auto& line : text::split_lines(trimmed)) {
            auto s = strip_list_marker(line);
            if (!s.empty()) out.push_back(std::move(s));
        }
    }
    if (out.empty()) throw RephraseParseError("rephraser returned an empty list");
    return out;
}

std::vector<std::string> rephrase_query(Gateway& gw, const std::string& query, std::size_t k) {
    if (text::trim(query).empty()) throw std::invalid_argument("rephrase_query: empty query");
    std::vector<std::string> out{query};
    if (k == 0) return out;

    CompletionRequest req;
    req.messages.push_back({Role::system,
                            "You rewrite web search queries. Produce alternative queries that keep the "
                            "user's intent but surface the implicit context a search engine needs. "
                            "Reply with one query per line and nothing else."});
    req.messages.push_back(
        {Role::user, "Write " + std::to_string(k) + " rephrased search queries for:\n" + query});
    req.temperature = 0.0;
    req.max_tokens = 256;

    auto candidates = parse_rephrasings(gw.complete(req));
    std::set<std::string> seen{text::to_lower(text::trim(query))};
    for (auto& c : candidates) {
        if (out.size() == k + 1) break;
        if (seen.insert(text::to_lower(c)).second) out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// SERP

namespace {
bool is_absolute_url(std::string_view url) {
    return (url.starts_with("http://") && url.size() > 7) || (url.starts_with("https://") && url.size() > 8);
}

std::string json_string_or_empty(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) return {};
    return it->get<std::string>();
}
}  // namespace

std::vector<SerpResult> parse_serp(const std::string& body, const std::string& query, std::size_t num) {
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ProviderError("SERP response is not a JSON object");
    std::vector<SerpResult> out;
    auto it = j.find("organic");
    if (it == j.end() || !it->is_array()) return out;
    for (const auto& item : *it) {
        if (out.size() >= num) break;
        if (!item.is_object()) continue;
        auto link = json_string_or_empty(item, "link");
        if (!is_absolute_url(link)) continue;
        SerpResult r;
        r.title = json_string_or_empty(item, "title");
        r.url = std::move(link);
        r.description = json_string_or_empty(item, "snippet");
        if (auto d = item.find("date"); d != item.end() && d->is_string()) r.date = d->get<std::string>();
        r.rank = out.size() + 1;
        r.source_query = query;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<SerpResult> serp_fetch(Gateway& gw, const SearchConfig& cfg, const std::string& query,
                                   std::size_t num) {
    if (text::trim(query).empty()) throw std::invalid_argument("serp_fetch: empty query");
    if (num == 0) throw std::invalid_argument("serp_fetch: num must be positive");
    HttpRequest req;
    req.method = "POST";
    req.url = cfg.serp_url;
    req.headers["Content-Type"] = "application/json";
    if (!cfg.serp_api_key.empty()) req.headers["X-API-KEY"] = cfg.serp_api_key;
    req.body = json{{"q", query}, {"num", num}}.dump();
    req.timeout_s = cfg.page_timeout_s;
    HttpResponse resp;
    try {
        resp = gw.http(req);
    } catch (const TransportError& e) {
        throw ProviderError(std::string("SERP request failed: ") + e.what());
    }
    if (resp.status < 200 || resp.status >= 300)
        throw ProviderError("SERP HTTP " + std::to_string(resp.status));
    return parse_serp(resp.body, query, num);
}

// ---------------------------------------------------------------------------
// Formatting

namespace {
constexpr const char* kReliabilityInstruction =
    "If the sources above disagree, give priority to reliable sources such as government "
    "agencies, educational institutions and established research institutions over other "
    "sources.";

std::string score3(double s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", s);
    return buf;
}
}  // namespace

std::string format_context(const SearchContext& ctx, const SearchConfig&) {
    std::string out;
    out += "Search query: " + ctx.query + "\n\n";
    if (!ctx.snippets.empty()) {
        out += "Search results:\n";
        for (std::size_t i = 0; i < ctx.snippets.size(); ++i) {
            const auto& s = ctx.snippets[i];
            out += "[" + std::to_string(i + 1) + "]\n";
            out += "title: " + s.title + "\n";
            out += "url: " + s.url + "\n";
            out += "description: " + s.description + "\n";
            out += "date: " + s.date.value_or("unknown") + "\n\n";
        }
    }
    if (!ctx.passages.empty()) {
        out += "Relevant passages:\n";
        for (std::size_t i = 0; i < ctx.passages.size(); ++i) {
            const auto& p = ctx.passages[i];
            out += "[P" + std::to_string(i + 1) + "] source: " + p.source_url + " score: " + score3(p.score) + "\n";
            out += p.text + "\n\n";
        }
    }
    out += kReliabilityInstruction;
    out += "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Scraping

const char* to_string(ScrapeRoute r) {
    switch (r) {
        case ScrapeRoute::encyclopedia: return "encyclopedia";
        case ScrapeRoute::preprint: return "preprint";
        case ScrapeRoute::biomedical: return "biomedical";
        case ScrapeRoute::html: return "html";
    }
    return "html";
}

namespace {

struct UrlParts {
    std::string scheme;
    std::string host;
    std::string path;  // without query
};

UrlParts parse_url(const std::string& url) {
    UrlParts p;
    auto se = url.find("://");
    if (se == std::string::npos) return p;
    p.scheme = text::to_lower(url.substr(0, se));
    auto host_start = se + 3;
    auto path_start = url.find_first_of("/?#", host_start);
    p.host = text::to_lower(url.substr(host_start, path_start == std::string::npos ? std::string::npos
                                                                                   : path_start - host_start));
    if (auto at = p.host.rfind('@'); at != std::string::npos) p.host = p.host.substr(at + 1);
    if (auto colon = p.host.find(':'); colon != std::string::npos) p.host.resize(colon);
    if (path_start != std::string::npos && url[path_start] == '/') {
        auto q = url.find_first_of("?#", path_start);
        p.path = url.substr(path_start, q == std::string::npos ? std::string::npos : q - path_start);
    }
    return p;
}

bool host_matches(const std::string& host, const std::vector<std::string>& list) {
    for (const auto& h : list) {
        auto want = text::to_lower(h);
        if (host == want) return true;
        if (host.size() > want.size() && host.ends_with(want) && host[host.size() - want.size() - 1] == '.')
            return true;
    }
    return false;
}

std::string url_encode(std::string_view s) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xF]);
        }
    }
    return out;
}

std::string url_decode(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%' && i + 2 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
            std::isxdigit(static_cast<unsigned char>(s[i + 2]))) {
            out.push_back(static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16)));
            i += 2;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

void append_utf8(std::string& out, unsigned long cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x110000) {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

const std::unordered_map<std::string, std::string>& named_entities() {
    static const std::unordered_map<std::string, std::string> m = {
        {"amp", "&"},     {"lt", "<"},      {"gt", ">"},       {"quot", "\""},   {"apos", "'"},
        {"nbsp", " "},    {"ndash", "\xE2\x80\x93"}, {"mdash", "\xE2\x80\x94"}, {"hellip", "\xE2\x80\xA6"},
        {"copy", "\xC2\xA9"}, {"reg", "\xC2\xAE"}, {"deg", "\xC2\xB0"}, {"rsquo", "\xE2\x80\x99"},
        {"lsquo", "\xE2\x80\x98"}, {"ldquo", "\xE2\x80\x9C"}, {"rdquo", "\xE2\x80\x9D"}};
    return m;
}

// Tags whose content is never visible text.
bool is_dropped_element(std::string_view name) {
    static const std::set<std::string, std::less<>> s = {"script", "style", "noscript", "template",
                                                         "svg",    "iframe", "nav",    "footer",
                                                         "aside",  "form",  "button", "select"};
    return s.count(name) > 0;
}

// Tags that do not break a word when removed.
bool is_inline_element(std::string_view name) {
    static const std::set<std::string, std::less<>> s = {"a",    "abbr", "b",      "bdi",  "bdo",  "cite",
                                                         "code", "data", "dfn",    "em",   "i",    "kbd",
                                                         "mark", "q",    "s",      "samp", "small", "span",
                                                         "strong", "sub", "sup",   "time", "u",    "var", "wbr"};
    return s.count(name) > 0;
}

}  // namespace

ScrapeRoute route_for(const std::string& url, const SearchConfig& cfg) {
    auto parts = parse_url(url);
    if (host_matches(parts.host, cfg.encyclopedia_hosts)) return ScrapeRoute::encyclopedia;
    if (host_matches(parts.host, cfg.preprint_hosts)) return ScrapeRoute::preprint;
    if (host_matches(parts.host, cfg.biomedical_hosts)) return ScrapeRoute::biomedical;
    return ScrapeRoute::html;
}

std::string html_to_text(std::string_view html) {
    std::string out;
    out.reserve(html.size());
    std::size_t i = 0;
    while (i < html.size()) {
        char c = html[i];
        if (c == '<') {
            if (html.substr(i, 4) == "<!--") {
                auto end = html.find("-->", i + 4);
                i = end == std::string_view::npos ? html.size() : end + 3;
                out.push_back(' ');
                continue;
            }
            // Tag name.
            std::size_t j = i + 1;
            bool closing = j < html.size() && html[j] == '/';
            if (closing) ++j;
            std::size_t name_start = j;
            while (j < html.size() && (std::isalnum(static_cast<unsigned char>(html[j])) || html[j] == '-')) ++j;
            if (j == name_start && !(j < html.size() && (html[j] == '!' || html[j] == '?'))) {
                out.push_back('<');  // a literal '<'
                ++i;
                continue;
            }
            auto name = text::to_lower(html.substr(name_start, j - name_start));
            // Find the end of the tag, honouring quoted attribute values.
            char quote = 0;
            while (j < html.size()) {
                if (quote) {
                    if (html[j] == quote) quote = 0;
                } else if (html[j] == '"' || html[j] == '\'') {
                    quote = html[j];
                } else if (html[j] == '>') {
                    break;
                }
                ++j;
            }
            std::size_t tag_end = j < html.size() ? j + 1 : html.size();
            bool self_closing = tag_end >= 2 && html[tag_end - 2] == '/';
            if (!closing && !self_closing && is_dropped_element(name)) {
                auto close = text::ifind(html, "</" + name, tag_end);
                if (close != std::string_view::npos) {
                    auto gt = html.find('>', close);
                    i = gt == std::string_view::npos ? html.size() : gt + 1;
                    out.push_back(' ');
                    continue;
                }
            }
            if (!is_inline_element(name)) out.push_back(' ');
            i = tag_end;
            continue;
        }
        if (c == '&') {
            auto semi = html.find(';', i + 1);
            if (semi != std::string_view::npos && semi - i <= 10) {
                auto ent = html.substr(i + 1, semi - i - 1);
                if (!ent.empty() && ent[0] == '#') {
                    unsigned long cp = 0;
                    bool ok = ent.size() > 1;
                    try {
                        if (ok && (ent[1] == 'x' || ent[1] == 'X'))
                            cp = std::stoul(std::string(ent.substr(2)), nullptr, 16);
                        else if (ok)
                            cp = std::stoul(std::string(ent.substr(1)), nullptr, 10);
                    } catch (const std::exception&) {
                        ok = false;
                    }
                    if (ok) {
                        append_utf8(out, cp == 0xA0 ? 0x20 : cp);
                        i = semi + 1;
                        continue;
                    }
                } else if (auto it = named_entities().find(std::string(ent)); it != named_entities().end()) {
                    out += it->second;
                    i = semi + 1;
                    continue;
                }
            }
        }
        out.push_back(c);
        ++i;
    }
    return text::collapse_whitespace(out);
}

namespace {

HttpResponse fetch(Gateway& gw, const SearchConfig& cfg, const std::string& url) {
    HttpRequest req;
    req.method = "GET";
    req.url = url;
    req.headers["User-Agent"] = "ods-search/1.0";
    req.timeout_s = cfg.page_timeout_s;
    HttpResponse resp;
    try {
        resp = gw.http(req);
    } catch (const TransportError& e) {
        if (e.timeout()) throw TimeoutError(std::string("timed out fetching ") + url);
        throw FetchError(std::string("fetch failed: ") + e.what(), 0);
    }
    if (resp.status >= 400 || resp.status == 0)
        throw FetchError("HTTP " + std::to_string(resp.status) + " for " + url, resp.status);
    return resp;
}

std::optional<std::string> encyclopedia_api_url(const UrlParts& p) {
    if (!p.path.starts_with("/wiki/") || p.path.size() <= 6) return std::nullopt;
    auto title = url_decode(p.path.substr(6));
    return "https://" + p.host +
           "/w/api.php?action=query&prop=extracts&explaintext=1&redirects=1&format=json&titles=" +
           url_encode(title);
}

std::optional<std::string> preprint_api_url(const UrlParts& p) {
    std::string id;
    if (p.path.starts_with("/abs/")) id = p.path.substr(5);
    else if (p.path.starts_with("/pdf/")) id = p.path.substr(5);
    else return std::nullopt;
    if (id.ends_with(".pdf")) id.resize(id.size() - 4);
    if (id.empty()) return std::nullopt;
    return "https://export.arxiv.org/api/query?id_list=" + url_encode(id);
}

std::optional<std::string> biomedical_api_url(const UrlParts& p) {
    std::string digits;
    for (char c : p.path)
        if (std::isdigit(static_cast<unsigned char>(c))) digits.push_back(c);
        else if (!digits.empty() && c == '/') break;
    if (digits.empty()) return std::nullopt;
    return "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/efetch.fcgi?db=pubmed&id=" + digits +
           "&rettype=abstract&retmode=text";
}

std::string extract_encyclopedia(const std::string& body) {
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded()) return html_to_text(body);
    std::string out;
    auto pages = j.value("query", json::object()).value("pages", json::object());
    for (const auto& [_, page] : pages.items()) {
        auto extract = page.value("extract", std::string());
        if (extract.empty()) continue;
        if (!out.empty()) out += "\n\n";
        out += extract;
    }
    return text::trim(out);
}

std::string extract_preprint(const std::string& atom) {
    // Title and abstract of every <entry>.
    std::string out;
    std::size_t pos = 0;
    for (;;) {
        auto e = text::ifind(atom, "<entry", pos);
        if (e == std::string::npos) break;
        auto end = text::ifind(atom, "</entry>", e);
        if (end == std::string::npos) end = atom.size();
        std::string_view entry(atom.data() + e, end - e);
        for (const char* tag : {"title", "summary"}) {
            auto open = text::ifind(entry, std::string("<") + tag);
            if (open == std::string::npos) continue;
            auto gt = entry.find('>', open);
            auto close = text::ifind(entry, std::string("</") + tag, open);
            if (gt == std::string::npos || close == std::string::npos || close < gt) continue;
            auto piece = html_to_text(entry.substr(gt + 1, close - gt - 1));
            if (piece.empty()) continue;
            if (!out.empty()) out += "\n";
            out += piece;
        }
        pos = end;
    }
    return out;
}

}  // namespace

ScrapedPage scrape_page(Gateway& gw, const SearchConfig& cfg, const std::string& url) {
    if (!is_absolute_url(url)) throw FetchError("not an absolute URL: " + url, 0);
    ScrapedPage page;
    page.url = url;
    page.route = route_for(url, cfg);
    auto parts = parse_url(url);

    std::optional<std::string> api;
    switch (page.route) {
        case ScrapeRoute::encyclopedia: api = encyclopedia_api_url(parts); break;
        case ScrapeRoute::preprint: api = preprint_api_url(parts); break;
        case ScrapeRoute::biomedical: api = biomedical_api_url(parts); break;
        case ScrapeRoute::html: break;
    }
    if (page.route != ScrapeRoute::html && !api) page.route = ScrapeRoute::html;

    page.fetched_url = api.value_or(url);
    auto resp = fetch(gw, cfg, page.fetched_url);
    auto body = std::string(text::utf8_truncate(resp.body, cfg.max_page_bytes));
    switch (page.route) {
        case ScrapeRoute::encyclopedia: page.text = extract_encyclopedia(body); break;
        case ScrapeRoute::preprint: page.text = extract_preprint(body); break;
        case ScrapeRoute::biomedical: page.text = text::trim(body); break;
        case ScrapeRoute::html: page.text = html_to_text(body); break;
    }
    page.text = std::string(text::utf8_truncate(page.text, cfg.max_page_bytes));
    return page;
}

// ---------------------------------------------------------------------------
// Chunking

std::vector<Chunk> chunk_document(const std::string& doc, std::size_t chunk_size, std::size_t overlap) {
    if (chunk_size == 0) throw std::invalid_argument("chunk_size must be positive");
    if (overlap >= chunk_size) throw std::invalid_argument("overlap must be < chunk_size");
    std::vector<Chunk> out;
    if (doc.empty()) return out;
    auto bounds = text::utf8_boundaries(doc);
    const std::size_t count = bounds.size() - 1;
    const std::size_t stride = chunk_size - overlap;
    for (std::size_t start = 0;; start += stride) {
        std::size_t end = std::min(start + chunk_size, count);
        Span span{bounds[start], bounds[end]};
        out.push_back({doc.substr(span.start, span.end - span.start), span});
        if (end == count) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reranking

std::vector<double> EmbeddingReranker::score(const std::string& query, const std::vector<std::string>& texts) {
    if (texts.empty()) return {};
    constexpr std::size_t kBatch = 64;
    auto q = gw_.embed({query});
    std::vector<double> out;
    out.reserve(texts.size());
    for (std::size_t off = 0; off < texts.size(); off += kBatch) {
        std::vector<std::string> batch;
        std::vector<std::size_t> slot;
        for (std::size_t i = off; i < std::min(texts.size(), off + kBatch); ++i) {
            // Blank chunks cannot be embedded; they score as orthogonal.
            if (!text::trim(texts[i]).empty()) {
                batch.push_back(texts[i]);
                slot.push_back(i - off);
            }
        }
        std::vector<double> scores(std::min(kBatch, texts.size() - off), 0.5);
        if (!batch.empty()) {
            auto vecs = gw_.embed(batch);
            std::vector<std::vector<double>> rows;
            rows.reserve(vecs.size());
            for (auto& v : vecs) rows.push_back(std::move(v.values));
            std::size_t dim = 0;
            auto packed = kernels::pack_rows(rows, dim);
            auto cos = kernels::cosine_scores(q.front().values, {packed, rows.size(), dim});
            for (std::size_t i = 0; i < cos.size(); ++i)
                scores[slot[i]] = std::clamp((cos[i] + 1.0) / 2.0, 0.0, 1.0);
        }
        out.insert(out.end(), scores.begin(), scores.end());
    }
    return out;
}

std::vector<double> LexicalReranker::score(const std::string& query, const std::vector<std::string>& texts) {
    auto qtok = text::word_tokens(query);
    std::set<std::string> qset(qtok.begin(), qtok.end());
    std::vector<double> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        if (qset.empty()) {
            out.push_back(0.0);
            continue;
        }
        auto ttok = text::word_tokens(t);
        std::set<std::string> tset(ttok.begin(), ttok.end());
        std::size_t hit = 0;
        for (const auto& w : qset) hit += tset.count(w);
        out.push_back(static_cast<double>(hit) / static_cast<double>(qset.size()));
    }
    return out;
}

std::unique_ptr<Reranker> make_reranker(const SearchConfig& cfg, Gateway& gw) {
    if (cfg.reranker == "lexical") return std::make_unique<LexicalReranker>();
    return std::make_unique<EmbeddingReranker>(gw);
}

namespace {

bool passage_before(const Passage& a, const Passage& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.source_url != b.source_url) return a.source_url < b.source_url;
    return a.char_span.start < b.char_span.start;
}

std::vector<Passage> select_passages(const std::vector<PageChunks>& pages,
                                     const std::vector<std::vector<double>>& scores, const SearchConfig& cfg) {
    std::vector<Passage> merged;
    for (std::size_t p = 0; p < pages.size(); ++p) {
        const auto& page = pages[p];
        if (scores[p].size() != page.chunks.size())
            throw std::runtime_error("reranker returned the wrong number of scores");
        std::vector<Passage> kept;
        for (std::size_t i = 0; i < page.chunks.size(); ++i) {
            double s = scores[p][i];
            if (!(s >= cfg.relevance_threshold)) continue;
            kept.push_back({page.chunks[i].text, page.url, s, page.chunks[i].span});
        }
        std::sort(kept.begin(), kept.end(), passage_before);
        if (kept.size() > cfg.n) kept.resize(cfg.n);
        merged.insert(merged.end(), kept.begin(), kept.end());
    }
    std::sort(merged.begin(), merged.end(), passage_before);
    return merged;
}

}  // namespace

std::vector<Passage> rerank_chunks(const std::string& query, const std::vector<PageChunks>& pages,
                                   const SearchConfig& cfg, Reranker& reranker) {
    std::vector<std::vector<double>> scores;
    scores.reserve(pages.size());
    for (const auto& page : pages) {
        std::vector<std::string> texts;
        texts.reserve(page.chunks.size());
        for (const auto& c : page.chunks) texts.push_back(c.text);
        scores.push_back(reranker.score(query, texts));
    }
    return select_passages(pages, scores, cfg);
}

// ---------------------------------------------------------------------------
// Pipeline

std::vector<SerpResult> merge_snippets(const std::vector<std::vector<SerpResult>>& lists) {
    std::vector<SerpResult> merged;
    std::unordered_map<std::string, std::size_t> pos;
    for (const auto& list : lists) {
        for (const auto& r : list) {
            auto it = pos.find(r.url);
            if (it == pos.end()) {
                pos.emplace(r.url, merged.size());
                merged.push_back(r);
            } else if (r.rank < merged[it->second].rank) {
                merged[it->second] = r;
            }
        }
    }
    std::stable_sort(merged.begin(), merged.end(),
                     [](const SerpResult& a, const SerpResult& b) { return a.rank < b.rank; });
    return merged;
}

SearchContext build_context(Gateway& gw, const std::string& query, const SearchConfig& cfg) {
    cfg.validate();
    if (text::trim(query).empty()) throw std::invalid_argument("build_context: empty query");
    SearchContext ctx;
    ctx.query = query;

    std::vector<std::string> queries{query};
    try {
        queries = rephrase_query(gw, query, cfg.k);
    } catch (const std::exception& e) {
        ctx.notes.push_back(std::string("rephrasing skipped: ") + e.what());
    }
    ctx.rephrasings.assign(queries.begin() + 1, queries.end());

    std::vector<std::vector<SerpResult>> lists;
    std::size_t failures = 0;
    std::string last_error;
    for (const auto& q : queries) {
        try {
            lists.push_back(serp_fetch(gw, cfg, q, cfg.top_n_snippets));
        } catch (const std::exception& e) {
            ++failures;
            last_error = e.what();
            ctx.notes.push_back("search failed for '" + q + "': " + e.what());
        }
    }
    if (failures == queries.size()) throw SearchUnavailable("every search request failed: " + last_error);

    ctx.snippets = merge_snippets(lists);
    if (ctx.snippets.size() > cfg.top_n_snippets) ctx.snippets.resize(cfg.top_n_snippets);

    // Scrape the best-ranked m pages, one request per host at a time.
    const std::size_t page_count = std::min(cfg.m, ctx.snippets.size());
    std::vector<std::optional<ScrapedPage>> scraped(page_count);
    std::vector<std::string> notes(page_count);
    std::vector<std::string> hosts;
    for (std::size_t i = 0; i < page_count; ++i) hosts.push_back(parse_url(ctx.snippets[i].url).host);
    const auto started = std::chrono::steady_clock::now();
    auto budget_left = [&] {
        std::chrono::duration<double> spent = std::chrono::steady_clock::now() - started;
        return spent.count() < cfg.augmentation_budget_s;
    };
    run_bounded(
        page_count, cfg.workers,
        [&](std::size_t i) {
            const auto& url = ctx.snippets[i].url;
            if (!budget_left()) {
                notes[i] = "skipped " + url + ": augmentation budget exhausted";
                return;
            }
            try {
                scraped[i] = scrape_page(gw, cfg, url);
            } catch (const std::exception& e) {
                notes[i] = "skipped " + url + ": " + e.what();
            }
        },
        hosts);

    std::vector<PageChunks> pages;
    for (std::size_t i = 0; i < page_count; ++i) {
        if (!notes[i].empty()) ctx.notes.push_back(notes[i]);
        if (!scraped[i] || scraped[i]->text.empty()) continue;
        pages.push_back({scraped[i]->url, chunk_document(scraped[i]->text, cfg.chunk_size, cfg.chunk_overlap)});
    }

    // Score pages concurrently; selection is order-independent.
    auto reranker = make_reranker(cfg, gw);
    std::vector<std::vector<double>> scores(pages.size());
    std::vector<std::string> score_errors(pages.size());
    run_bounded(pages.size(), cfg.workers, [&](std::size_t p) {
        std::vector<std::string> texts;
        for (const auto& c : pages[p].chunks) texts.push_back(c.text);
        try {
            scores[p] = reranker->score(query, texts);
        } catch (const std::exception& e) {
            score_errors[p] = e.what();
        }
    });
    std::vector<PageChunks> scored_pages;
    std::vector<std::vector<double>> kept_scores;
    for (std::size_t p = 0; p < pages.size(); ++p) {
        if (!score_errors[p].empty()) {
            ctx.notes.push_back("rerank failed for " + pages[p].url + ": " + score_errors[p]);
            continue;
        }
        scored_pages.push_back(std::move(pages[p]));
        kept_scores.push_back(std::move(scores[p]));
    }
    ctx.passages = select_passages(scored_pages, kept_scores, cfg);
    ctx.rendered = format_context(ctx, cfg);
    return ctx;
}

}  // namespace ods::search
