#pragma once

// Query -> ranked, formatted evidence context: rephrasing, SERP retrieval,
// scraping, chunking and threshold reranking.

#include "ods/gateway.hpp"

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ods::search {

struct SearchConfig {
    std::size_t k = 2;                 // rephrasings
    std::size_t top_n_snippets = 8;    // snippets shown in the context
    std::size_t m = 3;                 // pages scraped
    std::size_t n = 4;                 // passages kept per page
    double relevance_threshold = 0.55;
    std::size_t chunk_size = 1024;     // code points
    std::size_t chunk_overlap = 128;

    std::string serp_url = "https://google.serper.dev/search";
    std::string serp_api_key;
    std::string reranker = "embedding";  // or "lexical"
    std::size_t workers = 4;
    double page_timeout_s = 10.0;
    double augmentation_budget_s = 30.0;
    std::size_t max_page_bytes = 2 * 1024 * 1024;

    std::vector<std::string> encyclopedia_hosts = {"wikipedia.org"};
    std::vector<std::string> preprint_hosts = {"arxiv.org"};
    std::vector<std::string> biomedical_hosts = {"pubmed.ncbi.nlm.nih.gov", "ncbi.nlm.nih.gov"};

    /// Throws std::invalid_argument on violated invariants.
    void validate() const;
};

struct SerpResult {
    std::string title;
    std::string url;
    std::string description;
    std::optional<std::string> date;
    std::size_t rank = 0;
    std::string source_query;
};

struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    bool operator==(const Span&) const = default;
};

struct Passage {
    std::string text;
    std::string source_url;
    double score = 0.0;
    Span char_span;  // byte offsets into the scraped document
};

struct SearchContext {
    std::string query;
    std::vector<std::string> rephrasings;
    std::vector<SerpResult> snippets;
    std::vector<Passage> passages;
    std::string rendered;
    // Non-fatal problems (skipped pages, failed rephrasal searches).
    std::vector<std::string> notes;
};

class RephraseParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every SERP call for a context failed.
class SearchUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FetchError : public std::runtime_error {
public:
    FetchError(std::string msg, int status) : std::runtime_error(std::move(msg)), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

class TimeoutError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------

/// Parse the rephraser's reply into candidate queries (numbering and bullets
/// stripped). Accepts a JSON string array or one query per line.
std::vector<std::string> parse_rephrasings(const std::string& llm_output);

/// Original query first, then up to k rephrasings; case-insensitive dedup.
std::vector<std::string> rephrase_query(Gateway& gw, const std::string& query, std::size_t k);

/// Parse a serper-style response body.
std::vector<SerpResult> parse_serp(const std::string& body, const std::string& query, std::size_t num);

std::vector<SerpResult> serp_fetch(Gateway& gw, const SearchConfig& cfg, const std::string& query,
                                   std::size_t num);

std::string format_context(const SearchContext& ctx, const SearchConfig& cfg);

enum class ScrapeRoute { encyclopedia, preprint, biomedical, html };
const char* to_string(ScrapeRoute r);

struct ScrapedPage {
    std::string url;
    std::string text;
    ScrapeRoute route = ScrapeRoute::html;
    std::string fetched_url;
};

/// Pick the site handler for a URL's host.
ScrapeRoute route_for(const std::string& url, const SearchConfig& cfg);

/// Extract visible main text from HTML: scripts, styles and comments dropped,
/// entities decoded, whitespace collapsed.
std::string html_to_text(std::string_view html);

ScrapedPage scrape_page(Gateway& gw, const SearchConfig& cfg, const std::string& url);

struct Chunk {
    std::string text;
    Span span;
};

/// Overlapping fixed-size windows measured in code points; spans are byte
/// offsets. Stride is chunk_size - overlap and the last chunk ends at the
/// text's end.
std::vector<Chunk> chunk_document(const std::string& text, std::size_t chunk_size, std::size_t overlap);

struct PageChunks {
    std::string url;
    std::vector<Chunk> chunks;
};

/// Scores chunk texts against a query; scores lie in [0,1].
class Reranker {
public:
    virtual ~Reranker() = default;
    virtual std::vector<double> score(const std::string& query, const std::vector<std::string>& texts) = 0;
};

/// Cosine between query and chunk embeddings mapped from [-1,1] to [0,1].
class EmbeddingReranker : public Reranker {
public:
    explicit EmbeddingReranker(Gateway& gw) : gw_(gw) {}
    std::vector<double> score(const std::string& query, const std::vector<std::string>& texts) override;

private:
    Gateway& gw_;
};

/// Fraction of distinct query words that occur in the chunk. Needs no provider.
class LexicalReranker : public Reranker {
public:
    std::vector<double> score(const std::string& query, const std::vector<std::string>& texts) override;
};

std::unique_ptr<Reranker> make_reranker(const SearchConfig& cfg, Gateway& gw);

/// Score every page's chunks, keep per page the top n at or above the
/// threshold, and merge descending by score; ties by (url, span start).
std::vector<Passage> rerank_chunks(const std::string& query, const std::vector<PageChunks>& pages,
                                   const SearchConfig& cfg, Reranker& reranker);

/// Merge per-query SERP lists: unique URLs, each keeping its minimum rank.
/// Ordered by (rank, first appearance).
std::vector<SerpResult> merge_snippets(const std::vector<std::vector<SerpResult>>& lists);

SearchContext build_context(Gateway& gw, const std::string& query, const SearchConfig& cfg);

}  // namespace ods::search
