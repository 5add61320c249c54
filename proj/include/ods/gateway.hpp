#pragma once

// Uniform access to completion, embedding and HTTP endpoints, with
// record/replay cassettes for deterministic offline runs.

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ods {

class ProviderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Replay mode found no cassette entry for a request; the fixture has drifted.
class CassetteMiss : public std::runtime_error {
public:
    CassetteMiss(std::string kind, std::string digest);
    const std::string& kind() const { return kind_; }
    const std::string& digest() const { return digest_; }

private:
    std::string kind_;
    std::string digest_;
};

enum class Role { system, user, assistant };
const char* to_string(Role r);

struct Message {
    Role role;
    std::string text;
};

struct CompletionRequest {
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
    std::vector<std::string> stop_sequences;
    // Per-sample seed; distinguishes otherwise identical sampled requests.
    std::optional<std::uint64_t> seed;

    /// Throws std::invalid_argument when the request breaks its invariants.
    void validate() const;
};

struct EmbeddingVector {
    std::vector<double> values;
    std::string model_id;
};

struct HttpRequest {
    std::string method = "GET";
    std::string url;
    std::map<std::string, std::string> headers;
    std::string body;
    double timeout_s = 10.0;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Transport failure (DNS, connect, timeout). HTTP error statuses are not
/// exceptions; callers inspect HttpResponse::status.
class TransportError : public std::runtime_error {
public:
    TransportError(std::string msg, bool timeout)
        : std::runtime_error(std::move(msg)), timeout_(timeout) {}
    bool timeout() const { return timeout_; }

private:
    bool timeout_;
};

class CompletionProvider {
public:
    virtual ~CompletionProvider() = default;
    virtual std::string model_id() const = 0;
    virtual std::string complete(const CompletionRequest& req) = 0;
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string model_id() const = 0;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse send(const HttpRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Canonical serialization and digests

std::string canonical_completion(const CompletionRequest& req, const std::string& model);
std::string canonical_embedding(const std::vector<std::string>& texts, const std::string& model);
std::string canonical_http(const HttpRequest& req);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string base64_encode(std::string_view data);
std::string base64_decode(std::string_view data);

// ---------------------------------------------------------------------------
// Cassette

enum class CassetteKind { completion, embedding, http };
const char* to_string(CassetteKind k);
CassetteKind cassette_kind_from(std::string_view s);

struct CassetteEntry {
    CassetteKind kind;
    std::string digest;
    std::string body;
};

/// Ordered request/response log. Recording appends under a single writer
/// lock; replay lookups are by (kind, digest), with repeated digests served
/// in recorded order.
class Cassette {
public:
    Cassette() = default;
    Cassette(const Cassette&) = delete;
    Cassette& operator=(const Cassette&) = delete;

    static std::unique_ptr<Cassette> load(const std::filesystem::path& path);
    static std::unique_ptr<Cassette> from_entries(std::vector<CassetteEntry> entries);

    /// Open `path` for appending records; existing content is truncated.
    void open_for_record(const std::filesystem::path& path);

    void append(CassetteKind kind, const std::string& digest, const std::string& body);

    /// Next unconsumed body for (kind, digest); throws CassetteMiss.
    std::string take(CassetteKind kind, const std::string& digest) const;

    std::vector<CassetteEntry> entries() const;
    std::size_t size() const;

    static std::string serialize_line(const CassetteEntry& e);

private:
    struct Slot {
        std::vector<std::string> bodies;
        mutable std::atomic<std::size_t> cursor{0};
    };
    void index();

    std::vector<CassetteEntry> entries_;
    std::unordered_map<std::string, std::unique_ptr<Slot>> slots_;
    mutable std::mutex write_mu_;
    std::ofstream out_;
};

enum class CassetteMode { off, record, replay };
const char* to_string(CassetteMode m);

// ---------------------------------------------------------------------------
// Gateway

/// Fixed 3-attempt exponential backoff used for live providers.
struct RetryPolicy {
    int attempts = 3;
    double base_delay_s = 0.5;
};

class Gateway {
public:
    struct Providers {
        std::shared_ptr<CompletionProvider> llm;
        std::shared_ptr<EmbeddingProvider> embedder;
        std::shared_ptr<HttpTransport> http;
        // Used for the judge prompts; falls back to `llm` when null.
        std::shared_ptr<CompletionProvider> judge;
    };

    /// Live (or mock) providers without a cassette.
    explicit Gateway(Providers providers);
    /// Record: providers are called and every response appended to `cassette`.
    /// Replay: providers are never touched; responses come from `cassette`.
    Gateway(Providers providers, std::shared_ptr<Cassette> cassette, CassetteMode mode,
            std::string llm_model = {}, std::string embed_model = {}, std::string judge_model = {});

    std::string complete(const CompletionRequest& req);
    std::string judge(const CompletionRequest& req);
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts);
    HttpResponse http(const HttpRequest& req);

    CassetteMode mode() const { return mode_; }
    std::string llm_model() const { return llm_model_; }
    std::string embed_model() const { return embed_model_; }
    bool has_judge() const;

    /// Number of provider/transport invocations (zero under replay).
    std::size_t live_calls() const { return live_calls_.load(); }

    void set_retry(RetryPolicy p) { retry_ = p; }

private:
    std::string complete_with(CompletionProvider* provider, const std::string& model,
                              const CompletionRequest& req);

    Providers providers_;
    std::shared_ptr<Cassette> cassette_;
    CassetteMode mode_ = CassetteMode::off;
    std::string llm_model_;
    std::string embed_model_;
    std::string judge_model_;
    RetryPolicy retry_;
    std::atomic<std::size_t> live_calls_{0};
};

// ---------------------------------------------------------------------------
// Live providers

/// OpenAI-compatible chat-completions and embeddings over an HttpTransport.
class OpenAiCompatibleProvider : public CompletionProvider, public EmbeddingProvider {
public:
    OpenAiCompatibleProvider(std::shared_ptr<HttpTransport> http, std::string base_url,
                             std::string api_key, std::string model);
    std::string model_id() const override { return model_; }
    std::string complete(const CompletionRequest& req) override;
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

private:
    HttpResponse post(const std::string& path, const std::string& body);

    std::shared_ptr<HttpTransport> http_;
    std::string base_url_;
    std::string api_key_;
    std::string model_;
};

/// cpp-httplib backed transport (https via OpenSSL).
class LiveHttpTransport : public HttpTransport {
public:
    HttpResponse send(const HttpRequest& req) override;
};

// ---------------------------------------------------------------------------
// Built-in mock provider

/// Scripted completions plus a deterministic hashed bag-of-words embedder.
///
/// Script JSON:
///   {"completions": [{"when": [..], "unless": [..], "replies": [..]}],
///    "embeddings": {"dim": 64, "overrides": {"text": [..]}}}
/// A rule matches when every `when` substring occurs in the flattened prompt
/// and no `unless` substring does. Rules are tried in order; each consumes
/// its replies in sequence and repeats the last one.
class MockProvider : public CompletionProvider, public EmbeddingProvider {
public:
    struct Rule {
        std::vector<std::string> when;
        std::vector<std::string> unless;
        std::vector<std::string> replies;
    };

    explicit MockProvider(std::vector<Rule> rules = {}, std::size_t dim = 64,
                          std::string model = "mock");
    static std::shared_ptr<MockProvider> from_script(const std::string& json_text);

    std::string model_id() const override { return model_; }
    std::string complete(const CompletionRequest& req) override;
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

    void set_override(const std::string& text, std::vector<double> vec);
    void add_rule(Rule r);
    std::size_t completion_calls() const { return calls_.load(); }

    static std::vector<double> hashed_embedding(std::string_view text, std::size_t dim);

private:
    std::vector<Rule> rules_;
    std::vector<std::size_t> consumed_;
    std::map<std::string, std::vector<double>> overrides_;
    std::size_t dim_;
    std::string model_;
    std::mutex mu_;
    std::atomic<std::size_t> calls_{0};
};

/// Scripted web: serper-style SERP answers keyed by lowercase query and
/// static pages keyed by URL. Unknown URLs answer 404.
///
/// Script JSON: {"serp": {"query": [{title, link, snippet, date?}]},
///               "pages": {"url": {"status": 200, "body": "..."}},
///               "math": {"input": "answer"}}
class MockWeb : public HttpTransport {
public:
    static std::shared_ptr<MockWeb> from_script(const std::string& json_text);
    HttpResponse send(const HttpRequest& req) override;
    std::size_t calls() const { return calls_.load(); }

    void set_page(const std::string& url, int status, std::string body);
    void set_serp(const std::string& query, const std::string& organic_json);

private:
    std::map<std::string, std::string> serp_;  // lower(query) -> organic array json
    std::map<std::string, HttpResponse> pages_;
    std::map<std::string, std::string> math_;
    std::mutex mu_;
    std::atomic<std::size_t> calls_{0};
};

}  // namespace ods
