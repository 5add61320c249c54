#include "ods/gateway.hpp"

#include "ods/text.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace ods {

using nlohmann::json;

CassetteMiss::CassetteMiss(std::string kind, std::string digest)
    : std::runtime_error("cassette miss: no recorded " + kind + " response for digest " + digest),
      kind_(std::move(kind)),
      digest_(std::move(digest)) {}

const char* to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

void CompletionRequest::validate() const {
    if (messages.empty()) throw std::invalid_argument("completion request has no messages");
    if (messages.front().role == Role::assistant)
        throw std::invalid_argument("first message must be system or user");
    if (!(temperature >= 0.0) || !std::isfinite(temperature))
        throw std::invalid_argument("temperature must be a finite value >= 0");
    if (max_tokens <= 0) throw std::invalid_argument("max_tokens must be positive");
}

// ---------------------------------------------------------------------------
// Canonical forms

namespace {

std::string normalize_text(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (const auto& line : text::split_lines(s)) {
        out.append(text::trim_right(line));
        out.push_back('\n');
    }
    return text::trim_right(out);
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string canonical_completion(const CompletionRequest& req, const std::string& model) {
    json msgs = json::array();
    for (const auto& m : req.messages)
        msgs.push_back({{"role", to_string(m.role)}, {"content", normalize_text(m.text)}});
    json stops = json::array();
    for (const auto& s : req.stop_sequences) stops.push_back(s);
    json j = {{"kind", "completion"},
              {"model", model},
              {"messages", msgs},
              {"temperature", fixed6(req.temperature)},
              {"max_tokens", req.max_tokens},
              {"stop", stops}};
    if (req.seed) j["seed"] = *req.seed;
    return j.dump();
}

std::string canonical_embedding(const std::vector<std::string>& texts, const std::string& model) {
    json input = json::array();
    for (const auto& t : texts) input.push_back(normalize_text(t));
    return json{{"kind", "embedding"}, {"model", model}, {"input", input}}.dump();
}

namespace {

// Secret-bearing query parameters never reach the digest, so a cassette
// recorded with a key replays without one.
std::string redact_url(const std::string& url) {
    auto q = url.find('?');
    if (q == std::string::npos) return url;
    std::string out = url.substr(0, q);
    char sep = '?';
    std::size_t pos = q + 1;
    while (pos <= url.size()) {
        auto amp = url.find('&', pos);
        auto param = url.substr(pos, amp == std::string::npos ? std::string::npos : amp - pos);
        auto name = text::to_lower(param.substr(0, param.find('=')));
        if (!param.empty() && name != "appid" && name != "api_key" && name != "apikey" && name != "key") {
            out += sep;
            out += param;
            sep = '&';
        }
        if (amp == std::string::npos) break;
        pos = amp + 1;
    }
    return out;
}

}  // namespace

std::string canonical_http(const HttpRequest& req) {
    std::string body = req.body;
    if (!body.empty()) {
        auto parsed = json::parse(body, nullptr, false);
        if (!parsed.is_discarded()) body = parsed.dump();
    }
    return json{{"kind", "http"}, {"method", text::to_upper(req.method)}, {"url", redact_url(req.url)}, {"body", body}}
        .dump();
}

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

std::string base64_encode(std::string_view data) {
    std::string out(4 * ((data.size() + 2) / 3), '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(data.data()),
                            static_cast<int>(data.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string base64_decode(std::string_view data) {
    if (data.size() % 4 != 0) throw std::runtime_error("invalid base64 length");
    std::string out(3 * data.size() / 4, '\0');
    int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(data.data()),
                            static_cast<int>(data.size()));
    if (n < 0) throw std::runtime_error("invalid base64");
    std::size_t pad = 0;
    if (!data.empty() && data.back() == '=') ++pad;
    if (data.size() > 1 && data[data.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

// ---------------------------------------------------------------------------
// Cassette

const char* to_string(CassetteKind k) {
    switch (k) {
        case CassetteKind::completion: return "completion";
        case CassetteKind::embedding: return "embedding";
        case CassetteKind::http: return "http";
    }
    return "http";
}

CassetteKind cassette_kind_from(std::string_view s) {
    if (s == "completion") return CassetteKind::completion;
    if (s == "embedding") return CassetteKind::embedding;
    if (s == "http") return CassetteKind::http;
    throw std::runtime_error("unknown cassette kind: " + std::string(s));
}

const char* to_string(CassetteMode m) {
    switch (m) {
        case CassetteMode::off: return "off";
        case CassetteMode::record: return "record";
        case CassetteMode::replay: return "replay";
    }
    return "off";
}

namespace {
std::string slot_key(CassetteKind kind, const std::string& digest) {
    return std::string(to_string(kind)) + ":" + digest;
}
}  // namespace

std::unique_ptr<Cassette> Cassette::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open cassette: " + path.string());
    std::vector<CassetteEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto t1 = line.find('\t');
        auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                     ": expected kind<TAB>digest<TAB>body");
        CassetteEntry e;
        e.kind = cassette_kind_from(std::string_view(line).substr(0, t1));
        e.digest = line.substr(t1 + 1, t2 - t1 - 1);
        e.body = base64_decode(std::string_view(line).substr(t2 + 1));
        entries.push_back(std::move(e));
    }
    return from_entries(std::move(entries));
}

std::unique_ptr<Cassette> Cassette::from_entries(std::vector<CassetteEntry> entries) {
    auto c = std::make_unique<Cassette>();
    c->entries_ = std::move(entries);
    c->index();
    return c;
}

void Cassette::index() {
    slots_.clear();
    for (const auto& e : entries_) {
        auto& slot = slots_[slot_key(e.kind, e.digest)];
        if (!slot) slot = std::make_unique<Slot>();
        slot->bodies.push_back(e.body);
    }
}

void Cassette::open_for_record(const std::filesystem::path& path) {
    std::lock_guard lk(write_mu_);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot write cassette: " + path.string());
}

std::string Cassette::serialize_line(const CassetteEntry& e) {
    return std::string(to_string(e.kind)) + "\t" + e.digest + "\t" + base64_encode(e.body) + "\n";
}

void Cassette::append(CassetteKind kind, const std::string& digest, const std::string& body) {
    std::lock_guard lk(write_mu_);
    CassetteEntry e{kind, digest, body};
    if (out_.is_open()) {
        out_ << serialize_line(e);
        out_.flush();
    }
    entries_.push_back(std::move(e));
}

std::string Cassette::take(CassetteKind kind, const std::string& digest) const {
    auto it = slots_.find(slot_key(kind, digest));
    if (it == slots_.end()) throw CassetteMiss(to_string(kind), digest);
    const auto& slot = *it->second;
    auto i = slot.cursor.fetch_add(1);
    if (i >= slot.bodies.size()) throw CassetteMiss(to_string(kind), digest);
    return slot.bodies[i];
}

std::vector<CassetteEntry> Cassette::entries() const {
    std::lock_guard lk(write_mu_);
    return entries_;
}

std::size_t Cassette::size() const {
    std::lock_guard lk(write_mu_);
    return entries_.size();
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(Providers providers) : providers_(std::move(providers)) {
    if (providers_.llm) llm_model_ = providers_.llm->model_id();
    if (providers_.embedder) embed_model_ = providers_.embedder->model_id();
    if (providers_.judge) judge_model_ = providers_.judge->model_id();
}

Gateway::Gateway(Providers providers, std::shared_ptr<Cassette> cassette, CassetteMode mode,
                 std::string llm_model, std::string embed_model, std::string judge_model)
    : providers_(std::move(providers)),
      cassette_(std::move(cassette)),
      mode_(mode),
      llm_model_(std::move(llm_model)),
      embed_model_(std::move(embed_model)),
      judge_model_(std::move(judge_model)) {
    if (mode_ != CassetteMode::off && !cassette_)
        throw std::invalid_argument("cassette mode requires a cassette");
    if (llm_model_.empty() && providers_.llm) llm_model_ = providers_.llm->model_id();
    if (embed_model_.empty() && providers_.embedder) embed_model_ = providers_.embedder->model_id();
    if (judge_model_.empty() && providers_.judge) judge_model_ = providers_.judge->model_id();
}

bool Gateway::has_judge() const {
    return mode_ == CassetteMode::replay || providers_.judge || providers_.llm;
}

namespace {

template <typename F>
auto with_retry(const RetryPolicy& policy, F&& fn) -> decltype(fn()) {
    for (int attempt = 1;; ++attempt) {
        try {
            return fn();
        } catch (const ProviderError&) {
            if (attempt >= policy.attempts) throw;
        } catch (const TransportError& e) {
            if (attempt >= policy.attempts) throw ProviderError(e.what());
        }
        auto delay = policy.base_delay_s * std::pow(2.0, attempt - 1);
        std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
}

// Cassette bodies are JSON envelopes so provider failures replay as failures.
std::string envelope_text(const std::string& text) { return json{{"text", text}}.dump(); }
std::string envelope_error(const std::string& msg) { return json{{"error", msg}}.dump(); }

json open_envelope(const std::string& body) {
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw std::runtime_error("corrupt cassette body");
    return j;
}

}  // namespace

std::string Gateway::complete_with(CompletionProvider* provider, const std::string& model,
                                   const CompletionRequest& req) {
    req.validate();
    if (mode_ == CassetteMode::replay) {
        auto env = open_envelope(cassette_->take(CassetteKind::completion,
                                                 sha256_hex(canonical_completion(req, model))));
        if (env.contains("error")) throw ProviderError(env["error"].get<std::string>());
        return env.at("text").get<std::string>();
    }
    if (!provider) throw ProviderError("no completion provider configured");
    ++live_calls_;
    std::string digest;
    if (mode_ == CassetteMode::record) digest = sha256_hex(canonical_completion(req, model));
    try {
        auto text = with_retry(retry_, [&] { return provider->complete(req); });
        if (mode_ == CassetteMode::record)
            cassette_->append(CassetteKind::completion, digest, envelope_text(text));
        return text;
    } catch (const ProviderError& e) {
        if (mode_ == CassetteMode::record)
            cassette_->append(CassetteKind::completion, digest, envelope_error(e.what()));
        throw;
    }
}

std::string Gateway::complete(const CompletionRequest& req) {
    return complete_with(providers_.llm.get(), llm_model_, req);
}

std::string Gateway::judge(const CompletionRequest& req) {
    auto* p = providers_.judge ? providers_.judge.get() : providers_.llm.get();
    return complete_with(p, judge_model_.empty() ? llm_model_ : judge_model_, req);
}

std::vector<EmbeddingVector> Gateway::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw std::invalid_argument("embed: empty input list");
    for (const auto& t : texts)
        if (text::trim(t).empty()) throw std::invalid_argument("embed: blank input text");

    std::vector<std::vector<double>> raw;
    if (mode_ == CassetteMode::replay) {
        auto env = open_envelope(cassette_->take(CassetteKind::embedding,
                                                 sha256_hex(canonical_embedding(texts, embed_model_))));
        if (env.contains("error")) throw ProviderError(env["error"].get<std::string>());
        raw = env.at("vectors").get<std::vector<std::vector<double>>>();
    } else {
        if (!providers_.embedder) throw ProviderError("no embedding provider configured");
        ++live_calls_;
        std::string digest;
        if (mode_ == CassetteMode::record) digest = sha256_hex(canonical_embedding(texts, embed_model_));
        try {
            raw = with_retry(retry_, [&] { return providers_.embedder->embed(texts); });
        } catch (const ProviderError& e) {
            if (mode_ == CassetteMode::record)
                cassette_->append(CassetteKind::embedding, digest, envelope_error(e.what()));
            throw;
        }
        if (mode_ == CassetteMode::record)
            cassette_->append(CassetteKind::embedding, digest, json{{"vectors", raw}}.dump());
    }

    if (raw.size() != texts.size())
        throw ProviderError("embedding provider returned " + std::to_string(raw.size()) +
                            " vectors for " + std::to_string(texts.size()) + " inputs");
    std::vector<EmbeddingVector> out;
    out.reserve(raw.size());
    const auto dim = raw.empty() ? 0 : raw.front().size();
    for (auto& v : raw) {
        if (v.empty() || v.size() != dim)
            throw ProviderError("embedding provider returned inconsistent dimensions");
        for (double x : v)
            if (!std::isfinite(x)) throw ProviderError("embedding provider returned non-finite value");
        out.push_back({std::move(v), embed_model_});
    }
    return out;
}

HttpResponse Gateway::http(const HttpRequest& req) {
    if (mode_ == CassetteMode::replay) {
        auto env = open_envelope(cassette_->take(CassetteKind::http, sha256_hex(canonical_http(req))));
        if (env.contains("error"))
            throw TransportError(env["error"].get<std::string>(), env.value("timeout", false));
        return {env.at("status").get<int>(), env.at("body").get<std::string>()};
    }
    if (!providers_.http) throw TransportError("no http transport configured", false);
    ++live_calls_;
    std::string digest;
    if (mode_ == CassetteMode::record) digest = sha256_hex(canonical_http(req));
    try {
        auto resp = providers_.http->send(req);
        if (mode_ == CassetteMode::record)
            cassette_->append(CassetteKind::http, digest,
                              json{{"status", resp.status}, {"body", resp.body}}.dump());
        return resp;
    } catch (const TransportError& e) {
        if (mode_ == CassetteMode::record)
            cassette_->append(CassetteKind::http, digest,
                              json{{"error", e.what()}, {"timeout", e.timeout()}}.dump());
        throw;
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible provider

OpenAiCompatibleProvider::OpenAiCompatibleProvider(std::shared_ptr<HttpTransport> http,
                                                   std::string base_url, std::string api_key,
                                                   std::string model)
    : http_(std::move(http)),
      base_url_(std::move(base_url)),
      api_key_(std::move(api_key)),
      model_(std::move(model)) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

HttpResponse OpenAiCompatibleProvider::post(const std::string& path, const std::string& body) {
    HttpRequest req;
    req.method = "POST";
    req.url = base_url_ + path;
    req.headers["Content-Type"] = "application/json";
    if (!api_key_.empty()) req.headers["Authorization"] = "Bearer " + api_key_;
    req.body = body;
    req.timeout_s = 120.0;
    HttpResponse resp;
    try {
        resp = http_->send(req);
    } catch (const TransportError& e) {
        throw ProviderError(std::string("provider transport: ") + e.what());
    }
    if (resp.status < 200 || resp.status >= 300)
        throw ProviderError("provider HTTP " + std::to_string(resp.status) + ": " +
                            std::string(text::utf8_truncate(resp.body, 300)));
    return resp;
}

std::string OpenAiCompatibleProvider::complete(const CompletionRequest& req) {
    json msgs = json::array();
    for (const auto& m : req.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.text}});
    json body = {{"model", model_},
                 {"messages", msgs},
                 {"temperature", req.temperature},
                 {"max_tokens", req.max_tokens}};
    if (!req.stop_sequences.empty()) body["stop"] = req.stop_sequences;
    if (req.seed) body["seed"] = *req.seed;
    auto resp = post("/chat/completions", body.dump());
    auto j = json::parse(resp.body, nullptr, false);
    try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw ProviderError("malformed chat-completion response");
    }
}

std::vector<std::vector<double>> OpenAiCompatibleProvider::embed(const std::vector<std::string>& texts) {
    auto resp = post("/embeddings", json{{"model", model_}, {"input", texts}}.dump());
    auto j = json::parse(resp.body, nullptr, false);
    std::vector<std::vector<double>> out;
    try {
        for (const auto& item : j.at("data")) out.push_back(item.at("embedding").get<std::vector<double>>());
    } catch (const json::exception&) {
        throw ProviderError("malformed embedding response");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mock provider

MockProvider::MockProvider(std::vector<Rule> rules, std::size_t dim, std::string model)
    : rules_(std::move(rules)), consumed_(rules_.size(), 0), dim_(dim), model_(std::move(model)) {
    if (dim_ == 0) throw std::invalid_argument("mock embedding dimension must be positive");
}

std::shared_ptr<MockProvider> MockProvider::from_script(const std::string& json_text) {
    auto j = json::parse(json_text);
    std::vector<Rule> rules;
    for (const auto& r : j.value("completions", json::array())) {
        Rule rule;
        rule.when = r.value("when", std::vector<std::string>{});
        rule.unless = r.value("unless", std::vector<std::string>{});
        rule.replies = r.at("replies").get<std::vector<std::string>>();
        if (rule.replies.empty()) throw std::runtime_error("mock rule without replies");
        rules.push_back(std::move(rule));
    }
    std::size_t dim = 64;
    auto emb = j.value("embeddings", json::object());
    dim = emb.value("dim", dim);
    auto p = std::make_shared<MockProvider>(std::move(rules), dim, j.value("model", std::string("mock")));
    auto overrides = emb.value("overrides", json::object());
    for (const auto& [text, vec] : overrides.items())
        p->set_override(text, vec.get<std::vector<double>>());
    return p;
}

void MockProvider::set_override(const std::string& text, std::vector<double> vec) {
    std::lock_guard lk(mu_);
    overrides_[text] = std::move(vec);
}

void MockProvider::add_rule(Rule r) {
    std::lock_guard lk(mu_);
    rules_.push_back(std::move(r));
    consumed_.push_back(0);
}

std::string MockProvider::complete(const CompletionRequest& req) {
    ++calls_;
    std::string prompt;
    for (const auto& m : req.messages) {
        prompt += to_string(m.role);
        prompt += ": ";
        prompt += m.text;
        prompt += "\n";
    }
    std::lock_guard lk(mu_);
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        const auto& r = rules_[i];
        bool ok = true;
        for (const auto& w : r.when) ok = ok && prompt.find(w) != std::string::npos;
        for (const auto& u : r.unless) ok = ok && prompt.find(u) == std::string::npos;
        if (!ok) continue;
        auto idx = std::min(consumed_[i], r.replies.size() - 1);
        ++consumed_[i];
        return r.replies[idx];
    }
    throw ProviderError("mock provider: no scripted reply matches the prompt");
}

std::vector<double> MockProvider::hashed_embedding(std::string_view text, std::size_t dim) {
    std::vector<double> v(dim, 0.0);
    for (const auto& tok : text::word_tokens(text)) {
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : tok) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        v[h % dim] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm == 0.0) {
        v[0] = 1.0;
        return v;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

std::vector<std::vector<double>> MockProvider::embed(const std::vector<std::string>& texts) {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    std::lock_guard lk(mu_);
    for (const auto& t : texts) {
        auto it = overrides_.find(t);
        out.push_back(it != overrides_.end() ? it->second : hashed_embedding(t, dim_));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mock web

std::shared_ptr<MockWeb> MockWeb::from_script(const std::string& json_text) {
    auto j = json::parse(json_text);
    auto web = std::make_shared<MockWeb>();
    auto serp = j.value("serp", json::object());
    auto pages = j.value("pages", json::object());
    auto math = j.value("math", json::object());
    for (const auto& [q, organic] : serp.items()) web->set_serp(q, organic.dump());
    for (const auto& [url, page] : pages.items()) {
        if (page.is_string()) web->set_page(url, 200, page.get<std::string>());
        else web->set_page(url, page.value("status", 200), page.value("body", std::string()));
    }
    for (const auto& [input, answer] : math.items())
        web->math_[input] = answer.get<std::string>();
    return web;
}

void MockWeb::set_page(const std::string& url, int status, std::string body) {
    std::lock_guard lk(mu_);
    pages_[url] = {status, std::move(body)};
}

void MockWeb::set_serp(const std::string& query, const std::string& organic_json) {
    std::lock_guard lk(mu_);
    serp_[text::to_lower(text::trim(query))] = organic_json;
}

namespace {
std::string url_decode(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '+') out.push_back(' ');
        else if (s[i] == '%' && i + 2 < s.size()) {
            out.push_back(static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16)));
            i += 2;
        } else out.push_back(s[i]);
    }
    return out;
}
}  // namespace

HttpResponse MockWeb::send(const HttpRequest& req) {
    ++calls_;
    std::lock_guard lk(mu_);
    if (text::iequals(req.method, "POST")) {
        auto body = json::parse(req.body, nullptr, false);
        if (!body.is_discarded() && body.is_object() && body.contains("q")) {
            auto q = text::to_lower(text::trim(body["q"].get<std::string>()));
            auto it = serp_.find(q);
            if (it == serp_.end()) it = serp_.find("*");
            std::string organic = it == serp_.end() ? "[]" : it->second;
            return {200, "{\"organic\":" + organic + "}"};
        }
        return {400, "bad request"};
    }
    if (auto it = pages_.find(req.url); it != pages_.end()) return it->second;
    auto qpos = req.url.find("?i=");
    if (qpos == std::string::npos) qpos = req.url.find("&i=");
    if (qpos != std::string::npos) {
        auto end = req.url.find('&', qpos + 3);
        auto input = url_decode(std::string_view(req.url).substr(
            qpos + 3, end == std::string::npos ? std::string::npos : end - qpos - 3));
        if (auto it = math_.find(input); it != math_.end()) return {200, it->second};
        return {501, "Wolfram|Alpha did not understand your input"};
    }
    return {404, "not found"};
}

}  // namespace ods
