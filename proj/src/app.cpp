#include "ods/app.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ods::app {

using nlohmann::json;

CassetteMode AppConfig::mode() const {
    if (!replay_path.empty()) return CassetteMode::replay;
    if (!record_path.empty()) return CassetteMode::record;
    return CassetteMode::off;
}

void AppConfig::validate() const {
    if (agent != "v1" && agent != "v2") throw ConfigError("agent must be v1 or v2, got '" + agent + "'");
    if (!record_path.empty() && !replay_path.empty()) throw ConfigError("--record and --replay are exclusive");
    if (!replay_path.empty() && !std::filesystem::exists(replay_path))
        throw ConfigError("replay cassette not found: " + replay_path);
    if (!mock_script.empty() && !std::filesystem::exists(mock_script))
        throw ConfigError("mock script not found: " + mock_script);
    if (max_steps == 0) throw ConfigError("max_steps must be positive");
    if (max_rounds == 0) throw ConfigError("max_rounds must be positive");
    if (consistency.r == 0) throw ConfigError("sc_samples must be positive");
    if (!(consistency.temperature >= 0.0)) throw ConfigError("sc_temperature must be >= 0");
    try {
        search.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (mode() != CassetteMode::replay && mock_script.empty() && llm_api_key.empty())
        throw ConfigError("live mode needs ODS_LLM_API_KEY (or use --replay / --mock-script)");
}

json AppConfig::to_json() const {
    return json{{"agent", agent},
                {"llm_base_url", llm_base_url},
                {"llm_model", llm_model},
                {"embed_model", embed_model},
                {"judge_model", judge_model},
                {"math_url", math_url},
                {"mock_script", mock_script},
                {"cassette_mode", to_string(mode())},
                {"cassette", replay_path.empty() ? record_path : replay_path},
                {"pool", pool_path},
                {"max_steps", max_steps},
                {"max_rounds", max_rounds},
                {"shots", shots},
                {"sc_samples", consistency.r},
                {"sc_temperature", consistency.temperature},
                {"seed", consistency.seed},
                {"k", search.k},
                {"top_snippets", search.top_n_snippets},
                {"pages", search.m},
                {"passages", search.n},
                {"threshold", search.relevance_threshold},
                {"chunk_size", search.chunk_size},
                {"chunk_overlap", search.chunk_overlap},
                {"reranker", search.reranker},
                {"workers", search.workers}};
}

void apply_environment(AppConfig& cfg, bool base_url_explicit) {
    auto env = [](const char* name) -> std::string {
        const char* v = std::getenv(name);
        return v ? v : "";
    };
    cfg.llm_api_key = env("ODS_LLM_API_KEY");
    cfg.serp_api_key = env("ODS_SERP_API_KEY");
    cfg.math_api_key = env("ODS_MATH_API_KEY");
    if (!base_url_explicit && !env("ODS_LLM_BASE_URL").empty()) cfg.llm_base_url = env("ODS_LLM_BASE_URL");
}

std::string default_pool_embeddings_path(const std::string& pool_path) {
    return pool_path + ".embeddings.jsonl";
}

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::unique_ptr<App> make_app(const AppConfig& cfg_in, bool load_pool) {
    auto app = std::make_unique<App>();
    app->config = cfg_in;
    auto& cfg = app->config;
    cfg.validate();
    cfg.search.serp_api_key = cfg.serp_api_key;

    Gateway::Providers providers;
    auto mode = cfg.mode();
    if (mode != CassetteMode::replay) {
        if (!cfg.mock_script.empty()) {
            auto script = slurp(cfg.mock_script);
            try {
                auto mock = MockProvider::from_script(script);
                providers.llm = mock;
                providers.embedder = mock;
                providers.http = MockWeb::from_script(script);
            } catch (const std::exception& e) {
                throw ConfigError("bad mock script " + cfg.mock_script + ": " + e.what());
            }
        } else {
            auto http = std::make_shared<LiveHttpTransport>();
            providers.llm = std::make_shared<OpenAiCompatibleProvider>(http, cfg.llm_base_url, cfg.llm_api_key,
                                                                       cfg.llm_model);
            providers.embedder = std::make_shared<OpenAiCompatibleProvider>(http, cfg.llm_base_url,
                                                                            cfg.llm_api_key, cfg.embed_model);
            providers.judge = std::make_shared<OpenAiCompatibleProvider>(http, cfg.llm_base_url, cfg.llm_api_key,
                                                                         cfg.judge_model);
            providers.http = http;
        }
    }

    try {
        if (mode == CassetteMode::replay)
            app->cassette = Cassette::load(cfg.replay_path);
        else if (mode == CassetteMode::record) {
            app->cassette = Cassette::from_entries({});
            app->cassette->open_for_record(cfg.record_path);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    app->gateway = std::make_shared<Gateway>(std::move(providers), app->cassette, mode, cfg.llm_model,
                                             cfg.embed_model, cfg.judge_model);

    tools::RegistryConfig rc;
    rc.search = cfg.search;
    rc.calculator = {cfg.math_url, cfg.math_api_key};
    app->tools = std::make_unique<tools::ToolRegistry>(tools::registry_default(*app->gateway, rc));

    if (load_pool && !cfg.pool_path.empty() && cfg.agent == "v1") {
        try {
            app->pool = agent::load_pool(cfg.pool_path);
            auto sidecar = cfg.pool_embeddings_path.empty() ? default_pool_embeddings_path(cfg.pool_path)
                                                            : cfg.pool_embeddings_path;
            if (std::filesystem::exists(sidecar)) agent::attach_pool_embeddings(sidecar, app->pool);
            // Pool questions without sidecar embeddings are embedded up front.
            if (cfg.shots > 0 && !app->pool.empty()) agent::embed_pool(*app->gateway, app->pool);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("few-shot pool: ") + e.what());
        }
    }
    return app;
}

agent::AgentResult run_agent(App& app, const std::string& query) {
    const auto& cfg = app.config;
    if (cfg.agent == "v2") {
        codeact::CodeActConfig cc;
        cc.max_rounds = cfg.max_rounds;
        cc.consistency = cfg.consistency;
        return codeact::run_codeact(*app.gateway, query, cc, *app.tools);
    }
    agent::AgentConfig ac;
    ac.max_steps = cfg.max_steps;
    ac.shots = cfg.shots;
    ac.consistency = cfg.consistency;
    ac.search = cfg.search;
    return agent::run(*app.gateway, query, ac, *app.tools, app.pool);
}

json trace_to_json(const agent::AgentResult& res) {
    json steps = json::array();
    for (const auto& s : res.trace.history) {
        json j{{"thought", s.thought}, {"action", agent::to_string(s.action)}, {"action_input", s.action_input}};
        j["observation"] = s.observation ? json(*s.observation) : json(nullptr);
        steps.push_back(j);
    }
    json passages = json::array();
    for (const auto& p : res.trace.context.passages)
        passages.push_back(
            {{"url", p.source_url}, {"score", p.score}, {"start", p.char_span.start}, {"end", p.char_span.end}});
    auto opt = [](const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); };
    return json{{"query", res.trace.query},
                {"final_answer", opt(res.final_answer)},
                {"fallback_answer", opt(res.fallback_answer)},
                {"answer", opt(res.answer())},
                {"terminated_by", agent::to_string(res.terminated_by)},
                {"initial_search", res.trace.initial_search},
                {"searches_used", res.trace.searches_used},
                {"round_searches", res.round_searches},
                {"context", res.trace.context.rendered},
                {"passages", passages},
                {"steps", steps},
                {"metadata", res.metadata}};
}

}  // namespace ods::app
