#pragma once

// Effective configuration and the objects built from it.

#include "ods/agent.hpp"
#include "ods/codeact.hpp"
#include "ods/eval.hpp"
#include "ods/gateway.hpp"
#include "ods/toolbox.hpp"

#include <json.hpp>

#include <memory>
#include <stdexcept>
#include <string>

namespace ods::app {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AppConfig {
    std::string agent = "v1";  // v1: ReAct loop, v2: code-as-action loop

    std::string llm_base_url = "https://api.openai.com/v1";
    std::string llm_model = "llama-3.1-70b-instruct";
    std::string embed_model = "text-embedding-3-small";
    std::string judge_model = "gpt-4o-mini";
    std::string math_url = "https://api.wolframalpha.com/v1/result";
    // Offline scripted providers (MockProvider + MockWeb) instead of live ones.
    std::string mock_script;

    std::string record_path;
    std::string replay_path;

    std::string pool_path;
    std::string pool_embeddings_path;  // default: <pool>.embeddings.jsonl

    std::size_t max_steps = 8;
    std::size_t max_rounds = 6;
    std::size_t shots = 5;
    agent::ConsistencyConfig consistency;
    search::SearchConfig search;

    // Secrets, from the environment only.
    std::string llm_api_key;
    std::string serp_api_key;
    std::string math_api_key;

    CassetteMode mode() const;
    /// Throws ConfigError.
    void validate() const;
    /// Everything except secrets.
    nlohmann::json to_json() const;
};

/// Reads ODS_LLM_API_KEY, ODS_SERP_API_KEY, ODS_MATH_API_KEY and (when the
/// base URL was not set explicitly) ODS_LLM_BASE_URL.
void apply_environment(AppConfig& cfg, bool base_url_explicit);

std::string default_pool_embeddings_path(const std::string& pool_path);

struct App {
    AppConfig config;
    std::shared_ptr<Cassette> cassette;
    std::shared_ptr<Gateway> gateway;
    std::unique_ptr<tools::ToolRegistry> tools;
    std::vector<agent::FewShotExample> pool;
};

/// Validates the config, opens the cassette and builds providers, tools and
/// the few-shot pool. Throws ConfigError.
std::unique_ptr<App> make_app(const AppConfig& cfg, bool load_pool = true);

agent::AgentResult run_agent(App& app, const std::string& query);

nlohmann::json trace_to_json(const agent::AgentResult& res);

}  // namespace ods::app
