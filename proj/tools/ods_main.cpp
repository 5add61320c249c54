// ods: ask a question, run an eval, or precompute few-shot embeddings.
//
// Exit codes: 0 answered / completed, 1 configuration or runtime error,
// 2 no answer produced (fallback exhausted).

#include "ods/app.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace ods;
using nlohmann::json;

namespace {

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw app::ConfigError("cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Open search agent"};
    cli.set_config("--config", "", "Flat key = value config file; flags override it");
    cli.require_subcommand(1);

    app::AppConfig cfg;
    cli.add_option("--agent", cfg.agent, "v1 (ReAct) or v2 (code actions)")->capture_default_str();
    auto* base_url = cli.add_option("--llm-base-url", cfg.llm_base_url, "OpenAI-compatible endpoint")
                         ->capture_default_str();
    cli.add_option("--llm-model", cfg.llm_model)->capture_default_str();
    cli.add_option("--embed-model", cfg.embed_model)->capture_default_str();
    cli.add_option("--judge-model", cfg.judge_model)->capture_default_str();
    cli.add_option("--math-url", cfg.math_url, "Remote math API; empty disables it")->capture_default_str();
    cli.add_option("--mock-script", cfg.mock_script, "Use scripted offline providers from this JSON file");
    auto* rec = cli.add_option("--record", cfg.record_path, "Record provider traffic to this cassette");
    cli.add_option("--replay", cfg.replay_path, "Replay provider traffic from this cassette")->excludes(rec);
    cli.add_option("--pool", cfg.pool_path, "Few-shot pool file");
    cli.add_option("--pool-embeddings", cfg.pool_embeddings_path, "Sidecar embeddings for the pool");
    cli.add_option("--max-steps", cfg.max_steps)->capture_default_str();
    cli.add_option("--max-rounds", cfg.max_rounds)->capture_default_str();
    cli.add_option("--shots", cfg.shots, "Few-shot examples per prompt")->capture_default_str();
    cli.add_option("--sc-samples", cfg.consistency.r)->capture_default_str();
    cli.add_option("--sc-temperature", cfg.consistency.temperature)->capture_default_str();
    cli.add_option("--seed", cfg.consistency.seed)->capture_default_str();
    cli.add_option("--k", cfg.search.k, "Query rephrasings")->capture_default_str();
    cli.add_option("--top-snippets", cfg.search.top_n_snippets)->capture_default_str();
    cli.add_option("--pages", cfg.search.m, "Pages scraped per search")->capture_default_str();
    cli.add_option("--passages", cfg.search.n, "Passages kept per page")->capture_default_str();
    cli.add_option("--threshold", cfg.search.relevance_threshold)->capture_default_str();
    cli.add_option("--chunk-size", cfg.search.chunk_size)->capture_default_str();
    cli.add_option("--chunk-overlap", cfg.search.chunk_overlap)->capture_default_str();
    cli.add_option("--reranker", cfg.search.reranker, "embedding or lexical")->capture_default_str();
    cli.add_option("--workers", cfg.search.workers)->capture_default_str();
    cli.add_option("--page-timeout", cfg.search.page_timeout_s)->capture_default_str();
    cli.add_option("--search-budget", cfg.search.augmentation_budget_s)->capture_default_str();

    auto* ask = cli.add_subcommand("ask", "Answer one question");
    ask->fallthrough();
    std::string query, trace_path;
    ask->add_option("query", query, "The question")->required();
    ask->add_option("--trace", trace_path, "Write the full trace as JSON");

    auto* ev = cli.add_subcommand("eval", "Run an agent over a JSONL dataset");
    ev->fallthrough();
    std::string dataset, records = "records.jsonl", report_path = "report.json", grader = "exact";
    std::size_t parallel = 4;
    std::optional<std::size_t> sample;
    ev->add_option("--dataset", dataset)->required();
    ev->add_option("--records", records)->capture_default_str();
    ev->add_option("--report", report_path)->capture_default_str();
    ev->add_option("--grader", grader, "exact or judge")->capture_default_str();
    ev->add_option("--parallel", parallel)->capture_default_str();
    ev->add_option("--sample", sample, "Evaluate a seeded random subset of this size");

    auto* pe = cli.add_subcommand("pool-embed", "Embed the few-shot pool into a sidecar file");
    pe->fallthrough();
    std::string pool_out;
    pe->add_option("--out", pool_out, "Sidecar path (default: <pool>.embeddings.jsonl)");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = cli.exit(e);
        return rc == 0 ? 0 : 1;
    }
    app::apply_environment(cfg, base_url->count() > 0);

    try {
        if (*ask) {
            auto a = app::make_app(cfg);
            auto res = app::run_agent(*a, query);
            if (!trace_path.empty()) {
                auto t = app::trace_to_json(res);
                t["config"] = a->config.to_json();
                write_json(trace_path, t);
            }
            auto answer = res.answer();
            if (!answer) {
                std::cerr << "no answer: " << agent::to_string(res.terminated_by);
                if (res.metadata.count("fallback_error")) std::cerr << " (" << res.metadata["fallback_error"] << ")";
                std::cerr << "\n";
                return 2;
            }
            std::cout << *answer << "\n";
            return 0;
        }

        if (*ev) {
            if (grader != "exact" && grader != "judge") throw app::ConfigError("grader must be exact or judge");
            if (grader == "judge" && cfg.mode() != CassetteMode::replay && cfg.mock_script.empty() &&
                cfg.llm_api_key.empty())
                throw app::ConfigError("--grader judge needs ODS_LLM_API_KEY for the judge model");
            std::vector<eval::EvalItem> items;
            try {
                items = eval::load_dataset(dataset);
            } catch (const std::exception& e) {
                throw app::ConfigError(e.what());
            }
            if (items.empty()) throw app::ConfigError("dataset is empty: " + dataset);
            if (sample) items = eval::sample_items(std::move(items), *sample, cfg.consistency.seed);

            auto a = app::make_app(cfg);
            auto& gw = *a->gateway;
            eval::AgentFn agent_fn = [&](const eval::EvalItem& it) { return app::run_agent(*a, it.question); };
            eval::GraderFn grade = [&](const eval::EvalItem& it, const std::optional<std::string>& ans) {
                if (grader == "judge") return eval::grade_judge(gw, it.question, ans, it.gold_answer);
                return eval::grade_exact(ans, it.gold_answer);
            };
            eval::EvalOptions opts;
            opts.records_path = records;
            opts.parallelism = parallel;
            opts.config = a->config.to_json();
            opts.config["grader"] = grader;
            opts.config["dataset"] = dataset;
            if (sample) opts.config["sample"] = *sample;
            auto rep = eval::run_eval(items, agent_fn, grade, opts);
            write_json(report_path, rep.to_json());
            std::printf("accuracy=%.4f mean_searches=%.2f n=%zu correct=%zu incorrect=%zu not_attempted=%zu\n",
                        rep.accuracy, rep.mean_searches, rep.n_items, rep.n_correct, rep.n_incorrect,
                        rep.n_not_attempted);
            return 0;
        }

        if (*pe) {
            if (cfg.pool_path.empty()) throw app::ConfigError("pool-embed needs --pool");
            auto a = app::make_app(cfg, false);
            auto pool = agent::load_pool(cfg.pool_path);
            agent::embed_pool(*a->gateway, pool);
            auto out = pool_out.empty() ? app::default_pool_embeddings_path(cfg.pool_path) : pool_out;
            agent::write_pool_embeddings(out, pool);
            std::cout << "embedded " << pool.size() << " examples into " << out << "\n";
            return 0;
        }
    } catch (const app::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
