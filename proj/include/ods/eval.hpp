#pragma once

// Dataset runner: executes an agent over question/answer items, grades the
// answers and aggregates accuracy plus search-count statistics.

#include "ods/agent.hpp"
#include "ods/gateway.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ods::eval {

struct EvalItem {
    std::string id;
    std::string question;
    std::string gold_answer;
    std::optional<std::string> topic;
};

class DatasetError : public std::runtime_error {
public:
    DatasetError(std::size_t line, const std::string& msg);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class DuplicateId : public std::runtime_error {
public:
    DuplicateId(std::size_t line, const std::string& id);
};

/// JSONL, one {"id", "question", "answer", "topic"?} object per line. Blank
/// lines are skipped; ids may be strings or integers.
std::vector<EvalItem> parse_dataset(std::string_view text);
std::vector<EvalItem> load_dataset(const std::filesystem::path& path);

/// Seeded Fisher-Yates shuffle, first `n` items.
std::vector<EvalItem> sample_items(std::vector<EvalItem> items, std::size_t n, std::uint64_t seed);

enum class Verdict { correct, incorrect, not_attempted };
const char* to_string(Verdict v);
Verdict verdict_from(const std::string& s);

Verdict grade_exact(const std::optional<std::string>& answer, const std::string& gold);

/// LLM-as-judge grading with a fixed prompt. Output other than exactly
/// CORRECT / INCORRECT / NOT_ATTEMPTED grades as incorrect. Provider
/// failures propagate.
Verdict grade_judge(Gateway& gw, const std::string& question, const std::optional<std::string>& answer,
                    const std::string& gold);
CompletionRequest judge_grading_request(const std::string& question, const std::string& answer,
                                        const std::string& gold);

struct EvalRecord {
    std::string item_id;
    std::optional<std::string> model_answer;
    Verdict verdict = Verdict::not_attempted;
    std::size_t searches_used = 0;
    std::uint64_t latency_ms = 0;
    std::string terminated_by;
    std::map<std::string, std::string> metadata;

    nlohmann::json to_json() const;
    static EvalRecord from_json(const nlohmann::json& j);
};

/// Tolerates a truncated final line (interrupted writer).
std::vector<EvalRecord> read_records(const std::filesystem::path& path);

std::string histogram_bucket(std::size_t searches);

struct RunReport {
    double accuracy = 0.0;
    std::map<std::string, double> per_topic;
    double mean_searches = 0.0;
    std::map<std::string, std::size_t> histogram;  // "0".."4", "5+"
    std::size_t n_items = 0;
    std::size_t n_correct = 0;
    std::size_t n_incorrect = 0;
    std::size_t n_not_attempted = 0;
    nlohmann::json config;

    nlohmann::json to_json() const;
};

/// Report over `records` restricted to `items`, after sorting by id.
RunReport aggregate(const std::vector<EvalItem>& items, std::vector<EvalRecord> records,
                    const nlohmann::json& config = nlohmann::json::object());

using AgentFn = std::function<agent::AgentResult(const EvalItem&)>;
using GraderFn = std::function<Verdict(const EvalItem&, const std::optional<std::string>& answer)>;

struct EvalOptions {
    std::filesystem::path records_path;
    std::size_t parallelism = 4;
    nlohmann::json config = nlohmann::json::object();
    // Stop after this many new records (simulates an interrupted run in tests).
    std::optional<std::size_t> stop_after;
};

/// Runs every item whose id is not yet in the records file, appending one
/// record per completed item, then aggregates the whole file.
RunReport run_eval(const std::vector<EvalItem>& items, const AgentFn& agent, const GraderFn& grader,
                   const EvalOptions& opts);

}  // namespace ods::eval
