#include "ods/eval.hpp"

#include "ods/text.hpp"
#include "ods/worker_pool.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

namespace ods::eval {

using nlohmann::json;

DatasetError::DatasetError(std::size_t line, const std::string& msg)
    : std::runtime_error("dataset line " + std::to_string(line) + ": " + msg), line_(line) {}

DuplicateId::DuplicateId(std::size_t line, const std::string& id)
    : std::runtime_error("dataset line " + std::to_string(line) + ": duplicate id '" + id + "'") {}

namespace {

std::string required_string(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key)) throw DatasetError(line, std::string("missing \"") + key + "\"");
    const auto& v = j.at(key);
    std::string s;
    if (v.is_string())
        s = v.get<std::string>();
    else if (v.is_number_integer())
        s = v.dump();
    else
        throw DatasetError(line, std::string("\"") + key + "\" must be a string");
    if (text::trim(s).empty()) throw DatasetError(line, std::string("\"") + key + "\" is empty");
    return s;
}

}  // namespace

std::vector<EvalItem> parse_dataset(std::string_view text) {
    std::vector<EvalItem> items;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DatasetError(line_no, std::string("not valid JSON (") + e.what() + ")");
        }
        if (!j.is_object()) throw DatasetError(line_no, "expected an object");
        EvalItem item;
        item.id = required_string(j, "id", line_no);
        item.question = required_string(j, "question", line_no);
        item.gold_answer = required_string(j, "answer", line_no);
        if (j.contains("topic") && !j["topic"].is_null()) {
            if (!j["topic"].is_string()) throw DatasetError(line_no, "\"topic\" must be a string");
            item.topic = j["topic"].get<std::string>();
        }
        if (!seen.insert(item.id).second) throw DuplicateId(line_no, item.id);
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<EvalItem> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_dataset(ss.str());
}

std::vector<EvalItem> sample_items(std::vector<EvalItem> items, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = items.size(); i > 1; --i) {
        auto j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
    if (n < items.size()) items.resize(n);
    return items;
}

const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::correct: return "correct";
        case Verdict::incorrect: return "incorrect";
        case Verdict::not_attempted: return "not_attempted";
    }
    return "incorrect";
}

Verdict verdict_from(const std::string& s) {
    if (s == "correct") return Verdict::correct;
    if (s == "not_attempted") return Verdict::not_attempted;
    if (s == "incorrect") return Verdict::incorrect;
    throw std::invalid_argument("unknown verdict: " + s);
}

Verdict grade_exact(const std::optional<std::string>& answer, const std::string& gold) {
    if (!answer) return Verdict::not_attempted;
    return text::normalize_answer(*answer) == text::normalize_answer(gold) ? Verdict::correct : Verdict::incorrect;
}

CompletionRequest judge_grading_request(const std::string& question, const std::string& answer,
                                        const std::string& gold) {
    CompletionRequest req;
    req.messages.push_back(
        {Role::system,
         "You grade answers to factual questions against a gold target. Reply CORRECT if the "
         "predicted answer contains the gold target's meaning without contradicting it, INCORRECT "
         "if it contradicts the gold target or gives a different answer, and NOT_ATTEMPTED if it "
         "declines, hedges without committing, or gives no answer. Reply with exactly one of "
         "CORRECT, INCORRECT, NOT_ATTEMPTED and nothing else."});
    req.messages.push_back(
        {Role::user, "Question: " + question + "\nGold target: " + gold + "\nPredicted answer: " + answer});
    req.temperature = 0.0;
    req.max_tokens = 8;
    return req;
}

Verdict grade_judge(Gateway& gw, const std::string& question, const std::optional<std::string>& answer,
                    const std::string& gold) {
    if (!answer) return Verdict::not_attempted;
    auto out = text::trim(gw.judge(judge_grading_request(question, *answer, gold)));
    if (out == "CORRECT") return Verdict::correct;
    if (out == "NOT_ATTEMPTED") return Verdict::not_attempted;
    return Verdict::incorrect;
}

json EvalRecord::to_json() const {
    json j{{"item_id", item_id},
           {"model_answer", model_answer ? json(*model_answer) : json(nullptr)},
           {"verdict", to_string(verdict)},
           {"searches_used", searches_used},
           {"latency_ms", latency_ms},
           {"terminated_by", terminated_by}};
    if (!metadata.empty()) j["metadata"] = metadata;
    return j;
}

EvalRecord EvalRecord::from_json(const json& j) {
    EvalRecord r;
    r.item_id = j.at("item_id").get<std::string>();
    if (j.contains("model_answer") && !j["model_answer"].is_null()) r.model_answer = j["model_answer"].get<std::string>();
    r.verdict = verdict_from(j.at("verdict").get<std::string>());
    r.searches_used = j.at("searches_used").get<std::size_t>();
    r.latency_ms = j.value("latency_ms", std::uint64_t{0});
    r.terminated_by = j.value("terminated_by", std::string());
    if (j.contains("metadata")) r.metadata = j["metadata"].get<std::map<std::string, std::string>>();
    return r;
}

std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
    std::vector<EvalRecord> out;
    std::ifstream in(path, std::ios::binary);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(EvalRecord::from_json(json::parse(line)));
        } catch (const std::exception&) {
            // A partially written line from an interrupted run; that item reruns.
        }
    }
    return out;
}

std::string histogram_bucket(std::size_t searches) {
    return searches >= 5 ? "5+" : std::to_string(searches);
}

json RunReport::to_json() const {
    return json{{"accuracy", accuracy},
                {"per_topic", per_topic},
                {"mean_searches", mean_searches},
                {"histogram", histogram},
                {"n_items", n_items},
                {"counts", {{"correct", n_correct}, {"incorrect", n_incorrect}, {"not_attempted", n_not_attempted}}},
                {"config", config}};
}

RunReport aggregate(const std::vector<EvalItem>& items, std::vector<EvalRecord> records, const json& config) {
    std::map<std::string, const EvalItem*> by_id;
    for (const auto& it : items) by_id[it.id] = &it;
    std::stable_sort(records.begin(), records.end(),
                     [](const EvalRecord& a, const EvalRecord& b) { return a.item_id < b.item_id; });

    RunReport rep;
    rep.config = config;
    for (const char* b : {"0", "1", "2", "3", "4", "5+"}) rep.histogram[b] = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> topics;  // correct, total
    std::set<std::string> counted;
    std::size_t total_searches = 0;
    for (const auto& r : records) {
        auto it = by_id.find(r.item_id);
        if (it == by_id.end() || !counted.insert(r.item_id).second) continue;
        ++rep.n_items;
        switch (r.verdict) {
            case Verdict::correct: ++rep.n_correct; break;
            case Verdict::incorrect: ++rep.n_incorrect; break;
            case Verdict::not_attempted: ++rep.n_not_attempted; break;
        }
        total_searches += r.searches_used;
        ++rep.histogram[histogram_bucket(r.searches_used)];
        if (it->second->topic) {
            auto& t = topics[*it->second->topic];
            t.second += 1;
            if (r.verdict == Verdict::correct) t.first += 1;
        }
    }
    if (rep.n_items) {
        rep.accuracy = static_cast<double>(rep.n_correct) / static_cast<double>(rep.n_items);
        rep.mean_searches = static_cast<double>(total_searches) / static_cast<double>(rep.n_items);
    }
    for (const auto& [topic, ct] : topics)
        rep.per_topic[topic] = static_cast<double>(ct.first) / static_cast<double>(ct.second);
    return rep;
}

RunReport run_eval(const std::vector<EvalItem>& items, const AgentFn& agent, const GraderFn& grader,
                   const EvalOptions& opts) {
    if (items.empty()) throw std::invalid_argument("run_eval: dataset is empty");
    if (opts.records_path.empty()) throw std::invalid_argument("run_eval: records path is required");

    std::set<std::string> done;
    for (const auto& r : read_records(opts.records_path)) done.insert(r.item_id);
    std::vector<const EvalItem*> todo;
    for (const auto& it : items)
        if (!done.count(it.id)) todo.push_back(&it);
    if (opts.stop_after && *opts.stop_after < todo.size()) todo.resize(*opts.stop_after);

    {
        // Drop a truncated tail so appended records start on a fresh line.
        std::ifstream probe(opts.records_path, std::ios::binary | std::ios::ate);
        if (probe && probe.tellg() > 0) {
            probe.seekg(-1, std::ios::end);
            char last = 0;
            probe.get(last);
            probe.close();
            if (last != '\n') std::ofstream(opts.records_path, std::ios::binary | std::ios::app) << "\n";
        }
    }
    std::ofstream out(opts.records_path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot write records file: " + opts.records_path.string());
    std::mutex out_mu;

    run_bounded(todo.size(), opts.parallelism, [&](std::size_t i) {
        const auto& item = *todo[i];
        EvalRecord rec;
        rec.item_id = item.id;
        auto t0 = std::chrono::steady_clock::now();
        try {
            auto res = agent(item);
            rec.model_answer = res.answer();
            rec.searches_used = res.trace.searches_used;
            rec.terminated_by = agent::to_string(res.terminated_by);
        } catch (const std::exception& e) {
            rec.metadata["agent_error"] = e.what();
            rec.terminated_by = "error";
        }
        try {
            rec.verdict = grader(item, rec.model_answer);
        } catch (const std::exception& e) {
            rec.verdict = Verdict::not_attempted;
            rec.metadata["grader_error"] = e.what();
        }
        if (rec.verdict == Verdict::not_attempted && rec.model_answer) {
            rec.metadata["hedged_answer"] = *rec.model_answer;
            rec.model_answer.reset();
        }
        if (rec.verdict != Verdict::not_attempted && !rec.model_answer) rec.verdict = Verdict::not_attempted;
        rec.latency_ms = static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count());
        std::lock_guard lk(out_mu);
        out << rec.to_json().dump() << "\n";
        out.flush();
    });
    out.close();

    return aggregate(items, read_records(opts.records_path), opts.config);
}

}  // namespace ods::eval
