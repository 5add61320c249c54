#pragma once

#include "ods/gateway.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>

namespace testing {

inline std::filesystem::path fixtures() { return ODS_FIXTURES_DIR; }

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Fresh per-test scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::path(ODS_SCRATCH_DIR) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct MockSetup {
    std::shared_ptr<ods::MockProvider> llm;
    std::shared_ptr<ods::MockWeb> web;
    std::shared_ptr<ods::Gateway> gw;
};

inline MockSetup mock_gateway(const nlohmann::json& script) {
    MockSetup s;
    s.llm = ods::MockProvider::from_script(script.dump());
    s.web = ods::MockWeb::from_script(script.dump());
    s.gw = std::make_shared<ods::Gateway>(ods::Gateway::Providers{s.llm, s.llm, s.web, nullptr});
    s.gw->set_retry({1, 0.0});
    return s;
}

inline std::string random_word(std::mt19937_64& rng, std::size_t min_len = 1, std::size_t max_len = 8) {
    static const char* letters = "abcdefghijklmnopqrstuvwxyz";
    std::size_t n = min_len + rng() % (max_len - min_len + 1);
    std::string w;
    for (std::size_t i = 0; i < n; ++i) w.push_back(letters[rng() % 26]);
    return w;
}

}  // namespace testing
