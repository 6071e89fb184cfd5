#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "evalroom/config.hpp"
#include "evalroom/room.hpp"
#include "evalroom/topics.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(EVALROOM_FIXTURES_DIR) / name;
}

inline std::filesystem::path golden(const std::string& name) {
    return std::filesystem::path(EVALROOM_GOLDEN_DIR) / name;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

inline evalroom::TaskConfig load_fixture_config(const std::string& name) {
    return evalroom::load_task_config(fixture(name));
}

inline std::shared_ptr<const evalroom::TaskConfig> shared_config(const std::string& name) {
    return std::make_shared<const evalroom::TaskConfig>(load_fixture_config(name));
}

inline evalroom::TopicSet load_fixture_topics(const std::string& name) {
    return evalroom::load_topics_file(fixture(name).string());
}

/// 2024-05-01T09:00:00.000Z
inline evalroom::Timestamp epoch() { return evalroom::parse_rfc3339("2024-05-01T09:00:00Z"); }

/// Minimal valid config with every knob a test usually turns.
inline std::string config_yaml(int turns, int humans = 1, const std::string& policy = "alternating",
                               const std::string& extra = "") {
    std::ostringstream y;
    y << "task_name: t\n"
      << "chat:\n  human_turns_required: " << turns << "\n  humans_per_thread: " << humans
      << "\n  policy_name: " << policy << "\n"
      << "survey:\n  questions:\n"
      << "    - {id: q, prompt: p, kind: radio, choices: [a, b]}\n"
      << "onboarding:\n  agreement_file: agreement.html\n  checkbox_texts: [ok]\n"
      << "bots:\n  - {name: scripted, base_url: 'inproc://scripted'}\n"
      << extra;
    if (extra.find("instance:") == std::string::npos) y << "instance: {tcp_port: 8080, store_path: ':memory:'}\n";
    return y.str();
}

inline std::shared_ptr<const evalroom::TaskConfig> inline_config(int turns, int humans = 1,
                                                                  const std::string& policy = "alternating",
                                                                  const std::string& extra = "") {
    evalroom::ConfigContext ctx;
    ctx.base_dir = fixture("");
    return std::make_shared<const evalroom::TaskConfig>(
        evalroom::parse_task_config(config_yaml(turns, humans, policy, extra), ctx));
}

inline evalroom::UserRecord consented_user(const std::string& id) {
    evalroom::UserRecord u;
    u.id = id;
    u.agreement_accepted_at = epoch();
    return u;
}

} // namespace testing
