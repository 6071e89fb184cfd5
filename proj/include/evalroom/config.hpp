#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evalroom/bot_endpoint.hpp"
#include "evalroom/money.hpp"
#include "evalroom/survey.hpp"

namespace evalroom {

struct ChatSettings {
    int human_turns_required = 0; // 0 = static / third-person mode
    int humans_per_thread = 1;
    int bots_per_thread = 1;
    std::string policy_name = "alternating";
    bool allow_chat_after_done = false;

    bool operator==(const ChatSettings&) const = default;
};

struct OnboardingSettings {
    std::filesystem::path agreement_file; // resolved, absolute
    std::vector<std::string> checkbox_texts;

    bool operator==(const OnboardingSettings&) const = default;
};

/// std::nullopt means unlimited.
struct LimitSettings {
    std::optional<int> max_threads_per_worker;
    std::optional<int> max_threads_per_topic;

    bool operator==(const LimitSettings&) const = default;
};

enum class CrowdPlatform { none, mock_mturk, external_url };

std::string_view to_string(CrowdPlatform platform);

struct CrowdSettings {
    CrowdPlatform platform = CrowdPlatform::none;
    std::optional<Money> reward;
    std::string title;
    std::string description;

    bool operator==(const CrowdSettings&) const = default;
};

struct InstanceSettings {
    int tcp_port = 8080;
    std::string path_prefix;        // "" or "/name", never a trailing slash
    std::string public_url;         // scheme://host[:port] used in entry urls
    std::string store_path = "evalroom.db";
    int long_poll_seconds = 25;

    bool operator==(const InstanceSettings&) const = default;
};

struct TaskConfig {
    std::string task_name;
    ChatSettings chat;
    SurveySpec survey;
    OnboardingSettings onboarding;
    LimitSettings limits;
    CrowdSettings crowd;
    std::vector<BotEndpointSpec> bots;
    InstanceSettings instance;

    bool operator==(const TaskConfig&) const = default;
};

struct ConfigContext {
    /// Relative agreement_file paths resolve against this directory.
    std::filesystem::path base_dir = std::filesystem::current_path();
    /// Off when re-reading a snapshot whose files may have moved since launch.
    bool check_files = true;
    /// Policy names accepted by chat.policy_name; empty = accept any name.
    std::vector<std::string> known_policies = {"alternating", "round_robin"};
};

/// Strict parse: unknown keys anywhere are SchemaErrors.
TaskConfig parse_task_config(std::string_view yaml_text, const ConfigContext& context = {});
TaskConfig load_task_config(const std::filesystem::path& file, ConfigContext context = {});

/// Canonical YAML with every default spelled out.
std::string serialize_task_config(const TaskConfig& config);

/// Stable short identity of a config: hex digest of its canonical form.
std::string config_identity(const TaskConfig& config);

std::string normalize_path_prefix(std::string_view prefix); // throws SchemaError

} // namespace evalroom
