#pragma once

#include <chrono>
#include <string>

#include <json.hpp>

namespace evalroom {

/// Flat key -> value map forwarded to bots. Always a JSON object.
using Params = nlohmann::json;

struct BotEndpointSpec {
    std::string name;
    std::string base_url;
    std::chrono::milliseconds timeout{30'000};
    int max_retries = 2;
    Params default_params = Params::object();

    bool operator==(const BotEndpointSpec&) const = default;
};

/// Thread params win on every key present in both maps.
Params overlay_params(const Params& defaults, const Params& thread_params);

} // namespace evalroom
