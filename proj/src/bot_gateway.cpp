#include "evalroom/bot_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "evalroom/url.hpp"

namespace evalroom {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(AuthorRole role) {
    switch (role) {
    case AuthorRole::human: return "human";
    case AuthorRole::bot: return "bot";
    case AuthorRole::seed: return "seed";
    }
    return "human";
}

AuthorRole author_role_from_string(std::string_view text) {
    if (text == "human") return AuthorRole::human;
    if (text == "bot") return AuthorRole::bot;
    if (text == "seed") return AuthorRole::seed;
    throw std::invalid_argument("unknown author role '" + std::string(text) + "'");
}

std::string_view to_string(BotFailure failure) {
    switch (failure) {
    case BotFailure::timeout: return "timeout";
    case BotFailure::bad_status: return "bad_status";
    case BotFailure::malformed_body: return "malformed_body";
    }
    return "timeout";
}

BotError::BotError(std::string endpoint, std::vector<AttemptFailure> failures)
    : Error("BotError",
            [&] {
                const auto& last = failures.back();
                std::string msg = "bot '" + endpoint + "' failed after " + std::to_string(failures.size()) +
                                  " attempt(s): " + std::string(to_string(last.cause));
                if (last.cause == BotFailure::bad_status) msg += "(" + std::to_string(last.status) + ")";
                if (!last.detail.empty()) msg += " - " + last.detail;
                return msg;
            }(),
            502),
      endpoint_(std::move(endpoint)), failures_(std::move(failures)) {}

ordered_json to_wire(const BotTurnRequest& request) {
    ordered_json out;
    out["thread_id"] = request.thread_id;
    out["transcript"] = ordered_json::array();
    for (const auto& e : request.transcript) {
        ordered_json entry;
        entry["author_role"] = to_string(e.author_role);
        entry["speaker_label"] = e.speaker_label;
        entry["text"] = e.text;
        entry["is_seed"] = e.is_seed;
        out["transcript"].push_back(std::move(entry));
    }
    out["topic_data"] = ordered_json::parse(request.topic_data.dump());
    out["params"] = ordered_json::parse(request.params.dump());
    return out;
}

ordered_json to_wire(const BotTurnResponse& response) {
    ordered_json out;
    out["text"] = response.text;
    out["meta"] = ordered_json::parse(response.meta.dump());
    return out;
}

BotTurnRequest request_from_wire(const json& body) {
    auto fail = [](const std::string& what) -> BotTurnRequest { throw BadRequest("bot request: " + what); };
    if (!body.is_object()) return fail("body must be an object");
    BotTurnRequest req;
    if (!body.contains("thread_id") || !body["thread_id"].is_string()) return fail("thread_id must be a string");
    req.thread_id = body["thread_id"].get<std::string>();
    if (!body.contains("transcript") || !body["transcript"].is_array()) return fail("transcript must be an array");
    for (const auto& e : body["transcript"]) {
        if (!e.is_object() || !e.contains("author_role") || !e["author_role"].is_string() ||
            !e.contains("speaker_label") || !e["speaker_label"].is_string() || !e.contains("text") ||
            !e["text"].is_string() || !e.contains("is_seed") || !e["is_seed"].is_boolean())
            return fail("malformed transcript entry");
        TranscriptEntry entry;
        try {
            entry.author_role = author_role_from_string(e["author_role"].get<std::string>());
        } catch (const std::invalid_argument& ex) {
            return fail(ex.what());
        }
        entry.speaker_label = e["speaker_label"].get<std::string>();
        entry.text = e["text"].get<std::string>();
        entry.is_seed = e["is_seed"].get<bool>();
        req.transcript.push_back(std::move(entry));
    }
    if (body.contains("topic_data")) {
        if (!body["topic_data"].is_object()) return fail("topic_data must be an object");
        req.topic_data = body["topic_data"];
    }
    if (body.contains("params")) {
        if (!body["params"].is_object()) return fail("params must be an object");
        req.params = body["params"];
    }
    return req;
}

std::optional<AttemptFailure> classify_reply(const HttpReply& reply, BotTurnResponse& out) {
    if (reply.status < 200 || reply.status > 299)
        return AttemptFailure{0, BotFailure::bad_status, reply.status, "HTTP " + std::to_string(reply.status)};
    json body;
    try {
        body = json::parse(reply.body);
    } catch (const json::exception& e) {
        return AttemptFailure{0, BotFailure::malformed_body, reply.status, std::string("invalid JSON: ") + e.what()};
    }
    if (!body.is_object() || !body.contains("text") || !body["text"].is_string())
        return AttemptFailure{0, BotFailure::malformed_body, reply.status, "response needs a string 'text'"};
    const auto& text = body["text"].get_ref<const std::string&>();
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); }))
        return AttemptFailure{0, BotFailure::malformed_body, reply.status, "response text is empty"};
    if (body.contains("meta") && !body["meta"].is_object())
        return AttemptFailure{0, BotFailure::malformed_body, reply.status, "'meta' must be an object"};
    out.text = text;
    out.meta = body.contains("meta") ? body["meta"] : json::object();
    return std::nullopt;
}

// ---------------------------------------------------------------- transports

void InProcessBots::add(const std::string& host, BotHandler handler) {
    std::unique_lock lock(mutex_);
    handlers_[host] = std::move(handler);
}

HttpReply InProcessBots::post_json(const BotEndpointSpec& spec, const std::string& path, const std::string& body) {
    const auto url = parse_url(spec.base_url);
    if (!url) throw MalformedUrl(spec.base_url);
    BotHandler handler;
    {
        std::shared_lock lock(mutex_);
        auto it = handlers_.find(url->host);
        if (it == handlers_.end()) throw TransportTimeout("no in-process bot at " + spec.base_url);
        handler = it->second;
    }
    if (path != "/respond") return HttpReply{404, R"({"error":"not found"})"};
    return handler(body);
}

HttpReply HttpBotTransport::post_json(const BotEndpointSpec& spec, const std::string& path, const std::string& body) {
    const auto url = parse_url(spec.base_url);
    if (!url || url->scheme == "inproc") throw MalformedUrl(spec.base_url);
    httplib::Client client(url->origin());
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(spec.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(spec.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    auto res = client.Post(url->path + path, body, "application/json");
    if (!res) throw TransportTimeout("POST " + spec.base_url + path + ": " + httplib::to_string(res.error()));
    return HttpReply{res->status, res->body};
}

RoutingTransport::RoutingTransport(std::shared_ptr<InProcessBots> local) : local_(std::move(local)) {}

HttpReply RoutingTransport::post_json(const BotEndpointSpec& spec, const std::string& path, const std::string& body) {
    if (spec.base_url.starts_with("inproc://")) return local_->post_json(spec, path, body);
    return http_.post_json(spec, path, body);
}

// ---------------------------------------------------------------- registry

void BotRegistry::register_endpoint(BotEndpointSpec spec) {
    if (spec.name.empty()) throw InvariantError("bot endpoint name must be nonempty");
    if (!parse_url(spec.base_url)) throw MalformedUrl(spec.base_url);
    if (spec.timeout.count() <= 0) throw InvariantError("bot endpoint timeout must be positive");
    if (spec.max_retries < 0) throw InvariantError("bot endpoint max_retries must be nonnegative");
    std::unique_lock lock(mutex_);
    if (endpoints_.count(spec.name)) throw DuplicateName(spec.name);
    auto name = spec.name;
    endpoints_.emplace(std::move(name), std::move(spec));
}

const BotEndpointSpec* BotRegistry::find(std::string_view name) const {
    std::shared_lock lock(mutex_);
    auto it = endpoints_.find(name);
    return it == endpoints_.end() ? nullptr : &it->second;
}

BotEndpointSpec BotRegistry::at(std::string_view name) const {
    std::shared_lock lock(mutex_);
    auto it = endpoints_.find(name);
    if (it == endpoints_.end()) throw BotUnavailable(std::string(name));
    return it->second;
}

std::size_t BotRegistry::size() const {
    std::shared_lock lock(mutex_);
    return endpoints_.size();
}

// ---------------------------------------------------------------- gateway

BotGateway::BotGateway(std::shared_ptr<BotTransport> transport, RetryPolicy policy, Sleeper sleeper, std::uint64_t seed)
    : transport_(std::move(transport)), policy_(policy), sleeper_(std::move(sleeper)), rng_(seed) {
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::chrono::milliseconds BotGateway::backoff_delay(int retry) {
    const double cap = static_cast<double>(policy_.base.count()) * std::pow(policy_.factor, retry);
    const auto cap_ms = static_cast<std::int64_t>(std::min(cap, 3'600'000.0));
    if (!policy_.full_jitter || cap_ms <= 0) return std::chrono::milliseconds(cap_ms);
    std::lock_guard lock(rng_mutex_);
    return std::chrono::milliseconds(std::uniform_int_distribution<std::int64_t>(0, cap_ms)(rng_));
}

BotTurnOutcome BotGateway::request_turn(const BotEndpointSpec& spec, const BotTurnRequest& request) {
    const auto body = to_wire(request).dump();
    std::vector<AttemptFailure> failures;
    const int max_attempts = spec.max_retries + 1;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        if (attempt > 1) sleeper_(backoff_delay(attempt - 2));
        std::optional<AttemptFailure> failure;
        BotTurnResponse response;
        try {
            failure = classify_reply(transport_->post_json(spec, "/respond", body), response);
        } catch (const TransportTimeout& e) {
            failure = AttemptFailure{0, BotFailure::timeout, 0, e.what()};
        }
        if (!failure) return BotTurnOutcome{std::move(response), attempt, std::move(failures)};
        failure->attempt = attempt;
        failures.push_back(std::move(*failure));
    }
    throw BotError(spec.name, std::move(failures));
}

} // namespace evalroom
