#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "evalroom/bot_endpoint.hpp"
#include "evalroom/error.hpp"
#include "evalroom/message.hpp"

namespace evalroom {

// Wire contract: POST {base_url}/respond with a BotTurnRequest body, answered
// by a BotTurnResponse body. Both are JSON.

struct TranscriptEntry {
    AuthorRole author_role = AuthorRole::human;
    std::string speaker_label;
    std::string text;
    bool is_seed = false;

    bool operator==(const TranscriptEntry&) const = default;
};

struct BotTurnRequest {
    std::string thread_id;
    std::vector<TranscriptEntry> transcript;
    nlohmann::json topic_data = nlohmann::json::object();
    Params params = Params::object();

    bool operator==(const BotTurnRequest&) const = default;
};

struct BotTurnResponse {
    std::string text;
    nlohmann::json meta = nlohmann::json::object();
};

nlohmann::ordered_json to_wire(const BotTurnRequest& request);
nlohmann::ordered_json to_wire(const BotTurnResponse& response);
/// Throws BadRequest when the body does not follow the request schema.
BotTurnRequest request_from_wire(const nlohmann::json& body);

enum class BotFailure { timeout, bad_status, malformed_body };

std::string_view to_string(BotFailure failure);

struct AttemptFailure {
    int attempt = 0; // 1-based
    BotFailure cause = BotFailure::timeout;
    int status = 0;  // HTTP status for bad_status
    std::string detail;

    bool operator==(const AttemptFailure&) const = default;
};

/// Terminal gateway failure; `failures` has one entry per wire attempt.
class BotError : public Error {
public:
    BotError(std::string endpoint, std::vector<AttemptFailure> failures);

    BotFailure cause() const { return failures_.back().cause; }
    int status() const { return failures_.back().status; }
    const std::string& endpoint() const { return endpoint_; }
    const std::vector<AttemptFailure>& failures() const { return failures_; }

private:
    std::string endpoint_;
    std::vector<AttemptFailure> failures_;
};

struct HttpReply {
    int status = 200;
    std::string body;
};

/// Raised by transports (and in-process handlers) when no reply arrived in
/// time or the peer could not be reached.
class TransportTimeout : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BotTransport {
public:
    virtual ~BotTransport() = default;
    /// POST `body` to `{spec.base_url}{path}`.
    virtual HttpReply post_json(const BotEndpointSpec& spec, const std::string& path, const std::string& body) = 0;
};

using BotHandler = std::function<HttpReply(const std::string& body)>;

/// Serves `inproc://<host>` endpoints from handlers living in this process.
class InProcessBots : public BotTransport {
public:
    void add(const std::string& host, BotHandler handler);
    HttpReply post_json(const BotEndpointSpec& spec, const std::string& path, const std::string& body) override;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, BotHandler, std::less<>> handlers_;
};

/// Plain HTTP(S) via cpp-httplib, honouring spec.timeout for connect/read/write.
class HttpBotTransport : public BotTransport {
public:
    HttpReply post_json(const BotEndpointSpec& spec, const std::string& path, const std::string& body) override;
};

/// inproc:// to an InProcessBots instance, everything else over HTTP.
class RoutingTransport : public BotTransport {
public:
    explicit RoutingTransport(std::shared_ptr<InProcessBots> local = std::make_shared<InProcessBots>());
    HttpReply post_json(const BotEndpointSpec& spec, const std::string& path, const std::string& body) override;
    InProcessBots& local() { return *local_; }

private:
    std::shared_ptr<InProcessBots> local_;
    HttpBotTransport http_;
};

class BotRegistry {
public:
    /// Throws DuplicateName, MalformedUrl, InvariantError (timeout <= 0).
    void register_endpoint(BotEndpointSpec spec);
    const BotEndpointSpec* find(std::string_view name) const;
    /// Throws BotUnavailable.
    BotEndpointSpec at(std::string_view name) const;
    std::size_t size() const;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, BotEndpointSpec, std::less<>> endpoints_;
};

struct RetryPolicy {
    std::chrono::milliseconds base{1000};
    double factor = 2.0;
    bool full_jitter = true;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct BotTurnOutcome {
    BotTurnResponse response;
    int attempts = 1;
    std::vector<AttemptFailure> retries; // failed attempts that were retried
};

class BotGateway {
public:
    explicit BotGateway(std::shared_ptr<BotTransport> transport, RetryPolicy policy = {}, Sleeper sleeper = {},
                        std::uint64_t seed = std::random_device{}());

    /// At most spec.max_retries + 1 wire attempts. Never returns partial text.
    BotTurnOutcome request_turn(const BotEndpointSpec& spec, const BotTurnRequest& request);

    /// Delay before retry number `retry` (0-based): uniform in [0, base*factor^retry]
    /// with full jitter, the cap itself otherwise.
    std::chrono::milliseconds backoff_delay(int retry);

    BotTransport& transport() { return *transport_; }

private:
    std::shared_ptr<BotTransport> transport_;
    RetryPolicy policy_;
    Sleeper sleeper_;
    std::mutex rng_mutex_;
    std::mt19937_64 rng_;
};

/// Classifies one wire reply; throws nothing, returns the failure if any.
std::optional<AttemptFailure> classify_reply(const HttpReply& reply, BotTurnResponse& out);

} // namespace evalroom
