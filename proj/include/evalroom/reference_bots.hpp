#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "evalroom/bot_gateway.hpp"

namespace evalroom {

using BotBehavior = std::function<BotTurnResponse(const BotTurnRequest&)>;

/// Wraps a behavior into a wire handler: 400 on a malformed request body,
/// 200 with the serialized response otherwise.
BotHandler make_bot_handler(BotBehavior behavior);

/// Replies with the text of the last transcript entry ("..." when the
/// transcript is empty). meta.transcript and meta.params echo the received
/// request so callers can check the wire round-trip.
BotTurnResponse echo_response(const BotTurnRequest& request);
BotHandler echo_bot();

/// Returns script lines in call order, then keeps repeating the last one.
class ScriptedBot {
public:
    explicit ScriptedBot(std::vector<std::string> script); // throws EmptyScript

    BotTurnResponse respond(const BotTurnRequest& request);
    std::size_t calls() const { return calls_.load(); }

private:
    std::vector<std::string> script_;
    std::atomic<std::size_t> calls_{0};
};

/// Wire handler backed by a shared ScriptedBot.
BotHandler scripted_bot(std::vector<std::string> script);

/// Standalone HTTP server speaking the bot wire contract:
/// POST {path}/respond and GET {path}/health.
class ReferenceBotServer {
public:
    explicit ReferenceBotServer(BotHandler handler, std::string path = "");
    ~ReferenceBotServer();
    ReferenceBotServer(const ReferenceBotServer&) = delete;
    ReferenceBotServer& operator=(const ReferenceBotServer&) = delete;

    /// Binds (port 0 = ephemeral) and serves on a background thread.
    /// Returns the bound port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    /// Serves on the calling thread until stop() from elsewhere.
    void run(const std::string& host, int port);
    void stop();
    int port() const { return port_; }
    std::string base_url() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::thread thread_;
    int port_ = 0;
    std::string host_;
    std::string path_;
};

struct ConformanceCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ConformanceOptions {
    /// Also check the echo reference semantics (last text, lossless transcript).
    bool expect_echo = false;
};

/// Runs the bot wire-contract checks against one endpoint.
std::vector<ConformanceCheck> run_bot_conformance(BotTransport& transport, const BotEndpointSpec& spec,
                                                  const ConformanceOptions& options = {});

} // namespace evalroom
