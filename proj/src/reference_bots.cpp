#include "evalroom/reference_bots.hpp"

#include <httplib.h>

#include "evalroom/error.hpp"

namespace evalroom {

using nlohmann::json;

BotHandler make_bot_handler(BotBehavior behavior) {
    return [behavior = std::move(behavior)](const std::string& body) -> HttpReply {
        BotTurnRequest request;
        try {
            request = request_from_wire(json::parse(body));
        } catch (const json::exception& e) {
            return HttpReply{400, json{{"error", std::string("invalid JSON: ") + e.what()}}.dump()};
        } catch (const BadRequest& e) {
            return HttpReply{400, json{{"error", e.what()}}.dump()};
        }
        return HttpReply{200, to_wire(behavior(request)).dump()};
    };
}

BotTurnResponse echo_response(const BotTurnRequest& request) {
    BotTurnResponse response;
    response.text = request.transcript.empty() ? "..." : request.transcript.back().text;
    response.meta["bot"] = "echo";
    response.meta["transcript"] = json::parse(to_wire(request)["transcript"].dump());
    response.meta["params"] = request.params;
    return response;
}

BotHandler echo_bot() { return make_bot_handler(echo_response); }

ScriptedBot::ScriptedBot(std::vector<std::string> script) : script_(std::move(script)) {
    if (script_.empty()) throw EmptyScript();
}

BotTurnResponse ScriptedBot::respond(const BotTurnRequest&) {
    const auto n = calls_.fetch_add(1);
    BotTurnResponse response;
    response.text = script_[std::min(n, script_.size() - 1)];
    response.meta["bot"] = "scripted";
    return response;
}

BotHandler scripted_bot(std::vector<std::string> script) {
    auto bot = std::make_shared<ScriptedBot>(std::move(script));
    return make_bot_handler([bot](const BotTurnRequest& r) { return bot->respond(r); });
}

// ---------------------------------------------------------------- server

struct ReferenceBotServer::Impl {
    httplib::Server server;
};

ReferenceBotServer::ReferenceBotServer(BotHandler handler, std::string path)
    : impl_(std::make_unique<Impl>()), path_(std::move(path)) {
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    impl_->server.Post(path_ + "/respond", [handler](const httplib::Request& req, httplib::Response& res) {
        const auto reply = handler(req.body);
        res.status = reply.status;
        res.set_content(reply.body, "application/json");
    });
    impl_->server.Get(path_ + "/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"ok":true})", "application/json");
    });
}

ReferenceBotServer::~ReferenceBotServer() { stop(); }

int ReferenceBotServer::start(const std::string& host, int port) {
    host_ = host;
    if (port == 0) {
        port_ = impl_->server.bind_to_any_port(host);
    } else {
        port_ = impl_->server.bind_to_port(host, port) ? port : -1;
    }
    if (port_ <= 0) throw std::runtime_error("reference bot server could not bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port_;
}

void ReferenceBotServer::run(const std::string& host, int port) {
    host_ = host;
    port_ = port;
    if (!impl_->server.listen(host, port)) throw std::runtime_error("reference bot server could not listen");
}

void ReferenceBotServer::stop() {
    impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

std::string ReferenceBotServer::base_url() const {
    return "http://" + host_ + ":" + std::to_string(port_) + path_;
}

// ---------------------------------------------------------------- conformance

namespace {

BotTurnRequest sample_request() {
    BotTurnRequest req;
    req.thread_id = "conformance-thread";
    req.transcript = {
        {AuthorRole::seed, "Alex", "This thread is a mess.", true},
        {AuthorRole::human, "human-1", "Can we keep it civil?", false},
    };
    req.topic_data = {{"source", "conformance"}};
    req.params = {{"persona", "socratic"}, {"temperature", 0.5}};
    return req;
}

struct Checker {
    BotTransport& transport;
    const BotEndpointSpec& spec;
    std::vector<ConformanceCheck> results;

    void record(std::string name, bool passed, std::string detail = {}) {
        results.push_back({std::move(name), passed, std::move(detail)});
    }

    // Sends a raw body; returns the reply or the transport error text.
    std::optional<HttpReply> send(const std::string& body, std::string& error) {
        try {
            return transport.post_json(spec, "/respond", body);
        } catch (const std::exception& e) {
            error = e.what();
            return std::nullopt;
        }
    }

    std::optional<BotTurnResponse> turn(const std::string& name, const BotTurnRequest& req) {
        std::string error;
        auto reply = send(to_wire(req).dump(), error);
        if (!reply) {
            record(name, false, "transport: " + error);
            return std::nullopt;
        }
        BotTurnResponse response;
        if (auto failure = classify_reply(*reply, response)) {
            record(name, false, std::string(to_string(failure->cause)) + ": " + failure->detail);
            return std::nullopt;
        }
        record(name, true);
        return response;
    }
};

} // namespace

std::vector<ConformanceCheck> run_bot_conformance(BotTransport& transport, const BotEndpointSpec& spec,
                                                  const ConformanceOptions& options) {
    Checker c{transport, spec, {}};
    const auto base = sample_request();

    const auto basic = c.turn("answers-basic-request", base);

    {
        std::string error;
        auto reply = c.send(to_wire(base).dump(), error);
        bool ok = false;
        std::string detail = error;
        if (reply) {
            try {
                const auto body = json::parse(reply->body);
                ok = reply->status == 200 && body.is_object() && body.contains("text") && body["text"].is_string() &&
                     (!body.contains("meta") || body["meta"].is_object());
                if (!ok) detail = "status " + std::to_string(reply->status) + " body " + reply->body.substr(0, 200);
            } catch (const json::exception& e) {
                detail = e.what();
            }
        }
        c.record("response-schema", ok, detail);
    }

    BotTurnRequest seeds_only = base;
    seeds_only.transcript.resize(1);
    c.turn("accepts-seed-only-transcript", seeds_only);

    BotTurnRequest empty = base;
    empty.transcript.clear();
    c.turn("accepts-empty-transcript", empty);

    BotTurnRequest bare = base;
    bare.params = Params::object();
    bare.topic_data = json::object();
    c.turn("accepts-empty-params", bare);

    BotTurnRequest unicode = base;
    unicode.transcript.push_back({AuthorRole::human, "human-1", "caf\xC3\xA9 \xF0\x9F\x99\x82 \"quoted\"\nnext line", false});
    const auto unicode_reply = c.turn("accepts-unicode-text", unicode);

    {
        std::string error;
        auto reply = c.send("{not json", error);
        const bool ok = reply && reply->status >= 400 && reply->status < 500;
        c.record("rejects-malformed-request", ok,
                 reply ? "status " + std::to_string(reply->status) : "transport: " + error);
    }

    if (options.expect_echo) {
        if (basic) {
            c.record("echo-last-text", basic->text == base.transcript.back().text, "got '" + basic->text + "'");
            const auto sent = json::parse(to_wire(base)["transcript"].dump());
            const bool lossless = basic->meta.contains("transcript") && basic->meta["transcript"] == sent;
            c.record("echo-transcript-lossless", lossless);
            const bool params = basic->meta.contains("params") && basic->meta["params"] == base.params;
            c.record("echo-params", params);
        } else {
            c.record("echo-last-text", false, "no basic response");
        }
        if (unicode_reply)
            c.record("echo-unicode-bytes", unicode_reply->text == unicode.transcript.back().text);
        const auto again = c.turn("stateless-repeat", base);
        if (again && basic) c.record("echo-stateless", again->text == basic->text && again->meta == basic->meta);
    }
    return c.results;
}

} // namespace evalroom
