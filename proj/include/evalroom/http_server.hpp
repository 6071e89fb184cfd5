#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "evalroom/config.hpp"
#include "evalroom/service.hpp"

namespace evalroom {

inline constexpr const char* kSessionCookie = "evalroom_session";

struct HttpServerOptions {
    std::string host = "0.0.0.0";
    /// Handler threads. Each open long-poll holds one, so this bounds the
    /// number of evaluators that can wait at once.
    int threads = 96;
    /// Built web client assets, served under {prefix}/static/ when present.
    std::optional<std::filesystem::path> static_dir;
};

/// EVALROOM_PORT and EVALROOM_STORE override the configured port and store path.
void apply_env_overrides(InstanceSettings& instance);

/// The wire surface: pages under {prefix}/, JSON under {prefix}/api/, admin
/// JSON under {prefix}/api/admin/.
class HttpServer {
public:
    HttpServer(EvalService& service, HttpServerOptions options = {});
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds `port` (0 = ephemeral) and serves on a background thread.
    /// Returns the bound port.
    int start(int port);
    /// Binds and serves on the calling thread until stop().
    void run(int port);
    /// Wakes long-polls, lets in-flight requests finish, then stops.
    void stop();

    int port() const { return port_; }
    /// http://127.0.0.1:{port}{prefix}
    std::string local_url() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    EvalService& service_;
    std::thread thread_;
    int port_ = 0;
};

} // namespace evalroom
