// Command-line entry point: serve an instance, validate inputs, run the
// reference bot, export threads, and small admin chores.

#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "evalroom/config.hpp"
#include "evalroom/crypto.hpp"
#include "evalroom/error.hpp"
#include "evalroom/http_server.hpp"
#include "evalroom/reference_bots.hpp"
#include "evalroom/service.hpp"
#include "evalroom/store.hpp"
#include "evalroom/survey.hpp"
#include "evalroom/topics.hpp"

using namespace evalroom;

namespace {

// Blocks SIGINT/SIGTERM for every thread started afterwards and runs
// `on_signal` on a dedicated thread when one arrives.
std::thread watch_signals(std::function<void()> on_signal) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    return std::thread([set, on_signal = std::move(on_signal)] {
        int sig = 0;
        sigwait(&set, &sig);
        on_signal();
    });
}

void report(const Error& e) {
    std::cerr << e.code();
    if (const auto* s = dynamic_cast<const SyntaxError*>(&e)) std::cerr << " at " << s->line() << ":" << s->column();
    std::cerr << ": " << e.what() << "\n";
}

TaskConfig load_config(const std::string& path) {
    ConfigContext ctx;
    ctx.base_dir = std::filesystem::absolute(path).parent_path();
    return load_task_config(path, ctx);
}

int run_serve(const std::string& config_path, const std::string& topics_path, std::optional<int> port,
              std::optional<std::string> store, std::optional<std::string> static_dir) {
    auto config = load_config(config_path);
    apply_env_overrides(config.instance);
    if (port) config.instance.tcp_port = *port;
    if (store) config.instance.store_path = *store;
    auto topics = load_topics_file(topics_path);
    const int bind_port = config.instance.tcp_port;

    EvalService service(std::move(config), std::move(topics));
    HttpServerOptions options;
    if (static_dir) options.static_dir = *static_dir;
    HttpServer server(service, options);
    auto watcher = watch_signals([&] {
        spdlog::info("shutting down");
        server.stop();
    });
    watcher.detach();
    server.run(bind_port);
    return 0;
}

int run_reference_bot(const std::string& mode, const std::vector<std::string>& lines,
                      const std::optional<std::string>& script_file, const std::string& host, int port,
                      const std::string& path) {
    BotHandler handler;
    if (mode == "echo") {
        handler = echo_bot();
    } else {
        auto script = lines;
        if (script_file) {
            std::ifstream in(*script_file);
            if (!in) throw NotFound("script file '" + *script_file + "'");
            for (std::string line; std::getline(in, line);)
                if (!line.empty()) script.push_back(line);
        }
        handler = scripted_bot(script);
    }
    ReferenceBotServer server(handler, path);
    auto watcher = watch_signals([&] { server.stop(); });
    server.start(host, port);
    std::cout << "listening on " << server.base_url() << std::endl;
    watcher.join(); // returns once a signal stopped the server
    return 0;
}

int run_conformance(const std::string& url, bool expect_echo, int timeout_ms) {
    BotEndpointSpec spec;
    spec.name = "candidate";
    spec.base_url = url;
    spec.timeout = std::chrono::milliseconds(timeout_ms);
    spec.max_retries = 0;
    RoutingTransport transport;
    const auto checks = run_bot_conformance(transport, spec, ConformanceOptions{expect_echo});
    bool ok = true;
    for (const auto& c : checks) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name;
        if (!c.detail.empty()) std::cout << "  (" << c.detail << ")";
        std::cout << "\n";
        ok = ok && c.passed;
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"evalroom: live human evaluation of chat bots"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    std::string config_path, topics_path, store_path, thread_id, output, mode = "echo", host = "127.0.0.1",
                                                                           url, bot_path, admin_id, admin_secret;
    std::optional<int> port_opt;
    std::optional<std::string> store_opt, static_dir, script_file;
    std::vector<std::string> lines;
    int port = 0, timeout_ms = 5000;
    bool identities = false, allow_deleted = false, expect_echo = false;

    auto* serve = app.add_subcommand("serve", "Run one instance");
    serve->add_option("-c,--config", config_path, "Task config YAML")->required()->check(CLI::ExistingFile);
    serve->add_option("-t,--topics", topics_path, "Topics JSON")->required()->check(CLI::ExistingFile);
    serve->add_option("-p,--port", port_opt, "Override instance.tcp_port");
    serve->add_option("-s,--store", store_opt, "Override instance.store_path");
    serve->add_option("--static-dir", static_dir, "Built web client assets");

    auto* validate = app.add_subcommand("validate-config", "Check a task config and print its canonical form");
    validate->add_option("config", config_path)->required();

    auto* render = app.add_subcommand("render-survey", "Print the survey render model of a config");
    render->add_option("config", config_path)->required();

    auto* check_topics = app.add_subcommand("check-topics", "Validate a topics file");
    check_topics->add_option("topics", topics_path)->required();

    auto* exporter = app.add_subcommand("export", "Write a thread's export document");
    exporter->add_option("-s,--store", store_path, "Store file")->required()->check(CLI::ExistingFile);
    exporter->add_option("thread", thread_id)->required();
    exporter->add_option("-o,--output", output, "Output file (default stdout)");
    exporter->add_flag("--identities", identities, "Real user ids and worker ids instead of pseudonyms");
    exporter->add_flag("--allow-deleted", allow_deleted, "Export soft-deleted threads");

    auto* bot = app.add_subcommand("reference-bot", "Serve the reference bot over HTTP");
    bot->add_option("--mode", mode)->check(CLI::IsMember({"echo", "scripted"}));
    bot->add_option("--line", lines, "Scripted reply (repeatable)");
    bot->add_option("--script", script_file, "File with one scripted reply per line");
    bot->add_option("--host", host);
    bot->add_option("--port", port, "0 picks a free port");
    bot->add_option("--path", bot_path, "Path the wire routes live under");

    auto* conformance = app.add_subcommand("bot-conformance", "Check an endpoint against the bot wire contract");
    conformance->add_option("--url", url, "Endpoint base URL")->required();
    conformance->add_flag("--expect-echo", expect_echo, "Also check echo semantics");
    conformance->add_option("--timeout-ms", timeout_ms);

    auto* admin = app.add_subcommand("create-admin", "Create an admin account");
    admin->add_option("-s,--store", store_path, "Store file")->required();
    admin->add_option("--id", admin_id)->required();
    admin->add_option("--secret", admin_secret)->required();

    auto* purge = app.add_subcommand("purge", "Permanently remove soft-deleted threads");
    purge->add_option("-s,--store", store_path, "Store file")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (*serve) return run_serve(config_path, topics_path, port_opt, store_opt, static_dir);
        if (*validate) {
            const auto config = load_config(config_path);
            std::cout << "# identity " << config_identity(config) << "\n" << serialize_task_config(config);
            return 0;
        }
        if (*render) {
            std::cout << survey_render_model(load_config(config_path).survey).serialize() << "\n";
            return 0;
        }
        if (*check_topics) {
            const auto set = load_topics_file(topics_path);
            for (const auto& t : set.topics())
                std::cout << t.id << "\t" << t.seed_turns.size() << " seed turn(s)\t" << t.name << "\n";
            return 0;
        }
        if (*exporter) {
            Store store(store_path);
            const auto text = serialize_export(store.export_thread(thread_id, ExportOptions{identities, allow_deleted}));
            if (output.empty()) {
                std::cout << text;
            } else {
                std::ofstream out(output, std::ios::binary);
                out << text;
                if (!out) throw std::runtime_error("cannot write " + output);
            }
            return 0;
        }
        if (*bot) return run_reference_bot(mode, lines, script_file, host, port, bot_path);
        if (*conformance) return run_conformance(url, expect_echo, timeout_ms);
        if (*admin) {
            if (admin_secret.size() < 8) throw BadRequest("admin secret must be at least 8 characters");
            Store store(store_path);
            if (store.find_user(admin_id)) throw DuplicateName(admin_id);
            UserRecord user;
            user.id = admin_id;
            user.role = UserRole::admin;
            user.secret_hash = hash_secret(admin_secret);
            user.created_at = system_clock()();
            user.agreement_accepted_at = user.created_at;
            store.create_user(user);
            std::cout << "created admin " << admin_id << "\n";
            return 0;
        }
        if (*purge) {
            Store store(store_path);
            std::cout << "purged " << store.purge_deleted() << " thread(s)\n";
            return 0;
        }
    } catch (const Error& e) {
        report(e);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
