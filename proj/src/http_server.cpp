#include "evalroom/http_server.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "evalroom/error.hpp"

namespace evalroom {

using nlohmann::json;
using nlohmann::ordered_json;

void apply_env_overrides(InstanceSettings& instance) {
    if (const char* port = std::getenv("EVALROOM_PORT"); port && *port) {
        int value = 0;
        try {
            value = std::stoi(port);
        } catch (const std::exception&) {
            throw ConfigError(std::string("EVALROOM_PORT is not a number: ") + port);
        }
        if (value < 1 || value > 65535) throw ConfigError("EVALROOM_PORT out of range");
        if (instance.public_url == "http://127.0.0.1:" + std::to_string(instance.tcp_port))
            instance.public_url = "http://127.0.0.1:" + std::to_string(value);
        instance.tcp_port = value;
    }
    if (const char* store = std::getenv("EVALROOM_STORE"); store && *store) instance.store_path = store;
}

namespace {

std::string regex_escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        if (std::string_view(".^$|()[]{}*+?\\").find(c) != std::string_view::npos) out += '\\';
        out += c;
    }
    return out;
}

std::string html_escape(std::string_view text) {
    std::string out;
    for (char c : text) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        case '\'': out += "&#39;"; break;
        default: out += c;
        }
    }
    return out;
}

// JSON embedded in a <script> block must not close it early.
std::string script_safe(std::string text) {
    for (std::size_t pos = 0; (pos = text.find("</", pos)) != std::string::npos; pos += 3) text.replace(pos, 2, "<\\/");
    return text;
}

std::string page(const std::string& prefix, const std::string& title, const std::string& body) {
    std::ostringstream out;
    out << "<!doctype html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>" << html_escape(title)
        << "</title>\n<link rel=\"stylesheet\" href=\"" << prefix << "/static/app.css\">\n</head>\n<body data-prefix=\""
        << html_escape(prefix) << "\">\n"
        << body << "\n</body>\n</html>\n";
    return out.str();
}

std::string session_token(const httplib::Request& req) {
    if (auto auth = req.get_header_value("Authorization"); auth.rfind("Bearer ", 0) == 0) return auth.substr(7);
    const auto cookies = req.get_header_value("Cookie");
    const std::string key = std::string(kSessionCookie) + "=";
    std::size_t pos = 0;
    while (pos < cookies.size()) {
        auto end = cookies.find(';', pos);
        if (end == std::string::npos) end = cookies.size();
        auto item = cookies.substr(pos, end - pos);
        item.erase(0, item.find_first_not_of(' '));
        if (item.rfind(key, 0) == 0) return item.substr(key.size());
        pos = end + 1;
    }
    return {};
}

void set_session_cookie(httplib::Response& res, const std::string& prefix, const std::string& token) {
    res.set_header("Set-Cookie", std::string(kSessionCookie) + "=" + token + "; Path=" + prefix +
                                     "/; HttpOnly; SameSite=Lax");
}

void send_json(httplib::Response& res, const ordered_json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

ordered_json error_body(const Error& e) {
    ordered_json err;
    err["code"] = e.code();
    err["message"] = e.what();
    if (const auto* v = dynamic_cast<const ValidationFailed*>(&e)) {
        err["violations"] = ordered_json::array();
        for (const auto& x : v->violations())
            err["violations"].push_back({{"question_id", x.question_id}, {"problem", x.problem}, {"value", x.value}});
    } else if (const auto* c = dynamic_cast<const IncompleteConsent*>(&e)) {
        err["unchecked"] = c->unchecked();
    } else if (const auto* s = dynamic_cast<const SyntaxError*>(&e)) {
        err["line"] = s->line();
        err["column"] = s->column();
    }
    return ordered_json{{"error", err}};
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json body;
    try {
        body = json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw BadRequest(std::string("request body is not JSON: ") + e.what());
    }
    if (!body.is_object()) throw BadRequest("request body must be a JSON object");
    return body;
}

template <class T>
T field(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end()) throw BadRequest(std::string("missing field '") + key + "'");
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw BadRequest(std::string("field '") + key + "' has the wrong type");
    }
}

template <class T>
std::optional<T> optional_field(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || it->is_null()) return std::nullopt;
    return field<T>(body, key);
}

Money money_field(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end()) throw BadRequest(std::string("missing field '") + key + "'");
    const std::string text = it->is_string() ? it->get<std::string>() : it->is_number() ? it->dump() : "";
    try {
        return Money::parse(text);
    } catch (const std::exception&) {
        throw BadRequest(std::string("field '") + key + "' is not a currency amount");
    }
}

ordered_json summary_json(const ThreadSummary& s) {
    ordered_json j;
    j["id"] = s.id;
    j["topic_id"] = s.topic_id;
    j["state"] = to_string(s.state);
    j["participant_count"] = s.participant_count;
    j["message_count"] = s.message_count;
    j["created_at"] = format_rfc3339(s.created_at);
    return j;
}

ordered_json ledger_entry_json(const LedgerEntry& e) { return ledger_to_json({e}).front(); }

ordered_json bonus_json(const BonusAck& a) {
    ordered_json j;
    j["ledger_seq"] = a.ledger_seq;
    j["worker_id"] = a.worker_id;
    j["assignment_id"] = a.assignment_id;
    j["amount"] = a.amount.to_string();
    j["idempotency_key"] = a.idempotency_key;
    j["replayed"] = a.replayed;
    return j;
}

} // namespace

struct HttpServer::Impl {
    httplib::Server server;
    std::string host;
};

HttpServer::HttpServer(EvalService& service, HttpServerOptions options)
    : impl_(std::make_unique<Impl>()), service_(service) {
    auto& srv = impl_->server;
    impl_->host = options.host;
    const std::string p = service.config().instance.path_prefix;
    const std::string rp = regex_escape(p);
    EvalService& svc = service_;

    const int threads = std::max(4, options.threads);
    srv.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    srv.set_keep_alive_max_count(1000);
    srv.set_read_timeout(std::chrono::seconds(5));
    srv.set_write_timeout(std::chrono::seconds(5));
    srv.set_logger([](const httplib::Request& req, const httplib::Response& res) {
        spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
    });

    // Wraps a handler so domain errors become JSON error bodies.
    auto api = [](auto handler) {
        return [handler](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const Error& e) {
                send_json(res, error_body(e), e.http_status());
            } catch (const std::exception& e) {
                spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
                send_json(res, ordered_json{{"error", {{"code", "Internal"}, {"message", e.what()}}}}, 500);
            }
        };
    };
    auto html = [p](auto handler) {
        return [handler, p](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const Error& e) {
                res.status = e.http_status();
                res.set_content(page(p, "Error", "<main class=\"error\"><h1>" + html_escape(e.code()) + "</h1><p>" +
                                                      html_escape(e.what()) + "</p></main>"),
                                "text/html; charset=utf-8");
            }
        };
    };
    auto token = [](const httplib::Request& req) { return session_token(req); };

    // ------------------------------------------------------------ pages

    srv.Get(p + "/healthz", api([&svc](const httplib::Request&, httplib::Response& res) {
        send_json(res, ordered_json{{"ok", true}, {"task", svc.config().task_name}});
    }));

    srv.Get(p.empty() ? "/" : p + "/", html([p, &svc](const httplib::Request&, httplib::Response& res) {
        res.set_content(page(p, svc.config().task_name,
                             "<main id=\"evalroom-home\"><h1>" + html_escape(svc.config().task_name) +
                                 "</h1><div id=\"evalroom-signup\"></div></main>\n<script src=\"" + p +
                                 "/static/app.js\"></script>"),
                        "text/html; charset=utf-8");
    }));

    srv.Get(p + "/landing", html([p, &svc](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query(req.params.begin(), req.params.end());
        const auto result = svc.landing(query);
        if (const auto* entered = std::get_if<LandingEntered>(&result)) {
            set_session_cookie(res, p, entered->session.token);
            res.set_redirect(p + "/threads/" + entered->thread_id);
            return;
        }
        if (const auto* preview = std::get_if<LandingPreview>(&result)) {
            res.set_content(page(p, svc.config().task_name,
                                 "<main class=\"preview\" data-hit=\"" + html_escape(preview->hit_id) + "\"><h1>" +
                                     html_escape(svc.config().crowd.title) + "</h1><p>" +
                                     html_escape(svc.config().crowd.description) +
                                     "</p><p>Accept the task to begin.</p></main>"),
                            "text/html; charset=utf-8");
            return;
        }
        res.set_content(page(p, svc.config().task_name,
                             "<main id=\"evalroom-signup\"><h1>" + html_escape(svc.config().task_name) +
                                 "</h1><p>Sign up or log in to continue.</p></main>\n<script src=\"" + p +
                                 "/static/app.js\"></script>"),
                        "text/html; charset=utf-8");
    }));

    srv.Get(p + "/agreement", html([&svc](const httplib::Request&, httplib::Response& res) {
        std::ifstream in(svc.config().onboarding.agreement_file, std::ios::binary);
        if (!in) throw NotFound("agreement document");
        std::ostringstream buf;
        buf << in.rdbuf();
        res.set_content(buf.str(), "text/html; charset=utf-8");
    }));

    srv.Get(rp + "/threads/([^/]+)", html([p, &svc, token](const httplib::Request& req, httplib::Response& res) {
        const auto session = svc.require_session(token(req));
        const std::string id = req.matches[1];
        if (!session.consent_ok) {
            ordered_json onboarding;
            onboarding["agreement_url"] = p + "/agreement";
            onboarding["checkbox_texts"] = svc.config().onboarding.checkbox_texts;
            std::string boxes;
            for (std::size_t i = 0; i < svc.config().onboarding.checkbox_texts.size(); ++i)
                boxes += "<label><input type=\"checkbox\" name=\"consent\" value=\"" + std::to_string(i) + "\"> " +
                         html_escape(svc.config().onboarding.checkbox_texts[i]) + "</label>\n";
            res.set_content(page(p, "Agreement",
                                 "<main id=\"evalroom-consent\" data-thread=\"" + html_escape(id) +
                                     "\"><iframe src=\"" + p + "/agreement\" title=\"Agreement\"></iframe>\n<form>" +
                                     boxes + "<button type=\"submit\">Continue</button></form></main>\n" +
                                     "<script id=\"evalroom-onboarding\" type=\"application/json\">" +
                                     script_safe(onboarding.dump()) + "</script>\n<script src=\"" + p +
                                     "/static/app.js\"></script>"),
                            "text/html; charset=utf-8");
            return;
        }
        const auto view = svc.thread_view(token(req), id);
        res.set_content(page(p, svc.config().task_name,
                             "<main id=\"evalroom-thread\"></main>\n<script id=\"evalroom-view\" "
                             "type=\"application/json\">" +
                                 script_safe(view.dump()) + "</script>\n<script src=\"" + p +
                                 "/static/app.js\"></script>"),
                        "text/html; charset=utf-8");
    }));

    srv.Get(p + "/admin", html([p](const httplib::Request&, httplib::Response& res) {
        res.set_content(page(p, "Admin", "<main id=\"evalroom-admin\"></main>\n<script src=\"" + p +
                                             "/static/app.js\"></script>"),
                        "text/html; charset=utf-8");
    }));

    if (options.static_dir) srv.set_mount_point(p + "/static", options.static_dir->string());

    // ------------------------------------------------------------ accounts

    auto grant_json = [](const SessionGrant& g) {
        return ordered_json{{"user_id", g.user_id}, {"role", to_string(g.role)}, {"consent_ok", g.consent_ok}};
    };

    srv.Post(p + "/api/signup", api([p, &svc, grant_json](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const auto grant = svc.signup(field<std::string>(body, "user_id"), field<std::string>(body, "secret"));
        set_session_cookie(res, p, grant.token);
        send_json(res, grant_json(grant), 201);
    }));

    srv.Post(p + "/api/login", api([p, &svc, grant_json](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const auto grant = svc.login(field<std::string>(body, "user_id"), field<std::string>(body, "secret"));
        set_session_cookie(res, p, grant.token);
        send_json(res, grant_json(grant));
    }));

    srv.Get(p + "/api/me", api([p, &svc, token](const httplib::Request& req, httplib::Response& res) {
        const auto s = svc.require_session(token(req));
        ordered_json j{{"user_id", s.user_id}, {"role", to_string(s.role)}, {"consent_ok", s.consent_ok}};
        j["onboarding"] = {{"agreement_url", p + "/agreement"},
                           {"checkbox_texts", svc.config().onboarding.checkbox_texts}};
        send_json(res, j);
    }));

    srv.Post(p + "/api/consent", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        svc.consent(token(req), field<std::vector<bool>>(body, "checked"));
        send_json(res, ordered_json{{"consent_ok", true}});
    }));

    // ------------------------------------------------------------ evaluator

    srv.Post(p + "/api/assign", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        send_json(res, ordered_json{{"thread_id", svc.assign(token(req), optional_field<std::string>(body, "topic_id"))}});
    }));

    srv.Post(rp + "/api/threads/([^/]+)/join", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        const auto o = svc.join(token(req), req.matches[1]);
        send_json(res, ordered_json{{"seat", o.seat},
                                    {"your_turn", o.your_turn},
                                    {"state", to_string(o.state)},
                                    {"already_joined", o.already_joined}});
    }));

    srv.Get(rp + "/api/threads/([^/]+)", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        send_json(res, svc.thread_view(token(req), req.matches[1]));
    }));

    srv.Get(rp + "/api/threads/([^/]+)/updates", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        std::int64_t since = 0;
        if (req.has_param("since")) {
            const auto text = req.get_param_value("since");
            try {
                std::size_t used = 0;
                since = std::stoll(text, &used);
                if (used != text.size()) throw std::invalid_argument(text);
            } catch (const std::exception&) {
                throw BadRequest("since must be a nonnegative integer");
            }
        }
        const bool wait = req.has_param("wait") && req.get_param_value("wait") != "0";
        send_json(res, to_json(svc.updates(token(req), req.matches[1], since, wait)));
    }));

    srv.Post(rp + "/api/threads/([^/]+)/messages", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        send_json(res, to_json(svc.post_message(token(req), req.matches[1], field<std::string>(body, "text"))), 201);
    }));

    srv.Post(rp + "/api/threads/([^/]+)/ratings", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const auto answers_json = field<json>(body, "answers");
        if (!answers_json.is_object()) throw BadRequest("answers must be an object keyed by question id");
        Answers answers;
        for (const auto& [k, v] : answers_json.items()) answers.emplace(k, v);
        const auto outcome = svc.submit_ratings(token(req), req.matches[1], answers);
        send_json(res, ordered_json{{"state", to_string(outcome.state)}, {"recorded", outcome.records.size()}});
    }));

    srv.Post(rp + "/api/threads/([^/]+)/retry", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        svc.retry_bots(token(req), req.matches[1]);
        send_json(res, ordered_json{{"queued", true}}, 202);
    }));

    // ------------------------------------------------------------ admin

    srv.Get(p + "/api/admin/topics", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        send_json(res, svc.topics_table(token(req)));
    }));

    auto launch_request = [](const json& body) {
        LaunchRequest r;
        r.count = optional_field<int>(body, "count").value_or(1);
        if (auto it = body.find("bot_params"); it != body.end() && !it->is_null()) r.bot_params = *it;
        r.max_per_worker = optional_field<int>(body, "max_per_worker");
        return r;
    };

    srv.Post(rp + "/api/admin/topics/([^/]+)/launch",
             api([&svc, token, launch_request](const httplib::Request& req, httplib::Response& res) {
                 const auto body = parse_body(req);
                 send_json(res, to_json(svc.launch(token(req), {req.matches[1]}, launch_request(body))));
             }));

    srv.Post(p + "/api/admin/launch", api([&svc, token, launch_request](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        send_json(res, to_json(svc.launch(token(req), field<std::vector<std::string>>(body, "topic_ids"),
                                          launch_request(body))));
    }));

    srv.Post(p + "/api/admin/threads/delete", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        send_json(res, to_json(svc.delete_threads(token(req), field<std::vector<std::string>>(body, "ids"))));
    }));

    srv.Get(p + "/api/admin/threads", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        ThreadFilter filter;
        if (req.has_param("state")) {
            try {
                filter.state = thread_state_from_string(req.get_param_value("state"));
            } catch (const std::invalid_argument& e) {
                throw BadRequest(e.what());
            }
        }
        if (req.has_param("topic_id")) filter.topic_id = req.get_param_value("topic_id");
        if (req.has_param("user_id")) filter.user_id = req.get_param_value("user_id");
        ordered_json out = ordered_json::array();
        for (const auto& s : svc.list_threads(token(req), filter)) out.push_back(summary_json(s));
        send_json(res, ordered_json{{"threads", out}});
    }));

    srv.Get(rp + "/api/admin/threads/([^/]+)/export", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        ExportOptions opts;
        opts.include_identities = !(req.has_param("pseudonymous") && req.get_param_value("pseudonymous") != "0");
        opts.allow_deleted = true;
        const std::string id = req.matches[1];
        const auto doc = svc.export_thread(token(req), id, opts);
        res.set_header("Content-Disposition", "attachment; filename=\"thread-" + id + ".json\"");
        res.set_content(serialize_export(doc), "application/json");
    }));

    srv.Post(rp + "/api/admin/workers/([^/]+)/qualifications",
             api([&svc, token](const httplib::Request& req, httplib::Response& res) {
                 const auto body = parse_body(req);
                 send_json(res, ledger_entry_json(svc.add_qualification(token(req), req.matches[1],
                                                                        field<std::string>(body, "name"))));
             }));

    srv.Delete(rp + "/api/admin/workers/([^/]+)/qualifications",
               api([&svc, token](const httplib::Request& req, httplib::Response& res) {
                   std::string name;
                   if (req.has_param("name")) name = req.get_param_value("name");
                   else name = field<std::string>(parse_body(req), "name");
                   send_json(res, ledger_entry_json(svc.remove_qualification(token(req), req.matches[1], name)));
               }));

    srv.Post(rp + "/api/admin/workers/([^/]+)/bonus", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const auto ack = svc.grant_bonus(token(req), req.matches[1], field<std::string>(body, "assignment_id"),
                                         money_field(body, "amount"), optional_field<std::string>(body, "reason").value_or(""),
                                         optional_field<std::string>(body, "idempotency_key"));
        send_json(res, bonus_json(ack), ack.replayed ? 200 : 201);
    }));

    srv.Post(rp + "/api/admin/assignments/([^/]+)/approve",
             api([&svc, token](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, ledger_entry_json(svc.approve_assignment(token(req), req.matches[1])));
             }));

    srv.Get(p + "/api/admin/ledger", api([&svc, token](const httplib::Request& req, httplib::Response& res) {
        send_json(res, ordered_json{{"ledger", ledger_to_json(svc.ledger(token(req)))}});
    }));

    // Unmatched routes under /api answer in JSON too.
    srv.set_error_handler([p](const httplib::Request& req, httplib::Response& res) {
        if (res.status == 404 && req.path.rfind(p + "/api/", 0) == 0 && res.body.empty())
            send_json(res, ordered_json{{"error", {{"code", "NotFound"}, {"message", "no route " + req.path}}}}, 404);
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(int port) {
    auto& srv = impl_->server;
    port_ = port == 0 ? srv.bind_to_any_port(impl_->host) : (srv.bind_to_port(impl_->host, port) ? port : -1);
    if (port_ <= 0) throw ConfigError("cannot bind port " + std::to_string(port));
    thread_ = std::thread([&srv] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    return port_;
}

void HttpServer::run(int port) {
    auto& srv = impl_->server;
    if (!srv.bind_to_port(impl_->host, port)) throw ConfigError("cannot bind port " + std::to_string(port));
    port_ = port;
    spdlog::info("serving {} on port {} under '{}'", service_.config().task_name, port,
                 service_.config().instance.path_prefix);
    srv.listen_after_bind();
}

void HttpServer::stop() {
    if (!impl_) return;
    service_.shutdown();
    impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

std::string HttpServer::local_url() const {
    return "http://127.0.0.1:" + std::to_string(port_) + service_.config().instance.path_prefix;
}

} // namespace evalroom
