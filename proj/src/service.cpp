#include "evalroom/service.hpp"

#include <algorithm>
#include <regex>

#include <spdlog/spdlog.h>

#include "evalroom/crypto.hpp"
#include "evalroom/error.hpp"

namespace evalroom {

using nlohmann::ordered_json;

IncompleteConsent::IncompleteConsent(std::vector<std::size_t> unchecked)
    : Error("IncompleteConsent",
            [&] {
                std::string msg = "every agreement checkbox must be checked; unchecked:";
                for (auto i : unchecked) msg += " " + std::to_string(i);
                return msg;
            }(),
            400),
      unchecked_(std::move(unchecked)) {}

ordered_json to_json(const ChatMessage& m) {
    ordered_json j;
    j["seq"] = m.seq;
    j["author_role"] = to_string(m.author_role);
    j["speaker_label"] = m.speaker_label;
    j["text"] = m.text;
    j["is_seed"] = m.is_seed;
    j["created_at"] = format_rfc3339(m.created_at);
    return j;
}

ordered_json to_json(const UpdateDelta& d) {
    ordered_json j;
    j["messages"] = ordered_json::array();
    for (const auto& m : d.messages) j["messages"].push_back(to_json(m));
    j["state"] = to_string(d.state);
    j["remaining_turns"] = d.remaining_turns;
    j["survey_open"] = d.survey_open;
    j["your_turn"] = d.your_turn;
    j["error_banner"] = d.error_banner ? ordered_json(*d.error_banner) : ordered_json();
    j["last_seq"] = d.last_seq;
    return j;
}

ordered_json to_json(const std::vector<BatchItem>& report) {
    ordered_json items = ordered_json::array();
    for (const auto& item : report) {
        ordered_json j;
        j["id"] = item.id;
        j["ok"] = !item.error.has_value();
        if (item.thread_id) j["thread_id"] = *item.thread_id;
        if (item.hit_id) j["hit_id"] = *item.hit_id;
        if (item.entry_url) j["entry_url"] = *item.entry_url;
        if (item.error) j["error"] = {{"code", *item.error_code}, {"message", *item.error}};
        items.push_back(std::move(j));
    }
    ordered_json out;
    out["items"] = std::move(items);
    out["succeeded"] = std::count_if(report.begin(), report.end(), [](auto& i) { return !i.error; });
    out["failed"] = std::count_if(report.begin(), report.end(), [](auto& i) { return i.error.has_value(); });
    return out;
}

namespace {

const std::regex kUserId{"^[A-Za-z0-9_.@-]{1,64}$"};
constexpr std::size_t kMinSecretLength = 8;

BatchItem failed_item(std::string id, const Error& e) {
    BatchItem item;
    item.id = std::move(id);
    item.error_code = e.code();
    item.error = e.what();
    return item;
}

} // namespace

// ---------------------------------------------------------------- lifecycle

EvalService::EvalService(TaskConfig config, TopicSet topics, ServiceOptions options,
                         std::shared_ptr<BotTransport> transport)
    : topics_(std::move(topics)), options_(std::move(options)), transport_(std::move(transport)),
      policies_(PolicyRegistry::with_builtins()) {
    config_ = std::make_shared<const TaskConfig>(std::move(config));
    config_id_ = config_identity(*config_);
    long_poll_ = options_.long_poll_window.value_or(std::chrono::seconds(config_->instance.long_poll_seconds));
    store_ = std::make_unique<Store>(options_.store_path.value_or(config_->instance.store_path));
    store_->put_config(config_id_, serialize_task_config(*config_));
    configs_.emplace(config_id_, config_);
    for (const auto& spec : config_->bots) bots_.register_endpoint(spec);
    engine_ = std::make_unique<RoomEngine>(bots_, policies_, options_.clock);
    gateway_ = std::make_unique<BotGateway>(transport_, options_.retry, options_.sleeper, options_.seed);
    crowd_ = make_crowd_client(config_->crowd.platform, *store_, options_.clock,
                               config_->instance.public_url + config_->instance.path_prefix);
    if (!options_.synchronous_bots)
        for (int i = 0; i < std::max(1, options_.bot_workers); ++i) workers_.emplace_back([this] { bot_worker(); });
    resume_pending();
}

EvalService::~EvalService() { shutdown(); }

void EvalService::shutdown() {
    if (stopping_.exchange(true)) return;
    {
        std::lock_guard lock(queue_mutex_);
        queue_.clear();
        queued_.clear();
    }
    queue_cv_.notify_all();
    {
        std::lock_guard lock(slots_mutex_);
        for (auto& [_, s] : slots_) {
            std::lock_guard slot_lock(s->mutex);
            s->changed.notify_all();
        }
    }
    for (auto& w : workers_)
        if (w.joinable()) w.join();
    workers_.clear();
    idle_cv_.notify_all();
}

InProcessBots* EvalService::local_bots() {
    if (auto* routing = dynamic_cast<RoutingTransport*>(transport_.get())) return &routing->local();
    return dynamic_cast<InProcessBots*>(transport_.get());
}

void EvalService::resume_pending() {
    for (auto state : {ThreadState::Active, ThreadState::RatingOpen}) {
        for (const auto& summary : store_->list_threads(ThreadFilter{state, std::nullopt, std::nullopt})) {
            auto s = slot(summary.id);
            bool pending = false;
            {
                std::lock_guard lock(s->mutex);
                pending = !s->thread.pending_bots.empty();
            }
            if (pending && !options_.synchronous_bots) schedule_bots(summary.id);
        }
    }
}

// ---------------------------------------------------------------- threads

std::shared_ptr<const TaskConfig> EvalService::config_for(const std::string& config_id, const std::string& yaml) {
    std::lock_guard lock(configs_mutex_);
    if (auto it = configs_.find(config_id); it != configs_.end()) return it->second;
    ConfigContext ctx;
    ctx.check_files = false;
    ctx.known_policies = policies_.names();
    auto parsed = std::make_shared<const TaskConfig>(parse_task_config(yaml, ctx));
    configs_.emplace(config_id, parsed);
    return parsed;
}

std::shared_ptr<EvalService::Slot> EvalService::slot(const std::string& thread_id) {
    std::lock_guard lock(slots_mutex_);
    if (auto it = slots_.find(thread_id); it != slots_.end()) return it->second;
    auto stored = store_->load_thread(thread_id);
    if (!stored) throw NotFound("thread '" + thread_id + "'");
    auto s = std::make_shared<Slot>();
    s->thread = std::move(stored->thread);
    s->thread.config = config_for(s->thread.config_id, stored->config_yaml);
    slots_.emplace(thread_id, s);
    return s;
}

void EvalService::persist(const Slot& s, const ChatThread& next, std::span<const RatingRecord> ratings) {
    const auto old_count = s.thread.messages.size();
    std::span<const ChatMessage> fresh(next.messages);
    store_->commit_thread(next, fresh.subspan(std::min(old_count, fresh.size())), ratings);
}

void EvalService::publish(Slot& s, ChatThread next) {
    s.thread = std::move(next);
    ++s.version;
    s.changed.notify_all();
}

void EvalService::commit(Slot& s, ChatThread next, std::span<const RatingRecord> ratings) {
    persist(s, next, ratings);
    publish(s, std::move(next));
}

ChatThread EvalService::snapshot(const std::string& thread_id) {
    auto s = slot(thread_id);
    std::lock_guard lock(s->mutex);
    return s->thread;
}

std::string EvalService::new_thread_id() {
    return options_.thread_ids ? options_.thread_ids() : "th-" + random_hex(6);
}

// ---------------------------------------------------------------- bots

void EvalService::schedule_bots(const std::string& thread_id) {
    if (stopping_) return;
    if (options_.synchronous_bots) {
        run_bots(thread_id);
        return;
    }
    {
        std::lock_guard lock(queue_mutex_);
        if (!queued_.insert(thread_id).second) return;
        queue_.push_back(thread_id);
    }
    queue_cv_.notify_one();
}

void EvalService::bot_worker() {
    for (;;) {
        std::string id;
        {
            std::unique_lock lock(queue_mutex_);
            queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            id = std::move(queue_.front());
            queue_.pop_front();
            queued_.erase(id);
            ++busy_;
        }
        try {
            run_bots(id);
        } catch (const std::exception& e) {
            spdlog::error("bot turn loop for thread {} aborted: {}", id, e.what());
        }
        {
            std::lock_guard lock(queue_mutex_);
            --busy_;
        }
        idle_cv_.notify_all();
    }
}

void EvalService::run_bots(const std::string& thread_id) {
    auto s = slot(thread_id);
    {
        std::lock_guard lock(s->mutex);
        if (s->bot_running) return;
        s->bot_running = true;
    }
    struct Release {
        Slot& slot;
        ~Release() {
            std::lock_guard lock(slot.mutex);
            slot.bot_running = false;
        }
    } release{*s};

    while (!stopping_) {
        std::optional<BotCall> call;
        {
            std::lock_guard lock(s->mutex);
            try {
                call = engine_->next_bot_call(s->thread);
            } catch (const Error& e) {
                auto next = s->thread;
                next.last_error = e.what();
                commit(*s, std::move(next));
                return;
            }
        }
        if (!call) return;
        try {
            auto outcome = gateway_->request_turn(call->endpoint, call->request);
            std::lock_guard lock(s->mutex);
            auto next = s->thread;
            if (!engine_->apply_bot_reply(next, *call, outcome.response)) return; // stale: thread moved on
            commit(*s, std::move(next));
        } catch (const BotError& e) {
            spdlog::warn("bot {} failed for thread {}: {}", call->endpoint.name, thread_id, e.what());
            std::lock_guard lock(s->mutex);
            auto next = s->thread;
            engine_->record_bot_failure(next, *call, e);
            commit(*s, std::move(next));
            return;
        }
    }
}

void EvalService::drain_bots() {
    std::unique_lock lock(queue_mutex_);
    idle_cv_.wait(lock, [&] { return (queue_.empty() && busy_ == 0) || workers_.empty(); });
}

void EvalService::retry_bots(const std::string& token, const std::string& thread_id) {
    const auto session = require_consented(token);
    auto s = slot(thread_id);
    {
        std::lock_guard lock(s->mutex);
        ensure_participant_or_admin(session, s->thread);
        if (s->thread.pending_bots.empty()) return;
    }
    schedule_bots(thread_id);
}

// ---------------------------------------------------------------- sessions

SessionGrant EvalService::open_session(const UserRecord& user) {
    Session session;
    session.session_id = random_hex(24);
    session.user_id = user.id;
    session.role = user.role;
    session.created_at = options_.clock();
    store_->put_session(session);
    return SessionGrant{session.session_id, user.id, user.role, user.consented()};
}

SessionGrant EvalService::signup(const std::string& user_id, const std::string& secret) {
    if (!std::regex_match(user_id, kUserId))
        throw BadRequest("user id must be 1-64 characters of letters, digits, '_', '.', '@' or '-'");
    if (secret.size() < kMinSecretLength)
        throw BadRequest("secret must be at least " + std::to_string(kMinSecretLength) + " characters");
    if (store_->find_user(user_id)) throw DuplicateName(user_id);
    UserRecord user;
    user.id = user_id;
    user.secret_hash = hash_secret(secret);
    user.created_at = options_.clock();
    store_->create_user(user);
    return open_session(user);
}

SessionGrant EvalService::login(const std::string& user_id, const std::string& secret) {
    const auto user = store_->find_user(user_id);
    if (!user || !user->secret_hash || !verify_secret(secret, *user->secret_hash))
        throw Unauthorized("unknown user or wrong secret");
    return open_session(*user);
}

void EvalService::create_admin(const std::string& user_id, const std::string& secret) {
    if (!std::regex_match(user_id, kUserId)) throw BadRequest("invalid admin id");
    if (secret.size() < kMinSecretLength) throw BadRequest("admin secret too short");
    if (store_->find_user(user_id)) throw DuplicateName(user_id);
    UserRecord user;
    user.id = user_id;
    user.role = UserRole::admin;
    user.secret_hash = hash_secret(secret);
    user.created_at = options_.clock();
    user.agreement_accepted_at = user.created_at; // admins are not evaluators
    store_->create_user(user);
}

Session EvalService::require_session(const std::string& token) const {
    if (token.empty()) throw Unauthorized("no session");
    auto session = store_->find_session(token);
    if (!session) throw Unauthorized("unknown session");
    return *session;
}

Session EvalService::require_consented(const std::string& token) const {
    auto session = require_session(token);
    if (!session.consent_ok) throw NotConsented();
    return session;
}

Session EvalService::require_admin(const std::string& token) const {
    auto session = require_session(token);
    if (session.role != UserRole::admin) throw Forbidden("admin role required");
    return session;
}

void EvalService::ensure_participant_or_admin(const Session& session, const ChatThread& thread) const {
    if (session.role == UserRole::admin) return;
    const auto* p = thread.participant(session.user_id);
    if (!p || p->role != ParticipantRole::human) throw NotParticipant(session.user_id);
}

LandingResult EvalService::landing(const std::map<std::string, std::string>& query) {
    const auto entry = parse_entry(query, crowd_->convention());
    if (std::holds_alternative<Anonymous>(entry)) return LandingSignup{};
    const auto& params = std::get<EntryParams>(entry);
    if (params.preview) return LandingPreview{params.hit_id};

    const auto hit = store_->find_hit(params.hit_id);
    if (!hit) throw NotFound("task '" + params.hit_id + "'");
    if (hit->expired) throw WrongState("task '" + params.hit_id + "' has expired");

    SessionGrant grant;
    store_->transaction([&] {
        auto user = store_->find_user_by_ext(params.worker_id);
        if (!user) {
            UserRecord fresh;
            fresh.id = "ext-" + params.worker_id;
            fresh.ext_worker_id = params.worker_id;
            fresh.created_at = options_.clock();
            store_->create_user(fresh);
            user = fresh;
        }
        if (!params.assignment_id.empty() && !store_->find_assignment_by_ext(params.assignment_id)) {
            const auto existing = store_->find_assignment(hit->thread_id, user->id);
            if (!existing || existing->status != AssignmentStatus::open)
                store_->open_assignment(AssignmentRecord{0, hit->thread_id, user->id, params.assignment_id,
                                                         params.hit_id, AssignmentStatus::open});
        }
        grant = open_session(*user);
    });
    return LandingEntered{grant, hit->thread_id};
}

void EvalService::consent(const std::string& token, const std::vector<bool>& checked) {
    const auto session = require_session(token);
    if (session.consent_ok) return;
    std::vector<std::size_t> unchecked;
    for (std::size_t i = 0; i < config_->onboarding.checkbox_texts.size(); ++i)
        if (i >= checked.size() || !checked[i]) unchecked.push_back(i);
    if (!unchecked.empty()) throw IncompleteConsent(std::move(unchecked));
    store_->set_agreement_accepted(session.user_id, options_.clock());
}

// ---------------------------------------------------------------- evaluator

JoinOutcome EvalService::join(const std::string& token, const std::string& thread_id) {
    const auto session = require_consented(token);
    if (session.role == UserRole::admin) throw Forbidden("admins observe threads, they do not join them");
    const auto user = store_->find_user(session.user_id);
    if (!user) throw Unauthorized("session user vanished");
    auto s = slot(thread_id);
    JoinOutcome outcome;
    bool pending = false;
    {
        std::lock_guard join_lock(join_mutex_);
        std::lock_guard lock(s->mutex);
        auto next = s->thread;
        outcome = engine_->join_thread(next, *user, store_->count_engaged(user->id));
        if (outcome.already_joined) return outcome;
        store_->transaction([&] {
            persist(*s, next);
            if (!store_->find_assignment(thread_id, user->id))
                store_->open_assignment(
                    AssignmentRecord{0, thread_id, user->id, std::nullopt, std::nullopt, AssignmentStatus::open});
        });
        publish(*s, std::move(next));
        pending = !s->thread.pending_bots.empty();
    }
    if (pending) schedule_bots(thread_id);
    return outcome;
}

std::string EvalService::assign(const std::string& token, const std::optional<std::string>& topic_id) {
    require_consented(token);
    auto open = store_->list_threads(ThreadFilter{ThreadState::WaitingForHumans, topic_id, std::nullopt});
    std::reverse(open.begin(), open.end()); // oldest first
    for (const auto& summary : open) {
        try {
            join(token, summary.id);
            return summary.id;
        } catch (const ThreadFull&) {
        } catch (const WrongState&) {
        }
    }
    throw NotFound("open thread");
}

ChatMessage EvalService::post_message(const std::string& token, const std::string& thread_id,
                                      const std::string& text) {
    const auto session = require_consented(token);
    auto s = slot(thread_id);
    if (session.messages_posted >= options_.max_messages_per_session)
        throw TooManyMessages();
    ChatMessage message;
    bool pending = false;
    {
        std::lock_guard lock(s->mutex);
        auto next = s->thread;
        message = engine_->post_human_message(next, session.user_id, text).message;
        store_->transaction([&] {
            persist(*s, next);
            store_->count_session_message(session.session_id);
        });
        publish(*s, std::move(next));
        pending = !s->thread.pending_bots.empty();
    }
    if (pending) schedule_bots(thread_id);
    return message;
}

UpdateDelta EvalService::updates(const std::string& token, const std::string& thread_id, std::int64_t since,
                                 bool wait) {
    const auto session = require_consented(token);
    if (since < 0) throw BadRequest("since must be nonnegative");
    auto s = slot(thread_id);
    std::unique_lock lock(s->mutex);
    ensure_participant_or_admin(session, s->thread);
    if (wait && s->thread.last_seq() <= since) {
        const auto seen = s->version;
        s->changed.wait_for(lock, long_poll_, [&] { return s->version != seen || stopping_; });
    }
    const auto& t = s->thread;
    UpdateDelta d;
    for (const auto& m : t.messages)
        if (m.seq > since) d.messages.push_back(m);
    d.state = t.state;
    d.survey_open = engine_->survey_open(t);
    d.error_banner = t.last_error;
    d.last_seq = t.last_seq();
    if (const auto* p = t.participant(session.user_id); p && p->role == ParticipantRole::human) {
        d.remaining_turns = engine_->remaining_turns(t, session.user_id);
        d.your_turn = engine_->is_your_turn(t, session.user_id);
    }
    return d;
}

SubmitOutcome EvalService::submit_ratings(const std::string& token, const std::string& thread_id,
                                          const Answers& answers) {
    const auto session = require_consented(token);
    auto s = slot(thread_id);
    std::lock_guard lock(s->mutex);
    auto next = s->thread;
    auto outcome = engine_->submit_ratings(next, session.user_id, answers);
    store_->transaction([&] {
        persist(*s, next, outcome.records);
        if (auto a = store_->find_assignment(thread_id, session.user_id); a && a->status == AssignmentStatus::open)
            store_->set_assignment_status(a->id, AssignmentStatus::submitted);
    });
    publish(*s, std::move(next));
    return outcome;
}

ordered_json EvalService::thread_view(const std::string& token, const std::string& thread_id) {
    const auto session = require_consented(token);
    auto s = slot(thread_id);
    std::lock_guard lock(s->mutex);
    const auto& t = s->thread;
    const auto* p = t.participant(session.user_id);
    ordered_json view;
    view["thread_id"] = t.id;
    view["task_name"] = t.config->task_name;
    view["topic_id"] = t.topic_id;
    const auto* topic = topics_.find(t.topic_id);
    view["topic_name"] = topic ? topic->name : t.topic_id;
    view["state"] = to_string(t.state);
    view["joined"] = p != nullptr;
    view["observer"] = session.role == UserRole::admin;
    view["human_turns_required"] = t.config->chat.human_turns_required;
    view["survey"] = survey_render_model(t.config->survey).document;
    view["long_poll_ms"] = long_poll_.count();
    return view;
}

// ---------------------------------------------------------------- admin

ordered_json EvalService::topics_table(const std::string& token) const {
    require_admin(token);
    std::map<std::string, TopicStats> stats;
    for (auto& st : store_->topic_stats()) stats.emplace(st.topic_id, st);
    ordered_json rows = ordered_json::array();
    for (const auto& topic : topics_.topics()) {
        ordered_json row;
        row["id"] = topic.id;
        row["name"] = topic.name;
        row["seed_turns"] = topic.seed_turns.size();
        auto it = stats.find(topic.id);
        row["threads_created"] = it == stats.end() ? 0 : it->second.threads_created;
        row["first_created_at"] = it == stats.end() || !it->second.first_created_at
                                      ? ordered_json()
                                      : ordered_json(format_rfc3339(*it->second.first_created_at));
        row["last_created_at"] = it == stats.end() || !it->second.last_created_at
                                     ? ordered_json()
                                     : ordered_json(format_rfc3339(*it->second.last_created_at));
        rows.push_back(std::move(row));
    }
    ordered_json out;
    out["topics"] = std::move(rows);
    out["limits"] = {{"max_threads_per_worker", config_->limits.max_threads_per_worker
                                                    ? ordered_json(*config_->limits.max_threads_per_worker)
                                                    : ordered_json()},
                     {"max_threads_per_topic", config_->limits.max_threads_per_topic
                                                   ? ordered_json(*config_->limits.max_threads_per_topic)
                                                   : ordered_json()}};
    return out;
}

std::vector<BatchItem> EvalService::launch(const std::string& token, const std::vector<std::string>& topic_ids,
                                           const LaunchRequest& request) {
    require_admin(token);
    if (request.count <= 0) throw BadRequest("count must be positive");
    if (!request.bot_params.is_object()) throw BadRequest("bot_params must be an object");
    std::vector<BatchItem> report;
    for (const auto& topic_id : topic_ids) {
        for (int i = 0; i < request.count; ++i) {
            try {
                const auto& topic = topics_.get(topic_id);
                if (const auto limit = config_->limits.max_threads_per_topic;
                    limit && store_->count_threads_for_topic(topic_id) >= *limit)
                    throw LimitExceeded("topic " + topic_id + " reached its limit of " + std::to_string(*limit));
                auto thread = engine_->create_thread(new_thread_id(), topic, config_, request.bot_params,
                                                     request.max_per_worker);
                store_->commit_thread(thread, thread.messages);
                BatchItem item;
                item.id = topic_id;
                item.thread_id = thread.id;
                if (config_->crowd.platform != CrowdPlatform::none) {
                    try {
                        const auto handles = crowd_->publish_task(topic_id, {thread.id}, config_->crowd);
                        item.hit_id = handles.front().hit_id;
                        item.entry_url = handles.front().entry_url;
                    } catch (const Error&) {
                        // An unpublished thread could never be reached; withdraw it.
                        engine_->delete_thread(thread);
                        store_->commit_thread(thread);
                        throw;
                    }
                }
                report.push_back(std::move(item));
            } catch (const Error& e) {
                report.push_back(failed_item(topic_id, e));
            }
        }
    }
    return report;
}

std::vector<BatchItem> EvalService::delete_threads(const std::string& token,
                                                   const std::vector<std::string>& thread_ids) {
    require_admin(token);
    std::vector<BatchItem> report;
    for (const auto& id : thread_ids) {
        try {
            auto s = slot(id);
            {
                std::lock_guard lock(s->mutex);
                if (s->thread.state == ThreadState::Deleted) throw WrongState("thread " + id + " is already deleted");
                auto next = s->thread;
                engine_->delete_thread(next);
                commit(*s, std::move(next));
            }
            BatchItem item;
            item.id = id;
            item.thread_id = id;
            if (auto hit = store_->hit_for_thread(id); hit && !hit->expired) {
                item.hit_id = hit->hit_id;
                try {
                    crowd_->expire_task(hit->hit_id);
                } catch (const Error& e) {
                    spdlog::warn("could not expire task {} of deleted thread {}: {}", hit->hit_id, id, e.what());
                }
            }
            report.push_back(std::move(item));
        } catch (const Error& e) {
            report.push_back(failed_item(id, e));
        }
    }
    return report;
}

std::vector<ThreadSummary> EvalService::list_threads(const std::string& token, const ThreadFilter& filter) const {
    require_admin(token);
    return store_->list_threads(filter);
}

ordered_json EvalService::export_thread(const std::string& token, const std::string& thread_id,
                                        const ExportOptions& options) const {
    require_admin(token);
    return store_->export_thread(thread_id, options);
}

LedgerEntry EvalService::add_qualification(const std::string& token, const std::string& worker,
                                           const std::string& name) {
    require_admin(token);
    return crowd_->assign_qualification(worker, name);
}

LedgerEntry EvalService::remove_qualification(const std::string& token, const std::string& worker,
                                              const std::string& name) {
    require_admin(token);
    return crowd_->revoke_qualification(worker, name);
}

BonusAck EvalService::grant_bonus(const std::string& token, const std::string& worker,
                                  const std::string& assignment_id, Money amount, const std::string& reason,
                                  std::optional<std::string> idempotency_key) {
    require_admin(token);
    if (!idempotency_key) {
        const auto assignment = store_->find_assignment_by_key(assignment_id);
        if (!assignment) throw UnknownAssignment(assignment_id);
        idempotency_key = derive_bonus_key(assignment->thread_id, worker, reason);
    }
    return crowd_->grant_bonus(worker, assignment_id, amount, reason, *idempotency_key);
}

LedgerEntry EvalService::approve_assignment(const std::string& token, const std::string& assignment_id) {
    require_admin(token);
    return crowd_->approve_assignment(assignment_id);
}

std::vector<LedgerEntry> EvalService::ledger(const std::string& token) const {
    require_admin(token);
    return store_->ledger();
}

} // namespace evalroom
