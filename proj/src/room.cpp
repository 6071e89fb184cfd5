#include "evalroom/room.hpp"

#include <algorithm>
#include <cctype>

#include "evalroom/error.hpp"

namespace evalroom {

std::string_view to_string(ThreadState state) {
    switch (state) {
    case ThreadState::Created: return "Created";
    case ThreadState::WaitingForHumans: return "WaitingForHumans";
    case ThreadState::Active: return "Active";
    case ThreadState::RatingOpen: return "RatingOpen";
    case ThreadState::Completed: return "Completed";
    case ThreadState::Deleted: return "Deleted";
    }
    return "Created";
}

ThreadState thread_state_from_string(std::string_view text) {
    for (auto s : {ThreadState::Created, ThreadState::WaitingForHumans, ThreadState::Active, ThreadState::RatingOpen,
                   ThreadState::Completed, ThreadState::Deleted})
        if (to_string(s) == text) return s;
    throw std::invalid_argument("unknown thread state '" + std::string(text) + "'");
}

bool is_legal_transition(ThreadState from, ThreadState to) {
    using S = ThreadState;
    if (to == S::Deleted) return from != S::Deleted;
    switch (from) {
    case S::Created: return to == S::WaitingForHumans;
    case S::WaitingForHumans: return to == S::Active || to == S::RatingOpen;
    case S::Active: return to == S::RatingOpen;
    case S::RatingOpen: return to == S::Completed;
    case S::Completed:
    case S::Deleted: return false;
    }
    return false;
}

std::string_view to_string(ParticipantRole role) { return role == ParticipantRole::human ? "human" : "bot"; }

std::string_view to_string(UserRole role) { return role == UserRole::admin ? "admin" : "worker"; }

UserRole user_role_from_string(std::string_view text) {
    if (text == "admin") return UserRole::admin;
    if (text == "worker") return UserRole::worker;
    throw std::invalid_argument("unknown user role '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- ChatThread

const Participant* ChatThread::participant(std::string_view user_id) const {
    auto it = std::find_if(participants.begin(), participants.end(),
                           [&](const Participant& p) { return p.user_id == user_id; });
    return it == participants.end() ? nullptr : &*it;
}

Participant* ChatThread::participant(std::string_view user_id) {
    return const_cast<Participant*>(std::as_const(*this).participant(user_id));
}

std::vector<const Participant*> ChatThread::humans() const {
    std::vector<const Participant*> out;
    for (const auto& p : participants)
        if (p.role == ParticipantRole::human) out.push_back(&p);
    std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->join_order < b->join_order; });
    return out;
}

bool ChatThread::operator==(const ChatThread& o) const {
    return id == o.id && topic_id == o.topic_id && state == o.state && config_id == o.config_id &&
           bot_params == o.bot_params && topic_data == o.topic_data &&
           max_threads_per_worker == o.max_threads_per_worker && participants == o.participants &&
           messages == o.messages && episode_done == o.episode_done && pending_bots == o.pending_bots &&
           last_error == o.last_error && created_at == o.created_at;
}

// ---------------------------------------------------------------- policies

namespace {

std::vector<std::string> all_bots(const ChatThread& thread) {
    std::vector<const Participant*> bots;
    for (const auto& p : thread.participants)
        if (p.role == ParticipantRole::bot) bots.push_back(&p);
    std::sort(bots.begin(), bots.end(), [](auto* a, auto* b) { return a->join_order < b->join_order; });
    std::vector<std::string> ids;
    for (const auto* b : bots) ids.push_back(b->user_id);
    return ids;
}

std::int64_t human_message_count(const ChatThread& thread) {
    return std::count_if(thread.messages.begin(), thread.messages.end(),
                         [](const ChatMessage& m) { return m.author_role == AuthorRole::human; });
}

} // namespace

bool AlternatingPolicy::is_human_turn(const ChatThread& thread, std::string_view user_id) const {
    const auto* p = thread.participant(user_id);
    return p && p->role == ParticipantRole::human;
}

std::vector<std::string> AlternatingPolicy::bot_replies(const ChatThread& thread) const { return all_bots(thread); }

bool RoundRobinPolicy::is_human_turn(const ChatThread& thread, std::string_view user_id) const {
    const auto humans = thread.humans();
    if (humans.empty()) return false;
    const auto next = static_cast<std::size_t>(human_message_count(thread)) % humans.size();
    return humans[next]->user_id == user_id;
}

std::vector<std::string> RoundRobinPolicy::bot_replies(const ChatThread& thread) const {
    const auto humans = thread.humans();
    if (humans.empty() || human_message_count(thread) % static_cast<std::int64_t>(humans.size()) != 0) return {};
    return all_bots(thread);
}

PolicyRegistry PolicyRegistry::with_builtins() {
    PolicyRegistry r;
    r.add(std::make_shared<AlternatingPolicy>());
    r.add(std::make_shared<RoundRobinPolicy>());
    return r;
}

void PolicyRegistry::add(std::shared_ptr<const DialoguePolicy> policy) {
    auto name = policy->name();
    if (policies_.count(name)) throw DuplicateName(name);
    policies_.emplace(std::move(name), std::move(policy));
}

const DialoguePolicy& PolicyRegistry::get(std::string_view name) const {
    auto it = policies_.find(name);
    if (it == policies_.end()) throw NotFound("dialogue policy '" + std::string(name) + "'");
    return *it->second;
}

std::vector<std::string> PolicyRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : policies_) out.push_back(name);
    return out;
}

// ---------------------------------------------------------------- engine

namespace {

// Threads loaded from storage must be re-attached to their config before use.
const TaskConfig& config_of(const ChatThread& thread) {
    if (!thread.config) throw ConfigError("thread " + thread.id + " has no config attached");
    return *thread.config;
}

} // namespace

RoomEngine::RoomEngine(const BotRegistry& bots, const PolicyRegistry& policies, Clock clock)
    : bots_(bots), policies_(policies), clock_(std::move(clock)) {}

const DialoguePolicy& RoomEngine::policy_for(const ChatThread& thread) const {
    return policies_.get(config_of(thread).chat.policy_name);
}

void RoomEngine::set_state(ChatThread& thread, ThreadState to) const {
    if (!is_legal_transition(thread.state, to))
        throw IllegalTransition(std::string(to_string(thread.state)) + " -> " + std::string(to_string(to)));
    thread.state = to;
}

ChatThread RoomEngine::create_thread(std::string id, const Topic& topic, std::shared_ptr<const TaskConfig> config,
                                     Params bot_params, std::optional<int> max_threads_per_worker) const {
    if (!config) throw ConfigError("thread needs a config");
    if (!bot_params.is_object()) throw BadRequest("bot_params must be an object");
    if (max_threads_per_worker && *max_threads_per_worker <= 0)
        throw BadRequest("max_threads_per_worker must be positive");
    policies_.get(config->chat.policy_name);

    ChatThread thread;
    thread.id = std::move(id);
    thread.topic_id = topic.id;
    thread.config_id = config_identity(*config);
    thread.bot_params = std::move(bot_params);
    thread.topic_data = topic.data;
    thread.max_threads_per_worker = max_threads_per_worker;
    thread.created_at = clock_();

    int order = 0;
    for (int i = 0; i < config->chat.bots_per_thread; ++i) {
        const auto& spec = config->bots.at(static_cast<std::size_t>(i));
        if (!bots_.find(spec.name)) throw BotUnavailable(spec.name);
        Participant bot;
        bot.user_id = "bot:" + spec.name;
        bot.role = ParticipantRole::bot;
        bot.join_order = ++order;
        bot.speaker_label = spec.name;
        bot.endpoint = spec.name;
        thread.participants.push_back(std::move(bot));
    }
    for (const auto& seed : topic.seed_turns) {
        ChatMessage m;
        m.seq = thread.last_seq() + 1;
        m.author_id = "seed";
        m.author_role = AuthorRole::seed;
        m.speaker_label = seed.speaker_label;
        m.text = seed.text;
        m.is_seed = true;
        m.created_at = thread.created_at;
        thread.messages.push_back(std::move(m));
    }
    thread.config = std::move(config);
    set_state(thread, ThreadState::WaitingForHumans);
    return thread;
}

bool RoomEngine::humans_done(const ChatThread& thread) const {
    const int required = config_of(thread).chat.human_turns_required;
    const auto humans = thread.humans();
    return std::all_of(humans.begin(), humans.end(), [&](auto* h) { return h->human_turns_taken >= required; });
}

bool RoomEngine::chat_open_for(const ChatThread& thread, const Participant& human) const {
    const auto& chat = config_of(thread).chat;
    if (human.ratings_submitted) return false;
    if (thread.state == ThreadState::Active) return chat.allow_chat_after_done || human.human_turns_taken < chat.human_turns_required;
    if (thread.state == ThreadState::RatingOpen) return chat.allow_chat_after_done && chat.human_turns_required > 0;
    return false;
}

JoinOutcome RoomEngine::join_thread(ChatThread& thread, const UserRecord& user, int engaged_threads) const {
    if (thread.state == ThreadState::Deleted || thread.state == ThreadState::Completed)
        throw WrongState("thread " + thread.id + " is " + std::string(to_string(thread.state)));
    if (const auto* p = thread.participant(user.id)) {
        if (p->role != ParticipantRole::human) throw Conflict(user.id + " is a bot participant");
        return JoinOutcome{p->join_order, is_your_turn(thread, user.id), thread.state, true};
    }
    if (!user.consented()) throw NotConsented();
    const auto& chat = config_of(thread).chat;
    if (thread.state != ThreadState::WaitingForHumans ||
        static_cast<int>(thread.humans().size()) >= chat.humans_per_thread)
        throw ThreadFull(thread.id);
    const auto limit = thread.max_threads_per_worker ? thread.max_threads_per_worker
                                                     : config_of(thread).limits.max_threads_per_worker;
    if (limit && engaged_threads >= *limit)
        throw LimitExceeded("worker " + user.id + " reached the limit of " + std::to_string(*limit) + " task(s)");

    Participant human;
    human.user_id = user.id;
    human.role = ParticipantRole::human;
    human.join_order = static_cast<int>(thread.participants.size()) + 1;
    human.speaker_label = "human-" + std::to_string(thread.humans().size() + 1);
    thread.participants.push_back(human);

    if (static_cast<int>(thread.humans().size()) == chat.humans_per_thread) {
        if (chat.human_turns_required > 0) {
            set_state(thread, ThreadState::Active);
            const auto opening = policy_for(thread).opening_turns(thread);
            thread.pending_bots.assign(opening.begin(), opening.end());
        } else {
            set_state(thread, ThreadState::RatingOpen);
            thread.episode_done = true;
        }
    }
    return JoinOutcome{human.join_order, is_your_turn(thread, user.id), thread.state, false};
}

bool RoomEngine::is_your_turn(const ChatThread& thread, std::string_view user_id) const {
    const auto* p = thread.participant(user_id);
    if (!p || p->role != ParticipantRole::human) return false;
    if (!thread.pending_bots.empty() || !chat_open_for(thread, *p)) return false;
    return policy_for(thread).is_human_turn(thread, user_id);
}

PostOutcome RoomEngine::post_human_message(ChatThread& thread, std::string_view user_id, std::string_view text) const {
    if (thread.state != ThreadState::Active && thread.state != ThreadState::RatingOpen)
        throw WrongState("cannot post while thread is " + std::string(to_string(thread.state)));
    const auto* p = thread.participant(user_id);
    if (!p || p->role != ParticipantRole::human) throw NotParticipant(std::string(user_id));
    if (!chat_open_for(thread, *p))
        throw WrongState("chat input is closed for " + std::string(user_id));

    auto first = std::find_if_not(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
    auto last = std::find_if_not(text.rbegin(), text.rend(), [](unsigned char c) { return std::isspace(c); }).base();
    if (first >= last) throw EmptyMessage();
    if (!thread.pending_bots.empty()) throw TurnViolation("waiting for a bot reply");
    if (!policy_for(thread).is_human_turn(thread, user_id))
        throw TurnViolation("it is not " + std::string(user_id) + "'s turn");

    ChatMessage m;
    m.seq = thread.last_seq() + 1;
    m.author_id = std::string(user_id);
    m.author_role = AuthorRole::human;
    m.speaker_label = p->speaker_label;
    m.text = std::string(first, last);
    m.created_at = clock_();
    thread.messages.push_back(m);
    thread.participant(user_id)->human_turns_taken += 1;

    auto plan = policy_for(thread).bot_replies(thread);
    thread.pending_bots.assign(plan.begin(), plan.end());
    if (thread.pending_bots.empty()) maybe_finish_episode(thread);
    return PostOutcome{std::move(m), std::move(plan), thread.state};
}

void RoomEngine::maybe_finish_episode(ChatThread& thread) const {
    if (thread.state != ThreadState::Active || !thread.pending_bots.empty()) return;
    if (!humans_done(thread) || !policy_for(thread).episode_done(thread)) return;
    thread.episode_done = true;
    set_state(thread, ThreadState::RatingOpen);
}

std::optional<BotCall> RoomEngine::next_bot_call(const ChatThread& thread) const {
    if (thread.pending_bots.empty()) return std::nullopt;
    if (thread.state != ThreadState::Active && thread.state != ThreadState::RatingOpen) return std::nullopt;
    const auto* bot = thread.participant(thread.pending_bots.front());
    if (!bot) return std::nullopt;

    BotCall call;
    call.bot_user_id = bot->user_id;
    call.endpoint = bots_.at(bot->endpoint);
    call.next_seq = thread.last_seq() + 1;
    call.request.thread_id = thread.id;
    for (const auto& m : thread.messages)
        call.request.transcript.push_back({m.author_role, m.speaker_label, m.text, m.is_seed});
    call.request.topic_data = thread.topic_data;
    call.request.params = overlay_params(call.endpoint.default_params, thread.bot_params);
    return call;
}

std::optional<ChatMessage> RoomEngine::apply_bot_reply(ChatThread& thread, const BotCall& call,
                                                       const BotTurnResponse& response) const {
    if (thread.state != ThreadState::Active && thread.state != ThreadState::RatingOpen) return std::nullopt;
    if (thread.pending_bots.empty() || thread.pending_bots.front() != call.bot_user_id) return std::nullopt;
    if (thread.last_seq() + 1 != call.next_seq) return std::nullopt;
    const auto* bot = thread.participant(call.bot_user_id);

    ChatMessage m;
    m.seq = call.next_seq;
    m.author_id = call.bot_user_id;
    m.author_role = AuthorRole::bot;
    m.speaker_label = bot ? bot->speaker_label : call.endpoint.name;
    m.text = response.text;
    m.created_at = clock_();
    thread.messages.push_back(m);
    thread.pending_bots.pop_front();
    thread.last_error.reset();
    maybe_finish_episode(thread);
    return m;
}

void RoomEngine::record_bot_failure(ChatThread& thread, const BotCall& call, const BotError& error) const {
    if (thread.pending_bots.empty() || thread.pending_bots.front() != call.bot_user_id) return;
    thread.last_error = error.what();
}

BotRunReport RoomEngine::run_bot_turns(ChatThread& thread, BotGateway& gateway) const {
    BotRunReport report;
    while (auto call = next_bot_call(thread)) {
        try {
            auto outcome = gateway.request_turn(call->endpoint, call->request);
            report.retry_events.insert(report.retry_events.end(), outcome.retries.begin(), outcome.retries.end());
            if (auto m = apply_bot_reply(thread, *call, outcome.response)) report.messages.push_back(std::move(*m));
        } catch (const BotError& e) {
            report.retry_events.insert(report.retry_events.end(), e.failures().begin(), e.failures().end() - 1);
            record_bot_failure(thread, *call, e);
            report.error = e;
            break;
        }
    }
    return report;
}

SubmitOutcome RoomEngine::submit_ratings(ChatThread& thread, std::string_view user_id, const Answers& answers) const {
    if (thread.state != ThreadState::RatingOpen)
        throw WrongState("survey is not open (thread is " + std::string(to_string(thread.state)) + ")");
    const auto* p = thread.participant(user_id);
    if (!p || p->role != ParticipantRole::human) throw NotParticipant(std::string(user_id));
    if (p->ratings_submitted) throw AlreadySubmitted(std::string(user_id));
    const auto& survey = config_of(thread).survey;
    auto report = validate_answers(survey, answers);
    if (!report.empty()) throw ValidationFailed(std::move(report.violations));

    SubmitOutcome out;
    const auto now = clock_();
    for (const auto& q : survey.questions) {
        auto it = answers.find(q.id);
        if (it == answers.end() || is_unanswered(it->second)) continue;
        out.records.push_back(RatingRecord{thread.id, std::string(user_id), q.id, it->second, now});
    }
    thread.participant(user_id)->ratings_submitted = true;
    const auto humans = thread.humans();
    if (std::all_of(humans.begin(), humans.end(), [](auto* h) { return h->ratings_submitted; }))
        set_state(thread, ThreadState::Completed);
    out.state = thread.state;
    return out;
}

int RoomEngine::remaining_turns(const ChatThread& thread, std::string_view user_id) const {
    const auto* p = thread.participant(user_id);
    if (!p || p->role != ParticipantRole::human) throw NotParticipant(std::string(user_id));
    return std::max(0, config_of(thread).chat.human_turns_required - p->human_turns_taken);
}

void RoomEngine::delete_thread(ChatThread& thread) const {
    set_state(thread, ThreadState::Deleted);
    thread.pending_bots.clear();
}

} // namespace evalroom
