#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evalroom/bot_gateway.hpp"
#include "evalroom/clock.hpp"
#include "evalroom/config.hpp"
#include "evalroom/message.hpp"
#include "evalroom/survey.hpp"
#include "evalroom/topics.hpp"
#include "evalroom/user.hpp"

namespace evalroom {

// Lifecycle:
//   Created -> WaitingForHumans -> Active -> RatingOpen -> Completed
//                              \-> RatingOpen (no turns required)
//   any state except Deleted -> Deleted (admin)
enum class ThreadState { Created, WaitingForHumans, Active, RatingOpen, Completed, Deleted };

std::string_view to_string(ThreadState state);
ThreadState thread_state_from_string(std::string_view text); // throws std::invalid_argument
bool is_legal_transition(ThreadState from, ThreadState to);

enum class ParticipantRole { human, bot };

std::string_view to_string(ParticipantRole role);

struct Participant {
    std::string user_id;
    ParticipantRole role = ParticipantRole::human;
    int join_order = 0;
    int human_turns_taken = 0;
    bool ratings_submitted = false;
    std::string speaker_label;
    std::string endpoint; // bots: registry name

    bool operator==(const Participant&) const = default;
};

struct ChatThread {
    std::string id;
    std::string topic_id;
    ThreadState state = ThreadState::Created;
    std::string config_id;
    std::shared_ptr<const TaskConfig> config;
    Params bot_params = Params::object();
    nlohmann::json topic_data = nlohmann::json::object();
    std::optional<int> max_threads_per_worker; // launch override of the config limit
    std::vector<Participant> participants;
    std::vector<ChatMessage> messages;
    bool episode_done = false;
    std::deque<std::string> pending_bots; // bot participant ids still to speak
    std::optional<std::string> last_error;
    Timestamp created_at{};

    const Participant* participant(std::string_view user_id) const;
    Participant* participant(std::string_view user_id);
    std::vector<const Participant*> humans() const;
    std::int64_t last_seq() const { return messages.empty() ? 0 : messages.back().seq; }

    /// Compares every stored field; the config is compared by identity.
    bool operator==(const ChatThread& other) const;
};

struct RatingRecord {
    std::string thread_id;
    std::string user_id;
    std::string question_id;
    nlohmann::json answer;
    Timestamp submitted_at{};

    bool operator==(const RatingRecord&) const = default;
};

/// The dialogue manager's rule set. Implementations must be deterministic in
/// the thread contents.
class DialoguePolicy {
public:
    virtual ~DialoguePolicy() = default;
    virtual std::string name() const = 0;

    /// Bots that speak as soon as the thread activates, before any human.
    virtual std::vector<std::string> opening_turns(const ChatThread&) const { return {}; }
    /// Whether `user_id` may post now. Consulted only when no bot turn is pending.
    virtual bool is_human_turn(const ChatThread& thread, std::string_view user_id) const = 0;
    /// Bot participant ids that reply, in order, after a human message was appended.
    virtual std::vector<std::string> bot_replies(const ChatThread& thread) const = 0;
    /// Extra completion condition on top of "every human took the required turns".
    virtual bool episode_done(const ChatThread&) const { return true; }
};

/// One human, every bot replies after each human message.
class AlternatingPolicy : public DialoguePolicy {
public:
    std::string name() const override { return "alternating"; }
    bool is_human_turn(const ChatThread& thread, std::string_view user_id) const override;
    std::vector<std::string> bot_replies(const ChatThread& thread) const override;
};

/// Humans speak in join order; bots reply after each full human round.
class RoundRobinPolicy : public DialoguePolicy {
public:
    std::string name() const override { return "round_robin"; }
    bool is_human_turn(const ChatThread& thread, std::string_view user_id) const override;
    std::vector<std::string> bot_replies(const ChatThread& thread) const override;
};

class PolicyRegistry {
public:
    /// Registry holding the built-in policies.
    static PolicyRegistry with_builtins();

    void add(std::shared_ptr<const DialoguePolicy> policy); // throws DuplicateName
    const DialoguePolicy& get(std::string_view name) const; // throws NotFound
    std::vector<std::string> names() const;

private:
    std::map<std::string, std::shared_ptr<const DialoguePolicy>, std::less<>> policies_;
};

struct JoinOutcome {
    int seat = 0; // join_order
    bool your_turn = false;
    ThreadState state = ThreadState::WaitingForHumans;
    bool already_joined = false;
};

struct PostOutcome {
    ChatMessage message;
    std::vector<std::string> planned_bots;
    ThreadState state = ThreadState::Active;
};

/// A planned bot turn, built under the thread lock and executed outside it.
struct BotCall {
    std::string bot_user_id;
    BotEndpointSpec endpoint;
    BotTurnRequest request;
    std::int64_t next_seq = 0;
};

struct BotRunReport {
    std::vector<ChatMessage> messages;
    std::vector<AttemptFailure> retry_events;
    std::optional<BotError> error;
};

struct SubmitOutcome {
    ThreadState state = ThreadState::RatingOpen;
    std::vector<RatingRecord> records;
};

/// Pure state transitions over ChatThread values. Callers serialize access
/// to any one thread; every operation either fully applies or throws and
/// leaves the thread untouched.
class RoomEngine {
public:
    RoomEngine(const BotRegistry& bots, const PolicyRegistry& policies, Clock clock);

    /// Thread in WaitingForHumans with seeds copied as messages 1..k.
    ChatThread create_thread(std::string id, const Topic& topic, std::shared_ptr<const TaskConfig> config,
                             Params bot_params = Params::object(),
                             std::optional<int> max_threads_per_worker = std::nullopt) const;

    /// `engaged_threads` is how many other threads already count against the
    /// worker's limit (see Store::count_engaged).
    JoinOutcome join_thread(ChatThread& thread, const UserRecord& user, int engaged_threads) const;

    PostOutcome post_human_message(ChatThread& thread, std::string_view user_id, std::string_view text) const;

    std::optional<BotCall> next_bot_call(const ChatThread& thread) const;
    /// Appends the reply if `call` still matches the head of the plan;
    /// returns nullopt for stale calls (thread moved on or was deleted).
    std::optional<ChatMessage> apply_bot_reply(ChatThread& thread, const BotCall& call,
                                               const BotTurnResponse& response) const;
    /// Plan is retained; the error is surfaced through last_error.
    void record_bot_failure(ChatThread& thread, const BotCall& call, const BotError& error) const;
    /// Synchronous convenience loop over next_bot_call / apply_bot_reply.
    BotRunReport run_bot_turns(ChatThread& thread, BotGateway& gateway) const;

    SubmitOutcome submit_ratings(ChatThread& thread, std::string_view user_id, const Answers& answers) const;

    int remaining_turns(const ChatThread& thread, std::string_view user_id) const;
    bool is_your_turn(const ChatThread& thread, std::string_view user_id) const;
    bool survey_open(const ChatThread& thread) const { return thread.state == ThreadState::RatingOpen; }

    void delete_thread(ChatThread& thread) const;

    const DialoguePolicy& policy_for(const ChatThread& thread) const;

private:
    void set_state(ChatThread& thread, ThreadState to) const;
    void maybe_finish_episode(ChatThread& thread) const;
    bool humans_done(const ChatThread& thread) const;
    bool chat_open_for(const ChatThread& thread, const Participant& human) const;

    const BotRegistry& bots_;
    const PolicyRegistry& policies_;
    Clock clock_;
};

} // namespace evalroom
