#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "evalroom/bot_gateway.hpp"
#include "evalroom/clock.hpp"
#include "evalroom/config.hpp"
#include "evalroom/crowd.hpp"
#include "evalroom/room.hpp"
#include "evalroom/store.hpp"
#include "evalroom/topics.hpp"

namespace evalroom {

struct ServiceOptions {
    Clock clock = system_clock();
    /// Overrides config.instance.store_path when set (":memory:" in tests).
    std::optional<std::string> store_path;
    /// Run bot turns inline before a post returns instead of on the worker pool.
    bool synchronous_bots = false;
    int bot_workers = 4;
    RetryPolicy retry;
    Sleeper sleeper; // empty = real sleep
    std::uint64_t seed = std::random_device{}();
    /// Overrides config.instance.long_poll_seconds when set.
    std::optional<std::chrono::milliseconds> long_poll_window;
    int max_messages_per_session = 1000;
    /// Generates ids for new threads; empty = random.
    std::function<std::string()> thread_ids;
};

struct UpdateDelta {
    std::vector<ChatMessage> messages;
    ThreadState state = ThreadState::WaitingForHumans;
    int remaining_turns = 0;
    bool survey_open = false;
    bool your_turn = false;
    std::optional<std::string> error_banner;
    std::int64_t last_seq = 0;
};

nlohmann::ordered_json to_json(const ChatMessage& message);
nlohmann::ordered_json to_json(const UpdateDelta& delta);

struct SessionGrant {
    std::string token;
    std::string user_id;
    UserRole role = UserRole::worker;
    bool consent_ok = false;
};

struct LandingPreview {
    std::string hit_id;
};
struct LandingSignup {};
struct LandingEntered {
    SessionGrant session;
    std::string thread_id;
};
using LandingResult = std::variant<LandingSignup, LandingPreview, LandingEntered>;

/// One line of a batch report; `error` is set iff the item failed.
struct BatchItem {
    std::string id;
    std::optional<std::string> thread_id;
    std::optional<std::string> hit_id;
    std::optional<std::string> entry_url;
    std::optional<std::string> error_code;
    std::optional<std::string> error;
};

nlohmann::ordered_json to_json(const std::vector<BatchItem>& report);

struct LaunchRequest {
    int count = 1;
    Params bot_params = Params::object();
    std::optional<int> max_per_worker;
};

/// Everything the HTTP layer exposes, independent of the wire. Sessions are
/// passed as opaque tokens; every method checks authorization itself.
class EvalService {
public:
    EvalService(TaskConfig config, TopicSet topics, ServiceOptions options = {},
                std::shared_ptr<BotTransport> transport = std::make_shared<RoutingTransport>());
    ~EvalService();
    EvalService(const EvalService&) = delete;
    EvalService& operator=(const EvalService&) = delete;

    // accounts and sessions
    SessionGrant signup(const std::string& user_id, const std::string& secret);
    SessionGrant login(const std::string& user_id, const std::string& secret);
    void create_admin(const std::string& user_id, const std::string& secret);
    Session require_session(const std::string& token) const;    // Unauthorized
    Session require_consented(const std::string& token) const;  // + NotConsented
    Session require_admin(const std::string& token) const;      // + Forbidden
    LandingResult landing(const std::map<std::string, std::string>& query);
    void consent(const std::string& token, const std::vector<bool>& checked);

    // evaluator
    JoinOutcome join(const std::string& token, const std::string& thread_id);
    /// Joins the oldest open thread (optionally of one topic) the worker may take.
    std::string assign(const std::string& token, const std::optional<std::string>& topic_id);
    ChatMessage post_message(const std::string& token, const std::string& thread_id, const std::string& text);
    UpdateDelta updates(const std::string& token, const std::string& thread_id, std::int64_t since, bool wait);
    SubmitOutcome submit_ratings(const std::string& token, const std::string& thread_id, const Answers& answers);
    /// Re-queues a failed bot turn.
    void retry_bots(const std::string& token, const std::string& thread_id);
    /// Data for the thread page shell.
    nlohmann::ordered_json thread_view(const std::string& token, const std::string& thread_id);

    // admin
    nlohmann::ordered_json topics_table(const std::string& token) const;
    std::vector<BatchItem> launch(const std::string& token, const std::vector<std::string>& topic_ids,
                                  const LaunchRequest& request);
    std::vector<BatchItem> delete_threads(const std::string& token, const std::vector<std::string>& thread_ids);
    std::vector<ThreadSummary> list_threads(const std::string& token, const ThreadFilter& filter) const;
    nlohmann::ordered_json export_thread(const std::string& token, const std::string& thread_id,
                                         const ExportOptions& options) const;
    LedgerEntry add_qualification(const std::string& token, const std::string& worker, const std::string& name);
    LedgerEntry remove_qualification(const std::string& token, const std::string& worker, const std::string& name);
    BonusAck grant_bonus(const std::string& token, const std::string& worker, const std::string& assignment_id,
                         Money amount, const std::string& reason, std::optional<std::string> idempotency_key);
    LedgerEntry approve_assignment(const std::string& token, const std::string& assignment_id);
    std::vector<LedgerEntry> ledger(const std::string& token) const;

    /// Blocks until no bot turn is queued or running (tests, shutdown).
    void drain_bots();
    /// Wakes long-polls, finishes in-flight bot calls, stops the pool.
    void shutdown();

    const TaskConfig& config() const { return *config_; }
    const TopicSet& topics() const { return topics_; }
    Store& store() { return *store_; }
    CrowdClient& crowd() { return *crowd_; }
    InProcessBots* local_bots();
    std::chrono::milliseconds long_poll_window() const { return long_poll_; }
    /// Snapshot of the live thread (tests).
    ChatThread snapshot(const std::string& thread_id);

private:
    struct Slot {
        std::mutex mutex;
        std::condition_variable changed;
        ChatThread thread;
        std::uint64_t version = 0;
        bool bot_running = false;
    };

    std::shared_ptr<Slot> slot(const std::string& thread_id);
    std::shared_ptr<const TaskConfig> config_for(const std::string& config_id, const std::string& yaml);
    /// Writes `next` (messages past the current tail, plus `ratings`).
    /// Caller holds slot.mutex for all three.
    void persist(const Slot& slot, const ChatThread& next, std::span<const RatingRecord> ratings = {});
    /// Makes `next` the live thread and wakes pollers.
    void publish(Slot& slot, ChatThread next);
    void commit(Slot& slot, ChatThread next, std::span<const RatingRecord> ratings = {});
    void schedule_bots(const std::string& thread_id);
    void run_bots(const std::string& thread_id);
    void bot_worker();
    SessionGrant open_session(const UserRecord& user);
    void ensure_participant_or_admin(const Session& session, const ChatThread& thread) const;
    std::string new_thread_id();
    void resume_pending();

    std::shared_ptr<const TaskConfig> config_;
    std::string config_id_;
    TopicSet topics_;
    ServiceOptions options_;
    std::chrono::milliseconds long_poll_;
    std::unique_ptr<Store> store_;
    std::shared_ptr<BotTransport> transport_;
    BotRegistry bots_;
    PolicyRegistry policies_;
    std::unique_ptr<RoomEngine> engine_;
    std::unique_ptr<BotGateway> gateway_;
    std::unique_ptr<CrowdClient> crowd_;

    std::mutex slots_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> slots_;
    std::mutex configs_mutex_;
    std::map<std::string, std::shared_ptr<const TaskConfig>> configs_;
    std::mutex join_mutex_; // serializes limit checks across threads

    std::mutex queue_mutex_;
    std::condition_variable queue_cv_;
    std::condition_variable idle_cv_;
    std::deque<std::string> queue_;
    std::set<std::string> queued_;
    int busy_ = 0;
    std::atomic<bool> stopping_{false};
    std::vector<std::thread> workers_;
};

} // namespace evalroom
