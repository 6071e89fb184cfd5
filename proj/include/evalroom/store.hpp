#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "evalroom/clock.hpp"
#include "evalroom/money.hpp"
#include "evalroom/room.hpp"
#include "evalroom/user.hpp"

struct sqlite3;

namespace evalroom {

struct Session {
    std::string session_id;
    std::string user_id;
    UserRole role = UserRole::worker;
    Timestamp created_at{};
    bool consent_ok = false;
    int messages_posted = 0;
};

enum class AssignmentStatus { open, submitted, approved };

std::string_view to_string(AssignmentStatus status);

struct AssignmentRecord {
    std::int64_t id = 0;
    std::string thread_id;
    std::string user_id;
    std::optional<std::string> ext_assignment_id;
    std::optional<std::string> ext_hit_id;
    AssignmentStatus status = AssignmentStatus::open;

    bool operator==(const AssignmentRecord&) const = default;
};

/// One published external task, bound to the thread it routes to.
struct HitRecord {
    std::string hit_id;
    std::string thread_id;
    std::string topic_id;
    std::string entry_url;
    bool expired = false;
    Timestamp created_at{};
};

struct LedgerEntry {
    std::int64_t seq = 0;
    std::string action;
    std::string worker_id;
    std::string assignment_id;
    std::string hit_id;
    std::string subject; // qualification name, topic id, ...
    std::optional<Money> amount;
    std::string reason;
    std::optional<std::string> idempotency_key;
    Timestamp at{};

    bool operator==(const LedgerEntry&) const = default;
};

struct ThreadSummary {
    std::string id;
    std::string topic_id;
    ThreadState state = ThreadState::Created;
    int participant_count = 0;
    int message_count = 0;
    Timestamp created_at{};
};

struct ThreadFilter {
    std::optional<ThreadState> state;
    std::optional<std::string> topic_id;
    std::optional<std::string> user_id;
};

struct TopicStats {
    std::string topic_id;
    int threads_created = 0;
    std::optional<Timestamp> first_created_at;
    std::optional<Timestamp> last_created_at;
};

struct ExportOptions {
    /// Real user ids and ext_worker_id instead of stable pseudonyms.
    bool include_identities = false;
    /// Soft-deleted threads stay exportable for audits until purged.
    bool allow_deleted = false;
};

/// A thread as stored: everything but the parsed config, which the caller
/// resolves from `config_yaml`.
struct StoredThread {
    ChatThread thread;
    std::string config_yaml;
};

/// Embedded relational store (SQLite). One connection, guarded by a mutex;
/// every multi-row write happens inside a single transaction.
class Store {
public:
    /// ":memory:" for a private in-memory database.
    explicit Store(const std::string& path);
    ~Store();
    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    /// Runs `fn` inside one transaction (nested calls join the outer one).
    /// Any exception rolls everything back and is rethrown.
    void transaction(const std::function<void()>& fn);

    /// Test hook called at named points inside writes; throwing from it
    /// simulates an interruption.
    void set_fault_hook(std::function<void(std::string_view)> hook);

    // users
    void create_user(const UserRecord& user); // throws Conflict on duplicate id / ext id
    std::optional<UserRecord> find_user(std::string_view id) const;
    std::optional<UserRecord> find_user_by_ext(std::string_view ext_worker_id) const;
    void set_agreement_accepted(std::string_view user_id, Timestamp at);
    void add_qualification(std::string_view user_id, std::string_view name);
    void remove_qualification(std::string_view user_id, std::string_view name);
    std::map<std::string, std::set<std::string>> all_qualifications() const;

    // sessions
    void put_session(const Session& session);
    std::optional<Session> find_session(std::string_view session_id) const;
    void count_session_message(std::string_view session_id);

    // configs
    void put_config(const std::string& id, const std::string& yaml);
    std::optional<std::string> config_yaml(std::string_view id) const;

    // threads
    /// Upserts the thread row and participants, inserts `new_messages` and
    /// `ratings`, all atomically.
    void commit_thread(const ChatThread& thread, std::span<const ChatMessage> new_messages = {},
                       std::span<const RatingRecord> ratings = {});
    std::optional<StoredThread> load_thread(std::string_view id) const;
    std::vector<std::string> thread_ids() const;
    std::vector<ThreadSummary> list_threads(const ThreadFilter& filter = {}) const;
    std::vector<RatingRecord> ratings_for(std::string_view thread_id) const;
    int count_completed(std::string_view user_id) const;
    /// Completed threads the user rated plus live threads they still sit in.
    int count_engaged(std::string_view user_id) const;
    int count_threads_for_topic(std::string_view topic_id) const;
    std::vector<TopicStats> topic_stats() const;
    std::size_t purge_deleted();

    /// Canonical export document (stable key order, RFC 3339 timestamps).
    nlohmann::ordered_json export_thread(std::string_view thread_id, const ExportOptions& options = {}) const;

    // crowd
    void put_hit(const HitRecord& hit);
    std::optional<HitRecord> find_hit(std::string_view hit_id) const;
    std::optional<HitRecord> hit_for_thread(std::string_view thread_id) const;
    void expire_hit(std::string_view hit_id);
    AssignmentRecord open_assignment(const AssignmentRecord& record); // returns with id
    std::optional<AssignmentRecord> find_assignment(std::string_view thread_id, std::string_view user_id) const;
    std::optional<AssignmentRecord> find_assignment_by_ext(std::string_view ext_assignment_id) const;
    /// Accepts either the platform's assignment id or the local numeric id.
    std::optional<AssignmentRecord> find_assignment_by_key(std::string_view key) const;
    void set_assignment_status(std::int64_t id, AssignmentStatus status);

    LedgerEntry append_ledger(const LedgerEntry& entry); // returns with seq
    std::vector<LedgerEntry> ledger() const;
    std::optional<LedgerEntry> find_ledger_by_key(std::string_view idempotency_key) const;
    void record_bonus(const LedgerEntry& entry);
    std::map<std::string, Money> bonus_totals() const;

    struct Statement; // prepared-statement wrapper, defined in store.cpp

private:
    void exec(const char* sql);
    void fault(std::string_view point);

    sqlite3* db_ = nullptr;
    mutable std::recursive_mutex mutex_;
    int tx_depth_ = 0;
    std::function<void(std::string_view)> fault_hook_;
};

/// The bytes of an export file: two-space indentation and a final newline.
std::string serialize_export(const nlohmann::ordered_json& document);

/// Stable pseudonym used in exports when identities are withheld.
std::string pseudonymize(std::string_view user_id);

} // namespace evalroom
