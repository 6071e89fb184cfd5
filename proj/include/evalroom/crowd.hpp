#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "evalroom/clock.hpp"
#include "evalroom/config.hpp"
#include "evalroom/money.hpp"
#include "evalroom/store.hpp"

namespace evalroom {

/// Query parameter names and the preview sentinel used on the landing route.
/// Defaults follow Mechanical Turk's ExternalQuestion convention.
struct EntryConvention {
    std::string worker_param = "workerId";
    std::string assignment_param = "assignmentId";
    std::string hit_param = "hitId";
    std::string preview_sentinel = "ASSIGNMENT_ID_NOT_AVAILABLE";
};

struct EntryParams {
    std::string worker_id;
    std::string assignment_id;
    std::string hit_id;
    bool preview = false;

    bool operator==(const EntryParams&) const = default;
};

struct Anonymous {
    bool operator==(const Anonymous&) const = default;
};

using Entry = std::variant<Anonymous, EntryParams>;

/// A preview (sentinel assignment id) is always EntryParams with preview set;
/// otherwise a worker id is needed, and without one the entry is Anonymous.
Entry parse_entry(const std::map<std::string, std::string>& query, const EntryConvention& convention = {});

struct TaskHandle {
    std::string hit_id;
    std::string thread_id;
    std::string entry_url;
};

struct BonusAck {
    std::int64_t ledger_seq = 0;
    std::string worker_id;
    std::string assignment_id;
    Money amount;
    std::string idempotency_key;
    bool replayed = false; // true when the key had already been paid

    bool operator==(const BonusAck&) const = default;
};

/// What the local mirror should look like after applying a ledger.
struct MirrorState {
    std::map<std::string, std::set<std::string>> qualifications;
    std::map<std::string, Money> bonus_totals;

    bool operator==(const MirrorState&) const = default;
};

MirrorState replay_ledger(const std::vector<LedgerEntry>& ledger);
MirrorState current_mirror(const Store& store);

/// Idempotency key the admin UI uses for a bonus button.
std::string derive_bonus_key(std::string_view thread_id, std::string_view worker_id, std::string_view reason);

nlohmann::ordered_json ledger_to_json(const std::vector<LedgerEntry>& ledger);

/// Platform-neutral client. Validation, the ledger append and the local
/// mirror update happen in one store transaction around the platform call,
/// so a failed platform call or ledger write leaves no trace.
class CrowdClient {
public:
    CrowdClient(Store& store, Clock clock, std::string entry_base, EntryConvention convention = {});
    virtual ~CrowdClient() = default;

    virtual CrowdPlatform platform() const = 0;

    /// One external task per thread; each entry URL routes to the landing page.
    std::vector<TaskHandle> publish_task(std::string_view topic_id, const std::vector<std::string>& thread_ids,
                                         const CrowdSettings& crowd);
    void expire_task(std::string_view hit_id);
    LedgerEntry assign_qualification(std::string_view worker, std::string_view qualification);
    LedgerEntry revoke_qualification(std::string_view worker, std::string_view qualification);
    BonusAck grant_bonus(std::string_view worker, std::string_view assignment_id, Money amount, std::string_view reason,
                         std::string_view idempotency_key);
    LedgerEntry approve_assignment(std::string_view assignment_id);

    const EntryConvention& convention() const { return convention_; }
    const std::string& entry_base() const { return entry_base_; }

protected:
    /// Platform side of each action. Returns the platform's id for publishes
    /// (ignored elsewhere); throws PlatformRejected on refusal.
    virtual std::string remote(const LedgerEntry& pending) = 0;

    Store& store_;

private:
    LedgerEntry pending_entry(std::string action) const;

    Clock clock_;
    std::string entry_base_;
    EntryConvention convention_;
    std::mutex mutex_; // ledger appends are serialized
};

/// No platform: everything but publishing works locally.
class LocalCrowdClient : public CrowdClient {
public:
    LocalCrowdClient(Store& store, Clock clock, std::string entry_base, CrowdPlatform platform);
    CrowdPlatform platform() const override { return platform_; }

protected:
    std::string remote(const LedgerEntry& pending) override;

private:
    CrowdPlatform platform_;
};

/// In-memory stand-in for Mechanical Turk with an inspectable remote view.
class MockMturkClient : public CrowdClient {
public:
    using CrowdClient::CrowdClient;
    CrowdPlatform platform() const override { return CrowdPlatform::mock_mturk; }

    /// Makes the next `count` calls of `action` ("*" for any) fail.
    void fail_next(std::string action, int count = 1);

    /// Simulates a worker accepting a published HIT; returns the full
    /// landing URL the platform would open.
    std::string accept(std::string_view hit_id, std::string_view worker_id);
    std::string preview_url(std::string_view hit_id) const;

    struct Remote {
        std::set<std::string> hits;
        std::set<std::string> expired;
        std::map<std::string, std::set<std::string>> qualifications;
        std::map<std::string, Money> bonuses_paid;
        std::set<std::string> approved;
        int calls = 0;
    };
    Remote remote_view() const;

protected:
    std::string remote(const LedgerEntry& pending) override;

private:
    mutable std::mutex mock_mutex_;
    std::map<std::string, int> failures_;
    Remote remote_;
    int next_id_ = 1;
};

std::unique_ptr<CrowdClient> make_crowd_client(CrowdPlatform platform, Store& store, Clock clock,
                                               std::string entry_base);

} // namespace evalroom
