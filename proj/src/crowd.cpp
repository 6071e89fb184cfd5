#include "evalroom/crowd.hpp"

#include <algorithm>
#include <cctype>

#include "evalroom/crypto.hpp"
#include "evalroom/error.hpp"
#include "evalroom/url.hpp"

namespace evalroom {

Entry parse_entry(const std::map<std::string, std::string>& query, const EntryConvention& convention) {
    auto value = [&](const std::string& key) {
        auto it = query.find(key);
        return it == query.end() ? std::string{} : it->second;
    };
    EntryParams p{value(convention.worker_param), value(convention.assignment_param), value(convention.hit_param),
                  false};
    p.preview = p.assignment_id == convention.preview_sentinel;
    if (p.preview) return p;
    if (p.worker_id.empty()) return Anonymous{};
    return p;
}

MirrorState replay_ledger(const std::vector<LedgerEntry>& ledger) {
    MirrorState m;
    for (const auto& e : ledger) {
        if (e.action == "assign_qualification") {
            m.qualifications[e.worker_id].insert(e.subject);
        } else if (e.action == "revoke_qualification") {
            auto it = m.qualifications.find(e.worker_id);
            if (it == m.qualifications.end()) continue;
            it->second.erase(e.subject);
            if (it->second.empty()) m.qualifications.erase(it);
        } else if (e.action == "grant_bonus" && e.amount) {
            m.bonus_totals[e.worker_id] += *e.amount;
        }
    }
    return m;
}

MirrorState current_mirror(const Store& store) { return MirrorState{store.all_qualifications(), store.bonus_totals()}; }

std::string derive_bonus_key(std::string_view thread_id, std::string_view worker_id, std::string_view reason) {
    std::string material;
    for (auto part : {thread_id, worker_id, reason}) {
        material += std::to_string(part.size());
        material += ':';
        material += part;
    }
    return "bonus-" + sha256_hex(material).substr(0, 32);
}

nlohmann::ordered_json ledger_to_json(const std::vector<LedgerEntry>& ledger) {
    auto out = nlohmann::ordered_json::array();
    for (const auto& e : ledger) {
        nlohmann::ordered_json j;
        j["seq"] = e.seq;
        j["action"] = e.action;
        j["worker_id"] = e.worker_id;
        j["assignment_id"] = e.assignment_id;
        j["hit_id"] = e.hit_id;
        j["subject"] = e.subject;
        j["amount"] = e.amount ? nlohmann::ordered_json(e.amount->to_string()) : nlohmann::ordered_json();
        j["reason"] = e.reason;
        j["idempotency_key"] = e.idempotency_key ? nlohmann::ordered_json(*e.idempotency_key) : nlohmann::ordered_json();
        j["at"] = format_rfc3339(e.at);
        out.push_back(std::move(j));
    }
    return out;
}

// ---------------------------------------------------------------- CrowdClient

CrowdClient::CrowdClient(Store& store, Clock clock, std::string entry_base, EntryConvention convention)
    : store_(store), clock_(std::move(clock)), entry_base_(std::move(entry_base)), convention_(std::move(convention)) {
    while (!entry_base_.empty() && entry_base_.back() == '/') entry_base_.pop_back();
}

LedgerEntry CrowdClient::pending_entry(std::string action) const {
    LedgerEntry e;
    e.action = std::move(action);
    e.at = clock_();
    return e;
}

namespace {

LedgerEntry append_or_fail(Store& store, const LedgerEntry& entry) {
    try {
        return store.append_ledger(entry);
    } catch (const std::exception& e) {
        throw LedgerWriteFailed(std::string("ledger append failed: ") + e.what());
    }
}

} // namespace

std::vector<TaskHandle> CrowdClient::publish_task(std::string_view topic_id, const std::vector<std::string>& thread_ids,
                                                  const CrowdSettings& crowd) {
    if (platform() == CrowdPlatform::none || crowd.platform == CrowdPlatform::none)
        throw ConfigError("publishing needs a crowd platform (crowd.platform is none)");
    if (thread_ids.empty()) throw BadRequest("publish_task needs at least one thread");
    std::lock_guard lock(mutex_);
    std::vector<TaskHandle> handles;
    store_.transaction([&] {
        for (const auto& thread_id : thread_ids) {
            auto entry = pending_entry("publish_task");
            entry.subject = thread_id;
            entry.amount = crowd.reward;
            entry.reason = crowd.title;
            const std::string hit_id = remote(entry);
            entry.hit_id = hit_id;
            TaskHandle handle{hit_id, thread_id,
                              entry_base_ + "/landing?" + convention_.hit_param + "=" + url_encode(hit_id)};
            store_.put_hit(HitRecord{hit_id, thread_id, std::string(topic_id), handle.entry_url, false, entry.at});
            append_or_fail(store_, entry);
            handles.push_back(std::move(handle));
        }
    });
    return handles;
}

void CrowdClient::expire_task(std::string_view hit_id) {
    std::lock_guard lock(mutex_);
    store_.transaction([&] {
        const auto hit = store_.find_hit(hit_id);
        if (!hit) throw NotFound("task '" + std::string(hit_id) + "'");
        auto entry = pending_entry("expire_task");
        entry.hit_id = hit->hit_id;
        entry.subject = hit->thread_id;
        store_.expire_hit(hit_id);
        append_or_fail(store_, entry);
        remote(entry);
    });
}

LedgerEntry CrowdClient::assign_qualification(std::string_view worker, std::string_view qualification) {
    if (qualification.empty()) throw BadRequest("qualification name must not be empty");
    std::lock_guard lock(mutex_);
    LedgerEntry out;
    store_.transaction([&] {
        if (!store_.find_user(worker)) throw UnknownWorker(std::string(worker));
        auto entry = pending_entry("assign_qualification");
        entry.worker_id = std::string(worker);
        entry.subject = std::string(qualification);
        store_.add_qualification(worker, qualification);
        out = append_or_fail(store_, entry);
        remote(out);
    });
    return out;
}

LedgerEntry CrowdClient::revoke_qualification(std::string_view worker, std::string_view qualification) {
    if (qualification.empty()) throw BadRequest("qualification name must not be empty");
    std::lock_guard lock(mutex_);
    LedgerEntry out;
    store_.transaction([&] {
        if (!store_.find_user(worker)) throw UnknownWorker(std::string(worker));
        auto entry = pending_entry("revoke_qualification");
        entry.worker_id = std::string(worker);
        entry.subject = std::string(qualification);
        store_.remove_qualification(worker, qualification);
        out = append_or_fail(store_, entry);
        remote(out);
    });
    return out;
}

BonusAck CrowdClient::grant_bonus(std::string_view worker, std::string_view assignment_id, Money amount,
                                  std::string_view reason, std::string_view idempotency_key) {
    if (!amount.is_positive()) throw NonPositiveAmount();
    if (idempotency_key.empty()) throw BadRequest("bonus needs an idempotency key");
    std::lock_guard lock(mutex_);
    BonusAck ack;
    store_.transaction([&] {
        if (auto prior = store_.find_ledger_by_key(idempotency_key)) {
            if (prior->worker_id != worker || prior->amount != amount)
                throw Conflict("idempotency key '" + std::string(idempotency_key) + "' was used for a different bonus");
            ack = BonusAck{prior->seq, prior->worker_id, prior->assignment_id, *prior->amount,
                           std::string(idempotency_key), true};
            return;
        }
        if (!store_.find_user(worker)) throw UnknownWorker(std::string(worker));
        const auto assignment = store_.find_assignment_by_key(assignment_id);
        if (!assignment || assignment->user_id != worker || assignment->status == AssignmentStatus::open)
            throw UnknownAssignment(std::string(assignment_id));
        auto entry = pending_entry("grant_bonus");
        entry.worker_id = std::string(worker);
        entry.assignment_id = std::string(assignment_id);
        entry.hit_id = assignment->ext_hit_id.value_or("");
        entry.subject = assignment->thread_id;
        entry.amount = amount;
        entry.reason = std::string(reason);
        entry.idempotency_key = std::string(idempotency_key);
        const auto stored = append_or_fail(store_, entry);
        store_.record_bonus(stored);
        remote(stored);
        ack = BonusAck{stored.seq, stored.worker_id, stored.assignment_id, amount, std::string(idempotency_key), false};
    });
    return ack;
}

LedgerEntry CrowdClient::approve_assignment(std::string_view assignment_id) {
    std::lock_guard lock(mutex_);
    LedgerEntry out;
    store_.transaction([&] {
        const auto assignment = store_.find_assignment_by_key(assignment_id);
        if (!assignment || assignment->status == AssignmentStatus::open)
            throw UnknownAssignment(std::string(assignment_id));
        auto entry = pending_entry("approve_assignment");
        entry.worker_id = assignment->user_id;
        entry.assignment_id = std::string(assignment_id);
        entry.hit_id = assignment->ext_hit_id.value_or("");
        entry.subject = assignment->thread_id;
        store_.set_assignment_status(assignment->id, AssignmentStatus::approved);
        out = append_or_fail(store_, entry);
        remote(out);
    });
    return out;
}

// ---------------------------------------------------------------- LocalCrowdClient

LocalCrowdClient::LocalCrowdClient(Store& store, Clock clock, std::string entry_base, CrowdPlatform platform)
    : CrowdClient(store, std::move(clock), std::move(entry_base)), platform_(platform) {}

std::string LocalCrowdClient::remote(const LedgerEntry& pending) {
    // External-URL deployments (Prolific, Qualtrics links, ...) have no API;
    // the task id only routes the landing page to its thread.
    if (pending.action == "publish_task") return "ext-" + random_hex(8);
    return {};
}

// ---------------------------------------------------------------- MockMturkClient

void MockMturkClient::fail_next(std::string action, int count) {
    std::lock_guard lock(mock_mutex_);
    failures_[std::move(action)] += count;
}

std::string MockMturkClient::remote(const LedgerEntry& pending) {
    std::lock_guard lock(mock_mutex_);
    ++remote_.calls;
    for (const auto& key : {pending.action, std::string("*")}) {
        auto it = failures_.find(key);
        if (it != failures_.end() && it->second > 0) {
            --it->second;
            throw PlatformRejected("mock platform rejected " + pending.action);
        }
    }
    if (pending.action == "publish_task") {
        char buf[32];
        std::snprintf(buf, sizeof buf, "MOCKHIT%06d", next_id_++);
        remote_.hits.insert(buf);
        return buf;
    }
    if (pending.action == "expire_task") remote_.expired.insert(pending.hit_id);
    else if (pending.action == "assign_qualification") remote_.qualifications[pending.worker_id].insert(pending.subject);
    else if (pending.action == "revoke_qualification") remote_.qualifications[pending.worker_id].erase(pending.subject);
    else if (pending.action == "grant_bonus") remote_.bonuses_paid[pending.worker_id] += pending.amount.value_or(Money{});
    else if (pending.action == "approve_assignment") remote_.approved.insert(pending.assignment_id);
    return {};
}

std::string MockMturkClient::accept(std::string_view hit_id, std::string_view worker_id) {
    std::string assignment;
    {
        std::lock_guard lock(mock_mutex_);
        if (!remote_.hits.count(std::string(hit_id)) || remote_.expired.count(std::string(hit_id)))
            throw NotFound("task '" + std::string(hit_id) + "'");
        char buf[32];
        std::snprintf(buf, sizeof buf, "MOCKASSIGN%06d", next_id_++);
        assignment = buf;
    }
    const auto& c = convention();
    return entry_base() + "/landing?" + c.worker_param + "=" + url_encode(worker_id) + "&" + c.assignment_param + "=" +
           url_encode(assignment) + "&" + c.hit_param + "=" + url_encode(hit_id);
}

std::string MockMturkClient::preview_url(std::string_view hit_id) const {
    const auto& c = convention();
    return entry_base() + "/landing?" + c.assignment_param + "=" + c.preview_sentinel + "&" + c.hit_param + "=" +
           url_encode(hit_id);
}

MockMturkClient::Remote MockMturkClient::remote_view() const {
    std::lock_guard lock(mock_mutex_);
    return remote_;
}

std::unique_ptr<CrowdClient> make_crowd_client(CrowdPlatform platform, Store& store, Clock clock,
                                               std::string entry_base) {
    if (platform == CrowdPlatform::mock_mturk)
        return std::make_unique<MockMturkClient>(store, std::move(clock), std::move(entry_base));
    return std::make_unique<LocalCrowdClient>(store, std::move(clock), std::move(entry_base), platform);
}

} // namespace evalroom
