#include "evalroom/store.hpp"

#include <set>
#include <stdexcept>

#include <sqlite3.h>

#include "evalroom/crypto.hpp"
#include "evalroom/error.hpp"

namespace evalroom {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(AssignmentStatus status) {
    switch (status) {
    case AssignmentStatus::open: return "open";
    case AssignmentStatus::submitted: return "submitted";
    case AssignmentStatus::approved: return "approved";
    }
    return "open";
}

namespace {

AssignmentStatus assignment_status_from_string(std::string_view s) {
    if (s == "submitted") return AssignmentStatus::submitted;
    if (s == "approved") return AssignmentStatus::approved;
    return AssignmentStatus::open;
}

std::int64_t to_millis(Timestamp t) { return t.time_since_epoch().count(); }
Timestamp from_millis(std::int64_t ms) { return Timestamp{std::chrono::milliseconds{ms}}; }

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS schema_meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);
INSERT OR IGNORE INTO schema_meta VALUES ('version', '1');

CREATE TABLE IF NOT EXISTS users (
    id TEXT PRIMARY KEY,
    role TEXT NOT NULL CHECK (role IN ('worker', 'admin')),
    secret_hash TEXT,
    ext_worker_id TEXT UNIQUE,
    agreement_accepted_at INTEGER,
    created_at INTEGER NOT NULL,
    CHECK (role <> 'admin' OR secret_hash IS NOT NULL)
);
CREATE TABLE IF NOT EXISTS qualifications (
    user_id TEXT NOT NULL REFERENCES users(id),
    name TEXT NOT NULL,
    PRIMARY KEY (user_id, name)
);
CREATE TABLE IF NOT EXISTS sessions (
    session_id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL REFERENCES users(id),
    created_at INTEGER NOT NULL,
    messages_posted INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS configs (id TEXT PRIMARY KEY, yaml TEXT NOT NULL);

CREATE TABLE IF NOT EXISTS threads (
    row_seq INTEGER PRIMARY KEY AUTOINCREMENT,
    id TEXT NOT NULL UNIQUE,
    topic_id TEXT NOT NULL,
    state TEXT NOT NULL,
    config_id TEXT NOT NULL REFERENCES configs(id),
    bot_params TEXT NOT NULL,
    topic_data TEXT NOT NULL,
    max_per_worker INTEGER,
    episode_done INTEGER NOT NULL,
    pending TEXT NOT NULL,
    last_error TEXT,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS participants (
    thread_id TEXT NOT NULL REFERENCES threads(id) ON DELETE CASCADE,
    user_id TEXT NOT NULL,
    role TEXT NOT NULL CHECK (role IN ('human', 'bot')),
    join_order INTEGER NOT NULL,
    human_turns_taken INTEGER NOT NULL,
    ratings_submitted INTEGER NOT NULL,
    speaker_label TEXT NOT NULL,
    endpoint TEXT NOT NULL,
    PRIMARY KEY (thread_id, user_id),
    UNIQUE (thread_id, join_order)
);
CREATE TABLE IF NOT EXISTS messages (
    thread_id TEXT NOT NULL REFERENCES threads(id) ON DELETE CASCADE,
    seq INTEGER NOT NULL,
    author_id TEXT NOT NULL,
    author_role TEXT NOT NULL,
    speaker_label TEXT NOT NULL,
    text TEXT NOT NULL,
    is_seed INTEGER NOT NULL,
    created_at INTEGER NOT NULL,
    PRIMARY KEY (thread_id, seq)
);
CREATE TABLE IF NOT EXISTS ratings (
    thread_id TEXT NOT NULL REFERENCES threads(id) ON DELETE CASCADE,
    user_id TEXT NOT NULL REFERENCES users(id),
    question_id TEXT NOT NULL,
    answer TEXT NOT NULL,
    submitted_at INTEGER NOT NULL,
    PRIMARY KEY (thread_id, user_id, question_id)
);
CREATE TABLE IF NOT EXISTS hits (
    hit_id TEXT PRIMARY KEY,
    thread_id TEXT NOT NULL REFERENCES threads(id) ON DELETE CASCADE,
    topic_id TEXT NOT NULL,
    entry_url TEXT NOT NULL,
    expired INTEGER NOT NULL DEFAULT 0,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS assignments (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    thread_id TEXT NOT NULL REFERENCES threads(id) ON DELETE CASCADE,
    user_id TEXT NOT NULL REFERENCES users(id),
    ext_assignment_id TEXT UNIQUE,
    ext_hit_id TEXT,
    status TEXT NOT NULL CHECK (status IN ('open', 'submitted', 'approved'))
);
CREATE UNIQUE INDEX IF NOT EXISTS one_open_assignment ON assignments(thread_id, user_id) WHERE status = 'open';
CREATE TABLE IF NOT EXISTS ledger (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    action TEXT NOT NULL,
    worker_id TEXT NOT NULL,
    assignment_id TEXT NOT NULL,
    hit_id TEXT NOT NULL,
    subject TEXT NOT NULL,
    amount INTEGER,
    reason TEXT NOT NULL,
    idempotency_key TEXT UNIQUE,
    at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS bonuses (
    idempotency_key TEXT PRIMARY KEY,
    ledger_seq INTEGER NOT NULL REFERENCES ledger(seq),
    worker_id TEXT NOT NULL,
    assignment_id TEXT NOT NULL,
    amount INTEGER NOT NULL
);
)sql";

} // namespace

// Thin RAII wrapper over a prepared statement.
struct Store::Statement {
    Statement(sqlite3* db, const char* sql) : db(db) {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt, nullptr) != SQLITE_OK)
            throw std::runtime_error(std::string("sqlite prepare: ") + sqlite3_errmsg(db) + " in " + sql);
    }
    ~Statement() { sqlite3_finalize(stmt); }
    Statement(const Statement&) = delete;
    Statement& operator=(const Statement&) = delete;

    Statement& bind(int i, std::string_view v) {
        check(sqlite3_bind_text(stmt, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
        return *this;
    }
    Statement& bind(int i, const char* v) { return bind(i, std::string_view(v)); }
    Statement& bind(int i, const std::string& v) { return bind(i, std::string_view(v)); }
    Statement& bind(int i, std::int64_t v) {
        check(sqlite3_bind_int64(stmt, i, v));
        return *this;
    }
    Statement& bind(int i, int v) { return bind(i, static_cast<std::int64_t>(v)); }
    Statement& bind(int i, bool v) { return bind(i, static_cast<std::int64_t>(v ? 1 : 0)); }
    Statement& bind_null(int i) {
        check(sqlite3_bind_null(stmt, i));
        return *this;
    }
    template <class T>
    Statement& bind(int i, const std::optional<T>& v) {
        return v ? bind(i, *v) : bind_null(i);
    }

    bool step() {
        const int rc = sqlite3_step(stmt);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        const int ext = sqlite3_extended_errcode(db);
        const std::string msg = sqlite3_errmsg(db);
        if ((ext & 0xff) == SQLITE_CONSTRAINT) {
            if (ext == SQLITE_CONSTRAINT_FOREIGNKEY) throw Conflict("referential integrity: " + msg);
            throw Conflict("constraint violated: " + msg);
        }
        throw std::runtime_error("sqlite step: " + msg);
    }
    void run() {
        while (step()) {
        }
    }

    bool is_null(int col) const { return sqlite3_column_type(stmt, col) == SQLITE_NULL; }
    std::string text(int col) const {
        const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt, col));
        return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt, col))) : std::string{};
    }
    std::int64_t int64(int col) const { return sqlite3_column_int64(stmt, col); }
    std::optional<std::string> opt_text(int col) const {
        return is_null(col) ? std::nullopt : std::optional<std::string>(text(col));
    }
    std::optional<std::int64_t> opt_int(int col) const {
        return is_null(col) ? std::nullopt : std::optional<std::int64_t>(int64(col));
    }

    void check(int rc) {
        if (rc != SQLITE_OK) throw std::runtime_error(std::string("sqlite bind: ") + sqlite3_errmsg(db));
    }

    sqlite3* db;
    sqlite3_stmt* stmt = nullptr;
};

Store::Store(const std::string& path) {
    const int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
    if (sqlite3_open_v2(path.c_str(), &db_, flags, nullptr) != SQLITE_OK) {
        const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
        sqlite3_close(db_);
        throw std::runtime_error("cannot open store '" + path + "': " + msg);
    }
    sqlite3_busy_timeout(db_, 5000);
    exec("PRAGMA foreign_keys = ON;");
    if (path != ":memory:") exec("PRAGMA journal_mode = WAL;");
    exec("PRAGMA synchronous = NORMAL;");
    exec(kSchema);
}

Store::~Store() { sqlite3_close(db_); }

void Store::exec(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown";
        sqlite3_free(err);
        throw std::runtime_error("sqlite exec: " + msg);
    }
}

void Store::fault(std::string_view point) {
    if (fault_hook_) fault_hook_(point);
}

void Store::set_fault_hook(std::function<void(std::string_view)> hook) {
    std::lock_guard lock(mutex_);
    fault_hook_ = std::move(hook);
}

void Store::transaction(const std::function<void()>& fn) {
    std::lock_guard lock(mutex_);
    if (tx_depth_ > 0) {
        ++tx_depth_;
        try {
            fn();
        } catch (...) {
            --tx_depth_;
            throw;
        }
        --tx_depth_;
        return;
    }
    exec("BEGIN IMMEDIATE;");
    tx_depth_ = 1;
    try {
        fn();
        exec("COMMIT;");
        tx_depth_ = 0;
    } catch (...) {
        tx_depth_ = 0;
        char* err = nullptr;
        sqlite3_exec(db_, "ROLLBACK;", nullptr, nullptr, &err);
        sqlite3_free(err);
        throw;
    }
}

// ---------------------------------------------------------------- users

void Store::create_user(const UserRecord& user) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "INSERT INTO users (id, role, secret_hash, ext_worker_id, agreement_accepted_at, created_at) "
                      "VALUES (?, ?, ?, ?, ?, ?)");
    st.bind(1, user.id).bind(2, to_string(user.role)).bind(3, user.secret_hash).bind(4, user.ext_worker_id);
    if (user.agreement_accepted_at) st.bind(5, to_millis(*user.agreement_accepted_at));
    else st.bind_null(5);
    st.bind(6, to_millis(user.created_at));
    st.run();
    for (const auto& q : user.qualifications) add_qualification(user.id, q);
}

std::optional<UserRecord> Store::find_user(std::string_view id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT id, role, secret_hash, ext_worker_id, agreement_accepted_at, created_at FROM users "
                      "WHERE id = ?");
    st.bind(1, id);
    if (!st.step()) return std::nullopt;
    UserRecord u;
    u.id = st.text(0);
    u.role = user_role_from_string(st.text(1));
    u.secret_hash = st.opt_text(2);
    u.ext_worker_id = st.opt_text(3);
    if (auto at = st.opt_int(4)) u.agreement_accepted_at = from_millis(*at);
    u.created_at = from_millis(st.int64(5));
    Statement q(db_, "SELECT name FROM qualifications WHERE user_id = ? ORDER BY name");
    q.bind(1, id);
    while (q.step()) u.qualifications.insert(q.text(0));
    return u;
}

std::optional<UserRecord> Store::find_user_by_ext(std::string_view ext_worker_id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT id FROM users WHERE ext_worker_id = ?");
    st.bind(1, ext_worker_id);
    if (!st.step()) return std::nullopt;
    return find_user(st.text(0));
}

void Store::set_agreement_accepted(std::string_view user_id, Timestamp at) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "UPDATE users SET agreement_accepted_at = ? WHERE id = ?");
    st.bind(1, to_millis(at)).bind(2, user_id);
    st.run();
    if (sqlite3_changes(db_) == 0) throw NotFound("user '" + std::string(user_id) + "'");
}

void Store::add_qualification(std::string_view user_id, std::string_view name) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "INSERT OR IGNORE INTO qualifications (user_id, name) VALUES (?, ?)");
    st.bind(1, user_id).bind(2, name);
    st.run();
}

void Store::remove_qualification(std::string_view user_id, std::string_view name) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "DELETE FROM qualifications WHERE user_id = ? AND name = ?");
    st.bind(1, user_id).bind(2, name);
    st.run();
}

std::map<std::string, std::set<std::string>> Store::all_qualifications() const {
    std::lock_guard lock(mutex_);
    std::map<std::string, std::set<std::string>> out;
    Statement st(db_, "SELECT user_id, name FROM qualifications");
    while (st.step()) out[st.text(0)].insert(st.text(1));
    return out;
}

// ---------------------------------------------------------------- sessions

void Store::put_session(const Session& session) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "INSERT INTO sessions (session_id, user_id, created_at, messages_posted) VALUES (?, ?, ?, ?)");
    st.bind(1, session.session_id).bind(2, session.user_id).bind(3, to_millis(session.created_at))
        .bind(4, session.messages_posted);
    st.run();
}

std::optional<Session> Store::find_session(std::string_view session_id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT s.session_id, s.user_id, u.role, s.created_at, u.agreement_accepted_at, "
                      "s.messages_posted FROM sessions s JOIN users u ON u.id = s.user_id WHERE s.session_id = ?");
    st.bind(1, session_id);
    if (!st.step()) return std::nullopt;
    Session s;
    s.session_id = st.text(0);
    s.user_id = st.text(1);
    s.role = user_role_from_string(st.text(2));
    s.created_at = from_millis(st.int64(3));
    s.consent_ok = !st.is_null(4);
    s.messages_posted = static_cast<int>(st.int64(5));
    return s;
}

void Store::count_session_message(std::string_view session_id) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "UPDATE sessions SET messages_posted = messages_posted + 1 WHERE session_id = ?");
    st.bind(1, session_id);
    st.run();
}

// ---------------------------------------------------------------- configs

void Store::put_config(const std::string& id, const std::string& yaml) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "INSERT OR IGNORE INTO configs (id, yaml) VALUES (?, ?)");
    st.bind(1, id).bind(2, yaml);
    st.run();
}

std::optional<std::string> Store::config_yaml(std::string_view id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT yaml FROM configs WHERE id = ?");
    st.bind(1, id);
    if (!st.step()) return std::nullopt;
    return st.text(0);
}

// ---------------------------------------------------------------- threads

void Store::commit_thread(const ChatThread& thread, std::span<const ChatMessage> new_messages,
                          std::span<const RatingRecord> ratings) {
    transaction([&] {
        {
            json pending = json::array();
            for (const auto& b : thread.pending_bots) pending.push_back(b);
            Statement st(db_,
                         "INSERT INTO threads (id, topic_id, state, config_id, bot_params, topic_data, max_per_worker, "
                         "episode_done, pending, last_error, created_at) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?) "
                         "ON CONFLICT(id) DO UPDATE SET state = excluded.state, episode_done = excluded.episode_done, "
                         "pending = excluded.pending, last_error = excluded.last_error");
            st.bind(1, thread.id).bind(2, thread.topic_id).bind(3, to_string(thread.state)).bind(4, thread.config_id)
                .bind(5, thread.bot_params.dump()).bind(6, thread.topic_data.dump())
                .bind(7, thread.max_threads_per_worker).bind(8, thread.episode_done).bind(9, pending.dump())
                .bind(10, thread.last_error).bind(11, to_millis(thread.created_at));
            st.run();
        }
        fault("thread");
        for (const auto& p : thread.participants) {
            Statement st(db_, "INSERT INTO participants (thread_id, user_id, role, join_order, human_turns_taken, "
                              "ratings_submitted, speaker_label, endpoint) VALUES (?, ?, ?, ?, ?, ?, ?, ?) "
                              "ON CONFLICT(thread_id, user_id) DO UPDATE SET human_turns_taken = "
                              "excluded.human_turns_taken, ratings_submitted = excluded.ratings_submitted");
            st.bind(1, thread.id).bind(2, p.user_id).bind(3, to_string(p.role)).bind(4, p.join_order)
                .bind(5, p.human_turns_taken).bind(6, p.ratings_submitted).bind(7, p.speaker_label).bind(8, p.endpoint);
            st.run();
        }
        fault("participants");
        for (const auto& m : new_messages) {
            Statement st(db_, "INSERT INTO messages (thread_id, seq, author_id, author_role, speaker_label, text, "
                              "is_seed, created_at) VALUES (?, ?, ?, ?, ?, ?, ?, ?)");
            st.bind(1, thread.id).bind(2, m.seq).bind(3, m.author_id).bind(4, to_string(m.author_role))
                .bind(5, m.speaker_label).bind(6, m.text).bind(7, m.is_seed).bind(8, to_millis(m.created_at));
            st.run();
            fault("message");
        }
        for (const auto& r : ratings) {
            Statement st(db_, "INSERT INTO ratings (thread_id, user_id, question_id, answer, submitted_at) "
                              "VALUES (?, ?, ?, ?, ?)");
            st.bind(1, r.thread_id).bind(2, r.user_id).bind(3, r.question_id).bind(4, r.answer.dump())
                .bind(5, to_millis(r.submitted_at));
            st.run();
            fault("rating");
        }
    });
}

std::optional<StoredThread> Store::load_thread(std::string_view id) const {
    std::lock_guard lock(mutex_);
    StoredThread out;
    auto& t = out.thread;
    {
        Statement st(db_, "SELECT t.id, t.topic_id, t.state, t.config_id, t.bot_params, t.topic_data, "
                          "t.max_per_worker, t.episode_done, t.pending, t.last_error, t.created_at, c.yaml "
                          "FROM threads t JOIN configs c ON c.id = t.config_id WHERE t.id = ?");
        st.bind(1, id);
        if (!st.step()) return std::nullopt;
        t.id = st.text(0);
        t.topic_id = st.text(1);
        t.state = thread_state_from_string(st.text(2));
        t.config_id = st.text(3);
        t.bot_params = json::parse(st.text(4));
        t.topic_data = json::parse(st.text(5));
        if (auto m = st.opt_int(6)) t.max_threads_per_worker = static_cast<int>(*m);
        t.episode_done = st.int64(7) != 0;
        for (const auto& b : json::parse(st.text(8))) t.pending_bots.push_back(b.get<std::string>());
        t.last_error = st.opt_text(9);
        t.created_at = from_millis(st.int64(10));
        out.config_yaml = st.text(11);
    }
    {
        Statement st(db_, "SELECT user_id, role, join_order, human_turns_taken, ratings_submitted, speaker_label, "
                          "endpoint FROM participants WHERE thread_id = ? ORDER BY join_order");
        st.bind(1, id);
        while (st.step()) {
            Participant p;
            p.user_id = st.text(0);
            p.role = st.text(1) == "bot" ? ParticipantRole::bot : ParticipantRole::human;
            p.join_order = static_cast<int>(st.int64(2));
            p.human_turns_taken = static_cast<int>(st.int64(3));
            p.ratings_submitted = st.int64(4) != 0;
            p.speaker_label = st.text(5);
            p.endpoint = st.text(6);
            t.participants.push_back(std::move(p));
        }
    }
    {
        Statement st(db_, "SELECT seq, author_id, author_role, speaker_label, text, is_seed, created_at "
                          "FROM messages WHERE thread_id = ? ORDER BY seq");
        st.bind(1, id);
        while (st.step()) {
            ChatMessage m;
            m.seq = st.int64(0);
            m.author_id = st.text(1);
            m.author_role = author_role_from_string(st.text(2));
            m.speaker_label = st.text(3);
            m.text = st.text(4);
            m.is_seed = st.int64(5) != 0;
            m.created_at = from_millis(st.int64(6));
            t.messages.push_back(std::move(m));
        }
    }
    return out;
}

std::vector<std::string> Store::thread_ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    Statement st(db_, "SELECT id FROM threads ORDER BY row_seq");
    while (st.step()) out.push_back(st.text(0));
    return out;
}

std::vector<ThreadSummary> Store::list_threads(const ThreadFilter& filter) const {
    std::lock_guard lock(mutex_);
    Statement st(db_,
                 "SELECT t.id, t.topic_id, t.state, t.created_at, "
                 "(SELECT COUNT(*) FROM participants p WHERE p.thread_id = t.id), "
                 "(SELECT COUNT(*) FROM messages m WHERE m.thread_id = t.id) "
                 "FROM threads t WHERE (?1 IS NULL OR t.state = ?1) AND (?2 IS NULL OR t.topic_id = ?2) "
                 "AND (?3 IS NULL OR EXISTS (SELECT 1 FROM participants p WHERE p.thread_id = t.id AND p.user_id = ?3)) "
                 "ORDER BY t.created_at DESC, t.row_seq DESC");
    if (filter.state) st.bind(1, to_string(*filter.state));
    else st.bind_null(1);
    st.bind(2, filter.topic_id).bind(3, filter.user_id);
    std::vector<ThreadSummary> out;
    while (st.step()) {
        ThreadSummary s;
        s.id = st.text(0);
        s.topic_id = st.text(1);
        s.state = thread_state_from_string(st.text(2));
        s.created_at = from_millis(st.int64(3));
        s.participant_count = static_cast<int>(st.int64(4));
        s.message_count = static_cast<int>(st.int64(5));
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<RatingRecord> Store::ratings_for(std::string_view thread_id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT r.thread_id, r.user_id, r.question_id, r.answer, r.submitted_at FROM ratings r "
                      "LEFT JOIN participants p ON p.thread_id = r.thread_id AND p.user_id = r.user_id "
                      "WHERE r.thread_id = ? ORDER BY p.join_order, r.rowid");
    st.bind(1, thread_id);
    std::vector<RatingRecord> out;
    while (st.step())
        out.push_back(RatingRecord{st.text(0), st.text(1), st.text(2), json::parse(st.text(3)), from_millis(st.int64(4))});
    return out;
}

int Store::count_completed(std::string_view user_id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT COUNT(*) FROM participants p JOIN threads t ON t.id = p.thread_id "
                      "WHERE p.user_id = ? AND p.role = 'human' AND p.ratings_submitted = 1 AND t.state = 'Completed'");
    st.bind(1, user_id);
    st.step();
    return static_cast<int>(st.int64(0));
}

int Store::count_engaged(std::string_view user_id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT COUNT(*) FROM participants p JOIN threads t ON t.id = p.thread_id "
                      "WHERE p.user_id = ? AND p.role = 'human' AND t.state <> 'Deleted'");
    st.bind(1, user_id);
    st.step();
    return static_cast<int>(st.int64(0));
}

int Store::count_threads_for_topic(std::string_view topic_id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT COUNT(*) FROM threads WHERE topic_id = ? AND state <> 'Deleted'");
    st.bind(1, topic_id);
    st.step();
    return static_cast<int>(st.int64(0));
}

std::vector<TopicStats> Store::topic_stats() const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT topic_id, COUNT(*), MIN(created_at), MAX(created_at) FROM threads "
                      "WHERE state <> 'Deleted' GROUP BY topic_id ORDER BY topic_id");
    std::vector<TopicStats> out;
    while (st.step())
        out.push_back(TopicStats{st.text(0), static_cast<int>(st.int64(1)), from_millis(st.int64(2)),
                                 from_millis(st.int64(3))});
    return out;
}

std::size_t Store::purge_deleted() {
    std::size_t purged = 0;
    transaction([&] {
        Statement st(db_, "DELETE FROM threads WHERE state = 'Deleted'");
        st.run();
        purged = static_cast<std::size_t>(sqlite3_changes(db_));
    });
    return purged;
}

std::string serialize_export(const ordered_json& document) { return document.dump(2) + "\n"; }

std::string pseudonymize(std::string_view user_id) { return "anon-" + sha256_hex(user_id).substr(0, 12); }

ordered_json Store::export_thread(std::string_view thread_id, const ExportOptions& options) const {
    std::lock_guard lock(mutex_);
    auto stored = load_thread(thread_id);
    if (!stored) throw NotFound("thread '" + std::string(thread_id) + "'");
    const auto& t = stored->thread;
    if (t.state == ThreadState::Deleted && !options.allow_deleted) throw Deleted(t.id);

    std::map<std::string, std::string> shown; // user id -> exported id
    auto display_id = [&](const std::string& user_id) -> std::string {
        if (auto it = shown.find(user_id); it != shown.end()) return it->second;
        const auto* p = t.participant(user_id);
        const bool bot = p && p->role == ParticipantRole::bot;
        return shown[user_id] = (options.include_identities || bot) ? user_id : pseudonymize(user_id);
    };

    ordered_json doc;
    doc["export_version"] = 1;
    ordered_json thread;
    thread["id"] = t.id;
    thread["topic_id"] = t.topic_id;
    thread["state"] = to_string(t.state);
    thread["bot_params"] = ordered_json::parse(t.bot_params.dump());
    thread["topic_data"] = ordered_json::parse(t.topic_data.dump());
    thread["max_threads_per_worker"] =
        t.max_threads_per_worker ? ordered_json(*t.max_threads_per_worker) : ordered_json();
    thread["episode_done"] = t.episode_done;
    thread["created_at"] = format_rfc3339(t.created_at);
    doc["thread"] = std::move(thread);

    doc["participants"] = ordered_json::array();
    for (const auto& p : t.participants) {
        ordered_json entry;
        entry["user_id"] = display_id(p.user_id);
        entry["role"] = to_string(p.role);
        entry["join_order"] = p.join_order;
        entry["speaker_label"] = p.speaker_label;
        if (p.role == ParticipantRole::bot) entry["endpoint"] = p.endpoint;
        if (p.role == ParticipantRole::human) {
            entry["human_turns_taken"] = p.human_turns_taken;
            entry["ratings_submitted"] = p.ratings_submitted;
            if (options.include_identities) {
                const auto user = find_user(p.user_id);
                entry["ext_worker_id"] = user && user->ext_worker_id ? ordered_json(*user->ext_worker_id) : ordered_json();
            }
        }
        doc["participants"].push_back(std::move(entry));
    }

    doc["messages"] = ordered_json::array();
    for (const auto& m : t.messages) {
        ordered_json entry;
        entry["seq"] = m.seq;
        entry["author_id"] = m.author_role == AuthorRole::human ? display_id(m.author_id) : m.author_id;
        entry["author_role"] = to_string(m.author_role);
        entry["speaker_label"] = m.speaker_label;
        entry["text"] = m.text;
        entry["is_seed"] = m.is_seed;
        entry["created_at"] = format_rfc3339(m.created_at);
        doc["messages"].push_back(std::move(entry));
    }

    doc["ratings"] = ordered_json::array();
    for (const auto& r : ratings_for(t.id)) {
        ordered_json entry;
        entry["user_id"] = display_id(r.user_id);
        entry["question_id"] = r.question_id;
        entry["answer"] = ordered_json::parse(r.answer.dump());
        entry["submitted_at"] = format_rfc3339(r.submitted_at);
        doc["ratings"].push_back(std::move(entry));
    }
    return doc;
}

// ---------------------------------------------------------------- crowd

void Store::put_hit(const HitRecord& hit) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "INSERT INTO hits (hit_id, thread_id, topic_id, entry_url, expired, created_at) "
                      "VALUES (?, ?, ?, ?, ?, ?)");
    st.bind(1, hit.hit_id).bind(2, hit.thread_id).bind(3, hit.topic_id).bind(4, hit.entry_url).bind(5, hit.expired)
        .bind(6, to_millis(hit.created_at));
    st.run();
}

namespace {

HitRecord read_hit(Store::Statement& st) {
    return HitRecord{st.text(0), st.text(1), st.text(2), st.text(3), st.int64(4) != 0, from_millis(st.int64(5))};
}

AssignmentRecord read_assignment(Store::Statement& st) {
    AssignmentRecord a;
    a.id = st.int64(0);
    a.thread_id = st.text(1);
    a.user_id = st.text(2);
    a.ext_assignment_id = st.opt_text(3);
    a.ext_hit_id = st.opt_text(4);
    a.status = assignment_status_from_string(st.text(5));
    return a;
}

} // namespace

std::optional<HitRecord> Store::find_hit(std::string_view hit_id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT hit_id, thread_id, topic_id, entry_url, expired, created_at FROM hits WHERE hit_id = ?");
    st.bind(1, hit_id);
    if (!st.step()) return std::nullopt;
    return read_hit(st);
}

std::optional<HitRecord> Store::hit_for_thread(std::string_view thread_id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT hit_id, thread_id, topic_id, entry_url, expired, created_at FROM hits "
                      "WHERE thread_id = ? ORDER BY created_at LIMIT 1");
    st.bind(1, thread_id);
    if (!st.step()) return std::nullopt;
    return read_hit(st);
}

void Store::expire_hit(std::string_view hit_id) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "UPDATE hits SET expired = 1 WHERE hit_id = ?");
    st.bind(1, hit_id);
    st.run();
}

AssignmentRecord Store::open_assignment(const AssignmentRecord& record) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "INSERT INTO assignments (thread_id, user_id, ext_assignment_id, ext_hit_id, status) "
                      "VALUES (?, ?, ?, ?, ?)");
    st.bind(1, record.thread_id).bind(2, record.user_id).bind(3, record.ext_assignment_id).bind(4, record.ext_hit_id)
        .bind(5, to_string(record.status));
    st.run();
    auto out = record;
    out.id = sqlite3_last_insert_rowid(db_);
    return out;
}

std::optional<AssignmentRecord> Store::find_assignment(std::string_view thread_id, std::string_view user_id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT id, thread_id, user_id, ext_assignment_id, ext_hit_id, status FROM assignments "
                      "WHERE thread_id = ? AND user_id = ? ORDER BY id DESC LIMIT 1");
    st.bind(1, thread_id).bind(2, user_id);
    if (!st.step()) return std::nullopt;
    return read_assignment(st);
}

std::optional<AssignmentRecord> Store::find_assignment_by_ext(std::string_view ext_assignment_id) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT id, thread_id, user_id, ext_assignment_id, ext_hit_id, status FROM assignments "
                      "WHERE ext_assignment_id = ?");
    st.bind(1, ext_assignment_id);
    if (!st.step()) return std::nullopt;
    return read_assignment(st);
}

std::optional<AssignmentRecord> Store::find_assignment_by_key(std::string_view key) const {
    std::lock_guard lock(mutex_);
    if (auto found = find_assignment_by_ext(key)) return found;
    Statement st(db_, "SELECT id, thread_id, user_id, ext_assignment_id, ext_hit_id, status FROM assignments "
                      "WHERE CAST(id AS TEXT) = ?");
    st.bind(1, key);
    if (!st.step()) return std::nullopt;
    return read_assignment(st);
}

void Store::set_assignment_status(std::int64_t id, AssignmentStatus status) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "UPDATE assignments SET status = ? WHERE id = ?");
    st.bind(1, to_string(status)).bind(2, id);
    st.run();
}

LedgerEntry Store::append_ledger(const LedgerEntry& entry) {
    std::lock_guard lock(mutex_);
    fault("ledger");
    Statement st(db_, "INSERT INTO ledger (action, worker_id, assignment_id, hit_id, subject, amount, reason, "
                      "idempotency_key, at) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)");
    st.bind(1, entry.action).bind(2, entry.worker_id).bind(3, entry.assignment_id).bind(4, entry.hit_id)
        .bind(5, entry.subject);
    if (entry.amount) st.bind(6, entry.amount->units());
    else st.bind_null(6);
    st.bind(7, entry.reason).bind(8, entry.idempotency_key).bind(9, to_millis(entry.at));
    st.run();
    auto out = entry;
    out.seq = sqlite3_last_insert_rowid(db_);
    return out;
}

namespace {

LedgerEntry read_ledger(Store::Statement& st) {
    LedgerEntry e;
    e.seq = st.int64(0);
    e.action = st.text(1);
    e.worker_id = st.text(2);
    e.assignment_id = st.text(3);
    e.hit_id = st.text(4);
    e.subject = st.text(5);
    if (auto a = st.opt_int(6)) e.amount = Money::from_units(*a);
    e.reason = st.text(7);
    e.idempotency_key = st.opt_text(8);
    e.at = from_millis(st.int64(9));
    return e;
}

} // namespace

std::vector<LedgerEntry> Store::ledger() const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT seq, action, worker_id, assignment_id, hit_id, subject, amount, reason, "
                      "idempotency_key, at FROM ledger ORDER BY seq");
    std::vector<LedgerEntry> out;
    while (st.step()) out.push_back(read_ledger(st));
    return out;
}

std::optional<LedgerEntry> Store::find_ledger_by_key(std::string_view idempotency_key) const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT seq, action, worker_id, assignment_id, hit_id, subject, amount, reason, "
                      "idempotency_key, at FROM ledger WHERE idempotency_key = ?");
    st.bind(1, idempotency_key);
    if (!st.step()) return std::nullopt;
    return read_ledger(st);
}

void Store::record_bonus(const LedgerEntry& entry) {
    std::lock_guard lock(mutex_);
    Statement st(db_, "INSERT INTO bonuses (idempotency_key, ledger_seq, worker_id, assignment_id, amount) "
                      "VALUES (?, ?, ?, ?, ?)");
    st.bind(1, entry.idempotency_key.value_or("")).bind(2, entry.seq).bind(3, entry.worker_id)
        .bind(4, entry.assignment_id).bind(5, entry.amount.value_or(Money{}).units());
    st.run();
}

std::map<std::string, Money> Store::bonus_totals() const {
    std::lock_guard lock(mutex_);
    Statement st(db_, "SELECT worker_id, SUM(amount) FROM bonuses GROUP BY worker_id");
    std::map<std::string, Money> out;
    while (st.step()) out[st.text(0)] = Money::from_units(st.int64(1));
    return out;
}

} // namespace evalroom
