#include <doctest.h>

#include <random>

#include <httplib.h>

#include "evalroom/crowd.hpp"
#include "evalroom/error.hpp"
#include "evalroom/service.hpp"
#include "support.hpp"

using namespace evalroom;

namespace {

const std::string kCrowdBlock = "crowd: {platform: mock_mturk, reward: '0.50', title: Chat}\n";

/// Store with two workers, each holding one submitted assignment on its own thread.
struct Ledgered {
    std::shared_ptr<const TaskConfig> config = testing::inline_config(1, 1, "alternating", kCrowdBlock);
    Store store{":memory:"};
    MockMturkClient crowd{store, stepping_clock(testing::epoch(), std::chrono::seconds(1)), "http://evalroom.test"};
    std::map<std::string, std::string> assignment; // worker -> local assignment key

    Ledgered() {
        store.put_config(config_identity(*config), serialize_task_config(*config));
        for (const std::string w : {"w1", "w2"}) {
            auto u = testing::consented_user(w);
            store.create_user(u);
            ChatThread t;
            t.id = "t-" + w;
            t.topic_id = "x";
            t.config_id = config_identity(*config);
            t.state = ThreadState::Completed;
            store.commit_thread(t);
            auto a = store.open_assignment({0, t.id, w, std::nullopt, std::nullopt, AssignmentStatus::open});
            store.set_assignment_status(a.id, AssignmentStatus::submitted);
            assignment[w] = std::to_string(a.id);
        }
    }
};

std::map<std::string, std::string> q(std::initializer_list<std::pair<const std::string, std::string>> items) {
    return items;
}

} // namespace

TEST_SUITE("crowd") {

TEST_CASE("parse_entry") {
    CHECK(parse_entry({}) == Entry{Anonymous{}});
    CHECK(parse_entry(q({{"hitId", "H"}})) == Entry{Anonymous{}});
    CHECK(parse_entry(q({{"workerId", ""}, {"hitId", "H"}})) == Entry{Anonymous{}});
    CHECK(parse_entry(q({{"workerId", "W"}, {"assignmentId", "A"}, {"hitId", "H"}})) ==
          Entry{EntryParams{"W", "A", "H", false}});
    const auto preview = parse_entry(q({{"assignmentId", "ASSIGNMENT_ID_NOT_AVAILABLE"}, {"hitId", "H"}}));
    REQUIRE(std::holds_alternative<EntryParams>(preview));
    CHECK(std::get<EntryParams>(preview).preview);
    CHECK(std::get<EntryParams>(preview).hit_id == "H");

    EntryConvention prolific{"PROLIFIC_PID", "SESSION_ID", "STUDY_ID", "-"};
    CHECK(parse_entry(q({{"PROLIFIC_PID", "p"}, {"SESSION_ID", "s"}, {"STUDY_ID", "st"}}), prolific) ==
          Entry{EntryParams{"p", "s", "st", false}});
    CHECK(parse_entry(q({{"workerId", "W"}}), prolific) == Entry{Anonymous{}});
}

TEST_CASE("qualifications: assign and revoke are inverse, assign is idempotent") {
    Ledgered l;
    const auto before = l.store.find_user("w1")->qualifications;
    l.crowd.assign_qualification("w1", "trusted");
    CHECK(l.store.find_user("w1")->qualifications.count("trusted"));
    l.crowd.assign_qualification("w1", "trusted");
    CHECK(l.store.find_user("w1")->qualifications == std::set<std::string>{"trusted"});
    l.crowd.revoke_qualification("w1", "trusted");
    CHECK(l.store.find_user("w1")->qualifications == before);
    CHECK(l.store.ledger().size() == 3);
    CHECK(l.crowd.remote_view().qualifications["w1"].empty());

    CHECK_THROWS_AS(l.crowd.assign_qualification("ghost", "trusted"), UnknownWorker);
    CHECK_THROWS_AS(l.crowd.revoke_qualification("ghost", "trusted"), UnknownWorker);
    CHECK_THROWS_AS(l.crowd.assign_qualification("w1", ""), BadRequest);
    CHECK(l.store.ledger().size() == 3);
}

TEST_CASE("bonus: idempotent per key and validated") {
    Ledgered l;
    const auto amount = Money::parse("1.25");
    const auto first = l.crowd.grant_bonus("w1", l.assignment["w1"], amount, "great chat", "k1");
    CHECK_FALSE(first.replayed);
    const auto again = l.crowd.grant_bonus("w1", l.assignment["w1"], amount, "great chat", "k1");
    CHECK(again.replayed);
    CHECK(again.ledger_seq == first.ledger_seq);
    CHECK(l.store.ledger().size() == 1);
    CHECK(l.store.bonus_totals()["w1"] == amount);
    CHECK(l.crowd.remote_view().bonuses_paid["w1"] == amount);

    CHECK_THROWS_AS(l.crowd.grant_bonus("w1", l.assignment["w1"], Money::parse("2"), "", "k1"), Conflict);
    CHECK_THROWS_AS(l.crowd.grant_bonus("w1", l.assignment["w1"], Money{}, "", "k2"), NonPositiveAmount);
    CHECK_THROWS_AS(l.crowd.grant_bonus("w1", l.assignment["w1"], Money::parse("-1"), "", "k2"), NonPositiveAmount);
    CHECK_THROWS_AS(l.crowd.grant_bonus("w1", l.assignment["w1"], amount, "", ""), BadRequest);
    CHECK_THROWS_AS(l.crowd.grant_bonus("ghost", l.assignment["w1"], amount, "", "k3"), UnknownWorker);
    CHECK_THROWS_AS(l.crowd.grant_bonus("w1", "999", amount, "", "k4"), UnknownAssignment);
    CHECK_THROWS_AS(l.crowd.grant_bonus("w1", l.assignment["w2"], amount, "", "k5"), UnknownAssignment);
    CHECK(l.store.ledger().size() == 1);
}

TEST_CASE("bonus on an open assignment is refused") {
    Ledgered l;
    auto a = l.store.open_assignment({0, "t-w1", "w2", std::nullopt, std::nullopt, AssignmentStatus::open});
    CHECK_THROWS_AS(l.crowd.grant_bonus("w2", std::to_string(a.id), Money::parse("1"), "", "k"), UnknownAssignment);
    CHECK_THROWS_AS(l.crowd.approve_assignment(std::to_string(a.id)), UnknownAssignment);
}

TEST_CASE("approve marks the assignment and is recorded") {
    Ledgered l;
    const auto entry = l.crowd.approve_assignment(l.assignment["w1"]);
    CHECK(entry.action == "approve_assignment");
    CHECK(entry.worker_id == "w1");
    CHECK(l.store.find_assignment_by_key(l.assignment["w1"])->status == AssignmentStatus::approved);
    CHECK(l.crowd.remote_view().approved.count(l.assignment["w1"]));
}

TEST_CASE("derived bonus keys are stable and distinct") {
    CHECK(derive_bonus_key("t", "w", "r") == derive_bonus_key("t", "w", "r"));
    CHECK(derive_bonus_key("t", "w", "r") != derive_bonus_key("t", "w", "s"));
    CHECK(derive_bonus_key("ab", "c", "r") != derive_bonus_key("a", "bc", "r"));
}

TEST_CASE("a failed ledger write leaves no trace") {
    Ledgered l;
    l.store.set_fault_hook([](std::string_view p) {
        if (p == "ledger") throw std::runtime_error("disk full");
    });
    CHECK_THROWS_AS(l.crowd.assign_qualification("w1", "trusted"), LedgerWriteFailed);
    CHECK_THROWS_AS(l.crowd.grant_bonus("w1", l.assignment["w1"], Money::parse("1"), "", "k"), LedgerWriteFailed);
    CHECK_THROWS_AS(l.crowd.approve_assignment(l.assignment["w1"]), LedgerWriteFailed);
    l.store.set_fault_hook({});
    CHECK(l.store.ledger().empty());
    CHECK(l.store.find_user("w1")->qualifications.empty());
    CHECK(l.store.bonus_totals().empty());
    CHECK(l.store.find_assignment_by_key(l.assignment["w1"])->status == AssignmentStatus::submitted);
    CHECK(l.crowd.remote_view().calls == 0); // the platform is never reached

    // the same key succeeds once the store recovers
    CHECK_FALSE(l.crowd.grant_bonus("w1", l.assignment["w1"], Money::parse("1"), "", "k").replayed);
}

TEST_CASE("a platform refusal rolls back the ledger and the mirror") {
    Ledgered l;
    l.crowd.fail_next("grant_bonus");
    CHECK_THROWS_AS(l.crowd.grant_bonus("w1", l.assignment["w1"], Money::parse("1"), "", "k"), PlatformRejected);
    CHECK(l.store.ledger().empty());
    CHECK(l.store.bonus_totals().empty());
    CHECK_FALSE(l.crowd.grant_bonus("w1", l.assignment["w1"], Money::parse("1"), "", "k").replayed);
    CHECK(l.store.ledger().size() == 1);
}

TEST_CASE("property: replaying the ledger reproduces the mirror and the remote") {
    std::mt19937 rng(2024);
    Ledgered l;
    const std::vector<std::string> workers = {"w1", "w2"};
    const std::vector<std::string> quals = {"q1", "q2", "q3"};
    std::vector<std::string> keys;
    std::map<std::string, std::pair<std::string, Money>> key_payload;
    int next_key = 0;
    for (int i = 0; i < 400; ++i) {
        const auto& w = workers[rng() % workers.size()];
        if (rng() % 10 == 0) l.crowd.fail_next("*");
        try {
            switch (rng() % 3) {
            case 0: l.crowd.assign_qualification(w, quals[rng() % quals.size()]); break;
            case 1: l.crowd.revoke_qualification(w, quals[rng() % quals.size()]); break;
            default: {
                std::string key;
                std::string who = w;
                Money amount = Money::from_units(static_cast<std::int64_t>(1 + rng() % 50000));
                if (!keys.empty() && rng() % 10 == 0) {
                    key = keys[rng() % keys.size()];
                    std::tie(who, amount) = key_payload[key];
                } else {
                    key = "key-" + std::to_string(next_key++);
                }
                l.crowd.grant_bonus(who, l.assignment[who], amount, "r", key);
                if (!key_payload.count(key)) {
                    keys.push_back(key);
                    key_payload[key] = {who, amount};
                }
            }
            }
        } catch (const PlatformRejected&) {
        }
    }
    const auto ledger = l.store.ledger();
    const auto replayed = replay_ledger(ledger);
    CHECK(replayed == current_mirror(l.store));

    std::map<std::string, int> per_key;
    for (const auto& e : ledger)
        if (e.idempotency_key) ++per_key[*e.idempotency_key];
    CHECK(per_key.size() == keys.size());
    for (const auto& [key, n] : per_key) CHECK(n == 1);

    const auto remote = l.crowd.remote_view();
    for (const auto& w : workers) {
        CHECK(remote.qualifications.count(w) ? remote.qualifications.at(w) == l.store.find_user(w)->qualifications
                                             : l.store.find_user(w)->qualifications.empty());
        CHECK((remote.bonuses_paid.count(w) ? remote.bonuses_paid.at(w) : Money{}) ==
              (replayed.bonus_totals.count(w) ? replayed.bonus_totals.at(w) : Money{}));
    }
}

TEST_CASE("ledger json is ordered by seq") {
    Ledgered l;
    l.crowd.assign_qualification("w1", "a");
    l.crowd.grant_bonus("w1", l.assignment["w1"], Money::parse("0.5"), "thanks", "k");
    const auto j = ledger_to_json(l.store.ledger());
    REQUIRE(j.size() == 2);
    CHECK(j[0]["seq"].get<int>() < j[1]["seq"].get<int>());
    CHECK(j[1]["amount"] == "0.50");
    CHECK(j[1]["idempotency_key"] == "k");
}

TEST_CASE("publishing") {
    Ledgered l;
    const std::vector<std::string> ids = {"t-w1", "t-w2"};
    CrowdSettings settings{CrowdPlatform::mock_mturk, Money::parse("0.50"), "Chat", ""};
    const auto handles = l.crowd.publish_task("x", ids, settings);
    REQUIRE(handles.size() == 2);
    for (std::size_t i = 0; i < handles.size(); ++i) {
        CHECK(handles[i].thread_id == ids[i]);
        CHECK(l.store.find_hit(handles[i].hit_id)->thread_id == ids[i]);
        CHECK(handles[i].entry_url.rfind("http://evalroom.test/landing?hitId=", 0) == 0);
    }
    CHECK(l.crowd.remote_view().hits.size() == 2);
    CHECK(l.store.ledger().size() == 2);

    l.crowd.expire_task(handles[0].hit_id);
    CHECK(l.store.find_hit(handles[0].hit_id)->expired);
    CHECK_THROWS_AS(l.crowd.accept(handles[0].hit_id, "W"), NotFound);
    CHECK_THROWS_AS(l.crowd.expire_task("nope"), NotFound);

    CHECK_THROWS_AS(l.crowd.publish_task("x", {}, settings), BadRequest);
    LocalCrowdClient none(l.store, system_clock(), "http://h", CrowdPlatform::none);
    CHECK_THROWS_AS(none.publish_task("x", ids, settings), ConfigError);
    CrowdSettings off;
    CHECK_THROWS_AS(l.crowd.publish_task("x", ids, off), ConfigError);
}

TEST_CASE("publish failure mid-batch publishes nothing locally") {
    Ledgered l;
    CrowdSettings settings{CrowdPlatform::mock_mturk, Money::parse("0.50"), "Chat", ""};
    l.crowd.fail_next("publish_task", 1);
    CHECK_THROWS_AS(l.crowd.publish_task("x", {"t-w1", "t-w2"}, settings), PlatformRejected);
    CHECK(l.store.ledger().empty());
    CHECK_FALSE(l.store.hit_for_thread("t-w1"));
}

TEST_CASE("entry urls land the worker in the thread, creating the account") {
    EvalService service(*testing::inline_config(1, 1, "alternating", kCrowdBlock),
                        testing::load_fixture_topics("topics_seeded.json"),
                        ServiceOptions{.store_path = ":memory:", .synchronous_bots = true, .bot_workers = 0});
    service.create_admin("root", "pw-root-1");
    const auto admin = service.login("root", "pw-root-1").token;
    const auto report = service.launch(admin, {"travel", "nope"}, LaunchRequest{5});
    REQUIRE(report.size() == 10); // one line per requested thread, failures included
    int published = 0;
    for (const auto& item : report) {
        if (item.id == "nope") {
            CHECK(item.error_code == "NotFound");
            continue;
        }
        REQUIRE(item.hit_id);
        ++published;
    }
    CHECK(published == 5);
    auto& mock = dynamic_cast<MockMturkClient&>(service.crowd());
    CHECK(mock.remote_view().hits.size() == 5);
    CHECK(service.store().ledger().size() == 5);

    const auto hit = *report.front().hit_id;
    auto query_of = [](const std::string& url) {
        httplib::Params params;
        httplib::detail::parse_query_text(url.substr(url.find('?') + 1), params);
        return std::map<std::string, std::string>(params.begin(), params.end());
    };

    CHECK(std::holds_alternative<LandingPreview>(service.landing(query_of(mock.preview_url(hit)))));
    CHECK(std::holds_alternative<LandingSignup>(service.landing({})));

    const auto entered = service.landing(query_of(mock.accept(hit, "A1B2")));
    REQUIRE(std::holds_alternative<LandingEntered>(entered));
    const auto& e = std::get<LandingEntered>(entered);
    CHECK(e.thread_id == *report.front().thread_id);
    CHECK(e.session.user_id == "ext-A1B2");
    CHECK_FALSE(e.session.consent_ok);
    CHECK(service.store().find_user_by_ext("A1B2")->id == "ext-A1B2");
    const auto assignment = service.store().find_assignment(e.thread_id, "ext-A1B2");
    REQUIRE(assignment);
    CHECK(assignment->ext_hit_id == hit);

    // returning through a second accept reuses the account
    const auto again = service.landing(query_of(mock.accept(hit, "A1B2")));
    CHECK(std::get<LandingEntered>(again).session.user_id == "ext-A1B2");

    CHECK_THROWS_AS(service.landing(q({{"workerId", "W"}, {"assignmentId", "A"}, {"hitId", "MISSING"}})), NotFound);
}

} // TEST_SUITE crowd
