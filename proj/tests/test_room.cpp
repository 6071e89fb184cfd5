#include <doctest.h>

#include <random>

#include "evalroom/bot_gateway.hpp"
#include "evalroom/error.hpp"
#include "evalroom/reference_bots.hpp"
#include "evalroom/room.hpp"
#include "support.hpp"

using namespace evalroom;

namespace {

struct Rig {
    std::shared_ptr<InProcessBots> local = std::make_shared<InProcessBots>();
    BotRegistry bots;
    PolicyRegistry policies = PolicyRegistry::with_builtins();
    RoomEngine engine{bots, policies, stepping_clock(testing::epoch(), std::chrono::seconds(1))};
    BotGateway gateway{local, RetryPolicy{}, [](std::chrono::milliseconds) {}, 1};
    std::vector<BotTurnRequest> seen; // every request the bot received

    explicit Rig(BotBehavior behavior = echo_response) {
        bots.register_endpoint(BotEndpointSpec{"scripted", "inproc://scripted", std::chrono::seconds(5), 2,
                                               Params{{"temperature", 0.7}, {"persona", "plain"}}});
        local->add("scripted", make_bot_handler([this, behavior](const BotTurnRequest& r) {
                       seen.push_back(r);
                       return behavior(r);
                   }));
    }
};

Topic topic_with_seeds(int n) {
    Topic t;
    t.id = "t";
    t.name = "T";
    for (int i = 0; i < n; ++i) t.seed_turns.push_back({i % 2 ? "B" : "A", "seed " + std::to_string(i + 1)});
    t.data = {{"persona", "calm"}};
    return t;
}

void check_thread_invariants(const ChatThread& t) {
    bool seen_live = false;
    for (std::size_t i = 0; i < t.messages.size(); ++i) {
        const auto& m = t.messages[i];
        CHECK(m.seq == static_cast<std::int64_t>(i + 1));
        CHECK(m.is_seed == (m.author_role == AuthorRole::seed));
        if (!m.is_seed) seen_live = true;
        CHECK_FALSE((m.is_seed && seen_live));
    }
    if (t.episode_done) CHECK((t.state == ThreadState::RatingOpen || t.state == ThreadState::Completed));
    std::set<int> orders;
    for (const auto& p : t.participants) CHECK(orders.insert(p.join_order).second);
}

} // namespace

TEST_SUITE("room") {

TEST_CASE("legal transition table") {
    using S = ThreadState;
    const std::vector<S> all = {S::Created, S::WaitingForHumans, S::Active, S::RatingOpen, S::Completed, S::Deleted};
    const std::set<std::pair<S, S>> legal = {
        {S::Created, S::WaitingForHumans}, {S::WaitingForHumans, S::Active}, {S::WaitingForHumans, S::RatingOpen},
        {S::Active, S::RatingOpen},        {S::RatingOpen, S::Completed},    {S::Created, S::Deleted},
        {S::WaitingForHumans, S::Deleted}, {S::Active, S::Deleted},          {S::RatingOpen, S::Deleted},
        {S::Completed, S::Deleted},
    };
    for (auto from : all)
        for (auto to : all) CHECK(is_legal_transition(from, to) == legal.count({from, to}) > 0);
}

TEST_CASE("create_thread copies seeds and stores params") {
    Rig rig;
    auto t = rig.engine.create_thread("th", topic_with_seeds(4), testing::inline_config(3), {{"persona", "socratic"}});
    CHECK(t.state == ThreadState::WaitingForHumans);
    REQUIRE(t.messages.size() == 4);
    for (const auto& m : t.messages) CHECK(m.is_seed);
    CHECK(t.messages[3].seq == 4);
    CHECK(t.participants.size() == 1);
    CHECK(t.participants[0].role == ParticipantRole::bot);
    CHECK(t.bot_params == Params{{"persona", "socratic"}});
    check_thread_invariants(t);
}

TEST_CASE("dummy topic starts empty and lets the human speak first") {
    Rig rig;
    const auto topics = testing::load_fixture_topics("topics_dummy.json");
    auto t = rig.engine.create_thread("th", topics.topics()[0], testing::inline_config(3));
    CHECK(t.messages.empty());
    CHECK(t.state == ThreadState::WaitingForHumans);
    const auto j = rig.engine.join_thread(t, testing::consented_user("u"), 0);
    CHECK(j.your_turn);
    CHECK(rig.engine.post_human_message(t, "u", "hello").message.seq == 1);
}

TEST_CASE("create_thread needs a registered bot") {
    BotRegistry empty;
    auto policies = PolicyRegistry::with_builtins();
    RoomEngine engine(empty, policies, system_clock());
    CHECK_THROWS_AS(engine.create_thread("th", topic_with_seeds(0), testing::inline_config(1)), BotUnavailable);
}

TEST_CASE("bot_params reach every bot request, overlaid on defaults") {
    Rig rig;
    auto t = rig.engine.create_thread("th", topic_with_seeds(1), testing::inline_config(2), {{"persona", "socratic"}});
    rig.engine.join_thread(t, testing::consented_user("u"), 0);
    for (int i = 0; i < 2; ++i) {
        rig.engine.post_human_message(t, "u", "msg " + std::to_string(i));
        rig.engine.run_bot_turns(t, rig.gateway);
    }
    REQUIRE(rig.seen.size() == 2);
    for (const auto& r : rig.seen) {
        CHECK(r.params["persona"] == "socratic");
        CHECK(r.params["temperature"] == 0.7);
        CHECK(r.topic_data == nlohmann::json{{"persona", "calm"}});
        CHECK(r.thread_id == "th");
        CHECK(r.transcript.front().is_seed);
    }
    CHECK(rig.seen[1].transcript.size() == 4); // seed, human, bot, human
}

TEST_CASE("join outcomes") {
    Rig rig;
    SUBCASE("quorum of one with turns activates and it is the human's turn") {
        auto t = rig.engine.create_thread("th", topic_with_seeds(0), testing::inline_config(3));
        const auto j = rig.engine.join_thread(t, testing::consented_user("u"), 0);
        CHECK(j.state == ThreadState::Active);
        CHECK(j.your_turn);
        CHECK(j.seat == 2);
        CHECK(rig.engine.remaining_turns(t, "u") == 3);
    }
    SUBCASE("zero turns opens the survey at once") {
        auto t = rig.engine.create_thread("th", topic_with_seeds(8), testing::inline_config(0));
        const auto j = rig.engine.join_thread(t, testing::consented_user("u"), 0);
        CHECK(j.state == ThreadState::RatingOpen);
        CHECK(rig.engine.survey_open(t));
        CHECK(t.episode_done);
        CHECK(rig.engine.remaining_turns(t, "u") == 0);
        CHECK_FALSE(j.your_turn);
        CHECK_THROWS_AS(rig.engine.post_human_message(t, "u", "hi"), WrongState);
    }
    SUBCASE("limit, full and closed threads") {
        auto t = rig.engine.create_thread("th", topic_with_seeds(0), testing::inline_config(1, 1, "alternating",
                                                                                           "limits: {max_threads_per_worker: 2}\n"));
        CHECK_THROWS_AS(rig.engine.join_thread(t, testing::consented_user("u"), 2), LimitExceeded);
        CHECK(rig.engine.join_thread(t, testing::consented_user("u"), 1).state == ThreadState::Active);
        CHECK(rig.engine.join_thread(t, testing::consented_user("u"), 1).already_joined);
        CHECK_THROWS_AS(rig.engine.join_thread(t, testing::consented_user("v"), 0), ThreadFull);
        rig.engine.delete_thread(t);
        CHECK_THROWS_AS(rig.engine.join_thread(t, testing::consented_user("w"), 0), WrongState);
    }
    SUBCASE("launch override of the worker limit wins") {
        auto t = rig.engine.create_thread("th", topic_with_seeds(0), testing::inline_config(1), Params::object(), 1);
        CHECK_THROWS_AS(rig.engine.join_thread(t, testing::consented_user("u"), 1), LimitExceeded);
    }
    SUBCASE("unconsented users are refused") {
        auto t = rig.engine.create_thread("th", topic_with_seeds(0), testing::inline_config(1));
        UserRecord u;
        u.id = "u";
        CHECK_THROWS_AS(rig.engine.join_thread(t, u, 0), NotConsented);
    }
}

TEST_CASE("three alternating turns unlock the survey after the last bot reply") {
    Rig rig;
    auto t = rig.engine.create_thread("th", topic_with_seeds(2), testing::inline_config(3));
    rig.engine.join_thread(t, testing::consented_user("u"), 0);
    for (int i = 1; i <= 3; ++i) {
        const auto out = rig.engine.post_human_message(t, "u", "turn " + std::to_string(i));
        CHECK(out.planned_bots == std::vector<std::string>{"bot:scripted"});
        CHECK(t.state == ThreadState::Active);
        CHECK_FALSE(rig.engine.is_your_turn(t, "u"));
        if (i < 3)
            CHECK_THROWS_AS(rig.engine.post_human_message(t, "u", "too soon"), TurnViolation);
        else
            CHECK_THROWS_AS(rig.engine.post_human_message(t, "u", "too soon"), WrongState); // input closed
        const auto report = rig.engine.run_bot_turns(t, rig.gateway);
        REQUIRE(report.messages.size() == 1);
        CHECK(report.messages[0].text == "turn " + std::to_string(i)); // echo
        CHECK(rig.engine.remaining_turns(t, "u") == 3 - i);
    }
    CHECK(t.state == ThreadState::RatingOpen);
    CHECK(t.episode_done);
    CHECK(t.messages.size() == 2 + 6);
    CHECK_THROWS_AS(rig.engine.post_human_message(t, "u", "more"), WrongState);
    check_thread_invariants(t);

    CHECK_THROWS_AS(rig.engine.submit_ratings(t, "u", {{"q", "c"}}), ValidationFailed);
    const auto done = rig.engine.submit_ratings(t, "u", {{"q", "a"}});
    CHECK(done.state == ThreadState::Completed);
    REQUIRE(done.records.size() == 1);
    CHECK(done.records[0].answer == "a");
    CHECK_THROWS_AS(rig.engine.submit_ratings(t, "u", {{"q", "a"}}), WrongState);
}

TEST_CASE("posting rules") {
    Rig rig;
    auto t = rig.engine.create_thread("th", topic_with_seeds(0), testing::inline_config(3));
    CHECK_THROWS_AS(rig.engine.post_human_message(t, "u", "early"), WrongState);
    rig.engine.join_thread(t, testing::consented_user("u"), 0);
    CHECK_THROWS_AS(rig.engine.post_human_message(t, "u", "  \n\t"), EmptyMessage);
    CHECK_THROWS_AS(rig.engine.post_human_message(t, "stranger", "hi"), NotParticipant);
    CHECK(rig.engine.post_human_message(t, "u", "  padded  ").message.text == "padded");
    CHECK_THROWS_AS(rig.engine.remaining_turns(t, "stranger"), NotParticipant);
}

TEST_CASE("remaining turns clamp at zero with chat after done") {
    Rig rig;
    auto cfg = std::make_shared<TaskConfig>(*testing::inline_config(3));
    cfg->chat.allow_chat_after_done = true;
    auto t = rig.engine.create_thread("th", topic_with_seeds(0), cfg);
    rig.engine.join_thread(t, testing::consented_user("u"), 0);
    for (int i = 0; i < 5; ++i) {
        rig.engine.post_human_message(t, "u", "m");
        rig.engine.run_bot_turns(t, rig.gateway);
    }
    CHECK(rig.engine.remaining_turns(t, "u") == 0);
    CHECK(t.participants[1].human_turns_taken == 5);
    CHECK(t.state == ThreadState::RatingOpen);
}

TEST_CASE("round robin matches a hand-written turn oracle") {
    // Oracle, written independently of the policy code: with humans in join
    // order h1, h2 and two required turns each, the only legal script is
    //   h1, h2, bot, h1, h2, bot
    // and every other speaker at any step is refused: TurnViolation while
    // they still owe turns, WrongState (input closed) once they are done.
    Rig rig;
    auto t = rig.engine.create_thread("th", topic_with_seeds(1), testing::inline_config(2, 2, "round_robin"));
    CHECK(rig.engine.join_thread(t, testing::consented_user("h1"), 0).state == ThreadState::WaitingForHumans);
    CHECK(rig.engine.join_thread(t, testing::consented_user("h2"), 0).state == ThreadState::Active);

    const std::vector<std::string> script = {"h1", "h2", "bot", "h1", "h2", "bot"};
    for (std::size_t step = 0; step < script.size(); ++step) {
        CAPTURE(step);
        const auto& who = script[step];
        for (const std::string other : {"h1", "h2"}) {
            if (other == who) continue;
            CHECK_FALSE(rig.engine.is_your_turn(t, other));
            auto copy = t;
            const auto spoken = std::count(script.begin(), script.begin() + static_cast<long>(step), other);
            if (spoken < 2)
                CHECK_THROWS_AS(rig.engine.post_human_message(copy, other, "out of turn"), TurnViolation);
            else
                CHECK_THROWS_AS(rig.engine.post_human_message(copy, other, "out of turn"), WrongState);
        }
        if (who == "bot") {
            CHECK(rig.engine.run_bot_turns(t, rig.gateway).messages.size() == 1);
        } else {
            CHECK(rig.engine.is_your_turn(t, who));
            const auto out = rig.engine.post_human_message(t, who, who + " speaks");
            CHECK(out.planned_bots.size() == (script[step + 1] == "bot" ? 1u : 0u));
        }
    }
    CHECK(t.state == ThreadState::RatingOpen);
    std::vector<std::string> authors;
    for (const auto& m : t.messages)
        if (!m.is_seed) authors.push_back(m.author_role == AuthorRole::bot ? "bot" : m.author_id);
    CHECK(authors == script);

    CHECK(rig.engine.submit_ratings(t, "h1", {{"q", "a"}}).state == ThreadState::RatingOpen);
    CHECK_THROWS_AS(rig.engine.submit_ratings(t, "h1", {{"q", "a"}}), AlreadySubmitted);
    CHECK(rig.engine.submit_ratings(t, "h2", {{"q", "b"}}).state == ThreadState::Completed);
}

TEST_CASE("flaky bot: two timeouts then success gives one message and two retry events") {
    int calls = 0;
    Rig rig;
    rig.local->add("scripted", [&](const std::string&) -> HttpReply {
        if (++calls <= 2) throw TransportTimeout("simulated timeout");
        return HttpReply{200, R"({"text":"finally"})"};
    });
    auto t = rig.engine.create_thread("th", topic_with_seeds(0), testing::inline_config(3));
    rig.engine.join_thread(t, testing::consented_user("u"), 0);
    rig.engine.post_human_message(t, "u", "hello");
    const auto report = rig.engine.run_bot_turns(t, rig.gateway);
    CHECK(calls == 3);
    REQUIRE(report.messages.size() == 1);
    CHECK(report.messages[0].text == "finally");
    REQUIRE(report.retry_events.size() == 2);
    CHECK(report.retry_events[0].cause == BotFailure::timeout);
    CHECK_FALSE(report.error);
}

TEST_CASE("exhausted bot keeps the thread active with a retryable plan") {
    Rig rig;
    int calls = 0;
    rig.local->add("scripted", [&](const std::string&) {
        ++calls;
        return HttpReply{503, "busy"};
    });
    auto t = rig.engine.create_thread("th", topic_with_seeds(0), testing::inline_config(1));
    rig.engine.join_thread(t, testing::consented_user("u"), 0);
    rig.engine.post_human_message(t, "u", "hello");
    const auto report = rig.engine.run_bot_turns(t, rig.gateway);
    CHECK(calls == 3);
    REQUIRE(report.error);
    CHECK(report.error->cause() == BotFailure::bad_status);
    CHECK(report.messages.empty());
    CHECK(t.state == ThreadState::Active);
    CHECK(t.pending_bots.size() == 1);
    CHECK(t.last_error);
    CHECK(t.messages.size() == 1);

    rig.local->add("scripted", echo_bot());
    CHECK(rig.engine.run_bot_turns(t, rig.gateway).messages.size() == 1);
    CHECK_FALSE(t.last_error);
    CHECK(t.state == ThreadState::RatingOpen);
}

TEST_CASE("stale bot replies are dropped") {
    Rig rig;
    auto t = rig.engine.create_thread("th", topic_with_seeds(0), testing::inline_config(2));
    rig.engine.join_thread(t, testing::consented_user("u"), 0);
    rig.engine.post_human_message(t, "u", "hello");
    const auto call = rig.engine.next_bot_call(t);
    REQUIRE(call);
    auto deleted = t;
    rig.engine.delete_thread(deleted);
    CHECK_FALSE(rig.engine.apply_bot_reply(deleted, *call, BotTurnResponse{"late", {}}));
    CHECK(rig.engine.apply_bot_reply(t, *call, BotTurnResponse{"on time", {}}));
    CHECK_FALSE(rig.engine.apply_bot_reply(t, *call, BotTurnResponse{"twice", {}}));
    CHECK(t.messages.size() == 2);
}

TEST_CASE("property: seeds never count as turns and survey opens only after all turns") {
    std::mt19937 rng(99);
    for (int round = 0; round < 150; ++round) {
        Rig rig;
        const int turns = static_cast<int>(rng() % 4);
        const int humans = 1 + static_cast<int>(rng() % 2);
        const int seeds = static_cast<int>(rng() % 5);
        auto t = rig.engine.create_thread("th", topic_with_seeds(seeds),
                                          testing::inline_config(turns, humans, humans == 1 ? "alternating" : "round_robin"));
        for (int h = 0; h < humans; ++h) rig.engine.join_thread(t, testing::consented_user("h" + std::to_string(h)), 0);
        for (int step = 0; step < 40; ++step) {
            if (rng() % 3 == 0) rig.engine.run_bot_turns(t, rig.gateway);
            const auto who = "h" + std::to_string(rng() % humans);
            try {
                rig.engine.post_human_message(t, who, "x");
            } catch (const Error&) {
            }
            int taken = 0;
            for (const auto* p : t.humans()) taken += p->human_turns_taken;
            const auto human_msgs = std::count_if(t.messages.begin(), t.messages.end(),
                                                  [](auto& m) { return m.author_role == AuthorRole::human; });
            CHECK(taken == human_msgs);
            if (t.state == ThreadState::RatingOpen)
                for (const auto* p : t.humans()) CHECK(p->human_turns_taken >= turns);
            check_thread_invariants(t);
        }
    }
}

TEST_CASE("policy registry") {
    auto r = PolicyRegistry::with_builtins();
    CHECK(r.names() == std::vector<std::string>{"alternating", "round_robin"});
    CHECK_THROWS_AS(r.add(std::make_shared<AlternatingPolicy>()), DuplicateName);
    CHECK_THROWS_AS(r.get("nope"), NotFound);
}

} // TEST_SUITE room
