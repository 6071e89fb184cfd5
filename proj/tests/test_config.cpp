#include <doctest.h>

#include <random>

#include "evalroom/clock.hpp"
#include "evalroom/config.hpp"
#include "evalroom/error.hpp"
#include "evalroom/money.hpp"
#include "evalroom/survey.hpp"
#include "evalroom/topics.hpp"
#include "evalroom/url.hpp"
#include "support.hpp"

using namespace evalroom;

namespace {

ConfigContext fixture_context() {
    ConfigContext ctx;
    ctx.base_dir = testing::fixture("");
    return ctx;
}

TaskConfig parse(const std::string& yaml) { return parse_task_config(yaml, fixture_context()); }

template <class E, class F>
E capture(F&& f) {
    try {
        f();
    } catch (const E& e) {
        return e;
    }
    FAIL("expected exception was not thrown");
    throw std::logic_error("unreachable");
}

// Random but valid config text; exercises every optional block.
std::string random_config(std::mt19937& rng) {
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    std::ostringstream y;
    y << "task_name: \"task " << pick(0, 999) << ": with colon\"\n";
    y << "chat:\n  human_turns_required: " << pick(0, 6) << "\n";
    if (pick(0, 1)) y << "  humans_per_thread: " << pick(1, 3) << "\n";
    if (pick(0, 1)) y << "  policy_name: " << (pick(0, 1) ? "alternating" : "round_robin") << "\n";
    if (pick(0, 1)) y << "  allow_chat_after_done: " << (pick(0, 1) ? "true" : "false") << "\n";
    y << "survey:\n  questions:\n";
    const int n = pick(1, 5);
    for (int i = 0; i < n; ++i) {
        y << "    - id: q" << i << "\n      prompt: \"Question #" << i << "?\"\n";
        switch (pick(0, 3)) {
        case 0: y << "      kind: radio\n      choices: [\"yes\", \"no\", \"maybe\"]\n"; break;
        case 1: y << "      kind: checkbox\n      choices: [a, b]\n"; break;
        case 2:
            if (pick(0, 1))
                y << "      kind: likert\n      scale: [low, mid, high]\n";
            else
                y << "      kind: likert\n      scale: [{value: -1, label: bad}, {value: 1, label: good}]\n";
            break;
        default: y << "      kind: freeform\n"; break;
        }
        if (pick(0, 1)) y << "      required: " << (pick(0, 1) ? "true" : "false") << "\n";
    }
    y << "onboarding:\n  agreement_file: agreement.html\n  checkbox_texts: [\"I agree\", \"Me too\"]\n";
    if (pick(0, 1)) y << "limits:\n  max_threads_per_worker: " << pick(1, 9) << "\n  max_threads_per_topic: unlimited\n";
    if (pick(0, 1)) y << "crowd:\n  platform: mock_mturk\n  reward: \"0." << pick(10, 99) << "\"\n  title: T\n";
    y << "bots:\n  - name: b\n    base_url: http://127.0.0.1:" << pick(1000, 9000) << "/bot\n";
    if (pick(0, 1)) y << "    timeout: 2.5\n    max_retries: " << pick(0, 4) << "\n";
    if (pick(0, 1)) y << "    default_params: {temperature: 0.25, persona: calm, n: 3, flag: true}\n";
    y << "instance:\n  tcp_port: " << pick(1, 65535) << "\n";
    if (pick(0, 1)) y << "  path_prefix: /room" << pick(0, 9) << "/\n  long_poll_seconds: " << pick(0, 60) << "\n";
    return y.str();
}

} // namespace

TEST_SUITE("config") {

TEST_CASE("first-person fixture carries three required turns") {
    const auto cfg = testing::load_fixture_config("first_person.yaml");
    CHECK(cfg.chat.human_turns_required == 3);
    CHECK(cfg.chat.policy_name == "alternating");
    CHECK(cfg.chat.humans_per_thread == 1);
    CHECK(cfg.survey.questions.size() == 3);
    CHECK(cfg.limits.max_threads_per_worker == 2);
    REQUIRE(cfg.bots.size() == 1);
    CHECK(cfg.bots[0].timeout == std::chrono::seconds(5));
    CHECK(cfg.bots[0].default_params == Params{{"temperature", 0.7}});
    CHECK(cfg.onboarding.agreement_file.is_absolute());
}

TEST_CASE("zero required turns is a valid static-mode config") {
    const auto cfg = testing::load_fixture_config("third_person.yaml");
    CHECK(cfg.chat.human_turns_required == 0);
}

TEST_CASE("defaults are applied for omitted blocks") {
    const auto cfg = parse(testing::config_yaml(2));
    CHECK(cfg.chat.bots_per_thread == 1);
    CHECK_FALSE(cfg.chat.allow_chat_after_done);
    CHECK(cfg.crowd.platform == CrowdPlatform::none);
    CHECK_FALSE(cfg.limits.max_threads_per_worker);
    CHECK(cfg.bots[0].max_retries == 2);
    CHECK(cfg.bots[0].timeout == std::chrono::seconds(30));
    CHECK(cfg.instance.tcp_port == 8080);
    CHECK(cfg.instance.long_poll_seconds == 25);
}

TEST_CASE("empty text is a syntax error") {
    CHECK_THROWS_AS(parse(""), SyntaxError);
}

TEST_CASE("malformed yaml reports a position") {
    const auto e = capture<SyntaxError>([] { parse("task_name: [unclosed\nchat: {"); });
    CHECK(e.line() >= 1);
    CHECK(e.column() >= 1);
}

TEST_CASE("duplicate question ids name the id") {
    auto yaml = testing::config_yaml(1);
    yaml.replace(yaml.find("  questions:\n") + 13, 0, "    - {id: q, prompt: dup, kind: freeform}\n");
    const auto e = capture<InvariantError>([&] { parse(yaml); });
    CHECK(std::string(e.what()).find("'q'") != std::string::npos);
}

TEST_CASE("schema errors name the field path") {
    SUBCASE("unknown top-level key") {
        const auto e = capture<SchemaError>([] { parse(testing::config_yaml(1) + "colour: red\n"); });
        CHECK(e.path() == "colour");
    }
    SUBCASE("mistyped turn count") {
        auto yaml = testing::config_yaml(1);
        yaml.replace(yaml.find("human_turns_required: 1"), 23, "human_turns_required: lots");
        const auto e = capture<SchemaError>([&] { parse(yaml); });
        CHECK(e.path() == "chat.human_turns_required");
    }
    SUBCASE("missing survey") {
        const auto e = capture<SchemaError>([] {
            parse("task_name: t\nchat: {human_turns_required: 1}\n"
                  "onboarding: {agreement_file: agreement.html, checkbox_texts: []}\n"
                  "bots: [{name: b, base_url: 'inproc://b'}]\ninstance: {tcp_port: 1}\n");
        });
        CHECK(e.path() == "survey");
    }
    SUBCASE("choices on a likert question") {
        auto yaml = testing::config_yaml(1);
        yaml.replace(yaml.find("kind: radio"), 11, "kind: likert");
        const auto e = capture<SchemaError>([&] { parse(yaml); });
        CHECK(e.path() == "survey.questions[0].choices");
    }
}

TEST_CASE("invariants are enforced") {
    CHECK_THROWS_AS(parse(testing::config_yaml(1, 1, "alternating", "instance: {tcp_port: 70000}\n")),
                    InvariantError);
    CHECK_THROWS_AS(parse(testing::config_yaml(1, 1, "nobody")), InvariantError);
    CHECK_THROWS_AS(parse(testing::config_yaml(1, 1, "alternating", "crowd: {platform: mock_mturk}\n")),
                    SchemaError);
    CHECK_THROWS_AS(parse(testing::config_yaml(-1)), InvariantError);
    auto no_file = testing::config_yaml(1);
    no_file.replace(no_file.find("agreement.html"), 14, "missing.html");
    CHECK_THROWS_AS(parse(no_file), InvariantError);
}

TEST_CASE("bots list must cover bots_per_thread") {
    auto yaml = testing::config_yaml(1);
    yaml.replace(yaml.find("  policy_name"), 0, "  bots_per_thread: 2\n");
    CHECK_THROWS_AS(parse(yaml), InvariantError);
}

TEST_CASE("path prefix normalization") {
    CHECK(normalize_path_prefix("") == "");
    CHECK(normalize_path_prefix("/") == "");
    CHECK(normalize_path_prefix("/eval/a/") == "/eval/a");
    CHECK_THROWS_AS(normalize_path_prefix("eval"), SchemaError);
    CHECK_THROWS_AS(normalize_path_prefix("/a//b"), SchemaError);
    CHECK_THROWS_AS(normalize_path_prefix("/a?b"), SchemaError);
}

TEST_CASE("property: parse(serialize(parse(x))) == parse(x)") {
    std::mt19937 rng(20240501);
    for (int i = 0; i < 300; ++i) {
        const auto text = random_config(rng);
        CAPTURE(text);
        const auto once = parse(text);
        const auto canonical = serialize_task_config(once);
        const auto twice = parse(canonical);
        CHECK(twice == once);
        CHECK(serialize_task_config(twice) == canonical);
        CHECK(config_identity(twice) == config_identity(once));
    }
}

} // TEST_SUITE config

TEST_SUITE("survey") {

TEST_CASE("render model preserves order and kinds") {
    const auto cfg = testing::load_fixture_config("first_person.yaml");
    const auto model = survey_render_model(cfg.survey);
    const auto& qs = model.document["questions"];
    REQUIRE(qs.size() == 3);
    CHECK(qs[0]["id"] == "engaging");
    CHECK(qs[0]["kind"] == "likert");
    CHECK(qs[0]["scale"].size() == 5);
    CHECK(qs[1]["kind"] == "radio");
    CHECK(qs[2]["kind"] == "freeform");
    CHECK(qs[2]["required"] == false);
    CHECK(model.serialize() == survey_render_model(cfg.survey).serialize());
}

TEST_CASE("single freeform question renders one entry") {
    SurveySpec spec{{Question{"f", "Say something", QuestionKind::freeform, {}, {}, true}}};
    const auto model = survey_render_model(spec);
    REQUIRE(model.document["questions"].size() == 1);
    CHECK(model.document["questions"][0]["kind"] == "freeform");
}

TEST_CASE("validate_answers") {
    const auto cfg = testing::load_fixture_config("first_person.yaml");
    const auto& spec = cfg.survey;

    CHECK(validate_answers(spec, {{"engaging", 3}, {"again", "no"}}).empty());
    CHECK(validate_answers(spec, {{"engaging", 5}, {"again", "yes"}, {"comments", "fine"}}).empty());

    auto r = validate_answers(spec, {{"engaging", 3}, {"again", "perhaps"}});
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].question_id == "again");
    CHECK(r.violations[0].value == "\"perhaps\"");

    r = validate_answers(spec, {{"again", "yes"}});
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].question_id == "engaging");

    CHECK_FALSE(validate_answers(spec, {{"engaging", 6}, {"again", "yes"}}).empty());
    CHECK_FALSE(validate_answers(spec, {{"engaging", "4"}, {"again", "yes"}}).empty());
    CHECK_FALSE(validate_answers(spec, {{"engaging", 4}, {"again", "yes"}, {"extra", 1}}).empty());
    CHECK(validate_answers(spec, {{"engaging", 4}, {"again", "yes"}, {"comments", "   "}}).empty());
}

TEST_CASE("required freeform must be nonempty; checkbox must be a subset") {
    SurveySpec spec{{Question{"f", "p", QuestionKind::freeform, {}, {}, true},
                     Question{"c", "p", QuestionKind::checkbox, {"x", "y", "z"}, {}, true}}};
    CHECK(validate_answers(spec, {{"f", "ok"}, {"c", Json::array({"x", "z"})}}).empty());
    CHECK_FALSE(validate_answers(spec, {{"f", " "}, {"c", Json::array({"x"})}}).empty());
    CHECK_FALSE(validate_answers(spec, {{"f", "ok"}, {"c", Json::array({"w"})}}).empty());
    CHECK_FALSE(validate_answers(spec, {{"f", "ok"}, {"c", Json::array({"x", "x"})}}).empty());
    CHECK_FALSE(validate_answers(spec, {{"f", "ok"}, {"c", Json::array()}}).empty());
}

TEST_CASE("every answer a completed form can produce validates") {
    // Enumerates the whole answer space of the fixture survey, as the
    // reference form would submit it.
    const auto cfg = testing::load_fixture_config("first_person.yaml");
    int accepted = 0;
    for (const auto& point : cfg.survey.questions[0].scale)
        for (const auto& choice : cfg.survey.questions[1].choices)
            for (const Json comment : {Json(""), Json("great"), Json(nullptr)}) {
                Answers a{{"engaging", point.value}, {"again", choice}};
                if (!comment.is_null()) a["comments"] = comment;
                CHECK(validate_answers(cfg.survey, a).empty());
                ++accepted;
            }
    CHECK(accepted == 5 * 2 * 3);
}

} // TEST_SUITE survey

TEST_SUITE("topics") {

TEST_CASE("empty object is the open-domain dummy topic") {
    const auto set = testing::load_fixture_topics("topics_dummy.json");
    REQUIRE(set.size() == 1);
    CHECK(set.topics()[0].id == kDefaultTopicId);
    CHECK(set.topics()[0].seed_turns.empty());
    CHECK(set.topics()[0].data == nlohmann::json::object());
}

TEST_CASE("seed turns keep order and speaker labels") {
    const auto set = testing::load_fixture_topics("topics_seeded.json");
    const auto& t = set.get("travel");
    REQUIRE(t.seed_turns.size() == 2);
    CHECK(t.seed_turns[0] == SeedTurn{"Sam", "I finally have a free weekend coming up."});
    CHECK(t.seed_turns[1].speaker_label == "Riley");
    CHECK(t.data["persona"] == "enthusiastic traveller");
}

TEST_CASE("map form and array form agree") {
    const auto a = load_topics(R"([{"id":"t1","name":"One","seed_turns":[{"speaker":"A","text":"x"}]}])");
    const auto b = load_topics(R"({"t1":{"name":"One","seed_turns":[{"speaker":"A","text":"x"}]}})");
    CHECK(a == b);
}

TEST_CASE("duplicate ids are reported and nothing loads") {
    const auto e = capture<SchemaError>([] {
        load_topics(R"([{"id":"t1","name":"a"},{"id":"t1","name":"b"},{"id":"t2"},{"id":"t2"}])");
    });
    const std::string what = e.what();
    CHECK(what.find("t1") != std::string::npos);
    CHECK(what.find("t2") != std::string::npos);
}

TEST_CASE("malformed topics") {
    CHECK_THROWS_AS(load_topics("[{"), SyntaxError);
    CHECK_THROWS_AS(load_topics(R"([{"name":"no id"}])"), SchemaError);
    CHECK_THROWS_AS(load_topics(R"([{"id":"t","seed_turns":[{"speaker":"A","text":""}]}])"), SchemaError);
    CHECK_THROWS_AS(load_topics("42"), SchemaError);
}

TEST_CASE("lookup is exact and case-sensitive") {
    const auto set = load_topics(R"([{"id":"t1","name":"One"}])");
    CHECK(get_topic(set, "t1").name == "One");
    CHECK_THROWS_AS(get_topic(set, "T1"), NotFound);
    CHECK_THROWS_AS(get_topic(set, "t2"), NotFound);
    CHECK(set.find("T1") == nullptr);
}

TEST_CASE("property: load(serialize(load(x))) == load(x)") {
    std::mt19937 rng(7);
    const std::vector<std::string> words = {"hi", "caf\xC3\xA9", "\"quoted\"", "line\nbreak", "tab\there", "x"};
    for (int round = 0; round < 200; ++round) {
        nlohmann::json arr = nlohmann::json::array();
        const int n = std::uniform_int_distribution<int>(0, 4)(rng);
        for (int i = 0; i < n; ++i) {
            nlohmann::json t{{"id", "t" + std::to_string(i)}, {"name", words[rng() % words.size()]}};
            nlohmann::json seeds = nlohmann::json::array();
            for (int k = 0; k < static_cast<int>(rng() % 4); ++k)
                seeds.push_back({{"speaker", words[rng() % words.size()]}, {"text", words[rng() % words.size()]}});
            t["seed_turns"] = seeds;
            if (rng() % 2) t["data"] = {{"k", static_cast<int>(rng() % 100)}, {"nested", {{"a", words[0]}}}};
            arr.push_back(t);
        }
        const auto once = load_topics(arr.dump());
        CHECK(load_topics(serialize_topics(once)) == once);
    }
}

} // TEST_SUITE topics

TEST_SUITE("primitives") {

TEST_CASE("money is exact fixed point") {
    CHECK(Money::parse("0.5").units() == 5000);
    CHECK(Money::parse("12").units() == 120000);
    CHECK(Money::parse("3.1415").units() == 31415);
    CHECK(Money::parse("0.50").to_string() == "0.50");
    CHECK(Money::parse("1.2345").to_string() == "1.2345");
    CHECK(Money::parse("-2").to_string() == "-2.00");
    CHECK((Money::parse("0.1") + Money::parse("0.2")) == Money::parse("0.3"));
    for (const char* bad : {"", "1e3", "+1", "0.12345", "1.", ".5", "abc", "99999999999999999999"})
        CHECK_THROWS(Money::parse(bad));
}

TEST_CASE("rfc3339 round trip") {
    const auto t = testing::epoch();
    CHECK(format_rfc3339(t) == "2024-05-01T09:00:00.000Z");
    CHECK(parse_rfc3339("2024-05-01T09:00:00.5Z") == t + std::chrono::milliseconds(500));
    CHECK(parse_rfc3339(format_rfc3339(t + std::chrono::milliseconds(1234))) == t + std::chrono::milliseconds(1234));
    CHECK_THROWS_AS(parse_rfc3339("2024-05-01T09:00:00+02:00"), std::invalid_argument);
    auto clock = stepping_clock(t, std::chrono::seconds(1));
    CHECK(clock() == t);
    CHECK(clock() == t + std::chrono::seconds(1));
}

TEST_CASE("url subset") {
    auto u = parse_url("http://127.0.0.1:8080/bot/v1/");
    REQUIRE(u);
    CHECK(u->scheme == "http");
    CHECK(u->port == 8080);
    CHECK(u->path == "/bot/v1");
    CHECK(u->origin() == "http://127.0.0.1:8080");
    CHECK(parse_url("inproc://echo"));
    CHECK_FALSE(parse_url("not a url"));
    CHECK_FALSE(parse_url("ftp://x"));
    CHECK(url_encode("a b&c") == "a%20b%26c");
}

} // TEST_SUITE primitives
