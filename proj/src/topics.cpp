#include "evalroom/topics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "evalroom/error.hpp"

namespace evalroom {

using nlohmann::json;

TopicSet::TopicSet(std::vector<Topic> topics) : topics_(std::move(topics)) {
    std::vector<std::string> dupes;
    for (std::size_t i = 0; i < topics_.size(); ++i) {
        if (!index_.emplace(topics_[i].id, i).second) dupes.push_back(topics_[i].id);
    }
    if (!dupes.empty()) {
        std::string names;
        for (const auto& d : dupes) names += (names.empty() ? "" : ", ") + d;
        throw SchemaError("topics", "duplicate topic id(s): " + names);
    }
}

const Topic* TopicSet::find(std::string_view id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &topics_[it->second];
}

const Topic& TopicSet::get(std::string_view id) const {
    if (const auto* t = find(id)) return *t;
    throw NotFound("topic '" + std::string(id) + "'");
}

namespace {

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

// Parses one topic object; `key_id` is the id from the map form, if any.
// Problems are collected instead of thrown so every offender is reported.
std::optional<Topic> parse_topic(const nlohmann::ordered_json& node, const std::string& path, const std::string* key_id,
                                 std::vector<std::string>& problems) {
    if (!node.is_object()) {
        problems.push_back(path + ": expected an object");
        return std::nullopt;
    }
    static const std::set<std::string> kKnown = {"id", "name", "seed_turns", "data"};
    bool ok = true;
    for (const auto& [k, v] : node.items()) {
        if (!kKnown.count(k)) {
            problems.push_back(path + "." + k + ": unknown key");
            ok = false;
        }
    }

    Topic topic;
    if (auto it = node.find("id"); it != node.end()) {
        if (!it->is_string() || it->get<std::string>().empty()) {
            problems.push_back(path + ".id: expected a nonempty string");
            ok = false;
        } else {
            topic.id = it->get<std::string>();
            if (key_id && *key_id != topic.id) {
                problems.push_back(path + ".id: '" + topic.id + "' does not match its key '" + *key_id + "'");
                ok = false;
            }
        }
    } else if (key_id) {
        topic.id = *key_id;
    } else if (node.empty()) {
        topic.id = std::string(kDefaultTopicId);
    } else {
        problems.push_back(path + ".id: missing");
        ok = false;
    }

    if (auto it = node.find("name"); it != node.end()) {
        if (!it->is_string()) {
            problems.push_back(path + ".name: expected a string");
            ok = false;
        } else {
            topic.name = it->get<std::string>();
        }
    }
    if (topic.name.empty()) topic.name = topic.id;

    if (auto it = node.find("seed_turns"); it != node.end()) {
        if (!it->is_array()) {
            problems.push_back(path + ".seed_turns: expected an array");
            ok = false;
        } else {
            for (std::size_t i = 0; i < it->size(); ++i) {
                const auto& turn = (*it)[i];
                const auto tpath = path + ".seed_turns[" + std::to_string(i) + "]";
                if (!turn.is_object() || !turn.contains("speaker") || !turn.contains("text") ||
                    !turn["speaker"].is_string() || !turn["text"].is_string() || turn.size() != 2) {
                    problems.push_back(tpath + ": expected {speaker: string, text: string}");
                    ok = false;
                    continue;
                }
                SeedTurn seed{turn["speaker"].get<std::string>(), turn["text"].get<std::string>()};
                if (is_blank(seed.text)) {
                    problems.push_back(tpath + ".text: must be nonempty");
                    ok = false;
                    continue;
                }
                topic.seed_turns.push_back(std::move(seed));
            }
        }
    }

    if (auto it = node.find("data"); it != node.end()) {
        if (!it->is_object()) {
            problems.push_back(path + ".data: expected an object");
            ok = false;
        } else {
            topic.data = json::parse(it->dump());
        }
    }
    if (!ok) return std::nullopt;
    return topic;
}

} // namespace

TopicSet load_topics(std::string_view json_text) {
    nlohmann::ordered_json root;
    try {
        root = nlohmann::ordered_json::parse(json_text);
    } catch (const nlohmann::ordered_json::parse_error& e) {
        // byte offset only; derive line/column for the message
        const auto offset = std::min<std::size_t>(e.byte, json_text.size());
        int line = 1, column = 1;
        for (std::size_t i = 0; i + 1 < offset; ++i) {
            if (json_text[i] == '\n') {
                ++line;
                column = 1;
            } else {
                ++column;
            }
        }
        throw SyntaxError(e.what(), line, column);
    }

    std::vector<Topic> topics;
    std::vector<std::string> problems;
    if (root.is_array()) {
        for (std::size_t i = 0; i < root.size(); ++i) {
            if (auto t = parse_topic(root[i], "topics[" + std::to_string(i) + "]", nullptr, problems))
                topics.push_back(std::move(*t));
        }
    } else if (root.is_object() && root.empty()) {
        topics.push_back(*parse_topic(root, "topics", nullptr, problems));
    } else if (root.is_object()) {
        for (const auto& [key, value] : root.items()) {
            if (key.empty()) {
                problems.push_back("topics: empty id key");
                continue;
            }
            if (auto t = parse_topic(value, "topics." + key, &key, problems)) topics.push_back(std::move(*t));
        }
    } else {
        throw SchemaError("topics", "expected an array or an object");
    }

    std::map<std::string, int> counts;
    for (const auto& t : topics) ++counts[t.id];
    for (const auto& [id, n] : counts)
        if (n > 1) problems.push_back("duplicate topic id '" + id + "'");

    if (!problems.empty()) {
        std::string all;
        for (const auto& p : problems) all += (all.empty() ? "" : "; ") + p;
        throw SchemaError("topics", all);
    }
    return TopicSet(std::move(topics));
}

TopicSet load_topics_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read topics file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_topics(buf.str());
}

std::string serialize_topics(const TopicSet& set) {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& t : set.topics()) {
        nlohmann::ordered_json entry;
        entry["id"] = t.id;
        entry["name"] = t.name;
        entry["seed_turns"] = nlohmann::ordered_json::array();
        for (const auto& s : t.seed_turns) entry["seed_turns"].push_back({{"speaker", s.speaker_label}, {"text", s.text}});
        entry["data"] = nlohmann::ordered_json::parse(t.data.dump());
        out.push_back(std::move(entry));
    }
    return out.dump(2) + "\n";
}

} // namespace evalroom
