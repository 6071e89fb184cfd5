#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace evalroom {

struct SeedTurn {
    std::string speaker_label;
    std::string text;

    bool operator==(const SeedTurn&) const = default;
};

struct Topic {
    std::string id;
    std::string name;
    std::vector<SeedTurn> seed_turns;
    nlohmann::json data = nlohmann::json::object();

    bool operator==(const Topic&) const = default;
};

/// Immutable, ordered set of topics as loaded from the topics file.
class TopicSet {
public:
    TopicSet() = default;
    explicit TopicSet(std::vector<Topic> topics); // throws SchemaError on duplicate ids

    const std::vector<Topic>& topics() const { return topics_; }
    std::size_t size() const { return topics_.size(); }
    bool empty() const { return topics_.empty(); }

    /// Case-sensitive. Throws NotFound.
    const Topic& get(std::string_view id) const;
    const Topic* find(std::string_view id) const;

    bool operator==(const TopicSet& other) const { return topics_ == other.topics_; }

private:
    std::vector<Topic> topics_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Id used for the open-domain dummy topic (an empty object without an id).
inline constexpr std::string_view kDefaultTopicId = "default";

/// Accepts a JSON array of topic objects, an object mapping id -> topic, or a
/// single empty object (the open-domain dummy topic file).
TopicSet load_topics(std::string_view json_text);
TopicSet load_topics_file(const std::string& path);

/// Canonical array form; load_topics(serialize_topics(s)) == s.
std::string serialize_topics(const TopicSet& set);

inline const Topic& get_topic(const TopicSet& set, std::string_view id) { return set.get(id); }

} // namespace evalroom
