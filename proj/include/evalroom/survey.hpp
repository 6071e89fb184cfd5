#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "evalroom/error.hpp"

namespace evalroom {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

enum class QuestionKind { radio, checkbox, likert, freeform };

std::string_view to_string(QuestionKind kind);
QuestionKind question_kind_from_string(std::string_view text); // throws std::invalid_argument

struct ScalePoint {
    int value = 0;
    std::string label;

    bool operator==(const ScalePoint&) const = default;
};

struct Question {
    std::string id;
    std::string prompt;
    QuestionKind kind = QuestionKind::freeform;
    std::vector<std::string> choices; // radio, checkbox
    std::vector<ScalePoint> scale;    // likert
    bool required = true;

    bool operator==(const Question&) const = default;
};

struct SurveySpec {
    std::vector<Question> questions;

    const Question* find(std::string_view id) const;
    bool operator==(const SurveySpec&) const = default;
};

/// Answers keyed by question id. Radio and freeform answers are strings,
/// checkbox answers are arrays of strings, likert answers are the integer
/// value of a scale point.
using Answers = std::map<std::string, Json>;

/// Self-describing survey document for the frontend. Key order is fixed, so
/// the same spec always serializes to the same bytes.
struct RenderModel {
    OrderedJson document;

    std::string serialize() const { return document.dump(); }
};

RenderModel survey_render_model(const SurveySpec& spec);

struct ValidationReport {
    std::vector<Violation> violations;

    bool empty() const { return violations.empty(); }
};

/// Null, whitespace-only strings and empty arrays count as "not answered".
bool is_unanswered(const Json& answer);

ValidationReport validate_answers(const SurveySpec& spec, const Answers& answers);

} // namespace evalroom
