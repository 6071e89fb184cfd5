#include "evalroom/survey.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <set>
#include <stdexcept>

namespace evalroom {

ValidationFailed::ValidationFailed(std::vector<Violation> violations)
    : Error("ValidationFailed",
            [&] {
                std::string msg = "survey answers rejected:";
                for (const auto& v : violations) msg += " [" + v.question_id + ": " + v.problem + "]";
                return msg;
            }(),
            422),
      violations_(std::move(violations)) {}

std::string_view to_string(QuestionKind kind) {
    switch (kind) {
    case QuestionKind::radio: return "radio";
    case QuestionKind::checkbox: return "checkbox";
    case QuestionKind::likert: return "likert";
    case QuestionKind::freeform: return "freeform";
    }
    return "freeform";
}

QuestionKind question_kind_from_string(std::string_view text) {
    if (text == "radio") return QuestionKind::radio;
    if (text == "checkbox") return QuestionKind::checkbox;
    if (text == "likert") return QuestionKind::likert;
    if (text == "freeform") return QuestionKind::freeform;
    throw std::invalid_argument("unknown question kind '" + std::string(text) + "'");
}

const Question* SurveySpec::find(std::string_view id) const {
    auto it = std::find_if(questions.begin(), questions.end(), [&](const Question& q) { return q.id == id; });
    return it == questions.end() ? nullptr : &*it;
}

RenderModel survey_render_model(const SurveySpec& spec) {
    OrderedJson questions = OrderedJson::array();
    for (const auto& q : spec.questions) {
        OrderedJson entry;
        entry["id"] = q.id;
        entry["prompt"] = q.prompt;
        entry["kind"] = to_string(q.kind);
        entry["required"] = q.required;
        if (q.kind == QuestionKind::radio || q.kind == QuestionKind::checkbox) entry["choices"] = q.choices;
        if (q.kind == QuestionKind::likert) {
            OrderedJson scale = OrderedJson::array();
            for (const auto& p : q.scale) scale.push_back(OrderedJson{{"value", p.value}, {"label", p.label}});
            entry["scale"] = std::move(scale);
        }
        questions.push_back(std::move(entry));
    }
    RenderModel model;
    model.document["render_model_version"] = 1;
    model.document["questions"] = std::move(questions);
    return model;
}

namespace {

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

} // namespace

bool is_unanswered(const Json& answer) {
    return answer.is_null() || (answer.is_string() && is_blank(answer.get_ref<const std::string&>())) ||
           (answer.is_array() && answer.empty());
}

namespace {

std::optional<std::string> check_value(const Question& q, const Json& answer) {
    switch (q.kind) {
    case QuestionKind::radio:
        if (!answer.is_string()) return "radio answer must be a string";
        if (!contains(q.choices, answer.get<std::string>())) return "not one of the choices";
        return std::nullopt;
    case QuestionKind::checkbox: {
        if (!answer.is_array()) return "checkbox answer must be an array of strings";
        std::set<std::string> seen;
        for (const auto& item : answer) {
            if (!item.is_string()) return "checkbox answer must be an array of strings";
            if (!contains(q.choices, item.get<std::string>())) return "not one of the choices";
            if (!seen.insert(item.get<std::string>()).second) return "choice selected twice";
        }
        return std::nullopt;
    }
    case QuestionKind::likert: {
        if (!answer.is_number_integer()) return "likert answer must be an integer scale value";
        const auto v = answer.get<long long>();
        const bool on_scale =
            std::any_of(q.scale.begin(), q.scale.end(), [&](const ScalePoint& p) { return p.value == v; });
        if (!on_scale) return "not a point on the scale";
        return std::nullopt;
    }
    case QuestionKind::freeform:
        if (!answer.is_string()) return "freeform answer must be a string";
        return std::nullopt;
    }
    return std::nullopt;
}

} // namespace

ValidationReport validate_answers(const SurveySpec& spec, const Answers& answers) {
    ValidationReport report;
    for (const auto& q : spec.questions) {
        auto it = answers.find(q.id);
        if (it == answers.end() || is_unanswered(it->second)) {
            if (q.required) report.violations.push_back({q.id, "required question unanswered", ""});
            continue;
        }
        if (auto problem = check_value(q, it->second))
            report.violations.push_back({q.id, *problem, it->second.dump()});
    }
    for (const auto& [id, value] : answers) {
        if (!spec.find(id)) report.violations.push_back({id, "no such question", value.dump()});
    }
    return report;
}

} // namespace evalroom
