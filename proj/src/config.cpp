#include "evalroom/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <yaml-cpp/yaml.h>

#include "evalroom/crypto.hpp"
#include "evalroom/error.hpp"
#include "evalroom/url.hpp"

namespace evalroom {

std::string_view to_string(CrowdPlatform platform) {
    switch (platform) {
    case CrowdPlatform::none: return "none";
    case CrowdPlatform::mock_mturk: return "mock_mturk";
    case CrowdPlatform::external_url: return "external_url";
    }
    return "none";
}

Params overlay_params(const Params& defaults, const Params& thread_params) {
    Params out = defaults.is_object() ? defaults : Params::object();
    if (thread_params.is_object())
        for (const auto& [key, value] : thread_params.items()) out[key] = value;
    return out;
}

std::string normalize_path_prefix(std::string_view prefix) {
    std::string p(prefix);
    while (!p.empty() && p.back() == '/') p.pop_back();
    if (p.empty()) return p;
    if (p.front() != '/') throw SchemaError("instance.path_prefix", "must start with '/'");
    const bool ok = std::all_of(p.begin(), p.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '/' || c == '-' || c == '_' || c == '.';
    });
    if (!ok || p.find("//") != std::string::npos) throw SchemaError("instance.path_prefix", "not a plain URL path");
    return p;
}

namespace {

std::string join_path(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

std::string index_path(const std::string& parent, std::size_t i) {
    return parent + "[" + std::to_string(i) + "]";
}

/// Reads one YAML mapping, remembering which keys were consumed so leftovers
/// can be rejected.
class Fields {
public:
    Fields(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.IsMap()) throw SchemaError(path_.empty() ? "<root>" : path_, "expected a mapping");
    }

    YAML::Node get(const std::string& key) {
        seen_.insert(key);
        const YAML::Node& node = node_;
        return node[key];
    }

    YAML::Node require(const std::string& key) {
        auto n = get(key);
        if (!n || n.IsNull()) throw SchemaError(join_path(path_, key), "missing required field");
        return n;
    }

    std::string path(const std::string& key) const { return join_path(path_, key); }

    void finish() const {
        for (const auto& kv : node_) {
            const auto key = kv.first.Scalar();
            if (!seen_.count(key)) throw SchemaError(join_path(path_, key), "unknown key");
        }
    }

private:
    YAML::Node node_;
    std::string path_;
    std::set<std::string> seen_;
};

std::string as_string(const YAML::Node& n, const std::string& path) {
    if (!n.IsScalar()) throw SchemaError(path, "expected a string");
    return n.Scalar();
}

long long as_int(const YAML::Node& n, const std::string& path) {
    if (!n.IsScalar()) throw SchemaError(path, "expected an integer");
    try {
        return n.as<long long>();
    } catch (const YAML::Exception&) {
        throw SchemaError(path, "expected an integer, got '" + n.Scalar() + "'");
    }
}

bool as_bool(const YAML::Node& n, const std::string& path) {
    if (!n.IsScalar()) throw SchemaError(path, "expected a boolean");
    try {
        return n.as<bool>();
    } catch (const YAML::Exception&) {
        throw SchemaError(path, "expected a boolean, got '" + n.Scalar() + "'");
    }
}

double as_double(const YAML::Node& n, const std::string& path) {
    if (!n.IsScalar()) throw SchemaError(path, "expected a number");
    try {
        return n.as<double>();
    } catch (const YAML::Exception&) {
        throw SchemaError(path, "expected a number, got '" + n.Scalar() + "'");
    }
}

std::vector<std::string> as_string_list(const YAML::Node& n, const std::string& path) {
    if (!n.IsSequence()) throw SchemaError(path, "expected a list");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(as_string(n[i], index_path(path, i)));
    return out;
}

std::optional<int> as_limit(const YAML::Node& n, const std::string& path) {
    if (!n || n.IsNull()) return std::nullopt;
    if (n.IsScalar() && n.Scalar() == "unlimited") return std::nullopt;
    const auto v = as_int(n, path);
    if (v <= 0 || v > 1'000'000'000) throw InvariantError(path + " must be a positive integer or 'unlimited'");
    return static_cast<int>(v);
}

Json yaml_to_json(const YAML::Node& n, const std::string& path) {
    switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Sequence: {
        Json arr = Json::array();
        for (std::size_t i = 0; i < n.size(); ++i) arr.push_back(yaml_to_json(n[i], index_path(path, i)));
        return arr;
    }
    case YAML::NodeType::Map: {
        Json obj = Json::object();
        for (const auto& kv : n) obj[kv.first.Scalar()] = yaml_to_json(kv.second, join_path(path, kv.first.Scalar()));
        return obj;
    }
    case YAML::NodeType::Scalar: break;
    }
    const auto& text = n.Scalar();
    if (n.Tag() == "!") return text; // quoted
    if (text == "null" || text == "~") return nullptr;
    if (text == "true" || text == "True") return true;
    if (text == "false" || text == "False") return false;
    try {
        std::size_t used = 0;
        const long long i = std::stoll(text, &used);
        if (used == text.size()) return i;
    } catch (const std::exception&) {
    }
    try {
        std::size_t used = 0;
        const double d = std::stod(text, &used);
        if (used == text.size() && std::isfinite(d)) return d;
    } catch (const std::exception&) {
    }
    return text;
}

void emit_json(YAML::Emitter& out, const Json& value) {
    switch (value.type()) {
    case Json::value_t::object:
        out << YAML::BeginMap;
        for (const auto& [k, v] : value.items()) {
            out << YAML::Key << k << YAML::Value;
            emit_json(out, v);
        }
        out << YAML::EndMap;
        break;
    case Json::value_t::array:
        out << YAML::BeginSeq;
        for (const auto& v : value) emit_json(out, v);
        out << YAML::EndSeq;
        break;
    case Json::value_t::string: out << YAML::DoubleQuoted << value.get<std::string>(); break;
    case Json::value_t::null: out << YAML::Null; break;
    default: out << value.dump(); break;
    }
}

std::string format_seconds(std::chrono::milliseconds ms) {
    std::string s = std::to_string(ms.count() / 1000);
    if (const auto frac = ms.count() % 1000) {
        std::string f = std::to_string(frac);
        f.insert(0, 3 - f.size(), '0');
        while (f.back() == '0') f.pop_back();
        s += "." + f;
    }
    return s;
}

Question parse_question(const YAML::Node& node, const std::string& path) {
    Fields f(node, path);
    Question q;
    q.id = as_string(f.require("id"), f.path("id"));
    if (q.id.empty()) throw InvariantError(f.path("id") + " must be nonempty");
    q.prompt = as_string(f.require("prompt"), f.path("prompt"));
    try {
        q.kind = question_kind_from_string(as_string(f.require("kind"), f.path("kind")));
    } catch (const std::invalid_argument& e) {
        throw SchemaError(f.path("kind"), e.what());
    }
    if (auto r = f.get("required")) q.required = as_bool(r, f.path("required"));

    const bool wants_choices = q.kind == QuestionKind::radio || q.kind == QuestionKind::checkbox;
    const bool wants_scale = q.kind == QuestionKind::likert;
    auto choices = f.get("choices");
    auto scale = f.get("scale");
    if (choices && !wants_choices)
        throw SchemaError(f.path("choices"), "only radio and checkbox questions take choices");
    if (scale && !wants_scale) throw SchemaError(f.path("scale"), "only likert questions take a scale");
    if (wants_choices) {
        if (!choices) throw SchemaError(f.path("choices"), "missing required field");
        q.choices = as_string_list(choices, f.path("choices"));
        if (q.choices.size() < 2) throw InvariantError(f.path("choices") + " needs at least 2 entries");
        std::set<std::string> uniq(q.choices.begin(), q.choices.end());
        if (uniq.size() != q.choices.size()) throw InvariantError(f.path("choices") + " has duplicate entries");
    }
    if (wants_scale) {
        if (!scale) throw SchemaError(f.path("scale"), "missing required field");
        if (!scale.IsSequence()) throw SchemaError(f.path("scale"), "expected a list");
        for (std::size_t i = 0; i < scale.size(); ++i) {
            const auto p = index_path(f.path("scale"), i);
            ScalePoint point;
            if (scale[i].IsScalar()) {
                point.value = static_cast<int>(i + 1);
                point.label = scale[i].Scalar();
            } else {
                Fields pf(scale[i], p);
                point.value = static_cast<int>(as_int(pf.require("value"), pf.path("value")));
                point.label = as_string(pf.require("label"), pf.path("label"));
                pf.finish();
            }
            if (point.label.empty()) throw InvariantError(p + " label must be nonempty");
            q.scale.push_back(std::move(point));
        }
        if (q.scale.size() < 2) throw InvariantError(f.path("scale") + " needs at least 2 points");
        std::set<int> values;
        for (const auto& pt : q.scale)
            if (!values.insert(pt.value).second)
                throw InvariantError(f.path("scale") + " repeats value " + std::to_string(pt.value));
    }
    f.finish();
    return q;
}

BotEndpointSpec parse_bot(const YAML::Node& node, const std::string& path) {
    Fields f(node, path);
    BotEndpointSpec bot;
    bot.name = as_string(f.require("name"), f.path("name"));
    if (bot.name.empty()) throw InvariantError(f.path("name") + " must be nonempty");
    bot.base_url = as_string(f.require("base_url"), f.path("base_url"));
    if (!parse_url(bot.base_url)) throw SchemaError(f.path("base_url"), "malformed url '" + bot.base_url + "'");
    if (auto t = f.get("timeout")) {
        const double seconds = as_double(t, f.path("timeout"));
        if (!(seconds > 0) || seconds > 86'400) throw InvariantError(f.path("timeout") + " must be > 0 seconds");
        bot.timeout = std::chrono::milliseconds(std::llround(seconds * 1000));
        if (bot.timeout.count() == 0) throw InvariantError(f.path("timeout") + " must be at least 1ms");
    }
    if (auto r = f.get("max_retries")) {
        const auto v = as_int(r, f.path("max_retries"));
        if (v < 0 || v > 100) throw InvariantError(f.path("max_retries") + " must be in [0, 100]");
        bot.max_retries = static_cast<int>(v);
    }
    if (auto p = f.get("default_params")) {
        if (!p.IsMap()) throw SchemaError(f.path("default_params"), "expected a mapping");
        bot.default_params = yaml_to_json(p, f.path("default_params"));
    }
    f.finish();
    return bot;
}

TaskConfig parse_root(const YAML::Node& root, const ConfigContext& ctx) {
    Fields top(root, "");
    TaskConfig cfg;
    cfg.task_name = as_string(top.require("task_name"), "task_name");
    if (cfg.task_name.empty()) throw InvariantError("task_name must be nonempty");

    {
        Fields f(top.require("chat"), "chat");
        auto& chat = cfg.chat;
        const auto turns = as_int(f.require("human_turns_required"), f.path("human_turns_required"));
        if (turns < 0 || turns > 10'000) throw InvariantError("chat.human_turns_required must be in [0, 10000]");
        chat.human_turns_required = static_cast<int>(turns);
        if (auto n = f.get("humans_per_thread")) {
            const auto v = as_int(n, f.path("humans_per_thread"));
            if (v < 1 || v > 1000) throw InvariantError("chat.humans_per_thread must be positive");
            chat.humans_per_thread = static_cast<int>(v);
        }
        if (auto n = f.get("bots_per_thread")) {
            const auto v = as_int(n, f.path("bots_per_thread"));
            if (v < 0 || v > 1000) throw InvariantError("chat.bots_per_thread must be nonnegative");
            chat.bots_per_thread = static_cast<int>(v);
        }
        if (auto n = f.get("policy_name")) chat.policy_name = as_string(n, f.path("policy_name"));
        if (!ctx.known_policies.empty() &&
            std::find(ctx.known_policies.begin(), ctx.known_policies.end(), chat.policy_name) ==
                ctx.known_policies.end())
            throw InvariantError("chat.policy_name '" + chat.policy_name + "' is not a registered policy");
        if (auto n = f.get("allow_chat_after_done")) chat.allow_chat_after_done = as_bool(n, f.path("allow_chat_after_done"));
        f.finish();
    }

    {
        Fields f(top.require("survey"), "survey");
        auto list = f.require("questions");
        if (!list.IsSequence()) throw SchemaError("survey.questions", "expected a list");
        std::set<std::string> ids;
        for (std::size_t i = 0; i < list.size(); ++i) {
            auto q = parse_question(list[i], index_path("survey.questions", i));
            if (!ids.insert(q.id).second) throw InvariantError("duplicate question id '" + q.id + "'");
            cfg.survey.questions.push_back(std::move(q));
        }
        if (cfg.survey.questions.empty()) throw InvariantError("survey.questions must not be empty");
        f.finish();
    }

    {
        Fields f(top.require("onboarding"), "onboarding");
        auto file = std::filesystem::path(as_string(f.require("agreement_file"), f.path("agreement_file")));
        if (file.empty()) throw InvariantError("onboarding.agreement_file must be nonempty");
        if (file.is_relative()) file = ctx.base_dir / file;
        cfg.onboarding.agreement_file = file.lexically_normal();
        if (ctx.check_files) {
            std::ifstream probe(cfg.onboarding.agreement_file);
            if (!probe) throw InvariantError("onboarding.agreement_file '" + cfg.onboarding.agreement_file.string() +
                                             "' is not readable");
        }
        if (auto n = f.get("checkbox_texts")) cfg.onboarding.checkbox_texts = as_string_list(n, f.path("checkbox_texts"));
        f.finish();
    }

    if (auto node = top.get("limits")) {
        Fields f(node, "limits");
        cfg.limits.max_threads_per_worker = as_limit(f.get("max_threads_per_worker"), f.path("max_threads_per_worker"));
        cfg.limits.max_threads_per_topic = as_limit(f.get("max_threads_per_topic"), f.path("max_threads_per_topic"));
        f.finish();
    }

    if (auto node = top.get("crowd")) {
        Fields f(node, "crowd");
        auto& crowd = cfg.crowd;
        const auto platform = as_string(f.require("platform"), f.path("platform"));
        if (platform == "none") crowd.platform = CrowdPlatform::none;
        else if (platform == "mock_mturk") crowd.platform = CrowdPlatform::mock_mturk;
        else if (platform == "external_url") crowd.platform = CrowdPlatform::external_url;
        else throw SchemaError("crowd.platform", "expected none, mock_mturk or external_url, got '" + platform + "'");
        if (auto r = f.get("reward"); r && !r.IsNull()) {
            try {
                crowd.reward = Money::parse(as_string(r, f.path("reward")));
            } catch (const std::invalid_argument& e) {
                throw SchemaError("crowd.reward", e.what());
            }
            if (crowd.reward->is_negative()) throw InvariantError("crowd.reward must be nonnegative");
        }
        if (crowd.platform != CrowdPlatform::none && !crowd.reward)
            throw SchemaError("crowd.reward", "missing required field (platform is not none)");
        if (auto n = f.get("title")) crowd.title = as_string(n, f.path("title"));
        if (auto n = f.get("description")) crowd.description = as_string(n, f.path("description"));
        f.finish();
    }

    if (auto list = top.get("bots")) {
        if (!list.IsSequence()) throw SchemaError("bots", "expected a list");
        std::set<std::string> names;
        for (std::size_t i = 0; i < list.size(); ++i) {
            auto bot = parse_bot(list[i], index_path("bots", i));
            if (!names.insert(bot.name).second) throw InvariantError("duplicate bot name '" + bot.name + "'");
            cfg.bots.push_back(std::move(bot));
        }
    }
    if (static_cast<int>(cfg.bots.size()) < cfg.chat.bots_per_thread)
        throw InvariantError("bots lists " + std::to_string(cfg.bots.size()) + " endpoint(s) but chat.bots_per_thread is " +
                             std::to_string(cfg.chat.bots_per_thread));

    {
        Fields f(top.require("instance"), "instance");
        auto& inst = cfg.instance;
        const auto port = as_int(f.require("tcp_port"), f.path("tcp_port"));
        if (port < 1 || port > 65535) throw InvariantError("instance.tcp_port must be in [1, 65535]");
        inst.tcp_port = static_cast<int>(port);
        if (auto n = f.get("path_prefix")) inst.path_prefix = normalize_path_prefix(as_string(n, f.path("path_prefix")));
        if (auto n = f.get("public_url")) {
            inst.public_url = as_string(n, f.path("public_url"));
            auto url = parse_url(inst.public_url);
            if (!url || url->scheme == "inproc" || !url->path.empty())
                throw SchemaError("instance.public_url", "expected scheme://host[:port]");
            inst.public_url = url->origin();
        } else {
            inst.public_url = "http://127.0.0.1:" + std::to_string(inst.tcp_port);
        }
        if (auto n = f.get("store_path")) inst.store_path = as_string(n, f.path("store_path"));
        if (inst.store_path.empty()) throw InvariantError("instance.store_path must be nonempty");
        if (auto n = f.get("long_poll_seconds")) {
            const auto v = as_int(n, f.path("long_poll_seconds"));
            if (v < 0 || v > 600) throw InvariantError("instance.long_poll_seconds must be in [0, 600]");
            inst.long_poll_seconds = static_cast<int>(v);
        }
        f.finish();
    }

    top.finish();
    return cfg;
}

} // namespace

TaskConfig parse_task_config(std::string_view yaml_text, const ConfigContext& context) {
    YAML::Node root;
    try {
        root = YAML::Load(std::string(yaml_text));
    } catch (const YAML::ParserException& e) {
        throw SyntaxError(e.msg, e.mark.line + 1, e.mark.column + 1);
    }
    if (!root || root.IsNull()) throw SyntaxError("empty document", 1, 1);
    try {
        return parse_root(root, context);
    } catch (const YAML::Exception& e) {
        throw SchemaError("", e.what());
    }
}

TaskConfig load_task_config(const std::filesystem::path& file, ConfigContext context) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + file.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    context.base_dir = std::filesystem::absolute(file).parent_path();
    return parse_task_config(buf.str(), context);
}

std::string serialize_task_config(const TaskConfig& c) {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "task_name" << YAML::Value << YAML::DoubleQuoted << c.task_name;

    out << YAML::Key << "chat" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "human_turns_required" << YAML::Value << c.chat.human_turns_required;
    out << YAML::Key << "humans_per_thread" << YAML::Value << c.chat.humans_per_thread;
    out << YAML::Key << "bots_per_thread" << YAML::Value << c.chat.bots_per_thread;
    out << YAML::Key << "policy_name" << YAML::Value << YAML::DoubleQuoted << c.chat.policy_name;
    out << YAML::Key << "allow_chat_after_done" << YAML::Value << c.chat.allow_chat_after_done;
    out << YAML::EndMap;

    out << YAML::Key << "survey" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "questions" << YAML::Value << YAML::BeginSeq;
    for (const auto& q : c.survey.questions) {
        out << YAML::BeginMap;
        out << YAML::Key << "id" << YAML::Value << YAML::DoubleQuoted << q.id;
        out << YAML::Key << "prompt" << YAML::Value << YAML::DoubleQuoted << q.prompt;
        out << YAML::Key << "kind" << YAML::Value << std::string(to_string(q.kind));
        out << YAML::Key << "required" << YAML::Value << q.required;
        if (!q.choices.empty()) {
            out << YAML::Key << "choices" << YAML::Value << YAML::BeginSeq;
            for (const auto& ch : q.choices) out << YAML::DoubleQuoted << ch;
            out << YAML::EndSeq;
        }
        if (!q.scale.empty()) {
            out << YAML::Key << "scale" << YAML::Value << YAML::BeginSeq;
            for (const auto& p : q.scale) {
                out << YAML::Flow << YAML::BeginMap;
                out << YAML::Key << "value" << YAML::Value << p.value;
                out << YAML::Key << "label" << YAML::Value << YAML::DoubleQuoted << p.label;
                out << YAML::EndMap;
            }
            out << YAML::EndSeq;
        }
        out << YAML::EndMap;
    }
    out << YAML::EndSeq << YAML::EndMap;

    out << YAML::Key << "onboarding" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "agreement_file" << YAML::Value << YAML::DoubleQuoted << c.onboarding.agreement_file.string();
    out << YAML::Key << "checkbox_texts" << YAML::Value << YAML::BeginSeq;
    for (const auto& t : c.onboarding.checkbox_texts) out << YAML::DoubleQuoted << t;
    out << YAML::EndSeq << YAML::EndMap;

    auto limit = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("unlimited"); };
    out << YAML::Key << "limits" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "max_threads_per_worker" << YAML::Value << limit(c.limits.max_threads_per_worker);
    out << YAML::Key << "max_threads_per_topic" << YAML::Value << limit(c.limits.max_threads_per_topic);
    out << YAML::EndMap;

    out << YAML::Key << "crowd" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "platform" << YAML::Value << std::string(to_string(c.crowd.platform));
    if (c.crowd.reward) out << YAML::Key << "reward" << YAML::Value << YAML::DoubleQuoted << c.crowd.reward->to_string();
    out << YAML::Key << "title" << YAML::Value << YAML::DoubleQuoted << c.crowd.title;
    out << YAML::Key << "description" << YAML::Value << YAML::DoubleQuoted << c.crowd.description;
    out << YAML::EndMap;

    out << YAML::Key << "bots" << YAML::Value << YAML::BeginSeq;
    for (const auto& b : c.bots) {
        out << YAML::BeginMap;
        out << YAML::Key << "name" << YAML::Value << YAML::DoubleQuoted << b.name;
        out << YAML::Key << "base_url" << YAML::Value << YAML::DoubleQuoted << b.base_url;
        out << YAML::Key << "timeout" << YAML::Value << format_seconds(b.timeout);
        out << YAML::Key << "max_retries" << YAML::Value << b.max_retries;
        out << YAML::Key << "default_params" << YAML::Value;
        emit_json(out, b.default_params.is_object() ? b.default_params : Params::object());
        out << YAML::EndMap;
    }
    out << YAML::EndSeq;

    out << YAML::Key << "instance" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "tcp_port" << YAML::Value << c.instance.tcp_port;
    out << YAML::Key << "path_prefix" << YAML::Value << YAML::DoubleQuoted << c.instance.path_prefix;
    out << YAML::Key << "public_url" << YAML::Value << YAML::DoubleQuoted << c.instance.public_url;
    out << YAML::Key << "store_path" << YAML::Value << YAML::DoubleQuoted << c.instance.store_path;
    out << YAML::Key << "long_poll_seconds" << YAML::Value << c.instance.long_poll_seconds;
    out << YAML::EndMap;

    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

std::string config_identity(const TaskConfig& config) {
    return sha256_hex(serialize_task_config(config)).substr(0, 16);
}

} // namespace evalroom
