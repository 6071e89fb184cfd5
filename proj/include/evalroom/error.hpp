#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace evalroom {

/// Base of every domain error. `code()` is the stable machine-readable name
/// that also appears in JSON error bodies; `http_status()` is what the wire
/// layer answers with.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message, int http_status = 400)
        : std::runtime_error(message), code_(std::move(code)), http_status_(http_status) {}

    const std::string& code() const noexcept { return code_; }
    int http_status() const noexcept { return http_status_; }

private:
    std::string code_;
    int http_status_;
};

// config-core

class SyntaxError : public Error {
public:
    SyntaxError(const std::string& message, int line, int column)
        : Error("SyntaxError", message, 400), line_(line), column_(column) {}
    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

class SchemaError : public Error {
public:
    SchemaError(std::string path, const std::string& message)
        : Error("SchemaError", path.empty() ? message : path + ": " + message, 400),
          path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class InvariantError : public Error {
public:
    explicit InvariantError(const std::string& message) : Error("InvariantError", message, 400) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error("ConfigError", message, 409) {}
};

// generic lookups

class NotFound : public Error {
public:
    explicit NotFound(const std::string& what) : Error("NotFound", what + " not found", 404) {}
};

// room-engine

class WrongState : public Error {
public:
    explicit WrongState(const std::string& message) : Error("WrongState", message, 409) {}
};

class IllegalTransition : public Error {
public:
    explicit IllegalTransition(const std::string& message) : Error("IllegalTransition", message, 500) {}
};

class TurnViolation : public Error {
public:
    explicit TurnViolation(const std::string& message) : Error("TurnViolation", message, 409) {}
};

class EmptyMessage : public Error {
public:
    EmptyMessage() : Error("EmptyMessage", "message text is empty", 400) {}
};

class LimitExceeded : public Error {
public:
    explicit LimitExceeded(const std::string& message) : Error("LimitExceeded", message, 403) {}
};

class ThreadFull : public Error {
public:
    explicit ThreadFull(const std::string& thread_id)
        : Error("ThreadFull", "thread " + thread_id + " has no free seat", 409) {}
};

class NotParticipant : public Error {
public:
    explicit NotParticipant(const std::string& user_id)
        : Error("NotParticipant", user_id + " is not a human participant of this thread", 403) {}
};

class NotConsented : public Error {
public:
    NotConsented() : Error("NotConsented", "onboarding agreement not accepted", 403) {}
};

class AlreadySubmitted : public Error {
public:
    explicit AlreadySubmitted(const std::string& user_id)
        : Error("AlreadySubmitted", user_id + " already submitted ratings", 409) {}
};

struct Violation {
    std::string question_id;
    std::string problem;
    std::string value; // offending value as JSON text, empty when missing

    bool operator==(const Violation&) const = default;
};

class ValidationFailed : public Error {
public:
    explicit ValidationFailed(std::vector<Violation> violations);
    const std::vector<Violation>& violations() const noexcept { return violations_; }

private:
    std::vector<Violation> violations_;
};

class Deleted : public Error {
public:
    explicit Deleted(const std::string& thread_id)
        : Error("Deleted", "thread " + thread_id + " is deleted", 410) {}
};

// bot-gateway

class BotUnavailable : public Error {
public:
    explicit BotUnavailable(const std::string& name)
        : Error("BotUnavailable", "bot endpoint '" + name + "' is not registered", 409) {}
};

class DuplicateName : public Error {
public:
    explicit DuplicateName(const std::string& name)
        : Error("DuplicateName", "bot endpoint '" + name + "' already registered", 409) {}
};

class MalformedUrl : public Error {
public:
    explicit MalformedUrl(const std::string& url)
        : Error("MalformedUrl", "malformed url '" + url + "'", 400) {}
};

class EmptyScript : public Error {
public:
    EmptyScript() : Error("EmptyScript", "scripted bot needs at least one line", 400) {}
};

// crowd-connect

class PlatformRejected : public Error {
public:
    explicit PlatformRejected(const std::string& message) : Error("PlatformRejected", message, 502) {}
};

class UnknownWorker : public Error {
public:
    explicit UnknownWorker(const std::string& worker)
        : Error("UnknownWorker", "unknown worker '" + worker + "'", 404) {}
};

class UnknownAssignment : public Error {
public:
    explicit UnknownAssignment(const std::string& assignment)
        : Error("UnknownAssignment", "no payable assignment '" + assignment + "'", 404) {}
};

class NonPositiveAmount : public Error {
public:
    NonPositiveAmount() : Error("NonPositiveAmount", "bonus amount must be positive", 400) {}
};

class LedgerWriteFailed : public Error {
public:
    explicit LedgerWriteFailed(const std::string& message)
        : Error("LedgerWriteFailed", message, 500) {}
};

// http-service / accounts

class IncompleteConsent : public Error {
public:
    explicit IncompleteConsent(std::vector<std::size_t> unchecked);
    const std::vector<std::size_t>& unchecked() const noexcept { return unchecked_; }

private:
    std::vector<std::size_t> unchecked_;
};

class Unauthorized : public Error {
public:
    explicit Unauthorized(const std::string& message) : Error("Unauthorized", message, 401) {}
};

class Forbidden : public Error {
public:
    explicit Forbidden(const std::string& message) : Error("Forbidden", message, 403) {}
};

class Conflict : public Error {
public:
    explicit Conflict(const std::string& message) : Error("Conflict", message, 409) {}
};

class BadRequest : public Error {
public:
    explicit BadRequest(const std::string& message) : Error("BadRequest", message, 400) {}
};

class TooManyMessages : public Error {
public:
    TooManyMessages() : Error("TooManyMessages", "per-session message cap reached", 429) {}
};

} // namespace evalroom
