#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace agro {

/// Base class for all engine errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid domain object or config value; `field` names the offender.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& msg)
        : Error(field + ": " + msg), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// Event appended out of order (e.g. after session_end) or a broken seq range.
class SequencingError : public Error {
public:
    using Error::Error;
};

/// Malformed trace or fixture line; `line` is 1-based.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& msg)
        : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// HTTP endpoint answered with a non-2xx status.
class ProviderError : public Error {
public:
    ProviderError(int status, const std::string& body_excerpt)
        : Error("provider returned status " + std::to_string(status) + ": " + body_excerpt),
          status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

/// Could not reach the endpoint at all (connection, DNS, ...).
class TransportError : public Error {
public:
    using Error::Error;
};

class TimeoutError : public TransportError {
public:
    using TransportError::TransportError;
};

/// Scripted mock ran out of matching entries for a request.
class ScriptExhaustedError : public Error {
public:
    explicit ScriptExhaustedError(const std::string& step)
        : Error("no unconsumed mock entry matches step '" + step + "'"), step_(step) {}
    const std::string& step() const { return step_; }

private:
    std::string step_;
};

/// Structured completion failed schema validation even after the repair retry.
/// Carries both raw model outputs for diagnosis.
class StructuredParseError : public Error {
public:
    StructuredParseError(std::string first, std::string retry, const std::string& why)
        : Error("structured parse failed after retry: " + why),
          first_(std::move(first)),
          retry_(std::move(retry)) {}
    const std::string& first_text() const { return first_; }
    const std::string& retry_text() const { return retry_; }

private:
    std::string first_;
    std::string retry_;
};

/// Unknown tool name or duplicate registration.
class RegistryError : public Error {
public:
    using Error::Error;
};

/// Caller violated an operation precondition.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Dataset or fixture failed validation; collects every offending line.
class LoadError : public Error {
public:
    LoadError(const std::string& what, std::vector<std::string> problems)
        : Error(what), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

class AggregationError : public Error {
public:
    using Error::Error;
};

/// Trace cannot be replayed (live-mode trace, missing script, ...).
class ReplayError : public Error {
public:
    using Error::Error;
};

/// Session could not produce an answer. `transport_cause` distinguishes
/// provider/transport failures from everything else for exit-code mapping.
class SessionFailure : public Error {
public:
    SessionFailure(const std::string& msg, bool transport_cause)
        : Error(msg), transport_cause_(transport_cause) {}
    bool transport_cause() const { return transport_cause_; }

private:
    bool transport_cause_;
};

}  // namespace agro
