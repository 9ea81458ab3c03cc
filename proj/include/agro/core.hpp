#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "agro/config.hpp"
#include "agro/json.hpp"

namespace agro {

// ---------------------------------------------------------------------------
// Query side
// ---------------------------------------------------------------------------

struct ImageRef {
    std::string id;   // unique within one query
    std::string uri;  // file path or URL
    std::string caption;
};

struct McqOption {
    char letter = 0;  // uppercase A-J
    std::string text;
};

constexpr std::size_t kMaxImagesPerQuery = 10;

struct Query {
    std::string text;
    std::vector<ImageRef> images;       // 0-10
    std::vector<McqOption> options;     // empty for free-text questions
    std::map<std::string, std::string> metadata;  // optional keys: time, location
    std::uint64_t seed = 0;

    bool is_mcq() const { return !options.empty(); }
    bool has_option_letter(char letter) const;

    /// Throws ValidationError naming the offending field.
    void validate() const;

    Json to_json() const;
    static Query from_json(const Json& j);
};

// ---------------------------------------------------------------------------
// Evidence
// ---------------------------------------------------------------------------

struct Evidence {
    std::uint64_t id = 0;       // strictly increasing within a session
    std::string source_tool;    // registered tool name or "none"
    std::string query_used;     // keyword string handed to the tool
    std::string content;
    std::uint64_t retrieved_at = 0;
    Json metadata = Json::object();

    Json to_json() const;
};

/// Append-only across the session lifetime; ids strictly increasing.
class EvidenceSet {
public:
    void append(Evidence item);  // throws SequencingError on non-increasing id
    const std::vector<Evidence>& items() const { return items_; }
    bool empty() const { return items_.empty(); }
    std::size_t size() const { return items_.size(); }
    std::uint64_t next_id() const { return next_id_; }

    Json to_json() const;

private:
    std::vector<Evidence> items_;
    std::uint64_t next_id_ = 1;
};

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

enum class Role {
    manager,
    retriever,
    reflector,
    answerer_1,
    answerer_2,
    improver,
    tool,
    backend,
};

enum class EventType {
    session_start,
    tool_decided,
    tool_executed,
    reflect_scored,
    reflect_verdict,
    query_reformulated,
    draft_produced,
    disagreement,
    reconsidered,
    improve_scored,
    improve_verdict,
    feedback_issued,
    session_end,
};

std::string to_string(Role r);
std::string to_string(EventType t);
Role role_from_string(const std::string& s);
EventType event_type_from_string(const std::string& s);

struct TraceEvent {
    std::uint64_t seq = 0;
    std::string session_id;
    Role role = Role::manager;
    EventType event_type = EventType::session_start;
    Json payload = Json::object();
    std::uint64_t ts = 0;

    /// Keys in the wire order: seq, session_id, role, event_type, payload, ts.
    Json to_json() const;
    static TraceEvent from_json(const Json& j);

    bool operator==(const TraceEvent& other) const;
};

// ---------------------------------------------------------------------------
// Clock
// ---------------------------------------------------------------------------

/// Timestamps are injectable so mock-mode runs are byte-identical.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::uint64_t now() = 0;
};

/// Monotonic counter starting at 0; one tick per call.
class LogicalClock : public Clock {
public:
    std::uint64_t now() override { return next_++; }

private:
    std::uint64_t next_ = 0;
};

/// Milliseconds since the Unix epoch.
class WallClock : public Clock {
public:
    std::uint64_t now() override;
};

// ---------------------------------------------------------------------------
// Session state
// ---------------------------------------------------------------------------

enum class SessionStatus { running, answered, answered_unverified, failed };

std::string to_string(SessionStatus s);

/// Answer draft state lives in answerer.hpp; the session keeps drafts as JSON
/// snapshots inside trace payloads and counters here.
struct SessionState {
    std::string session_id;
    Query query;
    EvidenceSet evidence;
    std::vector<TraceEvent> history;
    int reflect_iters = 0;
    int improve_iters = 0;
    SessionStatus status = SessionStatus::running;

    std::uint64_t next_seq() const;

    /// Most recent event of the given type, if any.
    const TraceEvent* last_event(EventType type) const;
};

/// Validates the query, then starts a session with an empty evidence set and
/// a session_start event whose payload embeds the resolved config, the query
/// and (in mock mode) the loaded script entries.
SessionState new_session(const Query& query, const EngineConfig& config, Clock& clock,
                         const Json& script_entries = Json());

/// Appends one event with seq = previous max + 1. Throws SequencingError if
/// the session has already ended (unless the event is the session_end itself).
TraceEvent& record_event(SessionState& state, Role role, EventType type, Json payload,
                         Clock& clock);

/// Enforces running -> {answered, answered_unverified, failed}.
void set_status(SessionState& state, SessionStatus next);

// ---------------------------------------------------------------------------
// Trace serialization: newline-delimited JSON, one event per line
// ---------------------------------------------------------------------------

std::string serialize_trace(const SessionState& state);
std::string serialize_trace(const std::vector<TraceEvent>& events);

/// Throws ParseError carrying the 1-based line number of the first bad line.
std::vector<TraceEvent> deserialize_trace(const std::string& bytes);

/// Structural checks used by replay: seq is a contiguous 0..n range, exactly
/// one session_start (first), at most one session_end (last).
void validate_trace(const std::vector<TraceEvent>& events);

std::string derive_session_id(const Query& query);

}  // namespace agro
