#include "agro/core.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>

#include "agro/errors.hpp"

namespace agro {

// ---------------------------------------------------------------------------
// Query
// ---------------------------------------------------------------------------

bool Query::has_option_letter(char letter) const {
    return std::any_of(options.begin(), options.end(),
                       [&](const McqOption& o) { return o.letter == letter; });
}

void Query::validate() const {
    if (text.empty()) throw ValidationError("text", "query text must be non-empty");
    if (images.size() > kMaxImagesPerQuery)
        throw ValidationError("images", "at most 10 images per query, got " +
                                            std::to_string(images.size()));
    std::set<std::string> image_ids;
    for (const auto& img : images) {
        if (img.id.empty()) throw ValidationError("images", "image id must be non-empty");
        if (img.uri.empty())
            throw ValidationError("images", "image '" + img.id + "' has an empty uri");
        if (!image_ids.insert(img.id).second)
            throw ValidationError("images", "duplicate image id '" + img.id + "'");
    }
    std::set<char> letters;
    for (const auto& opt : options) {
        if (opt.letter < 'A' || opt.letter > 'J')
            throw ValidationError("options", std::string("option letter '") + opt.letter +
                                                 "' outside A-J");
        if (!letters.insert(opt.letter).second)
            throw ValidationError("options",
                                  std::string("duplicate option letter '") + opt.letter + "'");
    }
}

Json Query::to_json() const {
    Json imgs = Json::array();
    for (const auto& img : images) {
        Json o{{"id", img.id}, {"uri", img.uri}};
        if (!img.caption.empty()) o["caption"] = img.caption;
        imgs.push_back(o);
    }
    Json opts = Json::array();
    for (const auto& opt : options)
        opts.push_back(Json{{"letter", std::string(1, opt.letter)}, {"text", opt.text}});
    Json meta = Json::object();
    for (const auto& [k, v] : metadata) meta[k] = v;
    return Json{{"text", text}, {"images", imgs}, {"options", opts},
                {"metadata", meta}, {"seed", seed}};
}

Query Query::from_json(const Json& j) {
    Query q;
    q.text = j.value("text", "");
    for (const auto& img : j.value("images", Json::array())) {
        ImageRef ref;
        ref.id = img.value("id", "");
        ref.uri = img.value("uri", "");
        ref.caption = img.value("caption", "");
        q.images.push_back(std::move(ref));
    }
    for (const auto& opt : j.value("options", Json::array())) {
        McqOption o;
        std::string letter = opt.value("letter", "");
        o.letter = letter.empty() ? 0 : letter[0];
        o.text = opt.value("text", "");
        q.options.push_back(std::move(o));
    }
    if (j.contains("metadata")) {
        for (const auto& [k, v] : j.at("metadata").items())
            q.metadata[k] = v.get<std::string>();
    }
    q.seed = j.value("seed", std::uint64_t{0});
    return q;
}

// ---------------------------------------------------------------------------
// Evidence
// ---------------------------------------------------------------------------

Json Evidence::to_json() const {
    return Json{{"id", id},
                {"source_tool", source_tool},
                {"query_used", query_used},
                {"content", content},
                {"retrieved_at", retrieved_at},
                {"metadata", metadata}};
}

void EvidenceSet::append(Evidence item) {
    if (item.id < next_id_)
        throw SequencingError("evidence id " + std::to_string(item.id) +
                              " not increasing (next is " + std::to_string(next_id_) + ")");
    next_id_ = item.id + 1;
    items_.push_back(std::move(item));
}

Json EvidenceSet::to_json() const {
    Json arr = Json::array();
    for (const auto& e : items_) arr.push_back(e.to_json());
    return arr;
}

// ---------------------------------------------------------------------------
// Enums
// ---------------------------------------------------------------------------

std::string to_string(Role r) {
    switch (r) {
        case Role::manager: return "manager";
        case Role::retriever: return "retriever";
        case Role::reflector: return "reflector";
        case Role::answerer_1: return "answerer_1";
        case Role::answerer_2: return "answerer_2";
        case Role::improver: return "improver";
        case Role::tool: return "tool";
        case Role::backend: return "backend";
    }
    return "manager";
}

Role role_from_string(const std::string& s) {
    static const std::map<std::string, Role> table = {
        {"manager", Role::manager},       {"retriever", Role::retriever},
        {"reflector", Role::reflector},   {"answerer_1", Role::answerer_1},
        {"answerer_2", Role::answerer_2}, {"improver", Role::improver},
        {"tool", Role::tool},             {"backend", Role::backend},
    };
    auto it = table.find(s);
    if (it == table.end()) throw ValidationError("role", "unknown role \"" + s + "\"");
    return it->second;
}

std::string to_string(EventType t) {
    switch (t) {
        case EventType::session_start: return "session_start";
        case EventType::tool_decided: return "tool_decided";
        case EventType::tool_executed: return "tool_executed";
        case EventType::reflect_scored: return "reflect_scored";
        case EventType::reflect_verdict: return "reflect_verdict";
        case EventType::query_reformulated: return "query_reformulated";
        case EventType::draft_produced: return "draft_produced";
        case EventType::disagreement: return "disagreement";
        case EventType::reconsidered: return "reconsidered";
        case EventType::improve_scored: return "improve_scored";
        case EventType::improve_verdict: return "improve_verdict";
        case EventType::feedback_issued: return "feedback_issued";
        case EventType::session_end: return "session_end";
    }
    return "session_start";
}

EventType event_type_from_string(const std::string& s) {
    static const std::map<std::string, EventType> table = {
        {"session_start", EventType::session_start},
        {"tool_decided", EventType::tool_decided},
        {"tool_executed", EventType::tool_executed},
        {"reflect_scored", EventType::reflect_scored},
        {"reflect_verdict", EventType::reflect_verdict},
        {"query_reformulated", EventType::query_reformulated},
        {"draft_produced", EventType::draft_produced},
        {"disagreement", EventType::disagreement},
        {"reconsidered", EventType::reconsidered},
        {"improve_scored", EventType::improve_scored},
        {"improve_verdict", EventType::improve_verdict},
        {"feedback_issued", EventType::feedback_issued},
        {"session_end", EventType::session_end},
    };
    auto it = table.find(s);
    if (it == table.end())
        throw ValidationError("event_type", "unknown event type \"" + s + "\"");
    return it->second;
}

std::string to_string(SessionStatus s) {
    switch (s) {
        case SessionStatus::running: return "running";
        case SessionStatus::answered: return "answered";
        case SessionStatus::answered_unverified: return "answered_unverified";
        case SessionStatus::failed: return "failed";
    }
    return "running";
}

// ---------------------------------------------------------------------------
// TraceEvent
// ---------------------------------------------------------------------------

Json TraceEvent::to_json() const {
    return Json{{"seq", seq},
                {"session_id", session_id},
                {"role", to_string(role)},
                {"event_type", to_string(event_type)},
                {"payload", payload},
                {"ts", ts}};
}

TraceEvent TraceEvent::from_json(const Json& j) {
    for (const char* key : {"seq", "session_id", "role", "event_type", "payload", "ts"}) {
        if (!j.contains(key))
            throw ValidationError(key, std::string("missing trace event key \"") + key + "\"");
    }
    TraceEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.session_id = j.at("session_id").get<std::string>();
    e.role = role_from_string(j.at("role").get<std::string>());
    e.event_type = event_type_from_string(j.at("event_type").get<std::string>());
    e.payload = j.at("payload");
    e.ts = j.at("ts").get<std::uint64_t>();
    return e;
}

bool TraceEvent::operator==(const TraceEvent& other) const {
    return seq == other.seq && session_id == other.session_id && role == other.role &&
           event_type == other.event_type && payload == other.payload && ts == other.ts;
}

std::uint64_t WallClock::now() {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

std::uint64_t SessionState::next_seq() const {
    return history.empty() ? 0 : history.back().seq + 1;
}

const TraceEvent* SessionState::last_event(EventType type) const {
    for (auto it = history.rbegin(); it != history.rend(); ++it)
        if (it->event_type == type) return &*it;
    return nullptr;
}

namespace {

// FNV-1a, 64-bit. Session ids and cache keys only need stability, not
// cryptographic strength.
std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 14695981039346656037ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace

std::string derive_session_id(const Query& query) {
    std::uint64_t h = fnv1a(query.text);
    for (const auto& opt : query.options) h = fnv1a(std::string(1, opt.letter) + opt.text, h);
    for (const auto& img : query.images) h = fnv1a(img.id + "|" + img.uri, h);
    h = fnv1a(std::to_string(query.seed), h);
    return "s-" + hex64(h);
}

SessionState new_session(const Query& query, const EngineConfig& config, Clock& clock,
                         const Json& script_entries) {
    query.validate();
    SessionState state;
    state.session_id = derive_session_id(query);
    state.query = query;

    Json payload{{"config", config.to_json()}, {"query", query.to_json()}};
    if (config.mode == RunMode::mock && !script_entries.is_null())
        payload["script"] = script_entries;
    record_event(state, Role::manager, EventType::session_start, std::move(payload), clock);
    return state;
}

TraceEvent& record_event(SessionState& state, Role role, EventType type, Json payload,
                         Clock& clock) {
    if (!state.history.empty() &&
        state.history.back().event_type == EventType::session_end)
        throw SequencingError("event '" + to_string(type) + "' after session_end");
    if (state.status != SessionStatus::running && type != EventType::session_end)
        throw SequencingError("event '" + to_string(type) + "' on a " +
                              to_string(state.status) + " session");
    TraceEvent e;
    e.seq = state.next_seq();
    e.session_id = state.session_id;
    e.role = role;
    e.event_type = type;
    e.payload = std::move(payload);
    e.ts = clock.now();
    state.history.push_back(std::move(e));
    return state.history.back();
}

void set_status(SessionState& state, SessionStatus next) {
    if (state.status != SessionStatus::running)
        throw SequencingError("status already " + to_string(state.status) +
                              ", cannot move to " + to_string(next));
    if (next == SessionStatus::running)
        throw SequencingError("cannot transition back to running");
    state.status = next;
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

std::string serialize_trace(const std::vector<TraceEvent>& events) {
    std::string out;
    for (const auto& e : events) {
        out += e.to_json().dump();
        out += '\n';
    }
    return out;
}

std::string serialize_trace(const SessionState& state) {
    return serialize_trace(state.history);
}

std::vector<TraceEvent> deserialize_trace(const std::string& bytes) {
    std::vector<TraceEvent> events;
    std::istringstream in(bytes);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
        }
        try {
            events.push_back(TraceEvent::from_json(j));
        } catch (const ValidationError& e) {
            throw ParseError(lineno, e.what());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(lineno, std::string("bad field type: ") + e.what());
        }
    }
    return events;
}

void validate_trace(const std::vector<TraceEvent>& events) {
    if (events.empty()) throw SequencingError("trace is empty");
    if (events.front().event_type != EventType::session_start)
        throw SequencingError("first event must be session_start");
    std::size_t end_count = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (events[i].seq != i)
            throw SequencingError("seq gap at position " + std::to_string(i) + ": expected " +
                                  std::to_string(i) + ", got " +
                                  std::to_string(events[i].seq));
        if (events[i].event_type == EventType::session_start && i != 0)
            throw SequencingError("duplicate session_start at seq " + std::to_string(i));
        if (events[i].event_type == EventType::session_end) {
            ++end_count;
            if (i + 1 != events.size())
                throw SequencingError("session_end is not the last event");
        }
    }
    if (end_count > 1) throw SequencingError("multiple session_end events");
}

}  // namespace agro
