#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "agro/config.hpp"
#include "agro/core.hpp"
#include "agro/json.hpp"

namespace agro::backend {

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

struct MessagePart {
    enum class Kind { text, image };
    Kind kind = Kind::text;
    std::string text;  // when kind == text
    ImageRef image;    // when kind == image

    static MessagePart make_text(std::string t);
    static MessagePart make_image(ImageRef ref);
};

struct ChatMessage {
    enum class Role { system, user, assistant };
    Role role = Role::user;
    std::vector<MessagePart> parts;

    static ChatMessage system_text(std::string text);
    static ChatMessage user_text(std::string text);

    /// Image parts are only legal in user messages; every message needs at
    /// least one part.
    void validate() const;
};

std::string to_string(ChatMessage::Role r);

struct ChatRequest {
    std::string model_id;
    std::vector<ChatMessage> messages;
    double temperature = 0.2;
    std::optional<std::uint64_t> seed;
    int max_tokens = 1024;
    Json response_schema;  // null when the call is free-form

    // Which pipeline step issued the call. Scripted mocks match on it and it
    // keys trace payloads; never sent over the wire.
    std::string step;

    void validate() const;

    /// Canonical serialization of every field, used for cache keys.
    Json to_json() const;
};

struct ChatResponse {
    enum class FinishReason { stop, length, error };
    std::string text;
    FinishReason finish_reason = FinishReason::stop;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
};

std::string to_string(ChatResponse::FinishReason r);

/// Flat text view of a request: role-tagged text parts with [image:<id>]
/// placeholders. This is what mock regexes run against and what trace
/// payloads store as the rendered prompt.
std::string render_prompt(const ChatRequest& request);

// ---------------------------------------------------------------------------
// Backend interface
// ---------------------------------------------------------------------------

class Backend {
public:
    virtual ~Backend() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// HTTP provider (OpenAI-compatible chat completions)
// ---------------------------------------------------------------------------

class HttpBackend : public Backend {
public:
    /// base_url like "http://host:port" or "https://host". api_key goes out
    /// as a bearer token; empty means no Authorization header.
    HttpBackend(std::string base_url, std::string api_key, RetryConfig retry,
                int timeout_ms);

    ChatResponse complete(const ChatRequest& request) override;

    /// Request body per the wire contract; exposed for tests.
    static Json build_body(const ChatRequest& request);

    /// Reads AGRO_BASE_URL / AGRO_API_KEY when the config leaves them empty.
    static std::unique_ptr<HttpBackend> from_config(const EngineConfig& config);

private:
    std::string base_url_;
    std::string api_key_;
    RetryConfig retry_;
    int timeout_ms_;
};

/// File uris become base64 data URLs; http(s)/data uris pass through.
std::string image_part_url(const ImageRef& ref);
std::string base64_encode(const std::string& bytes);

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

struct ScriptEntry {
    std::string match;     // literal step key, or a regex over the rendered prompt
    std::string response;
};

/// Deterministic stand-in for the model: the first unconsumed entry whose
/// match equals the request's step key (or whose regex hits the rendered
/// prompt) supplies the response. A request no entry matches is an error,
/// never a silent empty answer.
class ScriptedMockBackend : public Backend {
public:
    explicit ScriptedMockBackend(std::vector<ScriptEntry> entries);

    ChatResponse complete(const ChatRequest& request) override;

    std::size_t call_count() const { return calls_.load(); }
    std::size_t consumed_count() const;

    static std::vector<ScriptEntry> parse_script(const Json& j);
    static std::vector<ScriptEntry> load_script_file(const std::string& path);
    static Json script_to_json(const std::vector<ScriptEntry>& entries);

private:
    struct Slot {
        ScriptEntry entry;
        bool consumed = false;
    };
    mutable std::mutex mutex_;
    std::vector<Slot> slots_;
    std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

std::string cache_key(const ChatRequest& request);

/// Memoizes complete() by cache_key. Concurrent read/write is safe;
/// last-writer-wins on identical keys.
class CachingBackend : public Backend {
public:
    explicit CachingBackend(std::shared_ptr<Backend> inner);

    ChatResponse complete(const ChatRequest& request) override;

    std::size_t hits() const { return hits_.load(); }

private:
    std::shared_ptr<Backend> inner_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, ChatResponse> cache_;
    std::atomic<std::size_t> hits_{0};
};

// ---------------------------------------------------------------------------
// Structured output
// ---------------------------------------------------------------------------

/// Validates `value` against the schema subset this project uses: type
/// (single or list), required, properties, items, enum. Returns problems,
/// empty when valid.
std::vector<std::string> validate_schema(const Json& value, const Json& schema);

/// Strips Markdown code fences and surrounding whitespace.
std::string strip_code_fences(const std::string& text);

struct StructuredResult {
    Json value;
    int backend_calls = 0;         // 1, or 2 when the repair retry fired
    std::string prompt;            // rendered prompt of the first call
    std::string raw_text;          // text the accepted value was parsed from
};

/// One completion parsed against `schema`; on failure retries once with the
/// validation error appended to the prompt, then throws StructuredParseError.
/// finish_reason=length counts as a retryable failure.
StructuredResult complete_structured(Backend& backend, ChatRequest request,
                                     const Json& schema);

}  // namespace agro::backend
