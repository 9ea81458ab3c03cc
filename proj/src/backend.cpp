#include "agro/backend.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "agro/errors.hpp"

namespace agro::backend {

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

MessagePart MessagePart::make_text(std::string t) {
    MessagePart p;
    p.kind = Kind::text;
    p.text = std::move(t);
    return p;
}

MessagePart MessagePart::make_image(ImageRef ref) {
    MessagePart p;
    p.kind = Kind::image;
    p.image = std::move(ref);
    return p;
}

ChatMessage ChatMessage::system_text(std::string text) {
    ChatMessage m;
    m.role = Role::system;
    m.parts.push_back(MessagePart::make_text(std::move(text)));
    return m;
}

ChatMessage ChatMessage::user_text(std::string text) {
    ChatMessage m;
    m.role = Role::user;
    m.parts.push_back(MessagePart::make_text(std::move(text)));
    return m;
}

void ChatMessage::validate() const {
    if (parts.empty()) throw ValidationError("parts", "message needs at least one part");
    if (role != Role::user) {
        for (const auto& p : parts)
            if (p.kind == MessagePart::Kind::image)
                throw ValidationError("parts", "image parts only allowed in user messages");
    }
}

std::string to_string(ChatMessage::Role r) {
    switch (r) {
        case ChatMessage::Role::system: return "system";
        case ChatMessage::Role::user: return "user";
        case ChatMessage::Role::assistant: return "assistant";
    }
    return "user";
}

std::string to_string(ChatResponse::FinishReason r) {
    switch (r) {
        case ChatResponse::FinishReason::stop: return "stop";
        case ChatResponse::FinishReason::length: return "length";
        case ChatResponse::FinishReason::error: return "error";
    }
    return "stop";
}

void ChatRequest::validate() const {
    if (messages.empty()) throw ValidationError("messages", "request needs at least one message");
    if (temperature < 0.0 || temperature > 2.0)
        throw ValidationError("temperature", "must be in [0,2]");
    if (max_tokens < 1) throw ValidationError("max_tokens", "must be positive");
    for (const auto& m : messages) m.validate();
}

Json ChatRequest::to_json() const {
    Json msgs = Json::array();
    for (const auto& m : messages) {
        Json parts = Json::array();
        for (const auto& p : m.parts) {
            if (p.kind == MessagePart::Kind::text)
                parts.push_back(Json{{"text", p.text}});
            else
                parts.push_back(Json{{"image", Json{{"id", p.image.id}, {"uri", p.image.uri}}}});
        }
        msgs.push_back(Json{{"role", to_string(m.role)}, {"parts", parts}});
    }
    Json j{{"model_id", model_id},
           {"messages", msgs},
           {"temperature", temperature},
           {"max_tokens", max_tokens},
           {"step", step}};
    if (seed) j["seed"] = *seed;
    if (!response_schema.is_null()) j["response_schema"] = response_schema;
    return j;
}

std::string render_prompt(const ChatRequest& request) {
    std::string out;
    for (const auto& m : request.messages) {
        out += "[" + to_string(m.role) + "]\n";
        for (const auto& p : m.parts) {
            if (p.kind == MessagePart::Kind::text)
                out += p.text;
            else
                out += "[image:" + p.image.id + "]";
            out += '\n';
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// HTTP provider
// ---------------------------------------------------------------------------

namespace {

bool is_remote_uri(const std::string& uri) {
    return uri.rfind("http://", 0) == 0 || uri.rfind("https://", 0) == 0 ||
           uri.rfind("data:", 0) == 0;
}

std::string mime_for_path(const std::string& path) {
    auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == "jpg" || ext == "jpeg") return "image/jpeg";
    if (ext == "png") return "image/png";
    if (ext == "gif") return "image/gif";
    if (ext == "webp") return "image/webp";
    return "application/octet-stream";
}

}  // namespace

std::string base64_encode(const std::string& bytes) {
    static const char* table =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < bytes.size()) {
        std::uint32_t n = (static_cast<unsigned char>(bytes[i]) << 16) |
                          (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                          static_cast<unsigned char>(bytes[i + 2]);
        out += table[(n >> 18) & 63];
        out += table[(n >> 12) & 63];
        out += table[(n >> 6) & 63];
        out += table[n & 63];
        i += 3;
    }
    if (i + 1 == bytes.size()) {
        std::uint32_t n = static_cast<unsigned char>(bytes[i]) << 16;
        out += table[(n >> 18) & 63];
        out += table[(n >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        std::uint32_t n = (static_cast<unsigned char>(bytes[i]) << 16) |
                          (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out += table[(n >> 18) & 63];
        out += table[(n >> 12) & 63];
        out += table[(n >> 6) & 63];
        out += '=';
    }
    return out;
}

std::string image_part_url(const ImageRef& ref) {
    if (is_remote_uri(ref.uri)) return ref.uri;
    std::ifstream in(ref.uri, std::ios::binary);
    if (!in) throw TransportError("cannot read image file: " + ref.uri);
    std::stringstream buf;
    buf << in.rdbuf();
    return "data:" + mime_for_path(ref.uri) + ";base64," + base64_encode(buf.str());
}

HttpBackend::HttpBackend(std::string base_url, std::string api_key, RetryConfig retry,
                         int timeout_ms)
    : base_url_(std::move(base_url)),
      api_key_(std::move(api_key)),
      retry_(retry),
      timeout_ms_(timeout_ms) {
    if (base_url_.empty()) throw ValidationError("base_url", "live mode needs a base URL");
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

Json HttpBackend::build_body(const ChatRequest& request) {
    Json messages = Json::array();
    for (const auto& m : request.messages) {
        Json content = Json::array();
        for (const auto& p : m.parts) {
            if (p.kind == MessagePart::Kind::text) {
                content.push_back(Json{{"type", "text"}, {"text", p.text}});
            } else {
                content.push_back(Json{{"type", "image_url"},
                                       {"image_url", Json{{"url", image_part_url(p.image)}}}});
            }
        }
        messages.push_back(Json{{"role", to_string(m.role)}, {"content", content}});
    }
    Json body{{"model", request.model_id},
              {"messages", messages},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens}};
    if (request.seed) body["seed"] = *request.seed;
    if (!request.response_schema.is_null())
        body["response_format"] = Json{{"type", "json_object"}};
    return body;
}

ChatResponse HttpBackend::complete(const ChatRequest& request) {
    request.validate();
    const std::string body = build_body(request).dump();
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    std::string last_error;
    for (int attempt = 0; attempt <= retry_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(retry_.backoff_ms << (attempt - 1)));
        }
        httplib::Client client(base_url_);
        client.set_connection_timeout(0, timeout_ms_ * 1000LL);
        client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
        client.set_write_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);

        auto res = client.Post("/v1/chat/completions", headers, body, "application/json");
        if (!res) {
            auto err = res.error();
            last_error = httplib::to_string(err);
            if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                err == httplib::Error::Write) {
                // keep retrying; classified as timeout below
            }
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            std::string excerpt = res->body.substr(0, 200);
            throw ProviderError(res->status, excerpt);
        }
        Json j;
        try {
            j = Json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
            throw ProviderError(res->status, std::string("unparseable body: ") + e.what());
        }
        ChatResponse out;
        try {
            const Json& choice = j.at("choices").at(0);
            out.text = choice.at("message").value("content", "");
            std::string reason = choice.value("finish_reason", "stop");
            out.finish_reason = reason == "length" ? ChatResponse::FinishReason::length
                                                   : ChatResponse::FinishReason::stop;
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(res->status, std::string("unexpected shape: ") + e.what());
        }
        if (j.contains("usage")) {
            out.prompt_tokens = j["usage"].value("prompt_tokens", std::uint64_t{0});
            out.completion_tokens = j["usage"].value("completion_tokens", std::uint64_t{0});
        }
        return out;
    }
    if (last_error.find("imeout") != std::string::npos)
        throw TimeoutError("request to " + base_url_ + " timed out: " + last_error);
    throw TransportError("cannot reach " + base_url_ + ": " + last_error);
}

std::unique_ptr<HttpBackend> HttpBackend::from_config(const EngineConfig& config) {
    std::string base_url = config.base_url;
    if (base_url.empty()) {
        const char* env = std::getenv("AGRO_BASE_URL");
        if (env) base_url = env;
    }
    const char* key_env = std::getenv("AGRO_API_KEY");
    std::string api_key = key_env ? key_env : "";
    return std::make_unique<HttpBackend>(base_url, api_key, config.retry,
                                         config.http_timeout_ms);
}

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

ScriptedMockBackend::ScriptedMockBackend(std::vector<ScriptEntry> entries) {
    slots_.reserve(entries.size());
    for (auto& e : entries) slots_.push_back(Slot{std::move(e), false});
}

ChatResponse ScriptedMockBackend::complete(const ChatRequest& request) {
    request.validate();
    calls_.fetch_add(1);
    const std::string prompt = render_prompt(request);

    std::lock_guard<std::mutex> lock(mutex_);
    for (auto& slot : slots_) {
        if (slot.consumed) continue;
        bool matched = slot.entry.match == request.step;
        if (!matched) {
            try {
                matched = std::regex_search(prompt, std::regex(slot.entry.match));
            } catch (const std::regex_error&) {
                matched = false;  // a plain step key is not always a valid regex
            }
        }
        if (matched) {
            slot.consumed = true;
            ChatResponse r;
            r.text = slot.entry.response;
            r.finish_reason = ChatResponse::FinishReason::stop;
            return r;
        }
    }
    throw ScriptExhaustedError(request.step);
}

std::size_t ScriptedMockBackend::consumed_count() const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::size_t n = 0;
    for (const auto& s : slots_)
        if (s.consumed) ++n;
    return n;
}

std::vector<ScriptEntry> ScriptedMockBackend::parse_script(const Json& j) {
    if (!j.is_array()) throw ValidationError("script", "script must be a JSON array");
    std::vector<ScriptEntry> entries;
    for (const auto& item : j) {
        if (!item.is_object() || !item.contains("match") || !item.contains("response"))
            throw ValidationError("script", "each entry needs match and response");
        entries.push_back(ScriptEntry{item.at("match").get<std::string>(),
                                      item.at("response").get<std::string>()});
    }
    return entries;
}

std::vector<ScriptEntry> ScriptedMockBackend::load_script_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("mock_script", "cannot open file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    Json j;
    try {
        j = Json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("mock_script", std::string("invalid JSON: ") + e.what());
    }
    return parse_script(j);
}

Json ScriptedMockBackend::script_to_json(const std::vector<ScriptEntry>& entries) {
    Json arr = Json::array();
    for (const auto& e : entries)
        arr.push_back(Json{{"match", e.match}, {"response", e.response}});
    return arr;
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::string cache_key(const ChatRequest& request) {
    const std::string canonical = request.to_json().dump();
    std::uint64_t h = fnv1a64(canonical);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    // Keep the length in the key so 64-bit collisions need equal sizes too.
    return std::string(buf) + "-" + std::to_string(canonical.size());
}

CachingBackend::CachingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}

ChatResponse CachingBackend::complete(const ChatRequest& request) {
    const std::string key = cache_key(request);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = cache_.find(key);
        if (it != cache_.end()) {
            hits_.fetch_add(1);
            return it->second;
        }
    }
    ChatResponse response = inner_->complete(request);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        cache_[key] = response;
    }
    return response;
}

// ---------------------------------------------------------------------------
// Structured output
// ---------------------------------------------------------------------------

namespace {

bool type_matches(const Json& value, const std::string& type) {
    if (type == "object") return value.is_object();
    if (type == "array") return value.is_array();
    if (type == "string") return value.is_string();
    if (type == "integer") return value.is_number_integer();
    if (type == "number") return value.is_number();
    if (type == "boolean") return value.is_boolean();
    if (type == "null") return value.is_null();
    return false;
}

void validate_at(const Json& value, const Json& schema, const std::string& path,
                 std::vector<std::string>& problems) {
    if (schema.contains("type")) {
        const Json& t = schema.at("type");
        bool ok = false;
        if (t.is_array()) {
            for (const auto& alt : t)
                if (type_matches(value, alt.get<std::string>())) ok = true;
        } else {
            ok = type_matches(value, t.get<std::string>());
        }
        if (!ok) {
            problems.push_back(path + ": expected type " + t.dump() + ", got " +
                               std::string(value.type_name()));
            return;
        }
    }
    if (schema.contains("enum")) {
        bool ok = false;
        for (const auto& alt : schema.at("enum"))
            if (value == alt) ok = true;
        if (!ok) problems.push_back(path + ": value not in enum " + schema.at("enum").dump());
    }
    if (value.is_object()) {
        if (schema.contains("required")) {
            for (const auto& name : schema.at("required")) {
                if (!value.contains(name.get<std::string>()))
                    problems.push_back(path + ": missing required field \"" +
                                       name.get<std::string>() + "\"");
            }
        }
        if (schema.contains("properties")) {
            for (const auto& [name, sub] : schema.at("properties").items()) {
                if (value.contains(name))
                    validate_at(value.at(name), sub, path + "." + name, problems);
            }
        }
    }
    if (value.is_array() && schema.contains("items")) {
        std::size_t i = 0;
        for (const auto& item : value)
            validate_at(item, schema.at("items"), path + "[" + std::to_string(i++) + "]",
                        problems);
    }
}

}  // namespace

std::vector<std::string> validate_schema(const Json& value, const Json& schema) {
    std::vector<std::string> problems;
    validate_at(value, schema, "$", problems);
    return problems;
}

std::string strip_code_fences(const std::string& text) {
    std::string s = text;
    auto trim = [](std::string& v) {
        std::size_t b = v.find_first_not_of(" \t\r\n");
        std::size_t e = v.find_last_not_of(" \t\r\n");
        v = b == std::string::npos ? "" : v.substr(b, e - b + 1);
    };
    trim(s);
    if (s.rfind("```", 0) == 0) {
        std::size_t nl = s.find('\n');
        s = nl == std::string::npos ? "" : s.substr(nl + 1);
        std::size_t close = s.rfind("```");
        if (close != std::string::npos) s = s.substr(0, close);
        trim(s);
    }
    return s;
}

StructuredResult complete_structured(Backend& backend, ChatRequest request,
                                     const Json& schema) {
    if (!schema.is_object() || schema.value("type", "") != "object" ||
        !schema.contains("required"))
        throw ArgumentError("structured call needs an object schema with required fields");
    request.response_schema = schema;

    StructuredResult result;
    result.prompt = render_prompt(request);

    std::string first_text;
    std::string failure;
    for (int attempt = 0; attempt < 2; ++attempt) {
        ChatResponse response = backend.complete(request);
        ++result.backend_calls;
        std::string cleaned = strip_code_fences(response.text);
        std::string problem;
        if (response.finish_reason == ChatResponse::FinishReason::length) {
            problem = "response truncated (finish_reason=length)";
        } else {
            try {
                Json value = Json::parse(cleaned);
                auto problems = validate_schema(value, schema);
                if (problems.empty()) {
                    result.value = std::move(value);
                    result.raw_text = response.text;
                    return result;
                }
                problem = problems.front();
            } catch (const nlohmann::json::parse_error& e) {
                problem = std::string("not valid JSON: ") + e.what();
            }
        }
        if (attempt == 0) {
            first_text = response.text;
            failure = problem;
            request.messages.push_back(ChatMessage::user_text(
                "Your previous reply was rejected: " + problem +
                "\nReply again with only a JSON object matching the schema: " +
                schema.dump()));
        } else {
            throw StructuredParseError(first_text, response.text, problem);
        }
    }
    throw StructuredParseError(first_text, "", failure);  // unreachable
}

}  // namespace agro::backend
