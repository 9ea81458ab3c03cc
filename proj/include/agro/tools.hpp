#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "agro/backend.hpp"
#include "agro/core.hpp"
#include "agro/json.hpp"

namespace agro::tools {

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

enum class ToolKind { corpus, weather, web };

std::string to_string(ToolKind k);

struct ToolSpec {
    std::string name;
    std::string description;  // one line, shown to the decide prompt
    ToolKind kind = ToolKind::corpus;
    Json params_schema = Json::object();
};

// ---------------------------------------------------------------------------
// Corpus + lexical index
// ---------------------------------------------------------------------------

struct CorpusDoc {
    std::string id;
    std::string title;
    std::string body;
    std::string date;  // ISO-8601
};

/// Lowercased maximal alphanumeric runs.
std::vector<std::string> tokenize(const std::string& text);

class LexicalIndex {
public:
    static LexicalIndex build(std::vector<CorpusDoc> docs);

    /// JSONL file (one {id,title,body,date} per line) or a directory of
    /// JSON documents.
    static LexicalIndex load(const std::string& path);

    std::size_t doc_count() const { return docs_.size(); }
    std::size_t doc_freq(const std::string& term) const;
    const CorpusDoc* find(const std::string& doc_id) const;
    const std::vector<CorpusDoc>& docs() const { return docs_; }

    /// Term frequency of `term` in document `doc_id` (0 if absent).
    std::uint64_t term_freq(const std::string& term, const std::string& doc_id) const;

private:
    std::vector<CorpusDoc> docs_;
    // term -> (doc id -> tf); df(term) == postings size by construction
    std::map<std::string, std::map<std::string, std::uint64_t>> postings_;
};

struct ScoredDoc {
    const CorpusDoc* doc = nullptr;
    double score = 0.0;
};

/// score(d, Q) = sum over query tokens t of tf(t,d) * ln(1 + (N - df + 0.5)/(df + 0.5)).
/// Ties break by ascending doc id; top-k returned.
std::vector<ScoredDoc> corpus_search(const LexicalIndex& index, const std::string& keywords,
                                     std::size_t k);

// ---------------------------------------------------------------------------
// Weather fixture
// ---------------------------------------------------------------------------

struct WeatherRow {
    std::string location;
    std::string date;
    std::string summary;
};

class WeatherTable {
public:
    /// CSV with header location,date,summary. Malformed rows abort the load
    /// with the 1-based row number.
    static WeatherTable load(const std::string& path);
    static WeatherTable from_rows(std::vector<WeatherRow> rows);

    /// Rows matching the location; when `date` is non-empty it must match too.
    std::vector<WeatherRow> lookup(const std::string& location,
                                   const std::string& date) const;

    std::size_t size() const { return rows_.size(); }

private:
    std::vector<WeatherRow> rows_;
};

// ---------------------------------------------------------------------------
// Web search stub client
// ---------------------------------------------------------------------------

struct WebResult {
    std::string title;
    std::string snippet;
    std::string url;
};

/// GET {base}/search?q=...&k=... returning a JSON array of
/// {title, snippet, url}. Unreachable endpoints yield an empty list plus an
/// error note for the trace.
struct WebSearchOutcome {
    std::vector<WebResult> results;
    std::string error;  // empty on success
};

WebSearchOutcome web_search(const std::string& base_url, const std::string& keywords,
                            std::size_t k, int timeout_ms = 5000);

// ---------------------------------------------------------------------------
// Tool execution
// ---------------------------------------------------------------------------

/// Immutable after construction; all lookups are read-only.
class ToolRegistry {
public:
    void register_tool(ToolSpec spec);  // throws RegistryError on duplicates
    const ToolSpec* find(const std::string& name) const;
    const std::vector<ToolSpec>& specs() const { return specs_; }
    bool empty() const { return specs_.empty(); }

    /// Stock registry from the tools config: corpus_search when a corpus is
    /// configured, weather_lookup when a fixture is, web_search when enabled.
    static ToolRegistry from_config(const ToolsConfig& config);

private:
    std::vector<ToolSpec> specs_;
};

/// Holds the loaded fixtures behind the registry.
struct ToolHost {
    std::optional<LexicalIndex> corpus;
    std::optional<WeatherTable> weather;
    std::string web_base_url;
    int web_timeout_ms = 5000;

    static ToolHost from_config(const ToolsConfig& config);
};

struct ToolRunResult {
    std::vector<Evidence> evidence;
    std::string error;  // tool-level miss/transport note, empty when clean
};

struct ToolParams {
    std::size_t top_k = 5;
    std::string location;  // weather
    std::string date;      // weather
};

/// Runs the named tool; evidence ids start at `next_evidence_id` and
/// retrieved_at comes from the clock. Unknown names throw RegistryError.
/// Tool-level failures are carried in the result, never thrown.
ToolRunResult execute_tool(const ToolRegistry& registry, const ToolHost& host,
                           const std::string& tool_name, const std::string& keywords,
                           const ToolParams& params, std::uint64_t next_evidence_id,
                           Clock& clock);

// ---------------------------------------------------------------------------
// Keyword formulation
// ---------------------------------------------------------------------------

struct KeywordResult {
    std::string keywords;
    std::string prompt;  // rendered prompt, for the trace
    bool fallback = false;  // model came back empty, raw query text used
};

/// One model call that turns the query (text, captions, metadata and any
/// prior reflector feedback found in the session history) into a keyword
/// string. Empty model output falls back to the raw query text.
KeywordResult formulate_keywords(const Query& query, const SessionState& state,
                                 backend::Backend& backend, const EngineConfig& config);

}  // namespace agro::tools
