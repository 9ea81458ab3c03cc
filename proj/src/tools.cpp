#include "agro/tools.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "agro/errors.hpp"

namespace agro::tools {

namespace fs = std::filesystem;

std::string to_string(ToolKind k) {
    switch (k) {
        case ToolKind::corpus: return "corpus";
        case ToolKind::weather: return "weather";
        case ToolKind::web: return "web";
    }
    return "corpus";
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current += static_cast<char>(std::tolower(c));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

// ---------------------------------------------------------------------------
// LexicalIndex
// ---------------------------------------------------------------------------

LexicalIndex LexicalIndex::build(std::vector<CorpusDoc> docs) {
    LexicalIndex index;
    for (auto& doc : docs) {
        if (doc.id.empty()) throw ValidationError("id", "corpus doc id must be non-empty");
        if (doc.body.empty())
            throw ValidationError("body", "corpus doc '" + doc.id + "' has an empty body");
        if (index.find(doc.id))
            throw ValidationError("id", "duplicate corpus doc id '" + doc.id + "'");
        index.docs_.push_back(doc);
        for (const auto& term : tokenize(doc.title + " " + doc.body))
            ++index.postings_[term][doc.id];
    }
    return index;
}

namespace {

CorpusDoc doc_from_json(const Json& j) {
    CorpusDoc d;
    d.id = j.value("id", "");
    d.title = j.value("title", "");
    d.body = j.value("body", "");
    d.date = j.value("date", "");
    return d;
}

}  // namespace

LexicalIndex LexicalIndex::load(const std::string& path) {
    std::vector<CorpusDoc> docs;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(path))
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            std::ifstream in(file);
            std::stringstream buf;
            buf << in.rdbuf();
            try {
                docs.push_back(doc_from_json(Json::parse(buf.str())));
            } catch (const nlohmann::json::parse_error& e) {
                throw ValidationError("corpus", file.string() + ": " + e.what());
            }
        }
    } else {
        std::ifstream in(path);
        if (!in) throw ValidationError("corpus", "cannot open " + path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                docs.push_back(doc_from_json(Json::parse(line)));
            } catch (const nlohmann::json::parse_error& e) {
                throw ParseError(lineno, std::string("invalid corpus JSON: ") + e.what());
            }
        }
    }
    return build(std::move(docs));
}

std::size_t LexicalIndex::doc_freq(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
}

const CorpusDoc* LexicalIndex::find(const std::string& doc_id) const {
    for (const auto& d : docs_)
        if (d.id == doc_id) return &d;
    return nullptr;
}

std::uint64_t LexicalIndex::term_freq(const std::string& term,
                                      const std::string& doc_id) const {
    auto it = postings_.find(term);
    if (it == postings_.end()) return 0;
    auto dit = it->second.find(doc_id);
    return dit == it->second.end() ? 0 : dit->second;
}

std::vector<ScoredDoc> corpus_search(const LexicalIndex& index, const std::string& keywords,
                                     std::size_t k) {
    if (k == 0) return {};
    const auto query_tokens = tokenize(keywords);
    const double n = static_cast<double>(index.doc_count());

    std::vector<ScoredDoc> scored;
    scored.reserve(index.doc_count());
    for (const auto& doc : index.docs()) {
        double score = 0.0;
        for (const auto& term : query_tokens) {
            const auto tf = static_cast<double>(index.term_freq(term, doc.id));
            if (tf == 0.0) continue;
            const auto df = static_cast<double>(index.doc_freq(term));
            score += tf * std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        }
        scored.push_back(ScoredDoc{&doc, score});
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc->id < b.doc->id;
    });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

// ---------------------------------------------------------------------------
// Weather
// ---------------------------------------------------------------------------

namespace {

// One CSV line with quote support; commas inside quotes stay in the field.
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

}  // namespace

WeatherTable WeatherTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("weather_csv", "cannot open " + path);
    WeatherTable table;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || (row == 1 && line.rfind("location", 0) == 0)) continue;
        auto fields = split_csv(line);
        if (fields.size() != 3)
            throw ParseError(row, "weather row needs 3 fields (location,date,summary), got " +
                                      std::to_string(fields.size()));
        table.rows_.push_back(WeatherRow{fields[0], fields[1], fields[2]});
    }
    return table;
}

WeatherTable WeatherTable::from_rows(std::vector<WeatherRow> rows) {
    WeatherTable table;
    table.rows_ = std::move(rows);
    return table;
}

std::vector<WeatherRow> WeatherTable::lookup(const std::string& location,
                                             const std::string& date) const {
    std::vector<WeatherRow> out;
    for (const auto& row : rows_) {
        if (row.location != location) continue;
        if (!date.empty() && row.date != date) continue;
        out.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Web search
// ---------------------------------------------------------------------------

WebSearchOutcome web_search(const std::string& base_url, const std::string& keywords,
                            std::size_t k, int timeout_ms) {
    WebSearchOutcome outcome;
    if (base_url.empty()) {
        outcome.error = "web search endpoint not configured";
        return outcome;
    }
    httplib::Client client(base_url);
    client.set_connection_timeout(0, timeout_ms * 1000LL);
    client.set_read_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);

    httplib::Params params{{"q", keywords}, {"k", std::to_string(k)}};
    auto res = client.Get("/search", params, httplib::Headers{});
    if (!res) {
        outcome.error = "web search unreachable: " + httplib::to_string(res.error());
        return outcome;
    }
    if (res->status < 200 || res->status >= 300) {
        outcome.error = "web search returned status " + std::to_string(res->status);
        return outcome;
    }
    Json j;
    try {
        j = Json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
        outcome.error = std::string("web search body unparseable: ") + e.what();
        return outcome;
    }
    if (!j.is_array()) {
        outcome.error = "web search body is not a JSON array";
        return outcome;
    }
    for (const auto& item : j) {
        if (outcome.results.size() >= k) break;
        outcome.results.push_back(WebResult{item.value("title", ""),
                                            item.value("snippet", ""),
                                            item.value("url", "")});
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// Registry + execution
// ---------------------------------------------------------------------------

void ToolRegistry::register_tool(ToolSpec spec) {
    if (spec.description.empty())
        throw RegistryError("tool '" + spec.name + "' needs a description");
    if (find(spec.name)) throw RegistryError("duplicate tool name '" + spec.name + "'");
    specs_.push_back(std::move(spec));
}

const ToolSpec* ToolRegistry::find(const std::string& name) const {
    for (const auto& s : specs_)
        if (s.name == name) return &s;
    return nullptr;
}

ToolRegistry ToolRegistry::from_config(const ToolsConfig& config) {
    ToolRegistry registry;
    if (!config.corpus_path.empty()) {
        registry.register_tool(ToolSpec{
            "corpus_search",
            "search the local agricultural literature corpus by keywords",
            ToolKind::corpus,
            Json{{"type", "object"},
                 {"properties", Json{{"top_k", Json{{"type", "integer"}}}}}}});
    }
    if (!config.weather_csv.empty()) {
        registry.register_tool(ToolSpec{
            "weather_lookup",
            "look up local weather by location and date",
            ToolKind::weather,
            Json{{"type", "object"},
                 {"properties", Json{{"location", Json{{"type", "string"}}},
                                     {"date", Json{{"type", "string"}}}}}}});
    }
    if (config.web_enabled) {
        registry.register_tool(ToolSpec{
            "web_search",
            "search the web for recent information",
            ToolKind::web,
            Json{{"type", "object"},
                 {"properties", Json{{"top_k", Json{{"type", "integer"}}}}}}});
    }
    return registry;
}

ToolHost ToolHost::from_config(const ToolsConfig& config) {
    ToolHost host;
    if (!config.corpus_path.empty()) host.corpus = LexicalIndex::load(config.corpus_path);
    if (!config.weather_csv.empty()) host.weather = WeatherTable::load(config.weather_csv);
    host.web_base_url = config.web_base_url;
    return host;
}

ToolRunResult execute_tool(const ToolRegistry& registry, const ToolHost& host,
                           const std::string& tool_name, const std::string& keywords,
                           const ToolParams& params, std::uint64_t next_evidence_id,
                           Clock& clock) {
    const ToolSpec* spec = registry.find(tool_name);
    if (!spec) throw RegistryError("unknown tool '" + tool_name + "'");

    ToolRunResult result;
    auto make_evidence = [&](std::string content, Json metadata) {
        Evidence e;
        e.id = next_evidence_id + result.evidence.size();
        e.source_tool = tool_name;
        e.query_used = keywords;
        e.content = std::move(content);
        e.retrieved_at = clock.now();
        e.metadata = std::move(metadata);
        return e;
    };

    switch (spec->kind) {
        case ToolKind::corpus: {
            if (!host.corpus) {
                result.error = "corpus not loaded";
                return result;
            }
            auto hits = corpus_search(*host.corpus, keywords, params.top_k);
            if (hits.empty()) result.error = "no corpus match for keywords";
            for (const auto& hit : hits) {
                result.evidence.push_back(make_evidence(
                    hit.doc->title.empty() ? hit.doc->body
                                           : hit.doc->title + "\n" + hit.doc->body,
                    Json{{"doc_id", hit.doc->id},
                         {"score", hit.score},
                         {"date", hit.doc->date}}));
            }
            break;
        }
        case ToolKind::weather: {
            if (!host.weather) {
                result.error = "weather fixture not loaded";
                return result;
            }
            auto rows = host.weather->lookup(params.location, params.date);
            if (rows.empty())
                result.error = "no weather rows for location '" + params.location + "'";
            for (const auto& row : rows) {
                result.evidence.push_back(make_evidence(
                    row.summary,
                    Json{{"location", row.location}, {"date", row.date}}));
            }
            break;
        }
        case ToolKind::web: {
            auto outcome = web_search(host.web_base_url, keywords, params.top_k,
                                      host.web_timeout_ms);
            result.error = outcome.error;
            for (const auto& hit : outcome.results) {
                result.evidence.push_back(make_evidence(
                    hit.title.empty() ? hit.snippet : hit.title + "\n" + hit.snippet,
                    Json{{"url", hit.url}}));
            }
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Keyword formulation
// ---------------------------------------------------------------------------

KeywordResult formulate_keywords(const Query& query, const SessionState& state,
                                 backend::Backend& be, const EngineConfig& config) {
    std::string user = "Question: " + query.text + "\n";
    for (const auto& img : query.images) {
        if (!img.caption.empty())
            user += "Image " + img.id + " caption: " + img.caption + "\n";
    }
    for (const auto& [key, value] : query.metadata)
        user += key + ": " + value + "\n";

    // Most recent reflector rejection, if the loop already went around once.
    if (const TraceEvent* verdict = state.last_event(EventType::reflect_verdict)) {
        if (verdict->payload.value("accept", true) == false) {
            user += "Previous evidence was rejected: " +
                    verdict->payload.value("rationale", std::string{}) + "\n";
        }
    }
    user += "Reply with only the search keywords.";

    backend::ChatRequest request;
    request.model_id = config.model_for("retriever");
    request.temperature = config.temperature;
    request.max_tokens = config.max_tokens;
    request.seed = query.seed;
    request.step = "formulate_keywords";
    request.messages.push_back(backend::ChatMessage::system_text(
        "You turn agricultural questions into concise search keywords for a "
        "retrieval tool."));
    request.messages.push_back(backend::ChatMessage::user_text(user));

    KeywordResult result;
    result.prompt = backend::render_prompt(request);

    backend::ChatResponse response = be.complete(request);
    std::string keywords = response.text;
    // trim
    std::size_t b = keywords.find_first_not_of(" \t\r\n");
    std::size_t e = keywords.find_last_not_of(" \t\r\n");
    keywords = b == std::string::npos ? "" : keywords.substr(b, e - b + 1);

    if (keywords.empty()) {
        result.keywords = query.text;
        result.fallback = true;
    } else {
        result.keywords = keywords;
    }
    return result;
}

}  // namespace agro::tools
