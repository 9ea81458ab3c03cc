#include "agro/reflector.hpp"

#include <algorithm>

#include "agro/errors.hpp"

namespace agro::reflect {

namespace {

// Longest alphanumeric token of the rationale; "retry" when there is none.
std::string rationale_token(const std::string& rationale) {
    std::string best;
    std::string current;
    for (unsigned char c : rationale) {
        if (std::isalnum(c)) {
            current += static_cast<char>(std::tolower(c));
        } else {
            if (current.size() > best.size()) best = current;
            current.clear();
        }
    }
    if (current.size() > best.size()) best = current;
    return best.empty() ? "retry" : best;
}

}  // namespace

Json GateVerdict::to_json() const {
    Json s = Json::object();
    for (const auto& [name, v] : scores) s[name] = v;
    return Json{{"accept", accept},
                {"scores", s},
                {"weighted_score", weighted_score},
                {"rationale", rationale}};
}

double weighted_mean(const std::map<std::string, double>& scores,
                     const std::map<std::string, double>& weights) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& [name, w] : weights) {
        if (w == 0.0) continue;
        auto it = scores.find(name);
        if (it == scores.end())
            throw ArgumentError("missing score for weighted criterion '" + name + "'");
        num += w * it->second;
        den += w;
    }
    if (den == 0.0) throw ArgumentError("all criterion weights are zero");
    return num / den;
}

Json judge_schema() {
    return Json{{"type", "object"},
                {"required", Json::array({"relevance", "consistency", "timeliness",
                                          "context_alignment", "rationale"})},
                {"properties",
                 Json{{"relevance", Json{{"type", "integer"}}},
                      {"consistency", Json{{"type", "integer"}}},
                      {"timeliness", Json{{"type", "integer"}}},
                      {"context_alignment", Json{{"type", "integer"}}},
                      {"rationale", Json{{"type", "string"}}}}}};
}

ScoreOutcome score_evidence(const EvidenceSet& evidence, const Query& query,
                            backend::Backend& be, const EngineConfig& config) {
    ScoreOutcome outcome;
    if (evidence.empty()) {
        for (const auto& name : criteria_names()) outcome.scores[name] = 0.0;
        outcome.rationale = "no evidence retrieved";
        return outcome;
    }

    std::string user = "Question: " + query.text + "\n";
    if (!query.metadata.empty()) {
        for (const auto& [key, value] : query.metadata) user += key + ": " + value + "\n";
    }
    for (const auto& img : query.images) {
        if (!img.caption.empty())
            user += "Image " + img.id + " caption: " + img.caption + "\n";
    }
    user += "\nEvidence to judge:\n";
    for (const auto& item : evidence.items()) {
        user += "[" + std::to_string(item.id) + " from " + item.source_tool + "] " +
                item.content + "\n";
    }
    user +=
        "\nScore the evidence set as a whole, integers 0-10 per criterion: relevance "
        "(topical relevance to the question), consistency (factual consistency across "
        "sources), timeliness (recency for the question), context_alignment (fit with "
        "crop type, growth stage and local conditions). Reply with JSON: "
        "{\"relevance\": int, \"consistency\": int, \"timeliness\": int, "
        "\"context_alignment\": int, \"rationale\": string}.";

    backend::ChatRequest request;
    request.model_id = config.model_for("reflector");
    request.temperature = config.judge_temperature;
    request.max_tokens = config.max_tokens;
    request.seed = query.seed;
    request.step = "reflect_score";
    request.messages.push_back(backend::ChatMessage::system_text(
        "You are a strict evidence-quality judge for agricultural question answering."));
    backend::ChatMessage msg;
    msg.role = backend::ChatMessage::Role::user;
    msg.parts.push_back(backend::MessagePart::make_text(user));
    if (config.reflector_sees_images) {
        for (const auto& img : query.images)
            msg.parts.push_back(backend::MessagePart::make_image(img));
    }
    request.messages.push_back(std::move(msg));

    try {
        auto structured = backend::complete_structured(be, request, judge_schema());
        outcome.prompt = structured.prompt;
        outcome.raw_text = structured.raw_text;
        outcome.backend_calls = structured.backend_calls;
        for (const auto& name : criteria_names()) {
            auto raw = structured.value.at(name).get<std::int64_t>();
            if (raw < 0 || raw > 10) {
                outcome.warnings.push_back("criterion '" + name + "' score " +
                                           std::to_string(raw) + " clamped to 0-10");
                raw = std::clamp<std::int64_t>(raw, 0, 10);
            }
            outcome.scores[name] = static_cast<double>(raw) / 10.0;
        }
        outcome.rationale = structured.value.value("rationale", "");
    } catch (const StructuredParseError& e) {
        // Fail closed: unusable judge output means the evidence is not accepted.
        outcome.parse_failed = true;
        outcome.backend_calls = 2;
        for (const auto& name : criteria_names()) outcome.scores[name] = 0.0;
        outcome.rationale = std::string("evidence judge unparseable: ") + e.what();
    }
    return outcome;
}

GateVerdict gate(const std::map<std::string, double>& scores, const GateCriteria& criteria,
                 std::string rationale) {
    if (criteria.threshold < 0.0 || criteria.threshold > 1.0)
        throw ArgumentError("gate threshold must be in [0,1]");
    GateVerdict verdict;
    verdict.scores = scores;
    verdict.weighted_score = weighted_mean(scores, criteria.weights);
    verdict.accept = verdict.weighted_score >= criteria.threshold;
    verdict.rationale = std::move(rationale);
    return verdict;
}

ReformulateResult reformulate(const std::string& keywords, const GateVerdict& verdict,
                              const SessionState& state, backend::Backend& be,
                              const EngineConfig& config) {
    if (verdict.accept)
        throw ArgumentError("reformulate called on an accepting verdict");

    // Lowest-scoring criteria first, so the prompt says what to fix.
    std::vector<std::pair<std::string, double>> ranked(verdict.scores.begin(),
                                                       verdict.scores.end());
    std::sort(ranked.begin(), ranked.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    std::string weakest;
    for (std::size_t i = 0; i < ranked.size() && i < 2; ++i) {
        if (!weakest.empty()) weakest += ", ";
        weakest += ranked[i].first;
    }

    std::string user = "Question: " + state.query.text + "\n";
    user += "Previous keywords: " + keywords + "\n";
    user += "The retrieved evidence was rejected: " + verdict.rationale + "\n";
    user += "Weakest criteria: " + weakest + "\n";
    user += "Write different search keywords that fix these gaps. Reply with only the "
            "keywords.";

    backend::ChatRequest request;
    request.model_id = config.model_for("retriever");
    request.temperature = config.temperature;
    request.max_tokens = config.max_tokens;
    request.seed = state.query.seed;
    request.step = "reformulate";
    request.messages.push_back(backend::ChatMessage::system_text(
        "You rewrite search keywords after a failed retrieval round."));
    request.messages.push_back(backend::ChatMessage::user_text(user));

    ReformulateResult result;
    result.prompt = backend::render_prompt(request);

    backend::ChatResponse response = be.complete(request);
    std::string rewritten = response.text;
    std::size_t b = rewritten.find_first_not_of(" \t\r\n");
    std::size_t e = rewritten.find_last_not_of(" \t\r\n");
    rewritten = b == std::string::npos ? "" : rewritten.substr(b, e - b + 1);

    if (rewritten.empty() || rewritten == keywords) {
        // Model refused to move; bolt on a disambiguating token so the next
        // retrieval differs from the last.
        result.keywords = (rewritten.empty() ? keywords : rewritten) + " " +
                          rationale_token(verdict.rationale);
        result.forced_suffix = true;
    } else {
        result.keywords = rewritten;
    }
    return result;
}

}  // namespace agro::reflect
