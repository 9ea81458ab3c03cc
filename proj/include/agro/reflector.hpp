#pragma once

#include <map>
#include <string>

#include "agro/backend.hpp"
#include "agro/config.hpp"
#include "agro/core.hpp"

namespace agro::reflect {

/// Weighted criteria with acceptance threshold tau.
using GateCriteria = WeightedGate;

/// Criteria the evidence judge scores, in prompt/schema order.
inline const std::vector<std::string>& criteria_names() {
    static const std::vector<std::string> names = {"relevance", "consistency", "timeliness",
                                                   "context_alignment"};
    return names;
}

struct GateVerdict {
    bool accept = false;
    std::map<std::string, double> scores;  // criterion -> [0,1]
    double weighted_score = 0.0;
    std::string rationale;

    Json to_json() const;
};

/// sum(w_i * s_i) / sum(w_i) over criteria with a weight. Throws
/// ArgumentError when a positively weighted criterion has no score.
double weighted_mean(const std::map<std::string, double>& scores,
                     const std::map<std::string, double>& weights);

struct ScoreOutcome {
    std::map<std::string, double> scores;  // normalized to [0,1]
    std::string rationale;
    std::string prompt;                 // empty on the short-circuit path
    std::string raw_text;
    int backend_calls = 0;
    std::vector<std::string> warnings;  // clamp notes
    bool parse_failed = false;          // fail-closed marker
};

/// Judge call scoring the accumulated evidence 0-10 per criterion,
/// normalized to [0,1]. An empty evidence set short-circuits to all zeros
/// without touching the backend. Out-of-range judge integers are clamped
/// with a warning. A structured-parse failure comes back as all zeros with
/// parse_failed set (fail closed), never as an acceptance.
ScoreOutcome score_evidence(const EvidenceSet& evidence, const Query& query,
                            backend::Backend& backend, const EngineConfig& config);

/// Pure arithmetic: accept iff weighted_score >= tau.
GateVerdict gate(const std::map<std::string, double>& scores, const GateCriteria& criteria,
                 std::string rationale = "");

struct ReformulateResult {
    std::string keywords;
    std::string prompt;
    bool forced_suffix = false;  // model echoed the input, disambiguator appended
};

/// Rewrites the keyword string after a rejection. The prompt carries the
/// prior keywords, the verdict rationale and the lowest-scoring criteria. If
/// the model echoes the input verbatim, a token from the rationale is
/// appended so retrieval cannot repeat itself silently.
ReformulateResult reformulate(const std::string& keywords, const GateVerdict& verdict,
                              const SessionState& state, backend::Backend& backend,
                              const EngineConfig& config);

/// Response contract for the evidence judge.
Json judge_schema();

}  // namespace agro::reflect
