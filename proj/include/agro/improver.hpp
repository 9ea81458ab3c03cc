#pragma once

#include <map>
#include <string>

#include "agro/answerer.hpp"
#include "agro/backend.hpp"
#include "agro/config.hpp"
#include "agro/core.hpp"

namespace agro::improve {

/// Weighted dimensions with acceptance threshold theta.
using ImproveCriteria = WeightedGate;

inline const std::vector<std::string>& dimension_names() {
    static const std::vector<std::string> names = {"completeness", "instruction_following",
                                                   "visual_grounding"};
    return names;
}

struct ImproveVerdict {
    bool pass = false;
    std::map<std::string, double> dim_scores;  // dimension -> [0,1]
    std::map<std::string, bool> per_image;     // image id -> grounded
    double overall = 0.0;
    std::string feedback;

    Json to_json() const;
};

struct EvaluateOutcome {
    ImproveVerdict verdict;
    std::string prompt;
    std::string raw_text;
    int backend_calls = 0;
    std::vector<std::string> warnings;
    bool parse_failed = false;
};

/// One judge call with every query image attached. The judge returns
/// completeness and instruction_following 0-10 plus a grounded flag per
/// image; visual_grounding = grounded / image count (1.0 for zero images,
/// vacuously). overall is the weighted mean; pass iff overall >= theta.
/// Judge images missing from the reply count as ungrounded; unknown ids are
/// dropped with a warning. Parse failure fails closed (pass = false).
EvaluateOutcome evaluate(const answer::ConsolidatedAnswer& answer, const Query& query,
                         const EvidenceSet& evidence, backend::Backend& backend,
                         const EngineConfig& config);

/// Revision instructions for the answerers: names every ungrounded image id
/// and every dimension scoring below 0.7. Only legal on failing verdicts.
std::string feedback_for_revision(const ImproveVerdict& verdict);

/// Response contract for the answer judge.
Json judge_schema();

}  // namespace agro::improve
