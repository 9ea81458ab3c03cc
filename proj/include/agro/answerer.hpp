#pragma once

#include <optional>
#include <string>
#include <vector>

#include "agro/backend.hpp"
#include "agro/config.hpp"
#include "agro/core.hpp"

namespace agro::answer {

struct Draft {
    int answerer_id = 1;  // 1 or 2
    std::string answer_text;
    std::optional<char> chosen_option;  // required when the query has options
    std::string rationale;

    Json to_json() const;
};

struct ConsolidatedAnswer {
    std::string answer_text;
    std::optional<char> chosen_option;
    std::string rationale;
    int rounds_used = 0;
    bool verified = false;  // set by the improver later

    Json to_json() const;
};

/// Token-multiset F1 between two strings: tokens are lowercased alphanumeric
/// runs, F1 = 2m / (|a| + |b|) with m the multiset overlap. Both empty -> 1.
double token_f1(const std::string& a, const std::string& b);

/// mcq: the chosen letters differ (both must be present).
/// free_text: token F1 below the threshold.
bool disagree(const Draft& d1, const Draft& d2, DisagreementMode mode, double threshold,
              bool query_has_options);

/// Response contract shared by drafting, revision and consolidation calls.
Json answer_schema();

struct DraftOutcome {
    Draft draft;
    std::string prompt;
    std::string raw_text;
    int backend_calls = 0;
    int retries = 0;  // draft-level retries after an invalid option letter
};

struct DraftPairOutcome {
    DraftOutcome first;
    DraftOutcome second;
};

/// Both answerers draft concurrently from identical evidence. Answerer 1
/// plays a diagnostic specialist, answerer 2 a field-management specialist
/// (identical_prompts drops the personas). A draft whose option letter is
/// not one of the query's is treated as a parse failure and retried once;
/// two failures on either side fail the pair.
DraftPairOutcome draft_pair(const SessionState& state, const EvidenceSet& evidence,
                            backend::Backend& backend, const EngineConfig& config);

struct ReconsiderRound {
    int round = 0;
    Draft revised_1;
    Draft revised_2;
    bool agreed = false;
    int backend_calls = 0;
};

struct ReconsiderOutcome {
    ConsolidatedAnswer answer;
    std::vector<ReconsiderRound> rounds;
    bool consolidation_call = false;  // rounds exhausted while disagreeing
    Json consolidation = Json();      // draft json of the merge, when it ran
    int backend_calls = 0;
};

/// Exchange-and-revise protocol: each answerer sees the other's draft, the
/// evidence and any improver feedback, then both revise; repeats until the
/// drafts agree or max_reconsider_rounds is hit, at which point answerer 1
/// merges both drafts in one consolidation call. Called with agreeing drafts
/// and no feedback it returns d1's content untouched (rounds_used = 0).
ReconsiderOutcome reconsider(const Draft& d1, const Draft& d2, const SessionState& state,
                             const EvidenceSet& evidence,
                             const std::string& improver_feedback,
                             backend::Backend& backend, const EngineConfig& config);

}  // namespace agro::answer
