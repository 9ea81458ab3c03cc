#include "agro/answerer.hpp"

#include <algorithm>
#include <future>

#include "agro/errors.hpp"
#include "agro/tools.hpp"

namespace agro::answer {

Json Draft::to_json() const {
    return Json{{"answerer_id", answerer_id},
                {"answer", answer_text},
                {"option", chosen_option ? Json(std::string(1, *chosen_option)) : Json()},
                {"rationale", rationale}};
}

Json ConsolidatedAnswer::to_json() const {
    return Json{{"answer", answer_text},
                {"option", chosen_option ? Json(std::string(1, *chosen_option)) : Json()},
                {"rationale", rationale},
                {"rounds_used", rounds_used},
                {"verified", verified}};
}

// ---------------------------------------------------------------------------
// Disagreement
// ---------------------------------------------------------------------------

double token_f1(const std::string& a, const std::string& b) {
    auto ta = tools::tokenize(a);
    auto tb = tools::tokenize(b);
    if (ta.empty() && tb.empty()) return 1.0;

    std::map<std::string, std::size_t> counts;
    for (const auto& t : ta) ++counts[t];
    std::size_t overlap = 0;
    for (const auto& t : tb) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    // 2PR/(P+R) collapses to 2m/(|a|+|b|); one division keeps it exact for
    // the worked fixtures.
    return 2.0 * static_cast<double>(overlap) /
           static_cast<double>(ta.size() + tb.size());
}

bool disagree(const Draft& d1, const Draft& d2, DisagreementMode mode, double threshold,
              bool query_has_options) {
    DisagreementMode effective = mode;
    if (effective == DisagreementMode::automatic)
        effective = query_has_options ? DisagreementMode::mcq : DisagreementMode::free_text;

    if (effective == DisagreementMode::mcq) {
        if (!d1.chosen_option || !d2.chosen_option)
            throw ArgumentError("mcq disagreement needs both chosen options");
        return *d1.chosen_option != *d2.chosen_option;
    }
    return token_f1(d1.answer_text, d2.answer_text) < threshold;
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

Json answer_schema() {
    return Json{{"type", "object"},
                {"required", Json::array({"answer", "option", "rationale"})},
                {"properties",
                 Json{{"answer", Json{{"type", "string"}}},
                      {"option", Json{{"type", Json::array({"string", "null"})}}},
                      {"rationale", Json{{"type", "string"}}}}}};
}

namespace {

std::string persona_for(int answerer_id, bool identical_prompts) {
    if (identical_prompts)
        return "You are an agricultural expert answering questions from visual and "
               "retrieved evidence.";
    if (answerer_id == 1)
        return "You are a plant diagnostic specialist. Lead with what the visual "
               "symptoms and evidence identify.";
    return "You are a field-management specialist. Lead with what the grower should "
           "do, grounded in the evidence.";
}

std::string render_question_block(const Query& query) {
    std::string out = "Question: " + query.text + "\n";
    for (const auto& [key, value] : query.metadata) out += key + ": " + value + "\n";
    if (query.is_mcq()) {
        out += "Options:\n";
        for (const auto& opt : query.options)
            out += std::string(1, opt.letter) + ": " + opt.text + "\n";
        out += "Pick exactly one option letter.\n";
    }
    return out;
}

std::string render_evidence_block(const EvidenceSet& evidence) {
    if (evidence.empty()) return "No external evidence was retrieved.\n";
    std::string out = "Evidence:\n";
    for (const auto& item : evidence.items())
        out += "[" + std::to_string(item.id) + " from " + item.source_tool + "] " +
               item.content + "\n";
    return out;
}

backend::ChatMessage user_message_with_images(const Query& query, std::string text) {
    backend::ChatMessage msg;
    msg.role = backend::ChatMessage::Role::user;
    msg.parts.push_back(backend::MessagePart::make_text(std::move(text)));
    for (const auto& img : query.images)
        msg.parts.push_back(backend::MessagePart::make_image(img));
    return msg;
}

const std::string kAnswerFormat =
    "Reply with JSON: {\"answer\": string, \"option\": string or null, "
    "\"rationale\": string}.";

Draft draft_from_json(const Json& value, int answerer_id, const Query& query) {
    Draft d;
    d.answerer_id = answerer_id;
    d.answer_text = value.value("answer", "");
    d.rationale = value.value("rationale", "");
    const Json& opt = value.at("option");
    if (query.is_mcq()) {
        if (!opt.is_string() || opt.get<std::string>().empty())
            throw ValidationError("option", "multiple-choice answer needs an option letter");
        char letter = static_cast<char>(
            std::toupper(static_cast<unsigned char>(opt.get<std::string>()[0])));
        if (!query.has_option_letter(letter))
            throw ValidationError("option", std::string("letter '") + letter +
                                                "' is not one of the query's options");
        d.chosen_option = letter;
    }
    return d;
}

// One structured call plus the draft-level retry on an invalid option letter.
DraftOutcome call_answerer(int answerer_id, const std::string& step,
                           const std::string& user_text, const SessionState& state,
                           backend::Backend& be, const EngineConfig& config) {
    const Query& query = state.query;
    backend::ChatRequest request;
    request.model_id = config.model_for(answerer_id == 1 ? "answerer_1" : "answerer_2");
    request.temperature = config.temperature;
    request.max_tokens = config.max_tokens;
    request.seed = query.seed;
    request.step = step;
    request.messages.push_back(backend::ChatMessage::system_text(
        persona_for(answerer_id, config.identical_prompts)));
    request.messages.push_back(user_message_with_images(query, user_text));

    DraftOutcome outcome;
    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            auto structured = backend::complete_structured(be, request, answer_schema());
            outcome.backend_calls += structured.backend_calls;
            outcome.prompt = structured.prompt;
            outcome.raw_text = structured.raw_text;
            outcome.draft = draft_from_json(structured.value, answerer_id, query);
            return outcome;
        } catch (const ValidationError&) {
            // Bad option letter counts as a parse failure: one more try.
            if (attempt == 1) throw;
            ++outcome.retries;
        } catch (const StructuredParseError&) {
            outcome.backend_calls += 2;  // both structured attempts were spent
            if (attempt == 1) throw;
            ++outcome.retries;
        }
    }
    throw SessionFailure("answerer " + std::to_string(answerer_id) + " produced no draft",
                         false);
}

}  // namespace

// ---------------------------------------------------------------------------
// Drafting
// ---------------------------------------------------------------------------

DraftPairOutcome draft_pair(const SessionState& state, const EvidenceSet& evidence,
                            backend::Backend& be, const EngineConfig& config) {
    const std::string user_text = render_question_block(state.query) + "\n" +
                                  render_evidence_block(evidence) + "\n" + kAnswerFormat;

    auto run = [&](int answerer_id) {
        return call_answerer(answerer_id, "draft_answerer_" + std::to_string(answerer_id),
                             user_text, state, be, config);
    };
    // The two drafts are independent by design; fan out and join.
    auto future2 = std::async(std::launch::async, run, 2);
    DraftPairOutcome outcome;
    std::exception_ptr first_error;
    try {
        outcome.first = run(1);
    } catch (...) {
        first_error = std::current_exception();
    }
    try {
        outcome.second = future2.get();
    } catch (...) {
        if (first_error)
            throw SessionFailure("both answerers failed to draft", false);
        throw;
    }
    if (first_error) std::rethrow_exception(first_error);
    return outcome;
}

// ---------------------------------------------------------------------------
// Reconsideration
// ---------------------------------------------------------------------------

namespace {

std::string revision_prompt(const Draft& own, const Draft& other,
                            const EvidenceSet& evidence, const Query& query,
                            const std::string& feedback) {
    std::string out = render_question_block(query) + "\n" + render_evidence_block(evidence);
    out += "\nYour previous answer: " + own.answer_text;
    if (own.chosen_option) out += " (option " + std::string(1, *own.chosen_option) + ")";
    out += "\nRationale: " + own.rationale + "\n";
    out += "The other expert answered: " + other.answer_text;
    if (other.chosen_option)
        out += " (option " + std::string(1, *other.chosen_option) + ")";
    out += "\nTheir rationale: " + other.rationale + "\n";
    if (!feedback.empty()) out += "Reviewer feedback to address: " + feedback + "\n";
    out += "Cross-check both answers against the evidence and revise yours. " +
           kAnswerFormat;
    return out;
}

}  // namespace

ReconsiderOutcome reconsider(const Draft& d1, const Draft& d2, const SessionState& state,
                             const EvidenceSet& evidence,
                             const std::string& improver_feedback, backend::Backend& be,
                             const EngineConfig& config) {
    const Query& query = state.query;
    ReconsiderOutcome outcome;

    bool in_disagreement = disagree(d1, d2, config.disagreement.mode,
                                    config.disagreement.threshold, query.is_mcq());
    if (!in_disagreement && improver_feedback.empty()) {
        outcome.answer.answer_text = d1.answer_text;
        outcome.answer.chosen_option = d1.chosen_option;
        outcome.answer.rationale = d1.rationale;
        outcome.answer.rounds_used = 0;
        return outcome;
    }

    Draft current_1 = d1;
    Draft current_2 = d2;
    bool agreed = false;
    for (int round = 1; round <= config.max_reconsider_rounds; ++round) {
        ReconsiderRound record;
        record.round = round;

        auto out1 = call_answerer(
            1, "reconsider_answerer_1",
            revision_prompt(current_1, current_2, evidence, query, improver_feedback),
            state, be, config);
        auto out2 = call_answerer(
            2, "reconsider_answerer_2",
            revision_prompt(current_2, current_1, evidence, query, improver_feedback),
            state, be, config);
        current_1 = out1.draft;
        current_2 = out2.draft;
        record.revised_1 = current_1;
        record.revised_2 = current_2;
        record.backend_calls = out1.backend_calls + out2.backend_calls;
        outcome.backend_calls += record.backend_calls;

        agreed = !disagree(current_1, current_2, config.disagreement.mode,
                           config.disagreement.threshold, query.is_mcq());
        record.agreed = agreed;
        outcome.rounds.push_back(std::move(record));
        outcome.answer.rounds_used = round;
        if (agreed) break;
    }

    if (agreed) {
        outcome.answer.answer_text = current_1.answer_text;
        outcome.answer.chosen_option = current_1.chosen_option;
        outcome.answer.rationale = current_1.rationale;
        return outcome;
    }

    // Still split after every round: answerer 1 merges both drafts.
    std::string merge_text = render_question_block(query) + "\n" +
                             render_evidence_block(evidence) + "\n";
    merge_text += "Two expert answers remain in disagreement.\n";
    merge_text += "Expert 1: " + current_1.answer_text;
    if (current_1.chosen_option)
        merge_text += " (option " + std::string(1, *current_1.chosen_option) + ")";
    merge_text += "\nExpert 2: " + current_2.answer_text;
    if (current_2.chosen_option)
        merge_text += " (option " + std::string(1, *current_2.chosen_option) + ")";
    if (!improver_feedback.empty())
        merge_text += "\nReviewer feedback to address: " + improver_feedback;
    merge_text += "\nConsolidate them into the single best-supported answer. " +
                  kAnswerFormat;

    auto merged = call_answerer(1, "consolidate", merge_text, state, be, config);
    outcome.backend_calls += merged.backend_calls;
    outcome.consolidation_call = true;
    outcome.consolidation = merged.draft.to_json();
    outcome.answer.answer_text = merged.draft.answer_text;
    outcome.answer.chosen_option = merged.draft.chosen_option;
    outcome.answer.rationale = merged.draft.rationale;
    return outcome;
}

}  // namespace agro::answer
