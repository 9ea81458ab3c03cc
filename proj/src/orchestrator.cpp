#include "agro/orchestrator.hpp"

#include <fstream>
#include <sstream>

#include "agro/errors.hpp"

namespace agro::engine {

Json LoopStats::to_json() const {
    return Json{{"reflect_iters", reflect_iters},
                {"improve_iters", improve_iters},
                {"reconsider_rounds", reconsider_rounds},
                {"backend_calls", backend_calls}};
}

Json FinalAnswer::to_json() const {
    return Json{{"answer", answer_text},
                {"option", chosen_option ? Json(std::string(1, *chosen_option)) : Json()},
                {"verified", verified},
                {"loop_stats", loop_stats.to_json()},
                {"trace_path", trace_path}};
}

// ---------------------------------------------------------------------------
// Tool decision
// ---------------------------------------------------------------------------

namespace {

// Per-session view over the shared backend so loop stats can count calls.
class CountingBackend : public backend::Backend {
public:
    explicit CountingBackend(backend::Backend& inner) : inner_(inner) {}
    backend::ChatResponse complete(const backend::ChatRequest& request) override {
        ++calls_;
        return inner_.complete(request);
    }
    int calls() const { return calls_; }

private:
    backend::Backend& inner_;
    int calls_ = 0;
};

Json decide_schema() {
    return Json{{"type", "object"},
                {"required", Json::array({"tool"})},
                {"properties", Json{{"tool", Json{{"type", "string"}}}}}};
}

}  // namespace

DecideOutcome decide_tool(const SessionState& state, const tools::ToolRegistry& registry,
                          backend::Backend& be, const EngineConfig& config) {
    DecideOutcome outcome;
    if (registry.empty()) {
        outcome.warning = "no tools registered";
        return outcome;
    }

    std::string user = "Question: " + state.query.text + "\n";
    for (const auto& [key, value] : state.query.metadata) user += key + ": " + value + "\n";
    user += "Available tools:\n";
    for (const auto& spec : registry.specs())
        user += "- " + spec.name + ": " + spec.description + "\n";
    user += "- NONE: answer without external retrieval\n";
    user += "Pick the single most useful tool for this question. Reply with JSON: "
            "{\"tool\": string}.";

    backend::ChatRequest request;
    request.model_id = config.model_for("manager");
    request.temperature = config.judge_temperature;
    request.max_tokens = config.max_tokens;
    request.seed = state.query.seed;
    request.step = "decide_tool";
    request.messages.push_back(backend::ChatMessage::system_text(
        "You route agricultural questions to retrieval tools, or to NONE when the "
        "question needs no external context."));
    request.messages.push_back(backend::ChatMessage::user_text(user));

    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            auto structured = backend::complete_structured(be, request, decide_schema());
            outcome.backend_calls += structured.backend_calls;
            if (outcome.prompt.empty()) outcome.prompt = structured.prompt;
            outcome.raw_text = structured.raw_text;
            const std::string name = structured.value.at("tool").get<std::string>();
            if (name == "NONE") return outcome;
            if (const tools::ToolSpec* spec = registry.find(name)) {
                outcome.tool = spec;
                return outcome;
            }
            if (attempt == 0) {
                request.messages.push_back(backend::ChatMessage::user_text(
                    "'" + name + "' is not an available tool. Answer again with one of "
                    "the listed names or NONE."));
                continue;
            }
            outcome.warning = "tool '" + name + "' not in registry after retry; using NONE";
        } catch (const StructuredParseError& e) {
            outcome.backend_calls += 2;
            outcome.warning = std::string("tool decision unparseable, using NONE: ") +
                              e.what();
        } catch (const Error& e) {
            // Transport-level failure: proceed evidence-free.
            outcome.warning = std::string("tool decision failed, using NONE: ") + e.what();
        }
        break;
    }
    outcome.tool = nullptr;
    return outcome;
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

Engine::Engine(EngineConfig config) : config_(std::move(config)) {
    config_.ensure_valid();
    if (config_.mode == RunMode::mock) {
        if (!config_.mock_script.empty())
            script_ = backend::ScriptedMockBackend::load_script_file(config_.mock_script);
        auto mock = std::make_shared<backend::ScriptedMockBackend>(script_);
        mock_ = mock.get();
        backend_ = std::move(mock);
    } else {
        backend_ = backend::HttpBackend::from_config(config_);
    }
    if (config_.caching) backend_ = std::make_shared<backend::CachingBackend>(backend_);
    registry_ = tools::ToolRegistry::from_config(config_.tools);
    host_ = tools::ToolHost::from_config(config_.tools);
}

Engine::Engine(EngineConfig config, std::vector<backend::ScriptEntry> script)
    : config_(std::move(config)) {
    config_.ensure_valid();
    if (config_.mode != RunMode::mock)
        throw ArgumentError("in-memory scripts require mock mode");
    script_ = std::move(script);
    auto mock = std::make_shared<backend::ScriptedMockBackend>(script_);
    mock_ = mock.get();
    backend_ = std::move(mock);
    if (config_.caching) backend_ = std::make_shared<backend::CachingBackend>(backend_);
    registry_ = tools::ToolRegistry::from_config(config_.tools);
    host_ = tools::ToolHost::from_config(config_.tools);
}

namespace {

void write_trace_file(const SessionState& state, const std::string& path) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("trace_out", "cannot write " + path);
    out << serialize_trace(state);
}

Json drafts_payload(const answer::DraftOutcome& out) {
    Json j = out.draft.to_json();
    j["prompt"] = out.prompt;
    j["retries"] = out.retries;
    return j;
}

}  // namespace

FinalAnswer Engine::run_session(const Query& query, const std::string& trace_out,
                                SessionState* state_out) {
    LogicalClock logical;
    WallClock wall;
    Clock& clock = config_.mode == RunMode::mock ? static_cast<Clock&>(logical)
                                                 : static_cast<Clock&>(wall);

    Json script_json =
        config_.mode == RunMode::mock ? backend::ScriptedMockBackend::script_to_json(script_)
                                      : Json();
    SessionState state = new_session(query, config_, clock, script_json);
    CountingBackend counting(*backend_);

    try {
        FinalAnswer final = run_steps(state, clock, counting);
        final.loop_stats.backend_calls = counting.calls();
        final.trace_path = trace_out;

        set_status(state, final.verified ? SessionStatus::answered
                                         : SessionStatus::answered_unverified);
        Json end_payload{{"status", to_string(state.status)},
                         {"final", final.to_json()}};
        record_event(state, Role::manager, EventType::session_end, std::move(end_payload),
                     clock);
        write_trace_file(state, trace_out);
        if (state_out) *state_out = std::move(state);
        return final;
    } catch (const std::exception& e) {
        bool transport = dynamic_cast<const TransportError*>(&e) != nullptr ||
                         dynamic_cast<const ProviderError*>(&e) != nullptr;
        if (const auto* failure = dynamic_cast<const SessionFailure*>(&e))
            transport = failure->transport_cause();
        set_status(state, SessionStatus::failed);
        record_event(state, Role::manager, EventType::session_end,
                     Json{{"status", "failed"}, {"error", e.what()}}, clock);
        write_trace_file(state, trace_out);
        if (state_out) *state_out = std::move(state);
        throw SessionFailure(e.what(), transport);
    }
}

FinalAnswer Engine::run_steps(SessionState& state, Clock& clock, backend::Backend& be) {
    const Query& query = state.query;

    // (a) tool decision
    DecideOutcome decision = decide_tool(state, registry_, be, config_);
    {
        Json payload{{"tool", decision.tool ? decision.tool->name : "NONE"}};
        if (!decision.prompt.empty()) {
            payload["prompt"] = decision.prompt;
            payload["response_text"] = decision.raw_text;
        }
        if (!decision.warning.empty()) payload["warning"] = decision.warning;
        record_event(state, Role::manager, EventType::tool_decided, std::move(payload),
                     clock);
    }

    // (b) retrieval loop, reflector-gated
    if (decision.tool) {
        std::string keywords;
        reflect::GateVerdict verdict;
        bool accepted = false;
        for (int iter = 1; iter <= config_.max_reflect_iters; ++iter) {
            state.reflect_iters = iter;

            Json formulation;
            if (iter == 1) {
                auto kw = tools::formulate_keywords(query, state, be, config_);
                keywords = kw.keywords;
                formulation = Json{{"prompt", kw.prompt},
                                   {"keywords", kw.keywords},
                                   {"fallback", kw.fallback}};
            } else {
                auto rf = reflect::reformulate(keywords, verdict, state, be, config_);
                Json payload{{"old_keywords", keywords},
                             {"new_keywords", rf.keywords},
                             {"prompt", rf.prompt}};
                if (rf.forced_suffix) {
                    payload["forced_suffix"] = true;
                    payload["warning"] = "model echoed keywords; appended rationale token";
                }
                record_event(state, Role::reflector, EventType::query_reformulated,
                             std::move(payload), clock);
                keywords = rf.keywords;
            }

            tools::ToolParams params;
            params.top_k = static_cast<std::size_t>(config_.tools.top_k);
            if (auto it = query.metadata.find("location"); it != query.metadata.end())
                params.location = it->second;
            if (auto it = query.metadata.find("time"); it != query.metadata.end())
                params.date = it->second;

            auto run = tools::execute_tool(registry_, host_, decision.tool->name, keywords,
                                           params, state.evidence.next_id(), clock);
            Json ids = Json::array();
            for (auto& item : run.evidence) {
                ids.push_back(item.id);
                state.evidence.append(std::move(item));
            }
            {
                Json payload{{"tool", decision.tool->name},
                             {"keywords", keywords},
                             {"count", ids.size()},
                             {"evidence_ids", ids}};
                if (!run.error.empty()) payload["error"] = run.error;
                if (!formulation.is_null()) payload["formulation"] = formulation;
                record_event(state, Role::tool, EventType::tool_executed,
                             std::move(payload), clock);
            }

            auto scored = reflect::score_evidence(state.evidence, query, be, config_);
            {
                Json scores = Json::object();
                for (const auto& name : reflect::criteria_names())
                    scores[name] = scored.scores.at(name);
                Json payload{{"scores", scores}, {"rationale", scored.rationale}};
                if (!scored.prompt.empty()) {
                    payload["prompt"] = scored.prompt;
                    payload["response_text"] = scored.raw_text;
                } else if (!scored.parse_failed) {
                    payload["short_circuit"] = true;
                }
                if (scored.parse_failed) payload["parse_failed"] = true;
                if (!scored.warnings.empty()) payload["warnings"] = scored.warnings;
                record_event(state, Role::reflector, EventType::reflect_scored,
                             std::move(payload), clock);
            }

            verdict = reflect::gate(scored.scores, config_.reflect_gate, scored.rationale);
            {
                Json payload = verdict.to_json();
                payload["threshold"] = config_.reflect_gate.threshold;
                if (!verdict.accept && iter == config_.max_reflect_iters)
                    payload["warning"] =
                        "retrieval budget exhausted; proceeding with accumulated evidence";
                record_event(state, Role::reflector, EventType::reflect_verdict,
                             std::move(payload), clock);
            }
            if (verdict.accept) {
                accepted = true;
                break;
            }
        }
        (void)accepted;  // exhaustion already annotated on the last verdict
    }

    // (c) parallel drafting
    auto pair = answer::draft_pair(state, state.evidence, be, config_);
    record_event(state, Role::answerer_1, EventType::draft_produced,
                 drafts_payload(pair.first), clock);
    record_event(state, Role::answerer_2, EventType::draft_produced,
                 drafts_payload(pair.second), clock);

    answer::Draft current_1 = pair.first.draft;
    answer::Draft current_2 = pair.second.draft;
    int total_rounds = 0;

    auto run_reconsider = [&](const std::string& feedback) {
        auto rec = answer::reconsider(current_1, current_2, state, state.evidence, feedback,
                                      be, config_);
        for (const auto& round : rec.rounds) {
            record_event(state, Role::manager, EventType::reconsidered,
                         Json{{"round", round.round},
                              {"answerer_1", round.revised_1.to_json()},
                              {"answerer_2", round.revised_2.to_json()},
                              {"agreed", round.agreed},
                              {"feedback_used", !feedback.empty()}},
                         clock);
        }
        if (rec.consolidation_call) {
            record_event(state, Role::answerer_1, EventType::reconsidered,
                         Json{{"consolidation", true}, {"result", rec.consolidation}},
                         clock);
        }
        if (!rec.rounds.empty()) {
            current_1 = rec.rounds.back().revised_1;
            current_2 = rec.rounds.back().revised_2;
        }
        total_rounds += rec.answer.rounds_used;
        return rec.answer;
    };

    answer::ConsolidatedAnswer candidate;
    bool split = answer::disagree(current_1, current_2, config_.disagreement.mode,
                                  config_.disagreement.threshold, query.is_mcq());
    if (split) {
        Json payload{{"mode", query.is_mcq() ? "mcq" : "free_text"}};
        if (query.is_mcq()) {
            payload["option_1"] = std::string(1, *current_1.chosen_option);
            payload["option_2"] = std::string(1, *current_2.chosen_option);
        } else {
            payload["token_f1"] =
                answer::token_f1(current_1.answer_text, current_2.answer_text);
            payload["threshold"] = config_.disagreement.threshold;
        }
        record_event(state, Role::manager, EventType::disagreement, std::move(payload),
                     clock);
        candidate = run_reconsider("");
    } else {
        candidate.answer_text = current_1.answer_text;
        candidate.chosen_option = current_1.chosen_option;
        candidate.rationale = current_1.rationale;
    }

    // (d) improve loop; loops back into reconsideration, never retrieval
    answer::ConsolidatedAnswer best_candidate = candidate;
    double best_overall = -1.0;
    bool passed = false;
    for (int eval = 1; eval <= config_.max_improve_iters; ++eval) {
        state.improve_iters = eval;
        auto outcome = improve::evaluate(candidate, query, state.evidence, be, config_);
        {
            Json payload{{"completeness", outcome.verdict.dim_scores.at("completeness")},
                         {"instruction_following",
                          outcome.verdict.dim_scores.at("instruction_following")},
                         {"feedback", outcome.verdict.feedback}};
            Json grounding = Json::object();
            for (const auto& [id, flag] : outcome.verdict.per_image) grounding[id] = flag;
            payload["image_grounding"] = grounding;
            if (!outcome.prompt.empty()) {
                payload["prompt"] = outcome.prompt;
                payload["response_text"] = outcome.raw_text;
            }
            if (outcome.parse_failed) payload["parse_failed"] = true;
            if (!outcome.warnings.empty()) payload["warnings"] = outcome.warnings;
            record_event(state, Role::improver, EventType::improve_scored,
                         std::move(payload), clock);
        }
        {
            Json payload = outcome.verdict.to_json();
            payload["threshold"] = config_.improve_gate.threshold;
            record_event(state, Role::improver, EventType::improve_verdict,
                         std::move(payload), clock);
        }

        if (outcome.verdict.overall > best_overall) {
            best_overall = outcome.verdict.overall;
            best_candidate = candidate;
        }
        if (outcome.verdict.pass) {
            passed = true;
            break;
        }
        if (eval == config_.max_improve_iters) break;

        std::string feedback = improve::feedback_for_revision(outcome.verdict);
        {
            Json ungrounded = Json::array();
            for (const auto& [id, flag] : outcome.verdict.per_image)
                if (!flag) ungrounded.push_back(id);
            record_event(state, Role::improver, EventType::feedback_issued,
                         Json{{"feedback", feedback}, {"ungrounded_images", ungrounded}},
                         clock);
        }
        candidate = run_reconsider(feedback);
    }

    FinalAnswer final;
    const answer::ConsolidatedAnswer& chosen = passed ? candidate : best_candidate;
    final.answer_text = chosen.answer_text;
    final.chosen_option = chosen.chosen_option;
    final.verified = passed;
    final.loop_stats.reflect_iters = state.reflect_iters;
    final.loop_stats.improve_iters = state.improve_iters;
    final.loop_stats.reconsider_rounds = total_rounds;
    return final;
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

FinalAnswer Engine::replay(const std::string& trace_path, const std::string& trace_out,
                           SessionState* state_out) {
    std::ifstream in(trace_path, std::ios::binary);
    if (!in) throw ValidationError("trace", "cannot open " + trace_path);
    std::stringstream buf;
    buf << in.rdbuf();

    auto events = deserialize_trace(buf.str());
    validate_trace(events);

    const Json& start = events.front().payload;
    if (!start.contains("config") || !start.contains("query"))
        throw ReplayError("session_start payload lacks config/query");
    EngineConfig config = EngineConfig::from_json(start.at("config"));
    if (config.mode != RunMode::mock)
        throw ReplayError("live-mode traces cannot be replayed");
    if (!start.contains("script"))
        throw ReplayError("mock trace lacks an embedded script");

    Query query = Query::from_json(start.at("query"));
    auto script = backend::ScriptedMockBackend::parse_script(start.at("script"));
    Engine engine(std::move(config), std::move(script));
    return engine.run_session(query, trace_out, state_out);
}

}  // namespace agro::engine
