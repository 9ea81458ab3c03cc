#pragma once

#include <memory>
#include <optional>
#include <string>

#include "agro/answerer.hpp"
#include "agro/backend.hpp"
#include "agro/config.hpp"
#include "agro/core.hpp"
#include "agro/improver.hpp"
#include "agro/reflector.hpp"
#include "agro/tools.hpp"

namespace agro::engine {

struct LoopStats {
    int reflect_iters = 0;
    int improve_iters = 0;
    int reconsider_rounds = 0;
    int backend_calls = 0;

    Json to_json() const;
};

struct FinalAnswer {
    std::string answer_text;
    std::optional<char> chosen_option;
    bool verified = false;
    LoopStats loop_stats;
    std::string trace_path;

    Json to_json() const;
};

struct DecideOutcome {
    const tools::ToolSpec* tool = nullptr;  // nullptr means NONE
    std::string prompt;
    std::string raw_text;
    int backend_calls = 0;
    std::string warning;
};

/// Structured call presenting the registry plus a NONE option. Any name
/// outside registry + NONE gets one repair retry, then falls back to NONE
/// with a warning; so does a backend failure (the pipeline then proceeds
/// evidence-free). An empty registry is NONE without any call.
DecideOutcome decide_tool(const SessionState& state, const tools::ToolRegistry& registry,
                          backend::Backend& backend, const EngineConfig& config);

/// Owns the backend, tool registry and fixtures; one Engine serves many
/// sessions (the bench runs them concurrently). Sessions share only the
/// backend, its cache and the immutable tool indices.
class Engine {
public:
    explicit Engine(EngineConfig config);
    Engine(EngineConfig config, std::vector<backend::ScriptEntry> script);

    /// Bounded state machine over one question: decide -> retrieval loop
    /// gated by the reflector -> parallel drafting with reconsideration ->
    /// improve loop. Always closes the trace with session_end; writes it to
    /// trace_out when given. `state_out`, when non-null, receives the full
    /// session (each caller owns its own; sessions never share state).
    /// Throws SessionFailure when no answer emerges.
    FinalAnswer run_session(const Query& query, const std::string& trace_out = "",
                            SessionState* state_out = nullptr);

    /// Re-runs a mock-mode trace from its embedded config, query and script.
    /// Live-mode traces are not replayable.
    static FinalAnswer replay(const std::string& trace_path,
                              const std::string& trace_out = "",
                              SessionState* state_out = nullptr);

    const EngineConfig& config() const { return config_; }
    const tools::ToolRegistry& registry() const { return registry_; }

    /// Non-null in mock mode; used by tests to count underlying calls.
    backend::ScriptedMockBackend* mock() { return mock_; }

private:
    FinalAnswer run_steps(SessionState& state, Clock& clock, backend::Backend& be);

    EngineConfig config_;
    std::shared_ptr<backend::Backend> backend_;
    backend::ScriptedMockBackend* mock_ = nullptr;
    std::vector<backend::ScriptEntry> script_;
    tools::ToolRegistry registry_;
    tools::ToolHost host_;
};

}  // namespace agro::engine
