#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "agro/json.hpp"

namespace agro {

/// Weighted criteria plus an acceptance threshold, shared by the reflector
/// gate and the improver gate.
struct WeightedGate {
    std::map<std::string, double> weights;
    double threshold = 0.0;
};

enum class RunMode { live, mock };

std::string to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& s);

/// How draft disagreement is detected. `automatic` picks mcq when the query
/// has options, token-F1 otherwise.
enum class DisagreementMode { automatic, mcq, free_text };

std::string to_string(DisagreementMode mode);
DisagreementMode disagreement_mode_from_string(const std::string& s);

struct DisagreementConfig {
    DisagreementMode mode = DisagreementMode::automatic;
    double threshold = 0.6;  // token-F1 below this counts as disagreement
};

struct ToolsConfig {
    std::string corpus_path;   // JSONL file or directory of JSON docs
    std::string weather_csv;   // fixture table: location,date,summary
    std::string web_base_url;  // search stub base; empty disables web tool
    bool web_enabled = false;
    int top_k = 5;
};

struct RetryConfig {
    int max_retries = 2;
    int backoff_ms = 500;  // doubles per attempt
};

struct EngineConfig {
    RunMode mode = RunMode::mock;
    std::string base_url;  // falls back to AGRO_BASE_URL in live mode

    // Per-role model ids; empty entries resolve to default_model. The paper
    // does not say which model plays which role, so all default to the same.
    std::string default_model = "gpt-4o";
    std::map<std::string, std::string> models;  // role -> model id

    double temperature = 0.2;        // answerers and retriever
    double judge_temperature = 0.0;  // reflector and improver gates
    int max_tokens = 1024;

    int max_reflect_iters = 3;
    int max_improve_iters = 3;
    int max_reconsider_rounds = 2;

    WeightedGate reflect_gate{
        {{"relevance", 0.4}, {"consistency", 0.25}, {"timeliness", 0.15}, {"context_alignment", 0.2}},
        0.6};
    WeightedGate improve_gate{
        {{"completeness", 0.35}, {"instruction_following", 0.25}, {"visual_grounding", 0.4}},
        0.7};

    DisagreementConfig disagreement;
    bool identical_prompts = false;      // drop the role personas on the two answerers
    bool reflector_sees_images = false;  // judge prompt gets captions only by default

    bool caching = false;
    ToolsConfig tools;
    RetryConfig retry;
    int http_timeout_ms = 60000;

    std::string mock_script;  // path to the script file in mock mode

    std::string model_for(const std::string& role) const;

    /// Fully resolved config (defaults filled in), stable key order.
    Json to_json() const;

    static EngineConfig from_json(const Json& j);
    static EngineConfig load_file(const std::string& path);

    /// Every invariant violation as "field: problem". Empty means valid.
    std::vector<std::string> validate() const;

    /// validate() and throw ValidationError on the first problem.
    void ensure_valid() const;
};

}  // namespace agro
