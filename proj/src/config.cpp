#include "agro/config.hpp"

#include <fstream>
#include <sstream>

#include "agro/errors.hpp"

namespace agro {

std::string to_string(RunMode mode) {
    return mode == RunMode::live ? "live" : "mock";
}

RunMode run_mode_from_string(const std::string& s) {
    if (s == "live") return RunMode::live;
    if (s == "mock") return RunMode::mock;
    throw ValidationError("mode", "expected \"live\" or \"mock\", got \"" + s + "\"");
}

std::string to_string(DisagreementMode mode) {
    switch (mode) {
        case DisagreementMode::automatic: return "auto";
        case DisagreementMode::mcq: return "mcq";
        case DisagreementMode::free_text: return "free_text";
    }
    return "auto";
}

DisagreementMode disagreement_mode_from_string(const std::string& s) {
    if (s == "auto") return DisagreementMode::automatic;
    if (s == "mcq") return DisagreementMode::mcq;
    if (s == "free_text") return DisagreementMode::free_text;
    throw ValidationError("disagreement.mode", "unknown mode \"" + s + "\"");
}

std::string EngineConfig::model_for(const std::string& role) const {
    auto it = models.find(role);
    if (it != models.end() && !it->second.empty()) return it->second;
    return default_model;
}

namespace {

Json gate_to_json(const WeightedGate& g) {
    Json weights = Json::object();
    for (const auto& [name, w] : g.weights) weights[name] = w;
    return Json{{"weights", weights}, {"threshold", g.threshold}};
}

WeightedGate gate_from_json(const Json& j, const WeightedGate& defaults) {
    WeightedGate g = defaults;
    if (j.contains("weights")) {
        g.weights.clear();
        for (const auto& [name, w] : j.at("weights").items()) g.weights[name] = w.get<double>();
    }
    g.threshold = j.value("threshold", defaults.threshold);
    return g;
}

void check_gate(const WeightedGate& g, const std::string& prefix,
                std::vector<std::string>& problems) {
    if (g.threshold < 0.0 || g.threshold > 1.0)
        problems.push_back(prefix + ".threshold: must be in [0,1]");
    bool any_positive = false;
    for (const auto& [name, w] : g.weights) {
        if (w < 0.0) problems.push_back(prefix + ".weights." + name + ": must be non-negative");
        if (w > 0.0) any_positive = true;
    }
    if (!any_positive) problems.push_back(prefix + ".weights: at least one weight must be > 0");
}

}  // namespace

Json EngineConfig::to_json() const {
    Json models_json = Json::object();
    for (const auto& [role, id] : models) models_json[role] = id;
    return Json{
        {"mode", to_string(mode)},
        {"base_url", base_url},
        {"default_model", default_model},
        {"models", models_json},
        {"temperature", temperature},
        {"judge_temperature", judge_temperature},
        {"max_tokens", max_tokens},
        {"max_reflect_iters", max_reflect_iters},
        {"max_improve_iters", max_improve_iters},
        {"max_reconsider_rounds", max_reconsider_rounds},
        {"reflect_gate", gate_to_json(reflect_gate)},
        {"improve_gate", gate_to_json(improve_gate)},
        {"disagreement",
         Json{{"mode", to_string(disagreement.mode)}, {"threshold", disagreement.threshold}}},
        {"identical_prompts", identical_prompts},
        {"reflector_sees_images", reflector_sees_images},
        {"caching", caching},
        {"tools",
         Json{{"corpus_path", tools.corpus_path},
              {"weather_csv", tools.weather_csv},
              {"web_base_url", tools.web_base_url},
              {"web_enabled", tools.web_enabled},
              {"top_k", tools.top_k}}},
        {"retry", Json{{"max_retries", retry.max_retries}, {"backoff_ms", retry.backoff_ms}}},
        {"http_timeout_ms", http_timeout_ms},
        {"mock_script", mock_script},
    };
}

EngineConfig EngineConfig::from_json(const Json& j) {
    EngineConfig defaults;
    EngineConfig c;
    if (j.contains("mode")) c.mode = run_mode_from_string(j.at("mode").get<std::string>());
    c.base_url = j.value("base_url", defaults.base_url);
    c.default_model = j.value("default_model", defaults.default_model);
    if (j.contains("models")) {
        for (const auto& [role, id] : j.at("models").items())
            c.models[role] = id.get<std::string>();
    }
    c.temperature = j.value("temperature", defaults.temperature);
    c.judge_temperature = j.value("judge_temperature", defaults.judge_temperature);
    c.max_tokens = j.value("max_tokens", defaults.max_tokens);
    c.max_reflect_iters = j.value("max_reflect_iters", defaults.max_reflect_iters);
    c.max_improve_iters = j.value("max_improve_iters", defaults.max_improve_iters);
    c.max_reconsider_rounds = j.value("max_reconsider_rounds", defaults.max_reconsider_rounds);
    if (j.contains("reflect_gate"))
        c.reflect_gate = gate_from_json(j.at("reflect_gate"), defaults.reflect_gate);
    if (j.contains("improve_gate"))
        c.improve_gate = gate_from_json(j.at("improve_gate"), defaults.improve_gate);
    if (j.contains("disagreement")) {
        const Json& d = j.at("disagreement");
        if (d.contains("mode"))
            c.disagreement.mode = disagreement_mode_from_string(d.at("mode").get<std::string>());
        c.disagreement.threshold = d.value("threshold", defaults.disagreement.threshold);
    }
    c.identical_prompts = j.value("identical_prompts", defaults.identical_prompts);
    c.reflector_sees_images = j.value("reflector_sees_images", defaults.reflector_sees_images);
    c.caching = j.value("caching", defaults.caching);
    if (j.contains("tools")) {
        const Json& t = j.at("tools");
        c.tools.corpus_path = t.value("corpus_path", "");
        c.tools.weather_csv = t.value("weather_csv", "");
        c.tools.web_base_url = t.value("web_base_url", "");
        c.tools.web_enabled = t.value("web_enabled", false);
        c.tools.top_k = t.value("top_k", defaults.tools.top_k);
    }
    if (j.contains("retry")) {
        const Json& r = j.at("retry");
        c.retry.max_retries = r.value("max_retries", defaults.retry.max_retries);
        c.retry.backoff_ms = r.value("backoff_ms", defaults.retry.backoff_ms);
    }
    c.http_timeout_ms = j.value("http_timeout_ms", defaults.http_timeout_ms);
    c.mock_script = j.value("mock_script", "");
    return c;
}

EngineConfig EngineConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config", "cannot open file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    Json j;
    try {
        j = Json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config", std::string("invalid JSON: ") + e.what());
    }
    return from_json(j);
}

std::vector<std::string> EngineConfig::validate() const {
    std::vector<std::string> problems;
    if (max_reflect_iters < 1) problems.push_back("max_reflect_iters: must be >= 1");
    if (max_improve_iters < 1) problems.push_back("max_improve_iters: must be >= 1");
    if (max_reconsider_rounds < 1) problems.push_back("max_reconsider_rounds: must be >= 1");
    if (temperature < 0.0 || temperature > 2.0)
        problems.push_back("temperature: must be in [0,2]");
    if (judge_temperature < 0.0 || judge_temperature > 2.0)
        problems.push_back("judge_temperature: must be in [0,2]");
    if (max_tokens < 1) problems.push_back("max_tokens: must be positive");
    check_gate(reflect_gate, "reflect_gate", problems);
    check_gate(improve_gate, "improve_gate", problems);
    if (disagreement.threshold < 0.0 || disagreement.threshold > 1.0)
        problems.push_back("disagreement.threshold: must be in [0,1]");
    if (tools.top_k < 0) problems.push_back("tools.top_k: must be >= 0");
    if (retry.max_retries < 0) problems.push_back("retry.max_retries: must be >= 0");
    if (retry.backoff_ms < 0) problems.push_back("retry.backoff_ms: must be >= 0");
    if (http_timeout_ms < 1) problems.push_back("http_timeout_ms: must be positive");
    return problems;
}

void EngineConfig::ensure_valid() const {
    auto problems = validate();
    if (!problems.empty()) {
        auto colon = problems.front().find(':');
        std::string field = problems.front().substr(0, colon);
        std::string msg = problems.front().substr(colon + 2);
        throw ValidationError(field, msg);
    }
}

}  // namespace agro
