#include "agro/improver.hpp"

#include <algorithm>

#include "agro/errors.hpp"
#include "agro/reflector.hpp"

namespace agro::improve {

Json ImproveVerdict::to_json() const {
    Json dims = Json::object();
    for (const auto& [name, v] : dim_scores) dims[name] = v;
    Json imgs = Json::object();
    for (const auto& [id, grounded] : per_image) imgs[id] = grounded;
    return Json{{"pass", pass},
                {"dim_scores", dims},
                {"per_image", imgs},
                {"overall", overall},
                {"feedback", feedback}};
}

Json judge_schema() {
    return Json{
        {"type", "object"},
        {"required", Json::array({"completeness", "instruction_following",
                                  "image_grounding", "feedback"})},
        {"properties",
         Json{{"completeness", Json{{"type", "integer"}}},
              {"instruction_following", Json{{"type", "integer"}}},
              {"image_grounding",
               Json{{"type", "array"},
                    {"items",
                     Json{{"type", "object"},
                          {"required", Json::array({"image_id", "grounded"})},
                          {"properties", Json{{"image_id", Json{{"type", "string"}}},
                                              {"grounded", Json{{"type", "boolean"}}}}}}}}},
              {"feedback", Json{{"type", "string"}}}}}};
}

namespace {

ImproveVerdict finish_verdict(std::map<std::string, double> dim_scores,
                              std::map<std::string, bool> per_image,
                              const EngineConfig& config, std::string feedback) {
    ImproveVerdict v;
    v.per_image = std::move(per_image);
    double grounded = 0.0;
    for (const auto& [id, flag] : v.per_image)
        if (flag) grounded += 1.0;
    dim_scores["visual_grounding"] =
        v.per_image.empty() ? 1.0 : grounded / static_cast<double>(v.per_image.size());
    v.dim_scores = std::move(dim_scores);
    v.overall = reflect::weighted_mean(v.dim_scores, config.improve_gate.weights);
    v.pass = v.overall >= config.improve_gate.threshold;
    v.feedback = std::move(feedback);
    return v;
}

}  // namespace

EvaluateOutcome evaluate(const answer::ConsolidatedAnswer& answer, const Query& query,
                         const EvidenceSet& evidence, backend::Backend& be,
                         const EngineConfig& config) {
    std::string user = "Question: " + query.text + "\n";
    if (query.is_mcq()) {
        user += "Options:\n";
        for (const auto& opt : query.options)
            user += std::string(1, opt.letter) + ": " + opt.text + "\n";
    }
    user += "\nCandidate answer: " + answer.answer_text;
    if (answer.chosen_option)
        user += " (option " + std::string(1, *answer.chosen_option) + ")";
    user += "\nRationale: " + answer.rationale + "\n";
    if (!evidence.empty()) {
        user += "\nRetrieved evidence:\n";
        for (const auto& item : evidence.items())
            user += "[" + std::to_string(item.id) + "] " + item.content + "\n";
    }
    user += "\nJudge the answer: completeness 0-10, instruction_following 0-10, and for "
            "every image whether the answer is grounded in evidence from it.";
    if (!query.images.empty()) {
        user += " Image ids: ";
        for (std::size_t i = 0; i < query.images.size(); ++i) {
            if (i) user += ", ";
            user += query.images[i].id;
        }
        user += ".";
    }
    user += " Reply with JSON: {\"completeness\": int, \"instruction_following\": int, "
            "\"image_grounding\": [{\"image_id\": string, \"grounded\": bool}], "
            "\"feedback\": string}.";

    backend::ChatRequest request;
    request.model_id = config.model_for("improver");
    request.temperature = config.judge_temperature;
    request.max_tokens = config.max_tokens;
    request.seed = query.seed;
    request.step = "improve_evaluate";
    request.messages.push_back(backend::ChatMessage::system_text(
        "You are a strict answer-quality judge for agricultural question answering."));
    backend::ChatMessage msg;
    msg.role = backend::ChatMessage::Role::user;
    msg.parts.push_back(backend::MessagePart::make_text(user));
    for (const auto& img : query.images)
        msg.parts.push_back(backend::MessagePart::make_image(img));
    request.messages.push_back(std::move(msg));

    EvaluateOutcome outcome;
    try {
        auto structured = backend::complete_structured(be, request, judge_schema());
        outcome.prompt = structured.prompt;
        outcome.raw_text = structured.raw_text;
        outcome.backend_calls = structured.backend_calls;

        std::map<std::string, double> dims;
        for (const std::string name : {"completeness", "instruction_following"}) {
            auto raw = structured.value.at(name).get<std::int64_t>();
            if (raw < 0 || raw > 10) {
                outcome.warnings.push_back("dimension '" + name + "' score " +
                                           std::to_string(raw) + " clamped to 0-10");
                raw = std::clamp<std::int64_t>(raw, 0, 10);
            }
            dims[name] = static_cast<double>(raw) / 10.0;
        }

        // Grounding defaults to false per image; the judge flips what it saw.
        std::map<std::string, bool> per_image;
        for (const auto& img : query.images) per_image[img.id] = false;
        for (const auto& entry : structured.value.at("image_grounding")) {
            const std::string id = entry.at("image_id").get<std::string>();
            auto it = per_image.find(id);
            if (it == per_image.end()) {
                outcome.warnings.push_back("judge graded unknown image id '" + id + "'");
                continue;
            }
            it->second = entry.at("grounded").get<bool>();
        }
        outcome.verdict = finish_verdict(std::move(dims), std::move(per_image), config,
                                         structured.value.value("feedback", ""));
    } catch (const StructuredParseError& e) {
        // Fail closed, mirroring the reflector.
        outcome.parse_failed = true;
        outcome.backend_calls = 2;
        ImproveVerdict v;
        for (const auto& name : dimension_names()) v.dim_scores[name] = 0.0;
        for (const auto& img : query.images) v.per_image[img.id] = false;
        v.overall = 0.0;
        v.pass = false;
        v.feedback = std::string("answer judge unparseable: ") + e.what();
        outcome.verdict = std::move(v);
    }
    return outcome;
}

std::string feedback_for_revision(const ImproveVerdict& verdict) {
    if (verdict.pass)
        throw ArgumentError("feedback_for_revision called on a passing verdict");

    std::vector<std::string> ungrounded;
    for (const auto& [id, grounded] : verdict.per_image)
        if (!grounded) ungrounded.push_back(id);
    std::vector<std::string> weak_dims;
    for (const auto& [name, score] : verdict.dim_scores) {
        if (name == "visual_grounding") continue;  // covered image-by-image
        if (score < 0.7) weak_dims.push_back(name);
    }

    std::string out = "Revise the answer to close these gaps.";
    if (!ungrounded.empty()) {
        out += " Ground the answer in evidence from image";
        out += ungrounded.size() > 1 ? "s " : " ";
        for (std::size_t i = 0; i < ungrounded.size(); ++i) {
            if (i) out += ", ";
            out += ungrounded[i];
        }
        out += ".";
    }
    if (!weak_dims.empty()) {
        out += " Improve ";
        for (std::size_t i = 0; i < weak_dims.size(); ++i) {
            if (i) out += ", ";
            out += weak_dims[i];
        }
        out += ".";
    }
    if (!verdict.feedback.empty()) out += " Judge notes: " + verdict.feedback;
    return out;
}

}  // namespace agro::improve
