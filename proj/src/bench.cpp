#include "agro/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "agro/errors.hpp"

namespace agro::bench {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

Query DatasetRecord::to_query() const {
    Query q;
    q.text = question;
    q.options = options;
    q.images = images;
    q.metadata = metadata;
    return q;
}

namespace {

bool is_remote_uri(const std::string& uri) {
    return uri.rfind("http://", 0) == 0 || uri.rfind("https://", 0) == 0 ||
           uri.rfind("data:", 0) == 0;
}

DatasetRecord record_from_json(const Json& j) {
    DatasetRecord r;
    r.id = j.value("id", "");
    r.question = j.value("question", "");
    for (const auto& opt : j.value("options", Json::array())) {
        McqOption o;
        std::string letter = opt.value("letter", "");
        o.letter = letter.empty() ? 0 : letter[0];
        o.text = opt.value("text", "");
        r.options.push_back(std::move(o));
    }
    std::string answer = j.value("answer", "");
    r.answer_letter = answer.empty() ? 0 : answer[0];
    r.category = j.value("category", "");
    for (const auto& img : j.value("images", Json::array())) {
        ImageRef ref;
        ref.id = img.value("id", "");
        ref.uri = img.value("uri", "");
        ref.caption = img.value("caption", "");
        r.images.push_back(std::move(ref));
    }
    if (j.contains("metadata")) {
        for (const auto& [k, v] : j.at("metadata").items())
            r.metadata[k] = v.get<std::string>();
    }
    return r;
}

void check_record(const DatasetRecord& r, std::vector<std::string>& problems,
                  std::size_t lineno) {
    auto report = [&](const std::string& msg) {
        problems.push_back("line " + std::to_string(lineno) + ": " + msg);
    };
    if (r.id.empty()) report("missing id");
    try {
        r.to_query().validate();
    } catch (const ValidationError& e) {
        report(e.what());
    }
    if (r.images.empty()) report("images: a question needs 1-10 images, got 0");
    if (r.options.empty()) {
        report("options: multiple-choice records need options");
    } else if (r.answer_letter == 0 ||
               std::none_of(r.options.begin(), r.options.end(), [&](const McqOption& o) {
                   return o.letter == r.answer_letter;
               })) {
        report(std::string("answer: letter '") +
               (r.answer_letter ? std::string(1, r.answer_letter) : "") +
               "' is not one of the option letters");
    }
    if (std::find(category_names().begin(), category_names().end(), r.category) ==
        category_names().end())
        report("category: '" + r.category + "' not one of DI, PI, SI, MI, SD");
    for (const auto& img : r.images) {
        if (!img.uri.empty() && !is_remote_uri(img.uri) && !fs::exists(img.uri))
            report("images: local file not found: " + img.uri);
    }
}

}  // namespace

std::vector<DatasetRecord> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open dataset: " + path, {});

    std::vector<DatasetRecord> records;
    std::vector<std::string> problems;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            problems.push_back("line " + std::to_string(lineno) + ": invalid JSON: " +
                               e.what());
            continue;
        }
        DatasetRecord r = record_from_json(j);
        check_record(r, problems, lineno);
        records.push_back(std::move(r));
    }
    if (!problems.empty()) {
        std::string summary = "dataset has " + std::to_string(problems.size()) +
                              " invalid record(s)";
        for (const auto& p : problems) summary += "\n  " + p;
        throw LoadError(summary, problems);
    }
    return records;
}

// ---------------------------------------------------------------------------
// Metric
// ---------------------------------------------------------------------------

int score(const std::string& predicted_letter, const std::string& gold_letter) {
    if (predicted_letter.empty() || gold_letter.empty()) return 0;
    if (predicted_letter.size() != gold_letter.size()) return 0;
    for (std::size_t i = 0; i < predicted_letter.size(); ++i) {
        if (std::toupper(static_cast<unsigned char>(predicted_letter[i])) !=
            std::toupper(static_cast<unsigned char>(gold_letter[i])))
            return 0;
    }
    return 1;
}

std::string bucket(std::size_t n_images) {
    if (n_images == 0) throw ArgumentError("bucket needs at least one image");
    if (n_images >= 4) return "4+";
    return std::to_string(n_images);
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

Report aggregate(const std::vector<RecordResult>& results) {
    if (results.empty()) throw AggregationError("nothing to aggregate");
    std::set<std::string> seen;
    Report report;
    for (const auto& r : results) {
        if (!seen.insert(r.id).second)
            throw AggregationError("duplicate record id '" + r.id + "'");
        ++report.total_records;
        report.total_correct += static_cast<std::size_t>(r.score);
        auto& cat = report.per_category[r.category];
        ++cat.total;
        cat.correct += static_cast<std::size_t>(r.score);
        auto& bkt = report.per_bucket[bucket(r.n_images)];
        ++bkt.total;
        bkt.correct += static_cast<std::size_t>(r.score);
    }
    report.overall_accuracy =
        static_cast<double>(report.total_correct) / static_cast<double>(report.total_records);
    double macro_sum = 0.0;
    for (const auto& [name, stats] : report.per_category) macro_sum += stats.accuracy();
    report.macro_average = macro_sum / static_cast<double>(report.per_category.size());
    return report;
}

namespace {

Json stats_to_json(const CategoryStats& s) {
    return Json{{"correct", s.correct}, {"total", s.total}, {"accuracy", s.accuracy()}};
}

CategoryStats stats_from_json(const Json& j) {
    CategoryStats s;
    s.correct = j.value("correct", std::size_t{0});
    s.total = j.value("total", std::size_t{0});
    return s;
}

}  // namespace

Json Report::to_json() const {
    Json cats = Json::object();
    for (const auto& [name, stats] : per_category) cats[name] = stats_to_json(stats);
    Json buckets = Json::object();
    for (const auto& [name, stats] : per_bucket) buckets[name] = stats_to_json(stats);
    return Json{{"overall_accuracy", overall_accuracy},
                {"macro_average", macro_average},
                {"total_records", total_records},
                {"total_correct", total_correct},
                {"per_category", cats},
                {"per_bucket", buckets}};
}

Report Report::from_json(const Json& j) {
    Report r;
    r.overall_accuracy = j.value("overall_accuracy", 0.0);
    r.macro_average = j.value("macro_average", 0.0);
    r.total_records = j.value("total_records", std::size_t{0});
    r.total_correct = j.value("total_correct", std::size_t{0});
    if (j.contains("per_category"))
        for (const auto& [name, stats] : j.at("per_category").items())
            r.per_category[name] = stats_from_json(stats);
    if (j.contains("per_bucket"))
        for (const auto& [name, stats] : j.at("per_bucket").items())
            r.per_bucket[name] = stats_from_json(stats);
    return r;
}

bool Report::operator==(const Report& other) const {
    return to_json() == other.to_json();
}

Json RecordResult::to_json() const {
    return Json{{"id", id},          {"predicted", predicted}, {"gold", gold},
                {"score", score},    {"verified", verified},   {"failed", failed},
                {"loop_stats", loop_stats}};
}

// ---------------------------------------------------------------------------
// Bench run
// ---------------------------------------------------------------------------

BenchRun run_bench(const std::vector<DatasetRecord>& dataset, const EngineConfig& config,
                   int concurrency) {
    if (concurrency < 1) throw ArgumentError("concurrency must be >= 1");
    if (dataset.empty()) throw ArgumentError("dataset is empty");

    engine::Engine shared_engine(config);
    std::vector<RecordResult> results(dataset.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= dataset.size()) return;
            const DatasetRecord& record = dataset[i];
            RecordResult result;
            result.id = record.id;
            result.category = record.category;
            result.n_images = record.images.size();
            result.gold = std::string(1, record.answer_letter);
            try {
                auto final = shared_engine.run_session(record.to_query());
                if (final.chosen_option)
                    result.predicted = std::string(1, *final.chosen_option);
                result.verified = final.verified;
                result.loop_stats = final.loop_stats.to_json();
                result.score = score(result.predicted, result.gold);
            } catch (const std::exception& e) {
                result.failed = true;
                result.score = 0;
                result.loop_stats = Json{{"error", e.what()}};
            }
            results[i] = std::move(result);
        }
    };

    if (concurrency == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(concurrency));
        for (int t = 0; t < concurrency; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    BenchRun run;
    run.report = aggregate(results);
    run.results = std::move(results);
    return run;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

ReportFormat report_format_from_string(const std::string& s) {
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    throw ValidationError("format", "expected markdown, csv or json, got \"" + s + "\"");
}

namespace {

std::string pct(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
    return buf;
}

std::string cell(const Report& report, const std::string& category) {
    auto it = report.per_category.find(category);
    return it == report.per_category.end() ? "-" : pct(it->second.accuracy());
}

std::string bucket_cell(const Report& report, const std::string& name) {
    auto it = report.per_bucket.find(name);
    return it == report.per_bucket.end() ? "-" : pct(it->second.accuracy());
}

const std::vector<std::string> kBuckets = {"1", "2", "3", "4+"};

}  // namespace

std::string render(const Report& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::json:
            return report.to_json().dump(2) + "\n";
        case ReportFormat::csv: {
            std::string out = "DI,PI,SI,MI,SD,Average\n";
            for (std::size_t i = 0; i < category_names().size(); ++i)
                out += cell(report, category_names()[i]) + ",";
            out += pct(report.macro_average) + "\n";
            out += "1,2,3,4+\n";
            for (std::size_t i = 0; i < kBuckets.size(); ++i) {
                if (i) out += ",";
                out += bucket_cell(report, kBuckets[i]);
            }
            out += "\n";
            return out;
        }
        case ReportFormat::markdown: {
            std::string out = "## Accuracy by category\n\n";
            out += "| DI | PI | SI | MI | SD | Average |\n";
            out += "|---|---|---|---|---|---|\n|";
            for (const auto& name : category_names()) out += " " + cell(report, name) + " |";
            out += " " + pct(report.macro_average) + " |\n\n";
            out += "## Accuracy by image count\n\n";
            out += "| 1 | 2 | 3 | 4+ |\n|---|---|---|---|\n|";
            for (const auto& name : kBuckets) out += " " + bucket_cell(report, name) + " |";
            out += "\n\n";
            out += "Overall (micro): " + pct(report.overall_accuracy) + " over " +
                   std::to_string(report.total_records) + " questions.\n";
            return out;
        }
    }
    return "";
}

std::string render_results(const std::vector<RecordResult>& results) {
    std::string out;
    for (const auto& r : results) {
        out += r.to_json().dump();
        out += '\n';
    }
    return out;
}

}  // namespace agro::bench
