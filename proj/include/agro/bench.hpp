#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "agro/core.hpp"
#include "agro/json.hpp"
#include "agro/orchestrator.hpp"

namespace agro::bench {

inline const std::vector<std::string>& category_names() {
    static const std::vector<std::string> names = {"DI", "PI", "SI", "MI", "SD"};
    return names;
}

struct DatasetRecord {
    std::string id;
    std::string question;
    std::vector<McqOption> options;
    char answer_letter = 0;
    std::string category;  // DI, PI, SI, MI, SD
    std::vector<ImageRef> images;  // 1-10
    std::map<std::string, std::string> metadata;

    Query to_query() const;
};

/// JSONL loader. Any invalid record is collected (with its line number) and
/// reported all at once; nothing loads partially. Local image uris must
/// exist on disk.
std::vector<DatasetRecord> load_dataset(const std::string& path);

/// 1 iff the letters match case-insensitively, else 0.
int score(const std::string& predicted_letter, const std::string& gold_letter);

/// Image-count bucket: 1, 2, 3 or "4+". Zero images is an error.
std::string bucket(std::size_t n_images);

struct CategoryStats {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

struct Report {
    double overall_accuracy = 0.0;
    double macro_average = 0.0;
    std::size_t total_records = 0;
    std::size_t total_correct = 0;
    std::map<std::string, CategoryStats> per_category;
    std::map<std::string, CategoryStats> per_bucket;

    Json to_json() const;
    static Report from_json(const Json& j);
    bool operator==(const Report& other) const;
};

struct RecordResult {
    std::string id;
    std::string category;
    std::size_t n_images = 0;
    std::string predicted;
    std::string gold;
    int score = 0;
    bool verified = false;
    bool failed = false;
    Json loop_stats = Json::object();

    Json to_json() const;
};

/// Micro overall accuracy, per-category and per-image-bucket tables, and the
/// unweighted macro mean over the per-category accuracies. Duplicate ids and
/// empty inputs are errors.
Report aggregate(const std::vector<RecordResult>& results);

struct BenchRun {
    Report report;
    std::vector<RecordResult> results;  // dataset order
};

/// One engine, `concurrency` worker threads, one session per record. A
/// failing session scores 0 with failed=true; it never aborts the run.
/// Result order follows the dataset regardless of completion order.
BenchRun run_bench(const std::vector<DatasetRecord>& dataset, const EngineConfig& config,
                   int concurrency);

enum class ReportFormat { markdown, csv, json };

ReportFormat report_format_from_string(const std::string& s);

/// markdown: category table (DI..SD + Average) and bucket table (1,2,3,4+),
/// percentages with two decimals. csv: header row + one data row per table.
/// json: Report::to_json round-trippable.
std::string render(const Report& report, ReportFormat format);

/// One JSON object per result, dataset order.
std::string render_results(const std::vector<RecordResult>& results);

}  // namespace agro::bench
