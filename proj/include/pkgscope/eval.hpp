#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pkgscope/ingest.hpp"
#include "pkgscope/llm.hpp"

namespace pkgscope::eval {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const noexcept { return tp + fp + tn + fn; }
    /// Malicious is the positive class. Unlabeled truth is ignored.
    void add(Label truth, Label predicted);

    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// A percentage; `undefined` marks a 0/0 ratio, reported as 0.
struct Rate {
    double percent = 0.0;
    bool undefined = false;
};

struct Metrics {
    Rate recall;
    Rate precision;
    Rate accuracy;
    Rate benign_recall;
};

Metrics metrics(const ConfusionCounts& counts);

/// Two decimals, with a trailing '*' when undefined.
std::string format_rate(const Rate& r);

struct TokenStats {
    std::size_t count = 0;
    double mean = 0.0;
    double std = 0.0;  ///< population
    std::int64_t min = 0;
    std::int64_t max = 0;
};

struct TokenSample {
    Bucket bucket = Bucket::Small;
    std::size_t prompt_tokens = 0;
};

struct BucketTokenStats {
    std::string bucket;  ///< "Large", "Medium", "Small" or "All"
    TokenStats stats;
};

/// Rows in the order Large, Medium, Small, All; "All" pools every sample.
std::vector<BucketTokenStats> token_stats(const std::vector<TokenSample>& samples);
std::string token_table_markdown(const std::vector<BucketTokenStats>& rows);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

struct QualityAggregate {
    std::size_t valid = 0;
    std::size_t penalized = 0;
    std::size_t invalid = 0;
    MeanStd threat_generalization;
    MeanStd path_traceability;
    MeanStd evidence_groundedness;
    MeanStd factual_alignment;
    double average_quality = 0.0;  ///< mean of the first three metric means
    double quality_std = 0.0;      ///< std of the per-sample average quality
};

/// Invalid outcomes (no scores) are skipped; penalized all-zero outcomes count.
QualityAggregate quality_aggregate(const std::vector<llm::JudgeOutcome>& outcomes);

// ---- run results -----------------------------------------------------------

enum class LlmStatus { Skipped, Valid, Invalid };
enum class JudgeStatus { NotJudged, Scored, Penalized, Invalid };

std::string_view to_string(LlmStatus s) noexcept;
std::string_view to_string(JudgeStatus s) noexcept;
LlmStatus parse_llm_status(std::string_view text);
JudgeStatus parse_judge_status(std::string_view text);

struct PackageResult {
    std::string id;
    Bucket bucket = Bucket::Small;
    Label truth = Label::Unlabeled;

    double p0 = 0.0;
    double p1 = 0.0;
    Label gnn_label = Label::Benign;

    LlmStatus llm_status = LlmStatus::Skipped;
    Label llm_verdict = Label::Benign;  ///< meaningful when llm_status is Valid
    std::string reasoning;
    std::string mitigation;
    int analysis_attempts = 0;

    std::size_t prompt_tokens = 0;
    std::string tokenizer_id;

    JudgeStatus judge_status = JudgeStatus::NotJudged;
    llm::JudgeScores scores;  ///< meaningful when Scored or Penalized
    int judge_attempts = 0;

    std::string error_stage;  ///< empty on success
    std::string error;

    /// LLM verdict when one was obtained, otherwise the GNN label.
    Label final_label() const;
    bool ok() const { return error_stage.empty(); }

    friend bool operator==(const PackageResult&, const PackageResult&) = default;
};

nlohmann::json to_json(const PackageResult& r);
PackageResult result_from_json(const nlohmann::json& j);

/// One JSON object per line, sorted by id.
std::string to_jsonl(std::vector<PackageResult> results);
std::vector<PackageResult> parse_jsonl(std::string_view text);
void write_results(const std::vector<PackageResult>& results, const std::filesystem::path& path);
std::vector<PackageResult> read_results(const std::filesystem::path& path);

/// Metrics of the final labels, per bucket and pooled ("All").
struct BucketMetrics {
    std::string bucket;
    std::string detector;  ///< "gnn" or "final"
    ConfusionCounts counts;
    Metrics metrics;
};

std::vector<BucketMetrics> bucket_metrics(const std::vector<PackageResult>& results);
std::string metrics_csv(const std::vector<BucketMetrics>& rows);

/// Token samples are the packages whose subgraph reached the gateway.
std::vector<TokenSample> token_samples(const std::vector<PackageResult>& results);
std::vector<llm::JudgeOutcome> judge_outcomes(const std::vector<PackageResult>& results);

std::string summary_markdown(const std::vector<PackageResult>& results);

struct ReportPaths {
    std::filesystem::path results;
    std::filesystem::path metrics;
    std::filesystem::path summary;
};

/// Writes results.jsonl, metrics.csv and summary.md into `dir` (created if needed).
ReportPaths emit_report(const std::vector<PackageResult>& results, const std::filesystem::path& dir);

}  // namespace pkgscope::eval
