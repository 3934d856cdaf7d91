#include "pkgscope/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "pkgscope/error.hpp"
#include "pkgscope/util.hpp"

namespace pkgscope::eval {

using nlohmann::json;

void ConfusionCounts::add(Label truth, Label predicted) {
    if (truth == Label::Unlabeled) return;
    bool pos = predicted == Label::Malicious;
    if (truth == Label::Malicious) {
        ++(pos ? tp : fn);
    } else {
        ++(pos ? fp : tn);
    }
}

namespace {

Rate ratio(std::int64_t num, std::int64_t den) {
    if (den == 0) return {0.0, true};
    return {100.0 * static_cast<double>(num) / static_cast<double>(den), false};
}

MeanStd mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

constexpr Bucket kBucketOrder[] = {Bucket::Large, Bucket::Medium, Bucket::Small};

}  // namespace

Metrics metrics(const ConfusionCounts& c) {
    return {ratio(c.tp, c.tp + c.fn), ratio(c.tp, c.tp + c.fp), ratio(c.tp + c.tn, c.total()),
            ratio(c.tn, c.tn + c.fp)};
}

std::string format_rate(const Rate& r) { return fmt::format("{:.2f}{}", r.percent, r.undefined ? "*" : ""); }

std::vector<BucketTokenStats> token_stats(const std::vector<TokenSample>& samples) {
    auto stats_of = [](const std::vector<double>& xs) {
        TokenStats s;
        s.count = xs.size();
        if (xs.empty()) return s;
        MeanStd ms = mean_std(xs);
        s.mean = ms.mean;
        s.std = ms.std;
        auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
        s.min = static_cast<std::int64_t>(*lo);
        s.max = static_cast<std::int64_t>(*hi);
        return s;
    };
    std::vector<BucketTokenStats> rows;
    std::vector<double> all;
    for (Bucket b : kBucketOrder) {
        std::vector<double> xs;
        for (const auto& s : samples)
            if (s.bucket == b) xs.push_back(static_cast<double>(s.prompt_tokens));
        all.insert(all.end(), xs.begin(), xs.end());
        rows.push_back({std::string(to_string(b)), stats_of(xs)});
    }
    rows.push_back({"All", stats_of(all)});
    return rows;
}

std::string token_table_markdown(const std::vector<BucketTokenStats>& rows) {
    std::string out = "| Bucket | Mean | Std | Min | Max | N |\n|---|---:|---:|---:|---:|---:|\n";
    for (const auto& r : rows) {
        if (r.stats.count == 0) {
            out += fmt::format("| {} | - | - | - | - | 0 |\n", r.bucket);
            continue;
        }
        out += fmt::format("| {} | {:.2f} | {:.2f} | {} | {} | {} |\n", r.bucket, r.stats.mean, r.stats.std, r.stats.min,
                           r.stats.max, r.stats.count);
    }
    return out;
}

QualityAggregate quality_aggregate(const std::vector<llm::JudgeOutcome>& outcomes) {
    QualityAggregate q;
    std::vector<double> tg, pt, eg, fa, avg;
    for (const auto& o : outcomes) {
        if (!o.scores) {
            ++q.invalid;
            continue;
        }
        ++q.valid;
        if (o.penalized) ++q.penalized;
        tg.push_back(o.scores->threat_generalization);
        pt.push_back(o.scores->path_traceability);
        eg.push_back(o.scores->evidence_groundedness);
        fa.push_back(o.scores->factual_alignment);
        avg.push_back(o.scores->average_quality());
    }
    q.threat_generalization = mean_std(tg);
    q.path_traceability = mean_std(pt);
    q.evidence_groundedness = mean_std(eg);
    q.factual_alignment = mean_std(fa);
    q.average_quality =
        (q.threat_generalization.mean + q.path_traceability.mean + q.evidence_groundedness.mean) / 3.0;
    q.quality_std = mean_std(avg).std;
    return q;
}

// ---- run results -----------------------------------------------------------

std::string_view to_string(LlmStatus s) noexcept {
    switch (s) {
        case LlmStatus::Skipped: return "skipped";
        case LlmStatus::Valid: return "valid";
        case LlmStatus::Invalid: return "invalid";
    }
    return "skipped";
}

std::string_view to_string(JudgeStatus s) noexcept {
    switch (s) {
        case JudgeStatus::NotJudged: return "not_judged";
        case JudgeStatus::Scored: return "scored";
        case JudgeStatus::Penalized: return "penalized";
        case JudgeStatus::Invalid: return "invalid";
    }
    return "not_judged";
}

LlmStatus parse_llm_status(std::string_view text) {
    for (auto s : {LlmStatus::Skipped, LlmStatus::Valid, LlmStatus::Invalid})
        if (to_string(s) == text) return s;
    throw FormatError(fmt::format("unknown llm status '{}'", text));
}

JudgeStatus parse_judge_status(std::string_view text) {
    for (auto s : {JudgeStatus::NotJudged, JudgeStatus::Scored, JudgeStatus::Penalized, JudgeStatus::Invalid})
        if (to_string(s) == text) return s;
    throw FormatError(fmt::format("unknown judge status '{}'", text));
}

Label PackageResult::final_label() const { return llm_status == LlmStatus::Valid ? llm_verdict : gnn_label; }

json to_json(const PackageResult& r) {
    json j;
    j["id"] = r.id;
    j["bucket"] = to_string(r.bucket);
    j["label"] = to_string(r.truth);
    j["gnn"] = {{"p0", r.p0}, {"p1", r.p1}, {"label", to_string(r.gnn_label)}};
    json llm = {{"status", to_string(r.llm_status)}, {"attempts", r.analysis_attempts}};
    if (r.llm_status == LlmStatus::Valid) {
        llm["verdict"] = to_string(r.llm_verdict);
        llm["reasoning"] = r.reasoning;
        llm["mitigation"] = r.mitigation;
    }
    j["llm"] = std::move(llm);
    j["tokens"] = {{"prompt", r.prompt_tokens}, {"tokenizer", r.tokenizer_id}};
    json judge = {{"status", to_string(r.judge_status)}, {"attempts", r.judge_attempts}};
    if (r.judge_status == JudgeStatus::Scored || r.judge_status == JudgeStatus::Penalized) {
        judge["scores"] = {{"threat_generalization", r.scores.threat_generalization},
                           {"path_traceability", r.scores.path_traceability},
                           {"evidence_groundedness", r.scores.evidence_groundedness},
                           {"factual_alignment", r.scores.factual_alignment}};
    }
    j["judge"] = std::move(judge);
    j["error"] = r.ok() ? json(nullptr) : json{{"stage", r.error_stage}, {"message", r.error}};
    return j;
}

PackageResult result_from_json(const json& j) {
    try {
        PackageResult r;
        r.id = j.at("id").get<std::string>();
        r.bucket = parse_bucket(j.at("bucket").get<std::string>());
        r.truth = parse_label(j.at("label").get<std::string>());
        const json& g = j.at("gnn");
        r.p0 = g.at("p0").get<double>();
        r.p1 = g.at("p1").get<double>();
        r.gnn_label = parse_label(g.at("label").get<std::string>());
        const json& l = j.at("llm");
        r.llm_status = parse_llm_status(l.at("status").get<std::string>());
        r.analysis_attempts = l.at("attempts").get<int>();
        if (r.llm_status == LlmStatus::Valid) {
            r.llm_verdict = parse_label(l.at("verdict").get<std::string>());
            r.reasoning = l.at("reasoning").get<std::string>();
            r.mitigation = l.at("mitigation").get<std::string>();
        }
        r.prompt_tokens = j.at("tokens").at("prompt").get<std::size_t>();
        r.tokenizer_id = j.at("tokens").at("tokenizer").get<std::string>();
        const json& jd = j.at("judge");
        r.judge_status = parse_judge_status(jd.at("status").get<std::string>());
        r.judge_attempts = jd.at("attempts").get<int>();
        if (r.judge_status == JudgeStatus::Scored || r.judge_status == JudgeStatus::Penalized) {
            const json& s = jd.at("scores");
            r.scores.threat_generalization = s.at("threat_generalization").get<int>();
            r.scores.path_traceability = s.at("path_traceability").get<int>();
            r.scores.evidence_groundedness = s.at("evidence_groundedness").get<int>();
            r.scores.factual_alignment = s.at("factual_alignment").get<int>();
        }
        if (!j.at("error").is_null()) {
            r.error_stage = j["error"].at("stage").get<std::string>();
            r.error = j["error"].at("message").get<std::string>();
        }
        return r;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("malformed result record: {}", e.what()));
    }
}

std::string to_jsonl(std::vector<PackageResult> results) {
    std::stable_sort(results.begin(), results.end(),
                     [](const PackageResult& a, const PackageResult& b) { return a.id < b.id; });
    std::string out;
    for (const auto& r : results) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

std::vector<PackageResult> parse_jsonl(std::string_view text) {
    std::vector<PackageResult> out;
    std::size_t lineno = 0;
    while (!text.empty()) {
        std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++lineno;
        if (trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw FormatError(fmt::format("results line {} is not JSON", lineno));
        out.push_back(result_from_json(j));
    }
    return out;
}

void write_results(const std::vector<PackageResult>& results, const std::filesystem::path& path) {
    write_file(path, to_jsonl(results));
}

std::vector<PackageResult> read_results(const std::filesystem::path& path) { return parse_jsonl(read_file(path)); }

std::vector<BucketMetrics> bucket_metrics(const std::vector<PackageResult>& results) {
    std::vector<BucketMetrics> rows;
    auto add_rows = [&](const std::string& name, auto&& include) {
        ConfusionCounts gnn, fin;
        for (const auto& r : results) {
            if (!r.ok() || r.truth == Label::Unlabeled || !include(r)) continue;
            gnn.add(r.truth, r.gnn_label);
            fin.add(r.truth, r.final_label());
        }
        if (gnn.total() == 0) return;
        rows.push_back({name, "gnn", gnn, metrics(gnn)});
        rows.push_back({name, "final", fin, metrics(fin)});
    };
    for (Bucket b : kBucketOrder)
        add_rows(std::string(to_string(b)), [b](const PackageResult& r) { return r.bucket == b; });
    add_rows("All", [](const PackageResult&) { return true; });
    return rows;
}

std::string metrics_csv(const std::vector<BucketMetrics>& rows) {
    std::string out = "bucket,detector,n,tp,fp,tn,fn,recall,precision,accuracy,benign_recall,undefined\n";
    for (const auto& r : rows) {
        const Metrics& m = r.metrics;
        std::vector<std::string> undefined;
        if (m.recall.undefined) undefined.emplace_back("recall");
        if (m.precision.undefined) undefined.emplace_back("precision");
        if (m.accuracy.undefined) undefined.emplace_back("accuracy");
        if (m.benign_recall.undefined) undefined.emplace_back("benign_recall");
        out += fmt::format("{},{},{},{},{},{},{},{:.2f},{:.2f},{:.2f},{:.2f},{}\n", r.bucket, r.detector,
                           r.counts.total(), r.counts.tp, r.counts.fp, r.counts.tn, r.counts.fn, m.recall.percent,
                           m.precision.percent, m.accuracy.percent, m.benign_recall.percent,
                           fmt::join(undefined, ";"));
    }
    return out;
}

std::vector<TokenSample> token_samples(const std::vector<PackageResult>& results) {
    std::vector<TokenSample> out;
    for (const auto& r : results)
        if (r.llm_status != LlmStatus::Skipped) out.push_back({r.bucket, r.prompt_tokens});
    return out;
}

std::vector<llm::JudgeOutcome> judge_outcomes(const std::vector<PackageResult>& results) {
    std::vector<llm::JudgeOutcome> out;
    for (const auto& r : results) {
        switch (r.judge_status) {
            case JudgeStatus::NotJudged: break;
            case JudgeStatus::Invalid: out.push_back({std::nullopt, r.judge_attempts, false}); break;
            case JudgeStatus::Scored: out.push_back({r.scores, r.judge_attempts, false}); break;
            case JudgeStatus::Penalized: out.push_back({r.scores, r.judge_attempts, true}); break;
        }
    }
    return out;
}

std::string summary_markdown(const std::vector<PackageResult>& results) {
    std::size_t errors = static_cast<std::size_t>(
        std::count_if(results.begin(), results.end(), [](const PackageResult& r) { return !r.ok(); }));
    std::string out = "# Evaluation summary\n\n";
    out += fmt::format("Packages: {} (stage errors: {})\n\n", results.size(), errors);
    out += "All standard deviations are population standard deviations (divided by n).\n\n";

    out += "## Detection\n\n";
    out += "| Bucket | Detector | N | Recall | Precision | Accuracy | Benign Recall |\n";
    out += "|---|---|---:|---:|---:|---:|---:|\n";
    bool any_undefined = false;
    for (const auto& r : bucket_metrics(results)) {
        const Metrics& m = r.metrics;
        any_undefined = any_undefined || m.recall.undefined || m.precision.undefined || m.accuracy.undefined ||
                        m.benign_recall.undefined;
        out += fmt::format("| {} | {} | {} | {} | {} | {} | {} |\n", r.bucket, r.detector, r.counts.total(),
                           format_rate(m.recall), format_rate(m.precision), format_rate(m.accuracy),
                           format_rate(m.benign_recall));
    }
    if (any_undefined) out += "\n\\* 0/0: the denominator is empty; reported as 0.00.\n";

    out += "\n## Description quality\n\n";
    out += "| Bucket | N | Penalized | Invalid | Threat Generalization | Path Traceability | Evidence Groundedness | "
           "Average Quality | Quality Std | Factual Alignment |\n";
    out += "|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n";
    auto quality_row = [&](const std::string& name, const std::vector<PackageResult>& subset) {
        auto outcomes = judge_outcomes(subset);
        if (outcomes.empty()) return;
        QualityAggregate q = quality_aggregate(outcomes);
        out += fmt::format("| {} | {} | {} | {} | {:.2f} | {:.2f} | {:.2f} | {:.2f} | {:.2f} | {:.2f} |\n", name, q.valid,
                           q.penalized, q.invalid, q.threat_generalization.mean, q.path_traceability.mean,
                           q.evidence_groundedness.mean, q.average_quality, q.quality_std, q.factual_alignment.mean);
    };
    for (Bucket b : kBucketOrder) {
        std::vector<PackageResult> subset;
        std::copy_if(results.begin(), results.end(), std::back_inserter(subset),
                     [b](const PackageResult& r) { return r.bucket == b; });
        quality_row(std::string(to_string(b)), subset);
    }
    quality_row("All", results);

    out += "\n## Prompt tokens\n\n";
    auto samples = token_samples(results);
    if (samples.empty()) {
        out += "| Bucket | Mean | Std | Min | Max | N |\n|---|---:|---:|---:|---:|---:|\n";
    } else {
        out += token_table_markdown(token_stats(samples));
    }
    return out;
}

ReportPaths emit_report(const std::vector<PackageResult>& results, const std::filesystem::path& dir) {
    std::set<std::string> seen;
    for (const auto& r : results)
        if (!seen.insert(r.id).second) throw Error(fmt::format("duplicate result id '{}'", r.id));

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(fmt::format("cannot create report directory {}: {}", dir.string(), ec.message()));
    ReportPaths paths{dir / "results.jsonl", dir / "metrics.csv", dir / "summary.md"};
    write_results(results, paths.results);
    write_file(paths.metrics, metrics_csv(bucket_metrics(results)));
    write_file(paths.summary, summary_markdown(results));
    return paths;
}

}  // namespace pkgscope::eval
