#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pkgscope/code_graph.hpp"
#include "pkgscope/eval.hpp"
#include "pkgscope/explainer.hpp"
#include "pkgscope/gcn.hpp"
#include "pkgscope/ingest.hpp"
#include "pkgscope/llm.hpp"
#include "pkgscope/subgraph.hpp"

namespace pkgscope::pipeline {

/// Settings shared by the subcommands. Every key is optional in a config file;
/// command-line flags override file values.
struct RunConfig {
    std::filesystem::path corpus;
    std::filesystem::path manifest;
    std::filesystem::path labels;
    std::filesystem::path reports;
    std::filesystem::path rules;
    std::filesystem::path model;
    std::filesystem::path out;

    llm::GatewayConfig gateway;
    bool mock_gateway = false;
    std::filesystem::path mock_fixture;
    std::filesystem::path cache_dir;  ///< empty: no response cache

    explain::ExplainerConfig explainer;
    gcn::TrainConfig train;

    int top_k = subgraph::kDefaultTopK;
    std::size_t source_cap = subgraph::kDefaultSourceCap;

    std::uint64_t split_seed = 0;
    double split_ratio = 0.8;

    bool force_explain = false;
    int jobs = 1;
};

/// Sections: paths, gateway, explainer, train, extract, split, scan.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
nlohmann::json to_json(const RunConfig& c);
/// Parses a ".toml" file as TOML and anything else as JSON.
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Gateway client for the config: MockClient over `mock_fixture` when
/// `mock_gateway` is set, otherwise the HTTP client, behind the disk cache
/// when `cache_dir` is set.
std::shared_ptr<llm::ChatClient> make_client(const RunConfig& config);

/// Graphs of the manifest's train and test packages, encoded with
/// vocabularies built from the training graphs, then trained.
gcn::Model train_model(const DatasetManifest& manifest, const rules::RuleSet& rules, const gcn::TrainConfig& config);

struct ScanOptions {
    explain::ExplainerConfig explainer;
    int top_k = subgraph::kDefaultTopK;
    std::size_t source_cap = subgraph::kDefaultSourceCap;
    bool force_explain = false;
    llm::RetryPolicy policy;
};

/// Intermediate products of one scan, kept for inspection.
struct ScanArtifacts {
    CodeGraph graph;
    std::optional<explain::Explanation> explanation;
    std::optional<subgraph::AttentionSubgraph> subgraph;
    std::string prompt;
};

/// predict -> explain -> extract -> analyze for one package. Benign
/// predictions stop after predict (or after extract with force_explain) and
/// never reach the gateway. Stage failures are recorded in the result.
eval::PackageResult scan_package(const PackageRecord& record, const gcn::Model& model, llm::ChatClient* client,
                                 const llm::Tokenizer& tokenizer, const ScanOptions& options,
                                 ScanArtifacts* artifacts = nullptr);

/// Scans every record with at most `jobs` packages in flight. Results keep
/// the record order. `artifact_dir`, when set, receives per-package files.
std::vector<eval::PackageResult> scan_records(const std::vector<PackageRecord>& records, const gcn::Model& model,
                                              llm::ChatClient* client, const llm::Tokenizer& tokenizer,
                                              const ScanOptions& options, int jobs,
                                              const std::filesystem::path& artifact_dir = {});

/// Text judged against the ground truth: the reasoning, then the mitigation.
std::string explanation_text(const eval::PackageResult& r);

/// Fills the judge fields of every labeled-malicious result that has a
/// ground-truth summary in the manifest; other results are left unjudged.
void judge_results(std::vector<eval::PackageResult>& results, const DatasetManifest& manifest,
                   llm::ChatClient& client, const llm::RetryPolicy& policy = {});

/// Copies label and bucket from the manifest. With `test_only`, results
/// outside the manifest's test split are dropped.
std::vector<eval::PackageResult> align_with_manifest(std::vector<eval::PackageResult> results,
                                                     const DatasetManifest& manifest, bool test_only);

}  // namespace pkgscope::pipeline
