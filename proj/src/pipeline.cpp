#include "pkgscope/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <initializer_list>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pkgscope/error.hpp"
#include "pkgscope/util.hpp"

namespace pkgscope::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, std::string_view section, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) throw ConfigError(fmt::format("config section '{}' must be a table", section));
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError(fmt::format("unknown config key '{}{}{}'", section, section.empty() ? "" : ".", key));
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void read_path(const json& j, const char* key, fs::path& out) {
    if (j.contains(key)) out = j.at(key).get<std::string>();
}

}  // namespace

RunConfig run_config_from_json(const json& j, RunConfig c) {
    check_keys(j, "", {"paths", "gateway", "explainer", "train", "extract", "split", "scan"});
    try {
        if (j.contains("paths")) {
            const json& p = j["paths"];
            check_keys(p, "paths", {"corpus", "manifest", "labels", "reports", "rules", "model", "out"});
            read_path(p, "corpus", c.corpus);
            read_path(p, "manifest", c.manifest);
            read_path(p, "labels", c.labels);
            read_path(p, "reports", c.reports);
            read_path(p, "rules", c.rules);
            read_path(p, "model", c.model);
            read_path(p, "out", c.out);
        }
        if (j.contains("gateway")) {
            json g = j["gateway"];
            check_keys(g, "gateway",
                       {"base_url", "model", "temperature", "timeout_s", "max_retries", "tokenizer_id", "api_key_env",
                        "max_concurrency", "mock", "mock_fixture", "cache_dir"});
            read(g, "mock", c.mock_gateway);
            read_path(g, "mock_fixture", c.mock_fixture);
            read_path(g, "cache_dir", c.cache_dir);
            g.erase("mock");
            g.erase("mock_fixture");
            g.erase("cache_dir");
            c.gateway = llm::gateway_config_from_json(g, c.gateway);
        }
        if (j.contains("explainer")) {
            check_keys(j["explainer"], "explainer", {"steps", "lr", "lambda_size", "lambda_ent", "epsilon", "seed"});
            c.explainer = explain::explainer_config_from_json(j["explainer"], c.explainer);
        }
        if (j.contains("train")) {
            check_keys(j["train"], "train",
                       {"lr", "weight_decay", "batch_size", "epochs", "dropout", "seed", "hidden", "beta1", "beta2",
                        "adam_eps"});
            c.train = gcn::train_config_from_json(j["train"], c.train);
        }
        if (j.contains("extract")) {
            check_keys(j["extract"], "extract", {"top_k", "source_cap"});
            read(j["extract"], "top_k", c.top_k);
            read(j["extract"], "source_cap", c.source_cap);
        }
        if (j.contains("split")) {
            check_keys(j["split"], "split", {"seed", "ratio"});
            read(j["split"], "seed", c.split_seed);
            read(j["split"], "ratio", c.split_ratio);
        }
        if (j.contains("scan")) {
            check_keys(j["scan"], "scan", {"jobs", "force_explain"});
            read(j["scan"], "jobs", c.jobs);
            read(j["scan"], "force_explain", c.force_explain);
        }
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("bad config value: {}", e.what()));
    }
    if (c.top_k < 1) throw ConfigError("extract.top_k must be at least 1");
    if (c.jobs < 1) throw ConfigError("scan.jobs must be at least 1");
    if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw ConfigError("split.ratio must be in (0, 1)");
    return c;
}

json to_json(const RunConfig& c) {
    const auto& g = c.gateway;
    return {{"paths",
             {{"corpus", c.corpus.string()},
              {"manifest", c.manifest.string()},
              {"labels", c.labels.string()},
              {"reports", c.reports.string()},
              {"rules", c.rules.string()},
              {"model", c.model.string()},
              {"out", c.out.string()}}},
            {"gateway",
             {{"base_url", g.base_url},
              {"model", g.model},
              {"temperature", g.temperature},
              {"timeout_s", g.timeout_s},
              {"max_retries", g.max_retries},
              {"tokenizer_id", g.tokenizer_id},
              {"api_key_env", g.api_key_env},
              {"max_concurrency", g.max_concurrency},
              {"mock", c.mock_gateway},
              {"mock_fixture", c.mock_fixture.string()},
              {"cache_dir", c.cache_dir.string()}}},
            {"explainer", explain::to_json(c.explainer)},
            {"train", gcn::to_json(c.train)},
            {"extract", {{"top_k", c.top_k}, {"source_cap", c.source_cap}}},
            {"split", {{"seed", c.split_seed}, {"ratio", c.split_ratio}}},
            {"scan", {{"jobs", c.jobs}, {"force_explain", c.force_explain}}}};
}

std::shared_ptr<llm::ChatClient> make_client(const RunConfig& config) {
    std::shared_ptr<llm::ChatClient> inner;
    if (config.mock_gateway) {
        if (config.mock_fixture.empty()) throw ConfigError("mock gateway needs a fixture file (gateway.mock_fixture)");
        json doc = json::parse(read_file(config.mock_fixture), nullptr, false);
        if (doc.is_discarded()) throw FormatError(fmt::format("{} is not valid JSON", config.mock_fixture.string()));
        inner = std::make_shared<llm::MockClient>(llm::MockClient::parse_fixture(doc));
    } else {
        inner = std::make_shared<llm::HttpClient>(config.gateway);
    }
    if (config.cache_dir.empty()) return inner;

    // The cache holds a reference; keep the wrapped client alive alongside it.
    struct Cached : llm::ChatClient {
        std::shared_ptr<llm::ChatClient> inner;
        llm::CachingClient cache;
        Cached(std::shared_ptr<llm::ChatClient> c, fs::path dir) : inner(std::move(c)), cache(*inner, std::move(dir)) {}
        std::string complete(const std::vector<llm::ChatMessage>& m) override { return cache.complete(m); }
    };
    return std::make_shared<Cached>(std::move(inner), config.cache_dir);
}

gcn::Model train_model(const DatasetManifest& manifest, const rules::RuleSet& rules, const gcn::TrainConfig& config) {
    if (manifest.train_ids.empty()) throw Error("manifest has no training split");
    std::vector<CodeGraph> train_graphs, test_graphs;
    std::vector<int> train_labels, test_labels;
    for (const auto& r : manifest.records) {
        bool in_train = manifest.train_ids.count(r.id) > 0;
        bool in_test = manifest.test_ids.count(r.id) > 0;
        if (!in_train && !in_test) continue;
        (in_train ? train_graphs : test_graphs).push_back(build_graph(r));
        (in_train ? train_labels : test_labels).push_back(r.label == Label::Malicious ? 1 : 0);
    }
    std::vector<const CodeGraph*> vocab_src;
    for (const auto& g : train_graphs) vocab_src.push_back(&g);

    gcn::Model model;
    std::tie(model.names, model.types) = gcn::build_vocabularies(vocab_src);
    model.rules = rules;
    model.config = config;

    auto encode_all = [&](const std::vector<CodeGraph>& graphs, const std::vector<int>& labels) {
        std::vector<gcn::Sample> out;
        for (std::size_t i = 0; i < graphs.size(); ++i) {
            if (graphs[i].nodes.empty()) {
                spdlog::warn("skipping {}: no Python nodes", graphs[i].package);
                continue;
            }
            out.push_back({model.encode(graphs[i]), labels[i]});
        }
        return out;
    };
    auto train_set = encode_all(train_graphs, train_labels);
    auto test_set = encode_all(test_graphs, test_labels);
    if (train_set.empty()) throw Error("no trainable graphs in the training split");

    auto result = gcn::train(train_set, test_set, static_cast<int>(model.names.size()),
                             static_cast<int>(model.types.size()), static_cast<int>(rules.size()), config);
    model.params = std::move(result.params);
    model.history = std::move(result.history);
    return model;
}

eval::PackageResult scan_package(const PackageRecord& record, const gcn::Model& model, llm::ChatClient* client,
                                 const llm::Tokenizer& tokenizer, const ScanOptions& options,
                                 ScanArtifacts* artifacts) {
    eval::PackageResult r;
    r.id = record.id;
    r.bucket = record.bucket;
    r.truth = record.label;
    r.tokenizer_id = std::string(tokenizer.id());

    ScanArtifacts local;
    ScanArtifacts& art = artifacts ? *artifacts : local;
    std::string stage;
    try {
        stage = "graph";
        art.graph = build_graph(record);

        stage = "predict";
        gcn::EncodedGraph encoded = model.encode(art.graph);
        gcn::Prediction pred = gcn::predict(model.params, encoded);
        r.p0 = pred.probs.p0;
        r.p1 = pred.probs.p1;
        r.gnn_label = pred.label;

        bool malicious = pred.label == Label::Malicious;
        if ((!malicious && !options.force_explain) || encoded.num_nodes() == 0) return r;

        stage = "explain";
        art.explanation = explain::optimize_masks(encoded, model.params, options.explainer);
        if (art.explanation->aborted) spdlog::warn("{}: explainer stopped early: {}", record.id, art.explanation->diagnostic);

        stage = "extract";
        art.subgraph = subgraph::extract_topk(art.graph, explain::attention_scores(art.explanation->masks), options.top_k);
        art.prompt = subgraph::serialize_prompt_text(*art.subgraph, options.source_cap);
        if (!malicious) return r;

        stage = "analyze";
        if (client == nullptr) throw ConfigError("no gateway client configured");
        llm::AnalysisOutcome outcome = llm::analyze(art.prompt, *client, tokenizer, options.policy);
        r.analysis_attempts = outcome.attempts;
        r.prompt_tokens = outcome.tokens.prompt_tokens;
        if (outcome.verdict) {
            r.llm_status = eval::LlmStatus::Valid;
            r.llm_verdict = outcome.verdict->verdict;
            r.reasoning = outcome.verdict->reasoning;
            r.mitigation = outcome.verdict->mitigation;
        } else {
            r.llm_status = eval::LlmStatus::Invalid;
        }
    } catch (const std::exception& e) {
        r.error_stage = stage;
        r.error = e.what();
        spdlog::error("{}: {} stage failed: {}", record.id, stage, e.what());
    }
    return r;
}

std::vector<eval::PackageResult> scan_records(const std::vector<PackageRecord>& records, const gcn::Model& model,
                                              llm::ChatClient* client, const llm::Tokenizer& tokenizer,
                                              const ScanOptions& options, int jobs, const fs::path& artifact_dir) {
    if (jobs < 1) throw ConfigError("jobs must be at least 1");
    std::vector<eval::PackageResult> results(records.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < records.size(); i = next++) {
            ScanArtifacts art;
            results[i] = scan_package(records[i], model, client, tokenizer, options, &art);
            if (artifact_dir.empty()) continue;
            fs::path dir = artifact_dir / records[i].id;
            try {
                save_graph(art.graph, dir / "graph.json");
                if (art.explanation) explain::save_explanation(*art.explanation, options.explainer, dir / "masks.json");
                if (art.subgraph) {
                    write_file(dir / "subgraph.json", subgraph::to_json(*art.subgraph).dump(2));
                    write_file(dir / "prompt.txt", art.prompt);
                }
            } catch (const std::exception& e) {
                if (results[i].ok()) {
                    results[i].error_stage = "artifacts";
                    results[i].error = e.what();
                }
            }
        }
    };
    std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(jobs), std::max<std::size_t>(records.size(), 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return results;
}

std::string explanation_text(const eval::PackageResult& r) {
    std::string out = r.reasoning;
    if (!r.mitigation.empty()) {
        if (!out.empty()) out += "\n\n";
        out += "Mitigation: " + r.mitigation;
    }
    return out;
}

void judge_results(std::vector<eval::PackageResult>& results, const DatasetManifest& manifest,
                   llm::ChatClient& client, const llm::RetryPolicy& policy) {
    for (auto& r : results) {
        const PackageRecord* rec = manifest.find(r.id);
        if (!r.ok() || rec == nullptr || rec->label != Label::Malicious || !rec->behavior_summary) continue;
        Label predicted = r.final_label();
        if (predicted == Label::Malicious && r.llm_status != eval::LlmStatus::Valid) {
            r.judge_status = eval::JudgeStatus::Invalid;  // flagged but nothing to judge
            continue;
        }
        llm::JudgeOutcome o = llm::judge(explanation_text(r), *rec->behavior_summary, predicted, client, policy);
        r.judge_attempts = o.attempts;
        if (!o.scores) {
            r.judge_status = eval::JudgeStatus::Invalid;
        } else {
            r.scores = *o.scores;
            r.judge_status = o.penalized ? eval::JudgeStatus::Penalized : eval::JudgeStatus::Scored;
        }
    }
}

std::vector<eval::PackageResult> align_with_manifest(std::vector<eval::PackageResult> results,
                                                     const DatasetManifest& manifest, bool test_only) {
    std::vector<eval::PackageResult> out;
    for (auto& r : results) {
        const PackageRecord* rec = manifest.find(r.id);
        if (test_only && manifest.test_ids.count(r.id) == 0) continue;
        if (rec != nullptr) {
            r.truth = rec->label;
            r.bucket = rec->bucket;
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace pkgscope::pipeline
