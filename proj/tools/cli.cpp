#include "cli.hpp"

#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "pkgscope/code_graph.hpp"
#include "pkgscope/error.hpp"
#include "pkgscope/eval.hpp"
#include "pkgscope/explainer.hpp"
#include "pkgscope/gcn.hpp"
#include "pkgscope/ingest.hpp"
#include "pkgscope/llm.hpp"
#include "pkgscope/pipeline.hpp"
#include "pkgscope/rules.hpp"
#include "pkgscope/subgraph.hpp"
#include "pkgscope/util.hpp"

namespace pkgscope::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::RunConfig;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flag values are applied on top of the config file after parsing.
class Overrides {
public:
    template <typename T, typename Set>
    CLI::Option* option(CLI::App* app, const std::string& name, Set set, const std::string& desc) {
        auto value = std::make_shared<T>();
        CLI::Option* opt = app->add_option(name, *value, desc);
        fns_.push_back([opt, value, set](RunConfig& c) {
            if (opt->count() > 0) set(c, *value);
        });
        return opt;
    }

    CLI::Option* flag(CLI::App* app, const std::string& name, std::function<void(RunConfig&)> set,
                      const std::string& desc) {
        CLI::Option* opt = app->add_flag(name, desc);
        fns_.push_back([opt, set](RunConfig& c) {
            if (opt->count() > 0) set(c);
        });
        return opt;
    }

    void apply(RunConfig& c) const {
        for (const auto& f : fns_) f(c);
    }

private:
    std::vector<std::function<void(RunConfig&)>> fns_;
};

void require(const fs::path& value, const char* flag) {
    if (value.empty()) throw UsageError(fmt::format("{} is required", flag));
}

void require_existing(const fs::path& value, const char* flag) {
    require(value, flag);
    if (!fs::exists(value)) throw UsageError(fmt::format("{}: {} does not exist", flag, value.string()));
}

PackageRecord record_for(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw UsageError(fmt::format("--package: {} is not a directory", dir.string()));
    fs::path clean = fs::weakly_canonical(dir);
    PackageRecord r;
    r.id = clean.filename().string();
    std::tie(r.name, r.version) = split_name_version(r.id);
    r.root_path = clean;
    r.source_bytes = count_source_bytes(clean);
    r.bucket = bucket_of(r.source_bytes);
    return r;
}

rules::RuleSet rules_or_static(const fs::path& path) {
    return path.empty() ? rules::load_static_rules() : rules::load_rules(path);
}

void write_or_print(const fs::path& path, const std::string& text, std::ostream& out) {
    if (path.empty()) {
        out << text;
        if (!text.empty() && text.back() != '\n') out << '\n';
    } else {
        write_file(path, text);
    }
}

CodeGraph graph_input(const fs::path& graph, const fs::path& package) {
    if (!graph.empty()) return load_graph(graph);
    if (!package.empty()) return build_graph(record_for(package));
    throw UsageError("--graph or --package is required");
}

void add_gateway_flags(CLI::App* app, Overrides& ov) {
    ov.option<std::string>(
        app, "--mock",
        [](RunConfig& c, const std::string& v) {
            c.mock_gateway = true;
            c.mock_fixture = v;
        },
        "Replay recorded responses from FIXTURE instead of calling the gateway");
    ov.option<std::string>(app, "--base-url", [](RunConfig& c, const std::string& v) { c.gateway.base_url = v; },
                           "Chat-completion base URL");
    ov.option<std::string>(app, "--llm-model", [](RunConfig& c, const std::string& v) { c.gateway.model = v; },
                           "Gateway model id");
    ov.option<std::string>(app, "--cache-dir", [](RunConfig& c, const std::string& v) { c.cache_dir = v; },
                           "Disk cache for gateway responses");
    ov.option<std::string>(app, "--tokenizer", [](RunConfig& c, const std::string& v) { c.gateway.tokenizer_id = v; },
                           "Tokenizer id for token accounting");
}

llm::RetryPolicy retry_policy(const RunConfig& c) {
    llm::RetryPolicy p;
    p.max_attempts = c.gateway.max_retries;
    return p;
}

json prediction_json(const std::string& id, const gcn::Prediction& p) {
    json j = {{"id", id}, {"p0", p.probs.p0}, {"p1", p.probs.p1}, {"label", to_string(p.label)}};
    if (!p.diagnostic.empty()) j["diagnostic"] = p.diagnostic;
    return j;
}

struct Cli {
    std::ostream& out;
    std::ostream& err;
    CLI::App app{"Graph-guided malicious Python package scanner", "pkgscope"};
    Overrides ov;
    std::string config_file;
    std::string log_level = "warn";
    std::function<int(const RunConfig&)> action;

    // Per-command inputs that are not part of RunConfig.
    std::string package_dir, graph_file, masks_file, subgraph_file, prompt_file, results_file, dot_file, graphml_file,
        format = "dot", render_out;
    std::vector<std::string> packages;
    std::optional<double> gamma_node, gamma_edge;
    double data_fraction = 0.10;
    std::size_t min_rules = 5;
    bool all_results = false;

    Cli(std::ostream& o, std::ostream& e) : out(o), err(e) {
        app.set_version_flag("--version", fmt::format("pkgscope {}", kVersion));
        app.add_option("--config", config_file, "TOML or JSON config file; flags override its values");
        app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
            ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
        app.require_subcommand(1);
        app.fallthrough();

        add_ingest();
        add_graph();
        add_rules();
        add_train();
        add_predict();
        add_explain();
        add_extract();
        add_analyze();
        add_judge();
        add_eval();
        add_scan();
        add_render();
    }

    CLI::App* sub(const char* name, const char* desc, std::function<int(const RunConfig&)> fn) {
        CLI::App* s = app.add_subcommand(name, desc);
        s->callback([this, fn] { action = fn; });
        return s;
    }

    CLI::Option* path_opt(CLI::App* s, const std::string& name, fs::path RunConfig::*field, const std::string& desc) {
        return ov.option<std::string>(s, name, [field](RunConfig& c, const std::string& v) { c.*field = v; }, desc);
    }

    void add_ingest() {
        auto* s = sub("ingest", "Scan a corpus directory into a dataset manifest", [this](const RunConfig& c) {
            require_existing(c.corpus, "--root");
            require(c.out, "--out");
            std::map<std::string, Label> labels;
            std::map<std::string, std::string> reports;
            if (!c.labels.empty()) labels = read_labels_csv(c.labels);
            if (!c.reports.empty()) reports = read_reports_json(c.reports);
            DatasetManifest m = scan_corpus(c.corpus, labels, reports);
            std::size_t labeled = 0;
            for (const auto& r : m.records) labeled += r.label != Label::Unlabeled;
            if (labeled >= 2) {
                m = split_dataset(std::move(m), c.split_ratio, c.split_seed);
            } else {
                spdlog::warn("fewer than two labeled packages; manifest has no split");
            }
            save_manifest(m, c.out);
            fmt::print(out, "{} packages ({} labeled), train {}, test {} -> {}\n", m.records.size(), labeled,
                       m.train_ids.size(), m.test_ids.size(), c.out.string());
            return 0;
        });
        path_opt(s, "--root", &RunConfig::corpus, "Corpus directory, one package per subdirectory");
        path_opt(s, "--labels", &RunConfig::labels, "CSV of name,label");
        path_opt(s, "--reports", &RunConfig::reports, "JSON map of name to behavior summary");
        ov.option<std::uint64_t>(s, "--seed", [](RunConfig& c, std::uint64_t v) { c.split_seed = v; }, "Split seed");
        ov.option<double>(s, "--ratio", [](RunConfig& c, double v) { c.split_ratio = v; }, "Training fraction");
        path_opt(s, "--out", &RunConfig::out, "Manifest JSON to write");
    }

    void add_graph() {
        auto* s = sub("graph", "Build the code graph of one package", [this](const RunConfig& c) {
            require(package_dir, "--package");
            require(c.out, "--out");
            CodeGraph g = build_graph(record_for(package_dir));
            save_graph(g, c.out);
            fmt::print(out, "{}: {} nodes, {} edges -> {}\n", g.package, g.nodes.size(), g.edges.size(),
                       c.out.string());
            for (const auto& d : g.diagnostics) spdlog::warn("{}: {}", g.package, d);
            return 0;
        });
        s->add_option("--package", package_dir, "Package source directory");
        path_opt(s, "--out", &RunConfig::out, "Graph JSON to write");
    }

    void add_rules() {
        auto* r = app.add_subcommand("rules", "Show or synthesize sensitive-behavior rules");
        r->require_subcommand(1);

        auto* show = r->add_subcommand("show", "Print a rule set (the built-in set by default)");
        show->callback([this] {
            action = [this](const RunConfig& c) {
                write_or_print(c.out, rules::to_json(rules_or_static(c.rules)).dump(2), out);
                return 0;
            };
        });
        path_opt(show, "--rules", &RunConfig::rules, "Rule set JSON");
        path_opt(show, "--out", &RunConfig::out, "Write here instead of stdout");

        auto* synth = r->add_subcommand("synth", "Synthesize common and per-sample rules through the gateway");
        synth->callback([this] {
            action = [this](const RunConfig& c) {
                require_existing(c.manifest, "--manifest");
                require(c.out, "--out");
                DatasetManifest m = load_manifest(c.manifest);
                auto client = pipeline::make_client(c);
                rules::CommonSynthesisOptions common_opts;
                common_opts.min_rules = min_rules;
                common_opts.policy = retry_policy(c);
                rules::DataSynthesisOptions data_opts;
                data_opts.fraction = data_fraction;
                data_opts.seed = c.split_seed;
                data_opts.policy = retry_policy(c);
                rules::RuleSet common = rules::synthesize_common_rules(*client, common_opts);
                rules::RuleSet data = rules::synthesize_data_rules(*client, m, data_opts);
                rules::RuleSet merged = rules::merge(common, data);
                rules::save_rules(merged, c.out);
                fmt::print(out, "{} common + {} data rules -> {} rules in {}\n", common.size(), data.size(),
                           merged.size(), c.out.string());
                return 0;
            };
        });
        path_opt(synth, "--manifest", &RunConfig::manifest, "Dataset manifest");
        path_opt(synth, "--out", &RunConfig::out, "Rule set JSON to write");
        synth->add_option("--data-fraction", data_fraction, "Fraction of training packages sent for rule synthesis");
        synth->add_option("--min-rules", min_rules, "Fall back to the built-in set below this many common rules");
        ov.option<std::uint64_t>(synth, "--seed", [](RunConfig& c, std::uint64_t v) { c.split_seed = v; },
                                 "Sampling seed");
        add_gateway_flags(synth, ov);
    }

    void add_train() {
        auto* s = sub("train", "Train the graph classifier on the manifest's training split", [this](const RunConfig& c) {
            require_existing(c.manifest, "--manifest");
            require(c.out, "--out");
            DatasetManifest m = load_manifest(c.manifest);
            gcn::Model model = pipeline::train_model(m, rules_or_static(c.rules), c.train);
            gcn::save_model(model, c.out);
            if (!model.history.empty()) {
                const auto& h = model.history.back();
                fmt::print(out, "epoch {}: loss {:.4f}, test accuracy {:.4f}, test f1 {:.4f}\n", h.epoch, h.train_loss,
                           h.test_accuracy, h.test_f1);
            }
            fmt::print(out, "model -> {}\n", c.out.string());
            return 0;
        });
        path_opt(s, "--manifest", &RunConfig::manifest, "Dataset manifest with splits");
        path_opt(s, "--rules", &RunConfig::rules, "Rule set JSON (built-in set when omitted)");
        path_opt(s, "--out", &RunConfig::out, "Model checkpoint to write");
        ov.option<int>(s, "--epochs", [](RunConfig& c, int v) { c.train.epochs = v; }, "Training epochs");
        ov.option<double>(s, "--lr", [](RunConfig& c, double v) { c.train.lr = v; }, "Learning rate");
        ov.option<double>(s, "--dropout", [](RunConfig& c, double v) { c.train.dropout = v; }, "Dropout rate");
        ov.option<std::uint64_t>(s, "--seed", [](RunConfig& c, std::uint64_t v) { c.train.seed = v; }, "Training seed");
    }

    void add_predict() {
        auto* s = sub("predict", "Classify one package or graph", [this](const RunConfig& c) {
            require_existing(c.model, "--model");
            gcn::Model model = gcn::load_model(c.model);
            CodeGraph g = graph_input(graph_file, package_dir);
            gcn::Prediction p = gcn::predict(model.params, model.encode(g));
            write_or_print(c.out, prediction_json(g.package, p).dump(2), out);
            return 0;
        });
        path_opt(s, "--model", &RunConfig::model, "Model checkpoint");
        s->add_option("--graph", graph_file, "Graph JSON");
        s->add_option("--package", package_dir, "Package source directory");
        path_opt(s, "--out", &RunConfig::out, "Write the prediction here instead of stdout");
    }

    void add_explain() {
        auto* s = sub("explain", "Optimize explanation masks for one graph", [this](const RunConfig& c) {
            require_existing(c.model, "--model");
            require(c.out, "--out");
            gcn::Model model = gcn::load_model(c.model);
            CodeGraph g = graph_input(graph_file, package_dir);
            gcn::EncodedGraph encoded = model.encode(g);
            if (encoded.num_nodes() == 0) throw Error(fmt::format("{} has no nodes to explain", g.package));
            explain::Explanation e = explain::optimize_masks(encoded, model.params, c.explainer);
            explain::save_explanation(e, c.explainer, c.out);
            fmt::print(out, "loss {:.6f} -> {:.6f} over {} steps{} -> {}\n", e.trace.front(), e.trace.back(),
                       e.trace.size() - 1, e.aborted ? " (aborted)" : "", c.out.string());
            return 0;
        });
        path_opt(s, "--model", &RunConfig::model, "Model checkpoint");
        s->add_option("--graph", graph_file, "Graph JSON");
        s->add_option("--package", package_dir, "Package source directory");
        path_opt(s, "--out", &RunConfig::out, "Masks JSON to write");
        ov.option<int>(s, "--steps", [](RunConfig& c, int v) { c.explainer.steps = v; }, "Optimization steps");
        ov.option<std::uint64_t>(s, "--seed", [](RunConfig& c, std::uint64_t v) { c.explainer.seed = v; },
                                 "Mask initialization seed");
    }

    void add_extract() {
        auto* s = sub("extract", "Extract the high-attention subgraph and its prompt text", [this](const RunConfig& c) {
            require(masks_file, "--masks");
            require(graph_file, "--graph");
            CodeGraph g = load_graph(graph_file);
            explain::AttentionScores scores = explain::attention_scores(explain::load_explanation(masks_file).masks);
            subgraph::AttentionSubgraph sub;
            if (gamma_node || gamma_edge) {
                sub = subgraph::extract_threshold(g, scores, gamma_node.value_or(0.0), gamma_edge.value_or(0.0));
            } else {
                sub = subgraph::extract_topk(g, scores, c.top_k);
            }
            std::string prompt = subgraph::serialize_prompt_text(sub, c.source_cap);
            if (!c.out.empty()) write_file(c.out, subgraph::to_json(sub).dump(2));
            if (!prompt_file.empty()) write_file(prompt_file, prompt);
            if (!dot_file.empty()) subgraph::export_render(sub, subgraph::RenderFormat::Dot, dot_file);
            if (!graphml_file.empty()) subgraph::export_render(sub, subgraph::RenderFormat::GraphML, graphml_file);
            if (c.out.empty() && prompt_file.empty()) out << prompt;
            return 0;
        });
        s->add_option("--masks", masks_file, "Masks JSON from explain");
        s->add_option("--graph", graph_file, "Graph JSON");
        ov.option<int>(s, "-K,--top-k", [](RunConfig& c, int v) { c.top_k = v; }, "Edge budget (default 20)");
        s->add_option("--gamma-node", gamma_node, "Node threshold; selects threshold mode");
        s->add_option("--gamma-edge", gamma_edge, "Edge threshold; selects threshold mode");
        ov.option<std::size_t>(s, "--source-cap", [](RunConfig& c, std::size_t v) { c.source_cap = v; },
                               "Bytes of source per node in the prompt");
        path_opt(s, "--out", &RunConfig::out, "Subgraph JSON to write");
        s->add_option("--prompt", prompt_file, "Prompt text to write");
        s->add_option("--dot", dot_file, "DOT rendering to write");
        s->add_option("--graphml", graphml_file, "GraphML rendering to write");
    }

    void add_analyze() {
        auto* s = sub("analyze", "Ask the gateway for a verdict on a subgraph prompt", [this](const RunConfig& c) {
            std::string prompt;
            if (!prompt_file.empty()) {
                prompt = read_file(prompt_file);
            } else if (!subgraph_file.empty()) {
                prompt = subgraph::serialize_prompt_text(
                    subgraph::subgraph_from_json(json::parse(read_file(subgraph_file))), c.source_cap);
            } else {
                throw UsageError("--prompt or --subgraph is required");
            }
            auto client = pipeline::make_client(c);
            auto tokenizer = llm::get_tokenizer(c.gateway.tokenizer_id);
            llm::AnalysisOutcome o = llm::analyze(prompt, *client, *tokenizer, retry_policy(c));
            json j = {{"status", o.verdict ? "valid" : "invalid"},
                      {"attempts", o.attempts},
                      {"tokens", {{"prompt", o.tokens.prompt_tokens}, {"tokenizer", o.tokens.tokenizer_id}}}};
            if (o.verdict) {
                j["verdict"] = to_string(o.verdict->verdict);
                j["reasoning"] = o.verdict->reasoning;
                j["mitigation"] = o.verdict->mitigation;
            }
            write_or_print(c.out, j.dump(2), out);
            return 0;
        });
        s->add_option("--prompt", prompt_file, "Prompt text from extract");
        s->add_option("--subgraph", subgraph_file, "Subgraph JSON from extract");
        path_opt(s, "--out", &RunConfig::out, "Write the verdict here instead of stdout");
        add_gateway_flags(s, ov);
    }

    void add_judge() {
        auto* s = sub("judge", "Score explanations against ground-truth summaries", [this](const RunConfig& c) {
            require(results_file, "--results");
            require_existing(c.manifest, "--manifest");
            require(c.out, "--out");
            auto results = eval::read_results(results_file);
            DatasetManifest m = load_manifest(c.manifest);
            auto client = pipeline::make_client(c);
            pipeline::judge_results(results, m, *client, retry_policy(c));
            eval::write_results(results, c.out);
            auto q = eval::quality_aggregate(eval::judge_outcomes(results));
            fmt::print(out, "judged {} ({} penalized, {} invalid): average quality {:.2f}\n", q.valid + q.invalid,
                       q.penalized, q.invalid, q.average_quality);
            return 0;
        });
        s->add_option("--results", results_file, "Results JSONL from scan");
        path_opt(s, "--manifest", &RunConfig::manifest, "Dataset manifest with behavior summaries");
        path_opt(s, "--out", &RunConfig::out, "Results JSONL to write with judge scores");
        add_gateway_flags(s, ov);
    }

    void add_eval() {
        auto* s = sub("eval", "Write metrics, token statistics and a summary report", [this](const RunConfig& c) {
            require(results_file, "--results");
            require(c.out, "--out");
            fs::path in = results_file;
            if (fs::is_directory(in)) in /= "results.jsonl";
            auto results = eval::read_results(in);
            if (!c.manifest.empty()) results = pipeline::align_with_manifest(results, load_manifest(c.manifest), !all_results);
            auto paths = eval::emit_report(results, c.out);
            fmt::print(out, "{} results -> {}, {}, {}\n", results.size(), paths.results.string(),
                       paths.metrics.string(), paths.summary.string());
            return 0;
        });
        s->add_option("--results", results_file, "Results JSONL, or a directory holding results.jsonl");
        path_opt(s, "--manifest", &RunConfig::manifest, "Manifest supplying labels, buckets and the test split");
        s->add_flag("--all", all_results, "Evaluate every labeled result, not only the test split");
        path_opt(s, "--out", &RunConfig::out, "Report directory");
    }

    void add_scan() {
        auto* s = sub("scan", "predict, explain, extract and analyze new packages", [this](const RunConfig& c) {
            require_existing(c.model, "--model");
            require(c.out, "--out");
            std::vector<PackageRecord> records;
            for (const auto& p : packages) records.push_back(record_for(p));
            if (!c.corpus.empty()) {
                std::map<std::string, Label> labels;
                std::map<std::string, std::string> reports;
                if (!c.labels.empty()) labels = read_labels_csv(c.labels);
                if (!c.reports.empty()) reports = read_reports_json(c.reports);
                auto m = scan_corpus(c.corpus, labels, reports);
                records.insert(records.end(), m.records.begin(), m.records.end());
            }
            if (!c.manifest.empty()) {
                auto m = load_manifest(c.manifest);
                records.insert(records.end(), m.records.begin(), m.records.end());
            }
            if (records.empty()) throw UsageError("--package, --corpus or --manifest is required");

            gcn::Model model = gcn::load_model(c.model);
            auto tokenizer = llm::get_tokenizer(c.gateway.tokenizer_id);
            // Built lazily so a benign-only run needs no gateway configuration.
            std::shared_ptr<llm::ChatClient> client;
            struct Lazy : llm::ChatClient {
                const RunConfig& config;
                std::shared_ptr<llm::ChatClient>& slot;
                std::mutex mu;
                Lazy(const RunConfig& c, std::shared_ptr<llm::ChatClient>& s) : config(c), slot(s) {}
                std::string complete(const std::vector<llm::ChatMessage>& m) override {
                    {
                        std::lock_guard lock(mu);
                        if (!slot) slot = pipeline::make_client(config);
                    }
                    return slot->complete(m);
                }
            } lazy(c, client);

            pipeline::ScanOptions opts;
            opts.explainer = c.explainer;
            opts.top_k = c.top_k;
            opts.source_cap = c.source_cap;
            opts.force_explain = c.force_explain;
            opts.policy = retry_policy(c);
            auto results = pipeline::scan_records(records, model, &lazy, *tokenizer, opts, c.jobs, artifacts_dir());

            fs::path out_file = c.out;
            if (fs::is_directory(out_file) || out_file.extension().empty()) out_file /= "results.jsonl";
            eval::write_results(results, out_file);
            int failures = 0;
            for (const auto& r : results) {
                if (!r.ok()) {
                    ++failures;
                    fmt::print(out, "{}: {} stage failed: {}\n", r.id, r.error_stage, r.error);
                    continue;
                }
                std::string llm = r.llm_status == eval::LlmStatus::Skipped ? "skipped"
                                  : r.llm_status == eval::LlmStatus::Invalid
                                      ? "invalid"
                                      : std::string(to_string(r.llm_verdict));
                fmt::print(out, "{}: p1={:.4f} gnn={} llm={} tokens={}\n", r.id, r.p1, to_string(r.gnn_label), llm,
                           r.prompt_tokens);
            }
            fmt::print(out, "{} packages, {} failed -> {}\n", results.size(), failures, out_file.string());
            return failures == 0 ? 0 : 1;
        });
        s->add_option("--package", packages, "Package source directory (repeatable)");
        path_opt(s, "--corpus", &RunConfig::corpus, "Corpus directory, one package per subdirectory");
        path_opt(s, "--labels", &RunConfig::labels, "CSV of name,label for --corpus");
        path_opt(s, "--reports", &RunConfig::reports, "Behavior summaries for --corpus");
        path_opt(s, "--manifest", &RunConfig::manifest, "Scan the packages of a manifest");
        path_opt(s, "--model", &RunConfig::model, "Model checkpoint");
        path_opt(s, "--out", &RunConfig::out, "Results JSONL (or a directory receiving results.jsonl)");
        s->add_option("--artifacts", artifacts_, "Directory for per-package graph, masks, subgraph and prompt");
        ov.option<int>(s, "--jobs", [](RunConfig& c, int v) { c.jobs = v; }, "Packages scanned in parallel");
        ov.flag(s, "--force-explain", [](RunConfig& c) { c.force_explain = true; },
                "Explain and extract benign predictions too (never sent to the gateway)");
        ov.option<int>(s, "-K,--top-k", [](RunConfig& c, int v) { c.top_k = v; }, "Edge budget (default 20)");
        ov.option<int>(s, "--steps", [](RunConfig& c, int v) { c.explainer.steps = v; }, "Explainer steps");
        add_gateway_flags(s, ov);
    }

    void add_render() {
        auto* s = sub("render", "Render a scored graph or subgraph as DOT or GraphML", [this](const RunConfig&) {
            require(render_out, "--out");
            auto fmt_kind = subgraph::parse_render_format(format);
            if (!subgraph_file.empty()) {
                subgraph::export_render(subgraph::subgraph_from_json(json::parse(read_file(subgraph_file))), fmt_kind,
                                        render_out);
            } else {
                require(graph_file, "--graph");
                require(masks_file, "--masks");
                subgraph::export_render(load_graph(graph_file),
                                        explain::attention_scores(explain::load_explanation(masks_file).masks),
                                        fmt_kind, render_out);
            }
            return 0;
        });
        s->add_option("--graph", graph_file, "Graph JSON");
        s->add_option("--masks", masks_file, "Masks JSON; scores every node and edge of the graph");
        s->add_option("--subgraph", subgraph_file, "Subgraph JSON from extract");
        s->add_option("--format", format, "dot or graphml")->check(CLI::IsMember({"dot", "graphml"}));
        s->add_option("--out", render_out, "File to write");
    }

    fs::path artifacts_dir() const { return artifacts_; }
    std::string artifacts_;
};

spdlog::level::level_enum parse_level(const std::string& s) { return spdlog::level::from_str(s); }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    auto cli = std::make_unique<Cli>(out, err);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        cli->app.parse(reversed);
    } catch (const CLI::Success& e) {
        return cli->app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        cli->app.exit(e, out, err);
        if (cli->app.get_subcommands().empty()) err << '\n' << cli->app.help();
        return 2;
    }

    auto previous = spdlog::default_logger();
    auto logger = std::make_shared<spdlog::logger>("pkgscope", std::make_shared<spdlog::sinks::ostream_sink_mt>(err));
    logger->set_level(parse_level(cli->log_level));
    logger->set_pattern("%^%l%$: %v");
    spdlog::set_default_logger(logger);
    struct Restore {
        std::shared_ptr<spdlog::logger> p;
        ~Restore() { spdlog::set_default_logger(p); }
    } restore{previous};

    try {
        RunConfig config;
        if (!cli->config_file.empty()) {
            if (!fs::exists(cli->config_file))
                throw UsageError(fmt::format("--config: {} does not exist", cli->config_file));
            try {
                config = pipeline::load_run_config(cli->config_file);
            } catch (const ConfigError& e) {
                throw UsageError(fmt::format("--config: {}", e.what()));
            }
        }
        cli->ov.apply(config);
        if (!cli->action) throw UsageError("no command given");
        return cli->action(config);
    } catch (const UsageError& e) {
        fmt::print(err, "error: {}\nRun with --help for more information.\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(err, "error: {}\n", e.what());
        return 1;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace pkgscope::cli
