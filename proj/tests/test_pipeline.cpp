#include <catch_amalgamated.hpp>

#include <cmath>

#include "pkgscope/error.hpp"
#include "pkgscope/pipeline.hpp"
#include "pkgscope/util.hpp"
#include "support.hpp"

using namespace pkgscope;
using namespace pkgscope::pipeline;
using testsupport::TempDir;
using testsupport::write_text;

namespace {

DatasetManifest fixture_manifest() {
    auto f = testsupport::fixtures();
    auto m = scan_corpus(f / "corpus", read_labels_csv(f / "labels.csv"), read_reports_json(f / "reports.json"));
    return split_dataset(std::move(m), 0.8, 1);
}

/// Vocabularies and rules from the fixture corpus with constant-output
/// parameters: p1 = sigmoid(bias) for every graph.
gcn::Model constant_model(double bias) {
    gcn::TrainConfig cfg;
    cfg.epochs = 1;
    gcn::Model m = train_model(fixture_manifest(), rules::load_static_rules(), cfg);
    m.params = gcn::GcnParams::zeros(static_cast<int>(m.names.size()), static_cast<int>(m.types.size()),
                                     static_cast<int>(m.rules.size()), m.config.hidden);
    m.params.bc(1) = bias;
    return m;
}

const PackageRecord& record(const DatasetManifest& m, std::string_view id) {
    const PackageRecord* r = m.find(id);
    REQUIRE(r != nullptr);
    return *r;
}

llm::MockClient analysis_mock() {
    return llm::MockClient(llm::MockClient::parse_fixture(
        nlohmann::json::parse(read_file(testsupport::fixtures() / "llm" / "analysis_responses.json"))));
}

}  // namespace

TEST_CASE("benign predictions never reach the gateway", "[pipeline][scan]") {
    auto manifest = fixture_manifest();
    gcn::Model model = constant_model(0.0);  // exact tie, Benign
    llm::MockClient mock = analysis_mock();
    llm::WsPunctTokenizer tok;
    for (const auto& rec : manifest.records) {
        ScanArtifacts art;
        eval::PackageResult r = scan_package(rec, model, &mock, tok, {}, &art);
        CHECK(r.ok());
        CHECK(r.gnn_label == Label::Benign);
        CHECK(r.llm_status == eval::LlmStatus::Skipped);
        CHECK(r.prompt_tokens == 0);
        CHECK(r.reasoning.empty());
        CHECK_FALSE(art.explanation.has_value());
    }
    CHECK(mock.calls() == 0);

    ScanOptions forced;
    forced.force_explain = true;
    ScanArtifacts art;
    auto r = scan_package(record(manifest, "clipgrab-0.3.1"), model, &mock, tok, forced, &art);
    CHECK(r.llm_status == eval::LlmStatus::Skipped);
    REQUIRE(art.subgraph.has_value());
    CHECK_FALSE(art.prompt.empty());
    CHECK(mock.calls() == 0);
}

TEST_CASE("malicious prediction yields the replayed verdict", "[pipeline][scan]") {
    auto manifest = fixture_manifest();
    gcn::Model model = constant_model(4.0);
    llm::MockClient mock = analysis_mock();
    llm::WsPunctTokenizer tok;
    ScanArtifacts art;
    auto r = scan_package(record(manifest, "clipgrab-0.3.1"), model, &mock, tok, {}, &art);
    REQUIRE(r.ok());
    CHECK(r.gnn_label == Label::Malicious);
    CHECK(r.p1 == Catch::Approx(1.0 / (1.0 + std::exp(-4.0))).epsilon(1e-12));
    CHECK(r.llm_status == eval::LlmStatus::Valid);
    CHECK(r.llm_verdict == Label::Malicious);
    CHECK(r.reasoning.rfind("auto_copy_wallet reads the clipboard", 0) == 0);
    CHECK(r.mitigation.find("urlopen") != std::string::npos);
    CHECK(r.analysis_attempts == 1);
    CHECK(mock.calls() == 1);

    REQUIRE(art.explanation.has_value());
    CHECK(art.explanation->trace.size() == 101);
    REQUIRE(art.subgraph.has_value());
    CHECK(art.prompt == subgraph::serialize_prompt_text(*art.subgraph));
    CHECK(mock.requests()[0].back().content.find(art.prompt) != std::string::npos);
    CHECK(r.prompt_tokens == llm::count_tokens(llm::analysis_messages(art.prompt), tok).prompt_tokens);
    CHECK(r.bucket == record(manifest, "clipgrab-0.3.1").bucket);
    CHECK(r.truth == Label::Malicious);
}

TEST_CASE("unusable analysis responses end as Invalid after three attempts", "[pipeline][scan]") {
    auto manifest = fixture_manifest();
    gcn::Model model = constant_model(4.0);
    llm::MockClient mock({{"*", "I cannot tell.", ""}});
    llm::WsPunctTokenizer tok;
    ScanOptions opts;
    opts.policy.sleep = [](std::chrono::milliseconds) {};
    auto r = scan_package(record(manifest, "15Cent-999.0.1"), model, &mock, tok, opts);
    CHECK(r.ok());
    CHECK(r.llm_status == eval::LlmStatus::Invalid);
    CHECK(r.analysis_attempts == 3);
    CHECK(mock.calls() == 3);
    CHECK(r.final_label() == Label::Malicious);
}

TEST_CASE("stage failures are recorded per package", "[pipeline][scan]") {
    gcn::Model model = constant_model(4.0);
    llm::WsPunctTokenizer tok;
    PackageRecord missing;
    missing.id = "gone-1.0";
    missing.root_path = "/nonexistent/pkgscope/gone-1.0";
    auto r = scan_package(missing, model, nullptr, tok, {});
    CHECK(r.error_stage == "graph");
    CHECK_FALSE(r.error.empty());

    auto manifest = fixture_manifest();
    auto no_client = scan_package(record(manifest, "15Cent-999.0.1"), model, nullptr, tok, {});
    CHECK(no_client.error_stage == "analyze");

    ScanOptions bad;
    bad.explainer.steps = 0;
    llm::MockClient mock = analysis_mock();
    auto bad_explain = scan_package(record(manifest, "15Cent-999.0.1"), model, &mock, tok, bad);
    CHECK(bad_explain.error_stage == "explain");
    CHECK(mock.calls() == 0);
}

TEST_CASE("parallel scan matches the sequential scan", "[pipeline][scan]") {
    auto manifest = fixture_manifest();
    gcn::TrainConfig cfg;
    cfg.epochs = 30;
    cfg.lr = 0.01;
    gcn::Model model = train_model(manifest, rules::load_static_rules(), cfg);
    llm::MockClient a = analysis_mock();
    llm::MockClient b = analysis_mock();
    llm::WsPunctTokenizer tok;
    TempDir tmp;
    auto seq = scan_records(manifest.records, model, &a, tok, {}, 1);
    auto par = scan_records(manifest.records, model, &b, tok, {}, 4, tmp.path());
    REQUIRE(seq.size() == manifest.records.size());
    CHECK(seq == par);
    for (std::size_t i = 0; i < seq.size(); ++i) CHECK(seq[i].id == manifest.records[i].id);
    CHECK(a.calls() == b.calls());
    for (const auto& r : par) {
        CHECK(std::filesystem::exists(tmp / r.id / "graph.json"));
        CHECK(std::filesystem::exists(tmp / r.id / "prompt.txt") == (r.gnn_label == Label::Malicious));
    }
    CHECK_THROWS_AS(scan_records(manifest.records, model, &a, tok, {}, 0), ConfigError);
}

TEST_CASE("judge_results applies the zero penalty without calls", "[pipeline][judge]") {
    auto manifest = fixture_manifest();
    llm::MockClient mock(llm::MockClient::parse_fixture(
        nlohmann::json::parse(read_file(testsupport::fixtures() / "llm" / "judge_responses.json"))));

    std::vector<eval::PackageResult> results(4);
    results[0].id = "15Cent-999.0.1";  // missed: Benign
    results[1].id = "clipgrab-0.3.1";
    results[1].gnn_label = Label::Malicious;
    results[1].llm_status = eval::LlmStatus::Valid;
    results[1].llm_verdict = Label::Malicious;
    results[1].reasoning = "Steals clipboard wallets.";
    results[2].id = "helperlib-1.2.0";  // benign truth: not judged
    results[2].gnn_label = Label::Malicious;
    results[3].id = "netsetup-2.0.0";  // flagged, analysis invalid
    results[3].gnn_label = Label::Malicious;
    results[3].llm_status = eval::LlmStatus::Invalid;

    judge_results(results, manifest, mock);
    CHECK(results[0].judge_status == eval::JudgeStatus::Penalized);
    CHECK(results[0].scores == llm::JudgeScores{});
    CHECK(results[1].judge_status == eval::JudgeStatus::Scored);
    CHECK(results[1].scores == llm::JudgeScores{4, 3, 3, 3});
    CHECK(results[2].judge_status == eval::JudgeStatus::NotJudged);
    CHECK(results[3].judge_status == eval::JudgeStatus::Invalid);
    CHECK(mock.calls() == 1);
    CHECK(mock.requests()[0].back().content.find("Steals clipboard wallets.") != std::string::npos);
}

TEST_CASE("align_with_manifest", "[pipeline]") {
    auto manifest = fixture_manifest();
    std::vector<eval::PackageResult> results;
    for (const auto& r : manifest.records) {
        eval::PackageResult p;
        p.id = r.id;
        p.bucket = Bucket::Large;
        results.push_back(p);
    }
    auto all = align_with_manifest(results, manifest, false);
    REQUIRE(all.size() == manifest.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(all[i].truth == manifest.records[i].label);
        CHECK(all[i].bucket == manifest.records[i].bucket);
    }
    auto test = align_with_manifest(results, manifest, true);
    CHECK(test.size() == manifest.test_ids.size());
    for (const auto& r : test) CHECK(manifest.test_ids.count(r.id) == 1);
}

TEST_CASE("run config files", "[pipeline][config]") {
    TempDir tmp;
    write_text(tmp / "c.toml", R"(
[paths]
model = "m.ckpt"
[gateway]
model = "local-model"
temperature = 0.5
mock = true
mock_fixture = "fx.json"
[explainer]
steps = 40
lambda_size = 0.01
[extract]
top_k = 10
[scan]
jobs = 3
force_explain = true
)");
    write_text(tmp / "c.json", R"({"paths": {"model": "m.ckpt"},
        "gateway": {"model": "local-model", "temperature": 0.5, "mock": true, "mock_fixture": "fx.json"},
        "explainer": {"steps": 40, "lambda_size": 0.01}, "extract": {"top_k": 10},
        "scan": {"jobs": 3, "force_explain": true}})");
    RunConfig t = load_run_config(tmp / "c.toml");
    RunConfig j = load_run_config(tmp / "c.json");
    CHECK(to_json(t) == to_json(j));
    CHECK(t.model == "m.ckpt");
    CHECK(t.gateway.model == "local-model");
    CHECK(t.gateway.temperature == 0.5);
    CHECK(t.mock_gateway);
    CHECK(t.explainer.steps == 40);
    CHECK(t.explainer.lambda_size == 0.01);
    CHECK(t.top_k == 10);
    CHECK(t.jobs == 3);
    CHECK(t.force_explain);
    CHECK(t.explainer.lr == 0.01);  // untouched default

    CHECK(to_json(run_config_from_json(to_json(t))) == to_json(t));

    write_text(tmp / "typo.toml", "[explainer]\nstepz = 3\n");
    CHECK_THROWS_AS(load_run_config(tmp / "typo.toml"), ConfigError);
    write_text(tmp / "broken.toml", "[explainer\n");
    CHECK_THROWS_AS(load_run_config(tmp / "broken.toml"), ConfigError);
    write_text(tmp / "type.json", R"({"scan": {"jobs": "many"}})");
    CHECK_THROWS_AS(load_run_config(tmp / "type.json"), ConfigError);
    write_text(tmp / "zero.json", R"({"extract": {"top_k": 0}})");
    CHECK_THROWS_AS(load_run_config(tmp / "zero.json"), ConfigError);
    CHECK_THROWS_AS(load_run_config(tmp / "absent.json"), IoError);
}

TEST_CASE("make_client", "[pipeline][config]") {
    RunConfig c;
    c.mock_gateway = true;
    CHECK_THROWS_AS(make_client(c), ConfigError);
    c.mock_fixture = testsupport::fixtures() / "llm" / "analysis_responses.json";
    auto client = make_client(c);
    CHECK(client->complete({{llm::Role::User, "x"}}).find("Malicious") != std::string::npos);

    TempDir tmp;
    c.cache_dir = tmp / "cache";
    auto cached = make_client(c);
    std::string first = cached->complete({{llm::Role::User, "y"}});
    CHECK(first == cached->complete({{llm::Role::User, "y"}}));
    CHECK_FALSE(std::filesystem::is_empty(tmp / "cache"));

    RunConfig live;
    live.gateway.api_key_env = "PKGSCOPE_TEST_SURELY_UNSET_KEY";
    CHECK_THROWS_AS(make_client(live), ConfigError);
}
