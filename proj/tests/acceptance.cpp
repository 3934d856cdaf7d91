// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "oracles.hpp"
#include "pkgscope/eval.hpp"
#include "pkgscope/pipeline.hpp"
#include "pkgscope/prompts.hpp"
#include "pkgscope/rules.hpp"
#include "pkgscope/subgraph.hpp"
#include "support.hpp"
#include "synthetic.hpp"

using namespace pkgscope;
using gcn::SpMat;
using testsupport::TempDir;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = true;
    std::string detail;

    void fail(std::string why) {
        if (pass) detail.clear();
        pass = false;
        if (!detail.empty()) detail += "; ";
        detail += std::move(why);
    }
    void note(std::string what) {
        if (!pass) return;
        if (!detail.empty()) detail += "; ";
        detail += std::move(what);
    }
};

DatasetManifest fixture_manifest() {
    auto f = testsupport::fixtures();
    auto m = scan_corpus(f / "corpus", read_labels_csv(f / "labels.csv"), read_reports_json(f / "reports.json"));
    return split_dataset(std::move(m), 0.8, 1);
}

gcn::GcnParams perturbed_params(int names, int types, int behaviors, int hidden, std::uint64_t seed, double scale) {
    gcn::Rng rng(seed);
    auto p = gcn::GcnParams::init(names, types, behaviors, hidden, rng);
    std::normal_distribution<double> nd(0.0, scale);
    p.b1 = p.b1.unaryExpr([&](double) { return nd(rng); });
    p.b2 = p.b2.unaryExpr([&](double) { return nd(rng); });
    p.bc = p.bc.unaryExpr([&](double) { return nd(rng); });
    p.name_table *= scale;
    p.type_table *= scale;
    return p;
}

gcn::EncodedGraph random_encoded(int n, int behaviors, int names, int types, std::mt19937_64& rng) {
    auto g = testsupport::make_graph(n, testsupport::random_edges(n, static_cast<int>(rng() % 3), rng), behaviors,
                                     names, types, rng);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < behaviors; ++k) g.behavior(i, k) = rng() % 3 == 0 ? 1.0 : 0.0;
    }
    return g;
}

// 1 ---------------------------------------------------------------------------
Verdict graph_fidelity() {
    Verdict v;
    auto expected = testsupport::load_expected_graphs();
    if (expected.size() != 6) v.fail(fmt::format("{} expected packages, want 6", expected.size()));
    auto t0 = Clock::now();
    int hooks = 0;
    for (const auto& [id, want] : expected) {
        PackageRecord rec;
        rec.id = id;
        rec.root_path = testsupport::corpus() / id;
        std::string first;
        for (int round = 0; round < 3; ++round) {
            CodeGraph g = build_graph(rec);
            auto got = testsupport::listing(g);
            auto ms = [](std::vector<std::string> x) { return std::multiset<std::string>(x.begin(), x.end()); };
            if (ms(got.nodes) != ms(want.nodes)) v.fail(id + ": node multiset differs");
            if (ms(got.edges) != ms(want.edges)) v.fail(id + ": edge multiset differs");
            std::string dump = to_json(g).dump();
            if (round == 0) {
                first = dump;
                for (const auto& e : g.edges) hooks += e.kind == EdgeKind::Hook;
            } else if (dump != first) {
                v.fail(id + ": repeated build differs");
            }
        }
    }
    double secs = seconds_since(t0);
    if (hooks < 1) v.fail("no Hook edge");
    if (secs >= 5.0) v.fail(fmt::format("{:.2f}s >= 5s", secs));
    v.note(fmt::format("{} packages x3 builds, {} Hook edges, {:.3f}s", expected.size(), hooks, secs));
    return v;
}

// 2 ---------------------------------------------------------------------------
Verdict rule_safety() {
    Verdict v;
    using rules::MatchKind;
    auto net = rules::compile_rule(testsupport::kNetworkRule);
    if (net.id != "network" || !(net.matcher == rules::Matcher(MatchKind::Prefix, {"socket.", "requests.", "urllib."})))
        v.fail("network example compiled wrongly");
    auto phish = rules::compile_rule(testsupport::kPhishingRule);
    if (phish.id != "phishing" || !(phish.matcher == rules::Matcher(MatchKind::Exact, {"requests.post", "HTTPConnection"})))
        v.fail("phishing example compiled wrongly");

    TempDir dir;
    const std::string sentinel = (dir / "sentinel").string();
    int rejected = 0;
    const auto& hostile = testsupport::hostile_rule_templates();
    for (const auto& raw : hostile) {
        std::string text = testsupport::with_sentinel(raw, sentinel);
        try {
            rules::compile_rule(text);
            v.fail("accepted: " + raw);
        } catch (const rules::RuleError&) {
            ++rejected;
        }
        if (std::filesystem::exists(sentinel)) v.fail("side effect from: " + raw);
    }

    auto rs = rules::load_static_rules();
    std::size_t seen = 0, matched = 0;
    const auto& want = testsupport::fixture_node_bits();
    for (const char* pkg : {"clipgrab-0.3.1", "15Cent-999.0.1", "netsetup-2.0.0", "tinyutil-0.1.0", "helperlib-1.2.0"}) {
        auto g = build_graph(pkg, read_sources(testsupport::corpus() / pkg));
        for (const auto& node : g.nodes) {
            auto it = want.find(node.id);
            if (it == want.end()) continue;
            ++seen;
            auto bits = rules::featurize(node, rs);
            std::vector<std::string> got;
            for (std::size_t k = 0; k < bits.size(); ++k) {
                if (bits[k]) got.push_back(rs.rules()[k].id);
            }
            if (got == it->second) ++matched;
            else v.fail("feature bits differ on " + node.id);
        }
    }
    if (seen != want.size()) v.fail(fmt::format("found {}/{} oracle nodes", seen, want.size()));
    v.note(fmt::format("2 examples accepted, {}/{} hostile rejected, {}/{} nodes match", rejected, hostile.size(),
                       matched, want.size()));
    return v;
}

// 3 ---------------------------------------------------------------------------
Verdict gcn_correctness() {
    Verdict v;
    std::mt19937_64 rng(31);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int behaviors = 3;
        gcn::Sample s{random_encoded(1 + static_cast<int>(rng() % 8), behaviors, 5, 3, rng),
                      static_cast<int>(rng() % 2)};
        std::vector<const gcn::Sample*> batch{&s};
        auto params = perturbed_params(5, 3, behaviors, 6, rng(), 0.5);
        const double wd = 1e-3;
        gcn::GcnParams grads = gcn::batch_grad(params, batch, wd);
        std::vector<double*> coords;
        params.for_each([&](auto& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) coords.push_back(m.data() + i);
        });
        std::vector<const double*> analytic;
        grads.for_each([&](const auto& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) analytic.push_back(m.data() + i);
        });
        const double h = 1e-5;
        for (std::size_t c = 0; c < coords.size(); ++c) {
            double saved = *coords[c];
            *coords[c] = saved + h;
            double up = gcn::batch_loss(params, batch, wd);
            *coords[c] = saved - h;
            double down = gcn::batch_loss(params, batch, wd);
            *coords[c] = saved;
            double fd = (up - down) / (2 * h);
            double scale = std::max(std::abs(fd), std::abs(*analytic[c]));
            double err = scale > 1e-7 ? std::abs(fd - *analytic[c]) / scale : std::abs(fd - *analytic[c]);
            worst = std::max(worst, err);
        }
    }
    if (!(worst < 1e-4)) v.fail(fmt::format("gradcheck max rel err {:.3g}", worst));

    double perm_err = 0.0, oracle_err = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        int n = 1 + static_cast<int>(rng() % 12);
        auto g = random_encoded(n, 3, 6, 3, rng);
        auto params = perturbed_params(6, 3, 3, 8, rng(), 0.5);
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        gcn::EncodedGraph pg;
        pg.name_idx.resize(perm.size());
        pg.type_idx.resize(perm.size());
        pg.behavior = Eigen::MatrixXd(n, 3);
        for (int i = 0; i < n; ++i) {
            pg.name_idx[perm[i]] = g.name_idx[i];
            pg.type_idx[perm[i]] = g.type_idx[i];
            pg.behavior.row(perm[i]) = g.behavior.row(i);
        }
        for (auto [a, b] : g.edges) pg.edges.emplace_back(perm[a], perm[b]);
        pg.a_hat = gcn::normalize_adjacency(n, pg.edges);
        auto p = gcn::forward(params, g);
        auto q = gcn::forward(params, pg);
        perm_err = std::max({perm_err, std::abs(p.p0 - q.p0), std::abs(p.p1 - q.p1)});
        auto [o0, o1] = testsupport::naive_forward(g, params);
        oracle_err = std::max({oracle_err, std::abs(p.p0 - o0), std::abs(p.p1 - o1)});
    }
    if (!(perm_err <= 1e-9)) v.fail(fmt::format("permutation diff {:.3g}", perm_err));
    if (!(oracle_err <= 1e-9)) v.fail(fmt::format("straight-line forward diff {:.3g}", oracle_err));

    bool zero_exact = true;
    for (int trial = 0; trial < 10; ++trial) {
        auto g = random_encoded(1 + static_cast<int>(rng() % 8), 3, 5, 3, rng);
        auto p = gcn::forward(gcn::GcnParams::zeros(5, 3, 3, 6), g);
        zero_exact = zero_exact && p.p0 == 0.5 && p.p1 == 0.5;
    }
    if (!zero_exact) v.fail("zero params do not give exactly (0.5, 0.5)");
    v.note(fmt::format("gradcheck max rel err {:.2e} on 20 graphs, permutation diff {:.1e}, zero params exact",
                       worst, perm_err));
    return v;
}

// 4 ---------------------------------------------------------------------------
Verdict training_sanity() {
    Verdict v;
    auto split = testsupport::motif_split();
    auto train_set = testsupport::samples_of(split.train, 0, split.train.size());
    auto test_set = testsupport::samples_of(split.test, 0, split.test.size());
    gcn::TrainConfig cfg;
    cfg.seed = 7;
    if (cfg.lr != 1e-3 || cfg.weight_decay != 1e-3 || cfg.batch_size != 128 || cfg.epochs != 100 ||
        cfg.dropout != 0.6)
        v.fail("default recipe differs");
    auto t0 = Clock::now();
    auto a = gcn::train(train_set, test_set, 6, 4, 8, cfg);
    double secs = seconds_since(t0);
    auto b = gcn::train(train_set, test_set, 6, 4, 8, cfg);
    double acc = a.history.empty() ? 0.0 : a.history.back().test_accuracy;
    bool same = a.params.w1 == b.params.w1 && a.params.w2 == b.params.w2 && a.params.wc == b.params.wc &&
                a.params.b1 == b.params.b1 && a.params.b2 == b.params.b2 && a.params.bc == b.params.bc &&
                a.params.name_table == b.params.name_table && a.params.type_table == b.params.type_table;
    if (a.history.size() != 100) v.fail(fmt::format("{} epochs", a.history.size()));
    if (!(acc >= 0.95)) v.fail(fmt::format("test accuracy {:.3f}", acc));
    if (!same) v.fail("two runs with one seed differ");
    if (secs >= 60.0) v.fail(fmt::format("{:.1f}s >= 60s", secs));
    v.note(fmt::format("200 graphs, test accuracy {:.3f}, deterministic, {:.2f}s", acc, secs));
    return v;
}

// 5 ---------------------------------------------------------------------------
gcn::GcnParams explainer_params(int behaviors, std::uint64_t seed) {
    gcn::Rng rng(seed);
    auto p = gcn::GcnParams::init(5, 3, behaviors, 6, rng);
    std::normal_distribution<double> nd(0.0, 0.3);
    p.b1 = p.b1.unaryExpr([&](double) { return nd(rng); });
    p.b2 = p.b2.unaryExpr([&](double) { return nd(rng); });
    p.name_table *= 0.3;
    p.type_table *= 0.3;
    return p;
}

Verdict explainer_equations() {
    Verdict v;
    std::mt19937_64 rng(4);
    explain::ExplainerConfig cfg;
    double worst = 0.0;
    int decreased = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto g = testsupport::make_graph(2 + static_cast<int>(rng() % 9), {}, 3, 5, 3, rng);
        g.edges = testsupport::random_edges(g.num_nodes(), 2, rng);
        g.a_hat = gcn::normalize_adjacency(g.num_nodes(), g.edges);
        for (int i = 0; i < g.num_nodes(); ++i) {
            for (int k = 0; k < 3; ++k) g.behavior(i, k) = rng() % 2 ? 1.0 : 0.0;
        }
        auto params = explainer_params(3, rng());
        auto m = explain::init_masks(g, rng());
        std::normal_distribution<double> nd(0.0, 1.5);
        for (Eigen::Index i = 0; i < m.m_edge.nonZeros(); ++i) m.m_edge.valuePtr()[i] = nd(rng);
        for (Eigen::Index i = 0; i < m.m_feat.size(); ++i) m.m_feat(i) = nd(rng);

        Eigen::MatrixXd h0 = gcn::input_features(g, params);
        auto in = explain::masked_inputs(m, explain::adjacency(g), h0);
        auto s = testsupport::dense_explain(m, g, h0);
        auto t = explain::explain_loss(m, g, params, cfg);
        double p1 = gcn::forward(params, SpMat(s.a_hat.sparseView()), s.h).p1;
        worst = std::max({worst, (Eigen::MatrixXd(in.weights) - s.a_masked).cwiseAbs().maxCoeff(),
                          (Eigen::MatrixXd(in.a_hat) - s.a_hat).cwiseAbs().maxCoeff(), (in.h - s.h).cwiseAbs().maxCoeff(),
                          std::abs(t.pred + std::log(p1 + cfg.epsilon)), std::abs(t.size - s.size),
                          std::abs(t.ent - s.ent),
                          std::abs(t.total - (t.pred + cfg.lambda_size * s.size + cfg.lambda_ent * s.ent))});

        auto e = explain::optimize_masks(g, params, cfg);
        if (e.trace.size() == static_cast<std::size_t>(cfg.steps) + 1 && e.trace.back() < e.trace.front()) ++decreased;
    }
    if (!(worst <= 1e-10)) v.fail(fmt::format("max diff vs dense recomputation {:.3g}", worst));
    if (decreased != 10) v.fail(fmt::format("loss decreased on {}/10 instances", decreased));

    // With every mask at +60 the sigmoid rounds to 1.0: masking is the identity.
    auto g = random_encoded(7, 2, 5, 3, rng);
    auto params = explainer_params(2, 3);
    Eigen::MatrixXd h = gcn::input_features(g, params);
    SpMat a = explain::adjacency(g);
    auto m = explain::init_masks(g, 1);
    for (Eigen::Index i = 0; i < m.m_edge.nonZeros(); ++i) m.m_edge.valuePtr()[i] = 60.0;
    m.m_feat.setConstant(60.0);
    auto in = explain::masked_inputs(m, a, h);
    Eigen::MatrixXd a_dense = Eigen::MatrixXd(a);
    a_dense.diagonal().setZero();
    bool limits = Eigen::MatrixXd(in.weights) == a_dense && in.h == h;
    if (!limits) v.fail("+inf mask limit does not reproduce A and H exactly");
    v.note(fmt::format("10 instances, max diff {:.1e}, loss decreased 10/10, +inf limits exact", worst));
    return v;
}

// 6 ---------------------------------------------------------------------------
Verdict explainer_recovery() {
    Verdict v;
    auto split = testsupport::motif_split();
    auto model = testsupport::train_motif_model(split);
    std::vector<const testsupport::SyntheticGraph*> malicious;
    for (const auto& sg : split.test) {
        if (sg.sample.label == 1) malicious.push_back(&sg);
    }
    if (malicious.size() < 10) {
        v.fail(fmt::format("only {} malicious test graphs", malicious.size()));
        return v;
    }
    int recovered = 0;
    std::string hits_per_seed;
    for (int run = 0; run < 10; ++run) {
        const auto& sg = *malicious[static_cast<std::size_t>(run)];
        explain::ExplainerConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(run);
        auto e = explain::optimize_masks(sg.sample.graph, model.params, cfg);
        auto top = testsupport::top_edges(explain::attention_scores(e.masks), 10);
        int hits = 0;
        for (auto edge : sg.motif_edges) hits += std::count(top.begin(), top.end(), edge) > 0;
        hits_per_seed += std::to_string(hits);
        recovered += hits >= 3;
    }
    if (recovered < 8) v.fail(fmt::format("motif recovered in {}/10 seeds (hits per seed {})", recovered, hits_per_seed));

    std::mt19937_64 rng(77);
    int dominated = 0, instances = 0;
    explain::ExplainerConfig cfg;
    for (const auto& sg : split.test) {
        if (sg.sample.label != 1) continue;
        ++instances;
        const auto& g = sg.sample.graph;
        auto e = explain::optimize_masks(g, model.params, cfg);
        auto learned = explain::explain_loss(e.masks, g, model.params, cfg);
        double random_p1 = 0.0;
        for (int k = 0; k < 10; ++k) {
            auto r = e.masks;
            std::vector<std::pair<double, double>> pairs;
            for (auto [a, b] : g.edges) pairs.emplace_back(e.masks.m_edge.coeff(a, b), e.masks.m_edge.coeff(b, a));
            std::shuffle(pairs.begin(), pairs.end(), rng);
            for (std::size_t i = 0; i < g.edges.size(); ++i) {
                auto [a, b] = g.edges[i];
                r.m_edge.coeffRef(a, b) = pairs[i].first;
                r.m_edge.coeffRef(b, a) = pairs[i].second;
            }
            std::shuffle(r.m_feat.data(), r.m_feat.data() + r.m_feat.size(), rng);
            random_p1 += explain::explain_loss(r, g, model.params, cfg).p1 / 10.0;
        }
        dominated += learned.p1 >= random_p1;
    }
    if (dominated != instances) v.fail(fmt::format("learned masks dominate on {}/{} instances", dominated, instances));
    v.note(fmt::format("motif recovered in {}/10 seeds, dominance {}/{}", recovered, dominated, instances));
    return v;
}

// 7 ---------------------------------------------------------------------------
CodeGraph chain_graph(int n, int extra, std::mt19937_64& rng) {
    CodeGraph g;
    g.package = "synth-1.0";
    for (int i = 0; i < n; ++i) {
        CodeNode node;
        node.id = fmt::format("synth-1.0.mod.f{:02d}", i);
        node.kind = NodeKind::Function;
        node.ast_type = "FunctionDef";
        node.name = fmt::format("f{:02d}", i);
        node.source = fmt::format("def f{:02d}(x):\n    return x + {}", i, i);
        g.nodes.push_back(node);
    }
    std::set<std::pair<int, int>> seen;
    auto add = [&](int a, int b) {
        if (a == b || !seen.insert(std::minmax(a, b)).second) return;
        g.edges.push_back({g.nodes[a].id, g.nodes[b].id, EdgeKind::CallFunctionLevel});
    };
    for (int i = 1; i < n; ++i) add(i - 1, i);
    for (int k = 0; k < extra; ++k) add(static_cast<int>(rng() % n), static_cast<int>(rng() % n));
    return g;
}

explain::AttentionScores uniform_scores(const CodeGraph& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.01, 0.99);
    explain::AttentionScores s;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) s.node.push_back(u(rng));
    for (auto [a, b] : g.index_edges()) {
        s.edges.push_back({static_cast<int>(std::min(a, b)), static_cast<int>(std::max(a, b)), u(rng)});
    }
    std::sort(s.edges.begin(), s.edges.end(),
              [](const auto& x, const auto& y) { return std::tie(x.u, x.v) < std::tie(y.u, y.v); });
    return s;
}

Verdict extraction() {
    Verdict v;
    std::mt19937_64 rng(4);
    auto small = build_graph("clipgrab-0.3.1", read_sources(testsupport::corpus() / "clipgrab-0.3.1"));
    auto large = chain_graph(45, 40, rng);
    std::string sizes;
    for (const CodeGraph* g : {&small, &large}) {
        auto s = uniform_scores(*g, rng);
        const std::size_t e = g->index_edges().size();
        std::set<std::pair<std::string, std::string>> prev;
        for (int k : {1, 10, 20, 50}) {
            auto sub = subgraph::extract_topk(*g, s, k);
            if (sub.edges.size() != std::min<std::size_t>(static_cast<std::size_t>(k), e))
                v.fail(fmt::format("{} K={}: {} edges of {}", g->package, k, sub.edges.size(), e));
            std::set<std::pair<std::string, std::string>> cur;
            for (const auto& x : sub.edges) cur.emplace(x.src, x.dst);
            if (!std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()))
                v.fail(fmt::format("{} K={} does not contain the smaller K", g->package, k));
            prev = cur;
        }
        sizes += fmt::format("{}{}", sizes.empty() ? "" : ",", e);
    }
    if (subgraph::kDefaultTopK != 20 || pipeline::ScanOptions{}.top_k != 20 || pipeline::RunConfig{}.top_k != 20)
        v.fail("default K is not 20");

    llm::WsPunctTokenizer tok;
    auto s = uniform_scores(large, rng);
    std::vector<std::size_t> counts;
    for (int k : {10, 20, 30}) counts.push_back(tok.count(subgraph::serialize_prompt_text(subgraph::extract_topk(large, s, k))));
    if (!(counts[0] < counts[1] && counts[1] < counts[2]))
        v.fail(fmt::format("prompt tokens {} / {} / {}", counts[0], counts[1], counts[2]));
    v.note(fmt::format("|E| = {}; default K 20; prompt tokens {} < {} < {}", sizes, counts[0], counts[1], counts[2]));
    return v;
}

// 8 ---------------------------------------------------------------------------
Verdict prompt_format() {
    Verdict v;
    auto graph = build_graph("15Cent-999.0.1", read_sources(testsupport::corpus() / "15Cent-999.0.1"));
    explain::AttentionScores s;
    s.node = {0.7, 0.8, 0.95};
    s.edges = {{0, 1, 0.8}, {0, 2, 0.3}, {1, 2, 0.9}};
    if (graph.nodes.size() != 3) {
        v.fail(fmt::format("fixture graph has {} nodes", graph.nodes.size()));
        return v;
    }
    std::string text = subgraph::serialize_prompt_text(subgraph::extract_topk(graph, s, subgraph::kDefaultTopK));
    std::string want = read_file(testsupport::fixtures() / "subgraph" / "15cent_topk.txt");
    if (text != want) v.fail("prompt text differs from the snapshot");
    v.note(fmt::format("snapshot matches ({} bytes)", want.size()));
    return v;
}

// 9 ---------------------------------------------------------------------------
Verdict gateway_contracts() {
    Verdict v;
    auto manifest = fixture_manifest();
    gcn::TrainConfig tc;
    tc.epochs = 1;
    gcn::Model model = pipeline::train_model(manifest, rules::load_static_rules(), tc);
    model.params = gcn::GcnParams::zeros(static_cast<int>(model.names.size()), static_cast<int>(model.types.size()),
                                         static_cast<int>(model.rules.size()), model.config.hidden);
    llm::WsPunctTokenizer tok;
    llm::MockClient analysis(llm::MockClient::parse_fixture(
        nlohmann::json::parse(read_file(testsupport::fixtures() / "llm" / "analysis_responses.json"))));
    int benign = 0;
    for (const auto& rec : manifest.records) {
        auto r = pipeline::scan_package(rec, model, &analysis, tok, {});
        benign += r.gnn_label == Label::Benign && r.llm_status == eval::LlmStatus::Skipped;
    }
    if (benign != static_cast<int>(manifest.records.size())) v.fail("a tie-scored package was not benign");
    if (analysis.calls() != 0) v.fail(fmt::format("benign scan made {} calls", analysis.calls()));

    llm::MockClient judge_mock(llm::MockClient::parse_fixture(
        nlohmann::json::parse(read_file(testsupport::fixtures() / "llm" / "judge_responses.json"))));
    auto pen = llm::judge("anything", "steals wallets", Label::Benign, judge_mock);
    if (!pen.scores || !(*pen.scores == llm::JudgeScores{0, 0, 0, 0}) || !pen.penalized)
        v.fail("zero penalty did not give all-zero scores");
    if (judge_mock.calls() != 0) v.fail(fmt::format("zero penalty made {} calls", judge_mock.calls()));

    model.params.bc(1) = 4.0;
    llm::MockClient junk({{"*", "I cannot tell.", ""}});
    pipeline::ScanOptions opts;
    opts.policy.sleep = [](std::chrono::milliseconds) {};
    auto r = pipeline::scan_package(*manifest.find("15Cent-999.0.1"), model, &junk, tok, opts);
    if (r.llm_status != eval::LlmStatus::Invalid || r.analysis_attempts != 3 || junk.calls() != 3)
        v.fail(fmt::format("malformed responses: status {}, {} attempts, {} calls", eval::to_string(r.llm_status),
                           r.analysis_attempts, junk.calls()));
    llm::MockClient bad_judge({{"*", R"({"quality_scores": {}})", ""}});
    auto ji = llm::judge("e", "g", Label::Malicious, bad_judge, opts.policy);
    if (ji.scores || ji.attempts != 3) v.fail("malformed judge output not Invalid after 3 attempts");
    v.note(fmt::format("benign scan 0 calls over {} packages, zero penalty 0 calls, malformed: 3 attempts then Invalid",
                       manifest.records.size()));
    return v;
}

// 10 --------------------------------------------------------------------------
eval::PackageResult random_result(std::mt19937_64& rng, int index) {
    static const std::vector<std::string> parts = {"a", "\"q\"", "\n", "é", "→", "\\", " ", "{}", "\t"};
    auto text = [&] {
        std::string s;
        for (int i = static_cast<int>(rng() % 8); i > 0; --i) s += parts[rng() % parts.size()];
        return s;
    };
    std::uniform_real_distribution<double> u(0.0, 1.0);
    eval::PackageResult r;
    r.id = fmt::format("pkg{:03d}-{}", index, rng() % 100);
    r.bucket = static_cast<Bucket>(rng() % 3);
    r.truth = static_cast<Label>(rng() % 3);
    r.p1 = u(rng);
    r.p0 = 1.0 - r.p1;
    r.gnn_label = r.p1 > 0.5 ? Label::Malicious : Label::Benign;
    r.llm_status = static_cast<eval::LlmStatus>(rng() % 3);
    if (r.llm_status == eval::LlmStatus::Valid) {
        r.llm_verdict = rng() % 2 ? Label::Malicious : Label::Benign;
        r.reasoning = text();
        r.mitigation = text();
    }
    r.analysis_attempts = static_cast<int>(rng() % 4);
    r.prompt_tokens = rng() % 5000;
    r.tokenizer_id = "ws-punct";
    r.judge_status = static_cast<eval::JudgeStatus>(rng() % 4);
    if (r.judge_status == eval::JudgeStatus::Scored) {
        r.scores = {1 + static_cast<int>(rng() % 5), 1 + static_cast<int>(rng() % 5), 1 + static_cast<int>(rng() % 5),
                    1 + 2 * static_cast<int>(rng() % 3)};
    }
    r.judge_attempts = static_cast<int>(rng() % 4);
    if (rng() % 5 == 0) {
        r.error_stage = "explain";
        r.error = text();
    }
    return r;
}

Verdict metrics_oracle() {
    Verdict v;
    auto two = [](double x) { return fmt::format("{:.2f}", x); };
    // tp 3, fp 1, tn 4, fn 2: recall 3/5, precision 3/4, accuracy 7/10, benign recall 4/5.
    auto m = eval::metrics({3, 1, 4, 2});
    std::string got = two(m.recall.percent) + "/" + two(m.precision.percent) + "/" + two(m.accuracy.percent) + "/" +
                      two(m.benign_recall.percent);
    if (got != "60.00/75.00/70.00/80.00") v.fail("metrics " + got);

    // Small {300,420,510,275,645}: mean 430, population std sqrt(93670/5).
    std::vector<eval::TokenSample> samples;
    for (std::size_t t : {300, 420, 510, 275, 645}) samples.push_back({Bucket::Small, t});
    for (std::size_t t : {812, 640, 455}) samples.push_back({Bucket::Large, t});
    auto rows = eval::token_stats(samples);
    std::map<std::string, std::string> stats;
    for (const auto& row : rows) stats[row.bucket] = two(row.stats.mean) + "/" + two(row.stats.std);
    if (stats["Small"] != "430.00/136.86") v.fail("Small token stats " + stats["Small"]);
    if (stats["Large"] != "635.67/145.78") v.fail("Large token stats " + stats["Large"]);

    std::mt19937_64 rng(3);
    std::vector<eval::PackageResult> results;
    for (int i = 0; i < 300; ++i) results.push_back(random_result(rng, i));
    auto parsed = eval::parse_jsonl(eval::to_jsonl(results));
    auto sorted = results;
    std::stable_sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.id < b.id; });
    if (parsed != sorted) v.fail("JSONL round-trip lost information");
    v.note(fmt::format("metrics {}, Small {}, Large {}, 300 records round-trip", got, stats["Small"], stats["Large"]));
    return v;
}

// 11 --------------------------------------------------------------------------
int run_cli(const std::string& args, const std::filesystem::path& log) {
    std::string cmd = fmt::format("\"{}\" {} >\"{}\" 2>&1", PKGSCOPE_BIN, args, log.string());
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict end_to_end() {
    Verdict v;
    TempDir tmp;
    auto f = testsupport::fixtures();
    auto q = [](const std::filesystem::path& p) { return "\"" + p.string() + "\""; };
    if (run_cli(fmt::format("ingest --root {} --labels {} --reports {} --out {}", q(f / "corpus"), q(f / "labels.csv"),
                            q(f / "reports.json"), q(tmp / "manifest.json")),
                tmp / "ingest.log") != 0) {
        v.fail("ingest failed: " + read_file(tmp / "ingest.log"));
        return v;
    }
    if (run_cli(fmt::format("train --manifest {} --out {}", q(tmp / "manifest.json"), q(tmp / "model.ckpt")),
                tmp / "train.log") != 0) {
        v.fail("train failed: " + read_file(tmp / "train.log"));
        return v;
    }
    auto t0 = Clock::now();
    int code = run_cli(fmt::format("scan --corpus {} --labels {} --model {} --mock {} --out {}", q(f / "corpus"),
                                   q(f / "labels.csv"), q(tmp / "model.ckpt"), q(f / "llm" / "analysis_responses.json"),
                                   q(tmp / "results.jsonl")),
                       tmp / "scan.log");
    double secs = seconds_since(t0);
    std::size_t packages = 0;
    for (const auto& entry : std::filesystem::directory_iterator(f / "corpus")) packages += entry.is_directory();
    std::size_t records = 0;
    std::set<std::string> ids;
    if (std::filesystem::exists(tmp / "results.jsonl")) {
        for (const auto& r : eval::read_results(tmp / "results.jsonl")) {
            ++records;
            ids.insert(r.id);
        }
    }
    if (code != 0) v.fail(fmt::format("scan exited {}: {}", code, read_file(tmp / "scan.log")));
    if (records != packages || ids.size() != packages)
        v.fail(fmt::format("{} records ({} distinct) for {} packages", records, ids.size(), packages));
    if (secs >= 60.0) v.fail(fmt::format("{:.1f}s >= 60s", secs));
    v.note(fmt::format("{} packages, {} records, exit 0, {:.2f}s", packages, records, secs));
    return v;
}

// 12 --------------------------------------------------------------------------
Verdict explainer_runtime() {
    Verdict v;
    auto manifest = fixture_manifest();
    gcn::Model model = pipeline::train_model(manifest, rules::load_static_rules(), {});
    explain::ExplainerConfig cfg;
    double total = 0.0, slowest = 0.0;
    int count = 0, largest = 0;
    for (const auto& rec : manifest.records) {
        auto g = model.encode(build_graph(rec));
        if (g.num_nodes() == 0) continue;
        if (g.num_nodes() > 200) v.fail(rec.id + " has more than 200 nodes");
        auto t0 = Clock::now();
        auto e = explain::optimize_masks(g, model.params, cfg);
        double secs = seconds_since(t0);
        if (e.trace.size() != 101) v.fail(fmt::format("{}: {} trace entries", rec.id, e.trace.size()));
        total += secs;
        slowest = std::max(slowest, secs);
        largest = std::max(largest, g.num_nodes());
        ++count;
    }
    double mean = count ? total / count : 0.0;
    if (count == 0) v.fail("no fixture graphs");
    if (!(mean < 5.0)) v.fail(fmt::format("mean {:.3f}s", mean));
    v.note(fmt::format("{} graphs (up to {} nodes), mean {:.4f}s, max {:.4f}s at 100 steps", count, largest, mean,
                       slowest));
    return v;
}

}  // namespace

int main() {
    const std::vector<std::function<Verdict()>> criteria = {
        graph_fidelity, rule_safety,        gcn_correctness, training_sanity, explainer_equations, explainer_recovery,
        extraction,     prompt_format,      gateway_contracts, metrics_oracle, end_to_end,         explainer_runtime,
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i]();
        } catch (const std::exception& e) {
            v.fail(std::string("exception: ") + e.what());
        }
        failed += !v.pass;
        std::cout << fmt::format("criterion {}: {} - {}", i + 1, v.pass ? "PASS" : "FAIL", v.detail) << std::endl;
    }
    std::cout << fmt::format("{}/{} criteria passed", criteria.size() - static_cast<std::size_t>(failed),
                             criteria.size())
              << std::endl;
    return failed == 0 ? 0 : 1;
}
