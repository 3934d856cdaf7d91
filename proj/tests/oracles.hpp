#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. None of these call into the code they check.

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pkgscope/code_graph.hpp"
#include "pkgscope/explainer.hpp"
#include "pkgscope/gcn.hpp"
#include "pkgscope/util.hpp"
#include "support.hpp"

namespace testsupport {

// ---- code graph -----------------------------------------------------------

struct GraphListing {
    std::vector<std::string> nodes;  // "<kind> <id>"
    std::vector<std::string> edges;  // "<kind> <src> <dst>"
};

/// Hand-enumerated node and edge lists from corpus_expected.txt, by package.
inline std::map<std::string, GraphListing> load_expected_graphs() {
    std::istringstream in(pkgscope::read_file(fixtures() / "corpus_expected.txt"));
    std::map<std::string, GraphListing> out;
    std::string line;
    GraphListing* cur = nullptr;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("P ", 0) == 0) cur = &out[line.substr(2)];
        else if (line.rfind("N ", 0) == 0) cur->nodes.push_back(line.substr(2));
        else if (line.rfind("E ", 0) == 0) cur->edges.push_back(line.substr(2));
    }
    return out;
}

inline GraphListing listing(const pkgscope::CodeGraph& g) {
    GraphListing e;
    for (const auto& n : g.nodes) e.nodes.push_back(std::string(to_string(n.kind)) + " " + n.id);
    for (const auto& x : g.edges) e.edges.push_back(std::string(to_string(x.kind)) + " " + x.src + " " + x.dst);
    return e;
}

// ---- rules ----------------------------------------------------------------

inline const std::string kNetworkRule = R"("network": lambda n: n.startswith(("socket.", "requests.", "urllib.")),)";
inline const std::string kPhishingRule = R"("phishing": lambda n: n in ("requests.post", "HTTPConnection"),)";

/// 50 rule texts that would touch the file system if evaluated; '@' marks
/// where the sentinel path goes.
inline const std::vector<std::string>& hostile_rule_templates() {
    static const std::vector<std::string> t = {
        "lambda n: open('@', 'w')",
        "lambda n: open('@', 'w').write('x') or n == 'a'",
        "lambda n: __import__('os').system('touch @')",
        "lambda n: __import__('pathlib').Path('@').touch()",
        "lambda n: exec(\"open('@','w')\")",
        "lambda n: eval(\"open('@','w')\")",
        "lambda n: compile('x', '@', 'exec')",
        "lambda n: n.startswith(open('@','w').name)",
        "lambda n: n in (open('@','w').name,)",
        "lambda n: any(s in n for s in open('@','w'))",
        "lambda n: any(s in n for s in (open('@','w'),))",
        "lambda n: n == (lambda: open('@','w'))()",
        "lambda n: [open('@','w') for _ in 'x']",
        "lambda n: {open('@','w')}",
        "lambda n: (yield open('@','w'))",
        "lambda n: (x := open('@','w'))",
        "lambda n: n.__class__.__bases__[0].__subclasses__()",
        "lambda n: getattr(__builtins__, 'open')('@', 'w')",
        "lambda n: globals()['__builtins__'].open('@','w')",
        "lambda n: n.startswith('a') or os.system('touch @')",
        "lambda n: n.startswith('a') or open('@', 'w')",
        "lambda n: 'a' in n or __import__('os').remove('@')",
        "lambda n: n.startswith(__import__('os').system('touch @') or 'a')",
        "lambda n: n.startswith(('a', open('@','w')))",
        "lambda n: n.startswith(('a',) + (open('@','w'),))",
        "lambda n: n == 'a' if open('@','w') else False",
        "lambda n: n == 'a' and open('@','w')",
        "lambda n: n.startswith(*[open('@','w')])",
        "lambda n: n.startswith(**{'x': open('@','w')})",
        "lambda n=open('@','w'): n == 'a'",
        "lambda n, f=open('@','w'): n == 'a'",
        "lambda n: f'{open(\"@\",\"w\")}' in n",
        "lambda n: any(open('@','w') for s in ('a',))",
        "lambda n: any(s in n for s in ('a',) if open('@','w'))",
        "lambda n: any(s in n for s in ('a',) for t in open('@','w'))",
        "lambda n: n.startswith(('a',))\nimport os; os.system('touch @')",
        "lambda n: n.startswith(('a',)); open('@','w')",
        "lambda n: n.startswith(('a',))) or (open('@','w')",
        "\"x\": lambda n: n == 'a', \"y\": open('@','w')",
        "\"x\": lambda n: n == 'a'} or open('@','w') or {",
        "x = lambda n: n == 'a'; open('@','w')",
        "x = open('@','w')",
        "open('@','w')",
        "__import__('os').system('touch @')",
        "@decorator\ndef f(n): open('@','w')",
        "lambda n: n.startswith(('a',)) or print(open('@','w'))",
        "lambda n: n.startswith('a').__class__('@')",
        "lambda n: breakpoint()",
        "lambda n: (n.startswith('a'), open('@','w'))[0]",
        "lambda n: n in ('a', 'b') or n in [open('@','w')]",
    };
    return t;
}

inline std::string with_sentinel(std::string t, const std::string& sentinel) {
    for (auto pos = t.find('@'); pos != std::string::npos; pos = t.find('@', pos + sentinel.size())) {
        t.replace(pos, 1, sentinel);
    }
    return t;
}

/// Rule ids set on ten fixture nodes, worked out by hand from each node's
/// calls and imports against the static matchers.
inline const std::map<std::string, std::vector<std::string>>& fixture_node_bits() {
    static const std::map<std::string, std::vector<std::string>> m = {
        {"clipgrab-0.3.1.main.auto_copy_wallet", {"network", "clipboard"}},
        {"clipgrab-0.3.1.main.grab_screen", {"screenshot"}},
        {"clipgrab-0.3.1.main.LoadUrlib", {"network"}},
        {"clipgrab-0.3.1.main.Stealer.run", {"subprocess", "user_info"}},
        {"clipgrab-0.3.1.main", {"network"}},
        {"15Cent-999.0.1.setup.CustomInstall.run", {"shell_exec"}},
        {"netsetup-2.0.0.netsetup_pkg.beacon.send", {"network"}},
        {"netsetup-2.0.0.netsetup_pkg.hooks.PostInstall.after", {"obfuscation"}},
        {"tinyutil-0.1.0.tinyutil.fib", {}},
        {"helperlib-1.2.0.helperlib.util.slugify", {}},
    };
    return m;
}

// ---- GCN ------------------------------------------------------------------

namespace detail {

using Mat = std::vector<std::vector<double>>;

inline Mat to_rows(const Eigen::MatrixXd& m) {
    Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
    }
    return out;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t k = 0; k < b.size(); ++k) {
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
        }
    }
    return out;
}

}  // namespace detail

/// Forward pass with plain loops: dense normalized adjacency from the edge
/// list, two ReLU layers, mean pooling, softmax.
inline std::pair<double, double> naive_forward(const pkgscope::gcn::EncodedGraph& g,
                                               const pkgscope::gcn::GcnParams& p) {
    using detail::Mat;
    const std::size_t n = g.name_idx.size();
    Mat a(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) a[i][i] = 1.0;
    for (auto [u, v] : g.edges) {
        if (u == v) continue;
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) deg[i] += a[i][j];
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) a[i][j] /= std::sqrt(deg[i] * deg[j]);
    }
    Mat h0(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < pkgscope::gcn::kNameDim; ++k) h0[i].push_back(p.name_table(g.name_idx[i], k));
        for (int k = 0; k < pkgscope::gcn::kTypeDim; ++k) h0[i].push_back(p.type_table(g.type_idx[i], k));
        for (Eigen::Index k = 0; k < g.behavior.cols(); ++k) h0[i].push_back(g.behavior(static_cast<Eigen::Index>(i), k));
    }
    auto layer = [&](const Mat& h, const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
        Mat z = detail::matmul(detail::matmul(a, h), detail::to_rows(w));
        for (auto& row : z) {
            for (std::size_t j = 0; j < row.size(); ++j) row[j] = std::max(0.0, row[j] + b(static_cast<Eigen::Index>(j)));
        }
        return z;
    };
    Mat h2 = layer(layer(h0, p.w1, p.b1), p.w2, p.b2);
    std::vector<double> pooled(h2[0].size(), 0.0);
    for (const auto& row : h2) {
        for (std::size_t j = 0; j < row.size(); ++j) pooled[j] += row[j] / static_cast<double>(n);
    }
    double l0 = p.bc(0), l1 = p.bc(1);
    for (std::size_t j = 0; j < pooled.size(); ++j) {
        l0 += pooled[j] * p.wc(static_cast<Eigen::Index>(j), 0);
        l1 += pooled[j] * p.wc(static_cast<Eigen::Index>(j), 1);
    }
    double p1 = 1.0 / (1.0 + std::exp(l0 - l1));
    return {1.0 - p1, p1};
}

// ---- explainer ------------------------------------------------------------

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Dense recomputation of the masked inputs and the regularizers.
struct DenseExplain {
    Eigen::MatrixXd a_masked, a_hat, h;
    double size = 0.0, ent = 0.0;
};

inline DenseExplain dense_explain(const pkgscope::explain::ExplanationMasks& m, const pkgscope::gcn::EncodedGraph& g,
                                  const Eigen::MatrixXd& h0) {
    const int n = g.num_nodes();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (auto [u, v] : g.edges) a(u, v) = a(v, u) = 1.0;
    Eigen::MatrixXd sm(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) sm(i, j) = sig(m.m_edge.coeff(i, j));
    }
    Eigen::MatrixXd tilde = (sm + sm.transpose()) / 2.0;
    DenseExplain s;
    s.a_masked = a.cwiseProduct(tilde);
    s.a_masked.diagonal().setZero();
    Eigen::MatrixXd with_loops = s.a_masked + Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd d = with_loops.rowwise().sum();
    s.a_hat = Eigen::MatrixXd(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) s.a_hat(i, j) = with_loops(i, j) / std::sqrt(d(i) * d(j));
    }
    s.h = h0;
    for (int i = 0; i < n; ++i) s.h.row(i) *= sig(m.m_feat(i));
    int support = 0;
    for (int i = 0; i < n; ++i) {
        s.size += sig(m.m_feat(i));
        for (int j = 0; j < n; ++j) {
            if (a(i, j) == 0.0) continue;
            double w = tilde(i, j);
            s.size += w;
            s.ent += -w * std::log(w) - (1 - w) * std::log(1 - w);
            ++support;
        }
    }
    if (support > 0) s.ent /= support;
    return s;
}

/// Edge index pairs of the k highest attention scores, ties in input order.
inline std::vector<std::pair<int, int>> top_edges(const pkgscope::explain::AttentionScores& s, std::size_t k) {
    auto e = s.edges;
    std::stable_sort(e.begin(), e.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    std::vector<std::pair<int, int>> out;
    for (std::size_t i = 0; i < e.size() && i < k; ++i) out.emplace_back(e[i].u, e[i].v);
    return out;
}

}  // namespace testsupport
