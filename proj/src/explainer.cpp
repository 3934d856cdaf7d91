#include "pkgscope/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pkgscope/error.hpp"
#include "pkgscope/util.hpp"

using nlohmann::json;

namespace pkgscope::explain {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

double binary_entropy(double w) { return -xlogx(w) - xlogx(1.0 - w); }

std::vector<std::pair<int, int>> support_edges(const SpMat& m) {
    std::vector<std::pair<int, int>> out;
    for (int k = 0; k < m.outerSize(); ++k) {
        for (SpMat::InnerIterator it(m, k); it; ++it) {
            if (it.row() < it.col()) out.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void check_masks(const ExplanationMasks& masks, const SpMat& a) {
    const Eigen::Index n = masks.m_feat.size();
    if (a.rows() != n || a.cols() != n || masks.m_edge.rows() != n || masks.m_edge.cols() != n) {
        throw Error(fmt::format("mask shape {}x{} / {} does not match adjacency {}x{}", masks.m_edge.rows(),
                                masks.m_edge.cols(), n, a.rows(), a.cols()));
    }
    bool same = masks.m_edge.nonZeros() == a.nonZeros();
    for (int k = 0; same && k < a.outerSize(); ++k) {
        SpMat::InnerIterator x(masks.m_edge, k), y(a, k);
        for (; same && x && y; ++x, ++y) same = x.row() == y.row();
        same = same && !x && !y;
    }
    if (!same) throw Error("edge mask pattern does not match the graph's edges");
}

}  // namespace

void ExplainerConfig::validate() const {
    if (steps < 1) throw ConfigError("explainer steps must be at least 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("explainer lr must be positive");
    if (!(epsilon > 0.0)) throw ConfigError("explainer epsilon must be positive");
    if (!(lambda_size >= 0.0) || !(lambda_ent >= 0.0)) throw ConfigError("explainer lambdas must be non-negative");
}

json to_json(const ExplainerConfig& c) {
    return {{"steps", c.steps},        {"lr", c.lr},           {"lambda_size", c.lambda_size},
            {"lambda_ent", c.lambda_ent}, {"epsilon", c.epsilon}, {"seed", c.seed}};
}

ExplainerConfig explainer_config_from_json(const json& j, ExplainerConfig base) {
    try {
        if (!j.is_object()) throw ConfigError("explainer config must be an object");
        for (const auto& [k, v] : j.items()) {
            if (k == "steps") base.steps = v.get<int>();
            else if (k == "lr") base.lr = v.get<double>();
            else if (k == "lambda_size") base.lambda_size = v.get<double>();
            else if (k == "lambda_ent") base.lambda_ent = v.get<double>();
            else if (k == "epsilon") base.epsilon = v.get<double>();
            else if (k == "seed") base.seed = v.get<std::uint64_t>();
            else throw ConfigError(fmt::format("unknown explainer option '{}'", k));
        }
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("explainer config: {}", e.what()));
    }
    base.validate();
    return base;
}

SpMat adjacency(const gcn::EncodedGraph& g) {
    const int n = g.num_nodes();
    std::vector<Eigen::Triplet<double>> trips;
    for (auto [u, v] : g.edges) {
        if (u == v) continue;
        if (u < 0 || v < 0 || u >= n || v >= n) throw Error(fmt::format("edge ({}, {}) out of range", u, v));
        trips.emplace_back(u, v, 1.0);
        trips.emplace_back(v, u, 1.0);
    }
    SpMat a(n, n);
    a.setFromTriplets(trips.begin(), trips.end(), [](double x, double) { return x; });
    return a;
}

ExplanationMasks init_masks(const gcn::EncodedGraph& g, std::uint64_t seed) {
    const int n = g.num_nodes();
    if (n < 1) throw Error("cannot explain an empty graph");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / (2.0 * n)));
    SpMat a = adjacency(g);
    std::vector<Eigen::Triplet<double>> trips;
    for (auto [u, v] : support_edges(a)) {
        double fwd = nd(rng);
        double back = nd(rng);
        trips.emplace_back(u, v, fwd);
        trips.emplace_back(v, u, back);
    }
    ExplanationMasks m;
    m.m_edge = SpMat(n, n);
    m.m_edge.setFromTriplets(trips.begin(), trips.end());
    m.m_feat = Eigen::VectorXd(n);
    for (int i = 0; i < n; ++i) m.m_feat(i) = nd(rng);
    return m;
}

MaskedInputs masked_inputs(const ExplanationMasks& masks, const SpMat& a, const Eigen::MatrixXd& h) {
    check_masks(masks, a);
    if (h.rows() != a.rows()) throw Error("feature rows do not match adjacency");
    const int n = static_cast<int>(a.rows());
    std::vector<std::pair<int, int>> edges;
    std::vector<double> weights;
    std::vector<Eigen::Triplet<double>> trips;
    for (auto [u, v] : support_edges(a)) {
        double w = 0.5 * (sigmoid(masks.m_edge.coeff(u, v)) + sigmoid(masks.m_edge.coeff(v, u)));
        w *= a.coeff(u, v);
        edges.emplace_back(u, v);
        weights.push_back(w);
        trips.emplace_back(u, v, w);
        trips.emplace_back(v, u, w);
    }
    MaskedInputs out;
    out.weights = SpMat(n, n);
    out.weights.setFromTriplets(trips.begin(), trips.end());
    out.a_hat = gcn::normalize_adjacency(n, edges, &weights);
    out.feat_gate = masks.m_feat.unaryExpr([](double x) { return sigmoid(x); });
    out.h = out.feat_gate.asDiagonal() * h;
    return out;
}

LossTerms explain_loss(const ExplanationMasks& masks, const gcn::EncodedGraph& g, const gcn::GcnParams& params,
                       const ExplainerConfig& config, MaskGradients* grads) {
    SpMat a = adjacency(g);
    Eigen::MatrixXd h0 = gcn::input_features(g, params);
    MaskedInputs in = masked_inputs(masks, a, h0);
    const auto edges = support_edges(a);
    const double ne = static_cast<double>(edges.size());

    LossTerms t;
    gcn::ForwardCache cache;
    gcn::Probs p = gcn::forward(params, in.a_hat, in.h, &cache);
    t.p1 = p.p1;
    t.pred = -std::log(p.p1 + config.epsilon);
    for (auto [u, v] : edges) {
        double w = in.weights.coeff(u, v);
        t.size += 2.0 * w;  // both directed entries of A's support
        if (ne > 0) t.ent += binary_entropy(w) / ne;
    }
    t.size += in.feat_gate.sum();
    t.total = t.pred + config.lambda_size * t.size + config.lambda_ent * t.ent;
    if (!grads) return t;

    // dL_pred/dlogits for L = -log(p1 + eps) with p = softmax(logits).
    const double c = -p.p0 * p.p1 / (p.p1 + config.epsilon);
    Eigen::RowVector2d dlogits(-c, c);
    Eigen::MatrixXd d_h;
    SpMat d_ahat;
    gcn::backward_logits(params, in.a_hat, nullptr, cache, dlogits, nullptr, {&d_h, &d_ahat});

    // Back through Â = D^-1/2 (W + I) D^-1/2, restricted to Â's pattern.
    const int n = static_cast<int>(a.rows());
    Eigen::VectorXd deg = Eigen::VectorXd::Ones(n);
    for (auto [u, v] : edges) {
        deg(u) += in.weights.coeff(u, v);
        deg(v) += in.weights.coeff(u, v);
    }
    Eigen::VectorXd inv = deg.cwiseSqrt().cwiseInverse();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < d_ahat.outerSize(); ++k) {
        for (SpMat::InnerIterator it(d_ahat, k); it; ++it) {
            double ga = it.value() * in.a_hat.coeff(it.row(), it.col());
            s(it.row()) += ga;
            s(it.col()) += ga;
        }
    }
    auto d_entry = [&](int i, int j) { return d_ahat.coeff(i, j) * inv(i) * inv(j) - 0.5 * s(i) / deg(i); };

    grads->d_edge = masks.m_edge;
    for (auto [u, v] : edges) {
        double w = in.weights.coeff(u, v);
        double dw = d_entry(u, v) + d_entry(v, u);
        dw += config.lambda_size * 2.0;
        if (ne > 0) {
            double wc = std::clamp(w, 1e-12, 1.0 - 1e-12);
            dw += config.lambda_ent * std::log((1.0 - wc) / wc) / ne;
        }
        double su = sigmoid(masks.m_edge.coeff(u, v));
        double sv = sigmoid(masks.m_edge.coeff(v, u));
        grads->d_edge.coeffRef(u, v) = dw * 0.5 * su * (1.0 - su);
        grads->d_edge.coeffRef(v, u) = dw * 0.5 * sv * (1.0 - sv);
    }
    grads->d_feat = Eigen::VectorXd(n);
    for (int i = 0; i < n; ++i) {
        double gate = in.feat_gate(i);
        double dgate = d_h.row(i).dot(h0.row(i)) + config.lambda_size;
        grads->d_feat(i) = dgate * gate * (1.0 - gate);
    }
    return t;
}

Explanation optimize_masks(const gcn::EncodedGraph& g, const gcn::GcnParams& params, const ExplainerConfig& config) {
    config.validate();
    Explanation out;
    out.masks = init_masks(g, config.seed);
    ExplanationMasks& m = out.masks;
    const Eigen::Index ne = m.m_edge.nonZeros();
    const Eigen::Index n = m.m_feat.size();

    Eigen::VectorXd mom = Eigen::VectorXd::Zero(ne + n), vel = Eigen::VectorXd::Zero(ne + n);
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    MaskGradients grads;
    LossTerms t = explain_loss(m, g, params, config, &grads);
    if (!std::isfinite(t.total)) throw Error("explainer loss is not finite at initialization");
    out.trace.push_back(t.total);

    for (int step = 1; step <= config.steps; ++step) {
        ExplanationMasks prev = m;
        Eigen::VectorXd grad(ne + n);
        grad.head(ne) = Eigen::Map<const Eigen::VectorXd>(grads.d_edge.valuePtr(), ne);
        grad.tail(n) = grads.d_feat;
        mom = kBeta1 * mom + (1.0 - kBeta1) * grad;
        vel = kBeta2 * vel + (1.0 - kBeta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(kBeta1, step);
        const double c2 = 1.0 - std::pow(kBeta2, step);
        Eigen::VectorXd delta = config.lr * (mom.array() / c1) / ((vel.array() / c2).sqrt() + kEps);
        Eigen::Map<Eigen::VectorXd>(m.m_edge.valuePtr(), ne) -= delta.head(ne);
        m.m_feat -= delta.tail(n);

        t = explain_loss(m, g, params, config, &grads);
        if (!std::isfinite(t.total) || !grads.d_feat.allFinite() ||
            !Eigen::Map<const Eigen::VectorXd>(grads.d_edge.valuePtr(), ne).allFinite()) {
            out.aborted = true;
            out.diagnostic = fmt::format("non-finite explainer loss at step {}; kept masks from step {}", step, step - 1);
            spdlog::warn("{}", out.diagnostic);
            m = std::move(prev);
            break;
        }
        out.trace.push_back(t.total);
    }
    return out;
}

double AttentionScores::edge(int a, int b) const {
    auto key = std::minmax(a, b);
    auto it = std::lower_bound(edges.begin(), edges.end(), key, [](const EdgeScore& e, const std::pair<int, int>& k) {
        return std::make_pair(e.u, e.v) < k;
    });
    if (it == edges.end() || it->u != key.first || it->v != key.second) {
        throw Error(fmt::format("({}, {}) is not an edge", a, b));
    }
    return it->score;
}

AttentionScores attention_scores(const ExplanationMasks& masks) {
    AttentionScores s;
    for (Eigen::Index i = 0; i < masks.m_feat.size(); ++i) s.node.push_back(sigmoid(masks.m_feat(i)));
    for (auto [u, v] : support_edges(masks.m_edge)) {
        double w = 0.5 * (sigmoid(masks.m_edge.coeff(u, v)) + sigmoid(masks.m_edge.coeff(v, u)));
        s.edges.push_back({u, v, w});
    }
    return s;
}

json to_json(const ExplanationMasks& m) {
    json edges = json::array();
    for (auto [u, v] : support_edges(m.m_edge)) {
        edges.push_back({u, v, m.m_edge.coeff(u, v), m.m_edge.coeff(v, u)});
    }
    return {{"num_nodes", m.num_nodes()},
            {"m_feat", std::vector<double>(m.m_feat.data(), m.m_feat.data() + m.m_feat.size())},
            {"m_edge", edges}};
}

ExplanationMasks masks_from_json(const json& j) {
    try {
        const int n = j.at("num_nodes").get<int>();
        auto feat = j.at("m_feat").get<std::vector<double>>();
        if (n < 1 || feat.size() != static_cast<std::size_t>(n)) throw FormatError("m_feat length does not match num_nodes");
        ExplanationMasks m;
        m.m_feat = Eigen::Map<Eigen::VectorXd>(feat.data(), n);
        std::vector<Eigen::Triplet<double>> trips;
        std::set<std::pair<int, int>> seen;
        for (const auto& e : j.at("m_edge")) {
            if (!e.is_array() || e.size() != 4) throw FormatError("m_edge entries are [u, v, m_uv, m_vu]");
            int u = e[0].get<int>(), v = e[1].get<int>();
            if (u < 0 || v <= u || v >= n || !seen.insert({u, v}).second) {
                throw FormatError(fmt::format("bad mask edge ({}, {})", u, v));
            }
            trips.emplace_back(u, v, e[2].get<double>());
            trips.emplace_back(v, u, e[3].get<double>());
        }
        m.m_edge = SpMat(n, n);
        m.m_edge.setFromTriplets(trips.begin(), trips.end());
        if (!m.m_feat.allFinite() || !Eigen::Map<const Eigen::VectorXd>(m.m_edge.valuePtr(), m.m_edge.nonZeros()).allFinite()) {
            throw FormatError("mask entries must be finite");
        }
        return m;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("masks: {}", e.what()));
    }
}

json to_json(const Explanation& e, const ExplainerConfig& config) {
    json j = {{"schema", "pkgscope.masks/1"}, {"config", to_json(config)}, {"masks", to_json(e.masks)},
              {"trace", e.trace}, {"aborted", e.aborted}};
    if (!e.diagnostic.empty()) j["diagnostic"] = e.diagnostic;
    return j;
}

Explanation explanation_from_json(const json& j) {
    try {
        if (j.value("schema", "") != "pkgscope.masks/1") throw FormatError("not a mask file");
        Explanation e;
        e.masks = masks_from_json(j.at("masks"));
        e.trace = j.value("trace", std::vector<double>{});
        e.aborted = j.value("aborted", false);
        e.diagnostic = j.value("diagnostic", "");
        return e;
    } catch (const json::exception& ex) {
        throw FormatError(fmt::format("masks: {}", ex.what()));
    }
}

void save_explanation(const Explanation& e, const ExplainerConfig& config, const std::filesystem::path& path) {
    write_file(path, to_json(e, config).dump(2) + "\n");
}

Explanation load_explanation(const std::filesystem::path& path) {
    try {
        return explanation_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& ex) {
        throw FormatError(fmt::format("{}: {}", path.string(), ex.what()));
    }
}

}  // namespace pkgscope::explain
