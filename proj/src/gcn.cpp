#include "pkgscope/gcn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pkgscope/util.hpp"

using nlohmann::json;

namespace pkgscope::gcn {

// ---- vocabulary and encoding -------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
    tokens_.push_back("<unk>");
    for (const auto& t : tokens) {
        if (index_.count(t)) throw FormatError(fmt::format("duplicate vocabulary token '{}'", t));
        index_.emplace(t, static_cast<int>(tokens_.size()));
        tokens_.push_back(t);
    }
}

int Vocabulary::index_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? 0 : it->second;
}

std::pair<Vocabulary, Vocabulary> build_vocabularies(const std::vector<const CodeGraph*>& graphs) {
    std::set<std::string> names, types;
    for (const CodeGraph* g : graphs) {
        for (const auto& n : g->nodes) {
            names.insert(n.name);
            types.insert(n.ast_type);
        }
    }
    return {Vocabulary({names.begin(), names.end()}), Vocabulary({types.begin(), types.end()})};
}

EncodedGraph encode(const CodeGraph& graph, const Vocabulary& names, const Vocabulary& types,
                    const rules::RuleSet& rules) {
    EncodedGraph g;
    const auto n = static_cast<int>(graph.nodes.size());
    g.behavior = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(rules.size()));
    for (int i = 0; i < n; ++i) {
        const auto& node = graph.nodes[static_cast<std::size_t>(i)];
        g.name_idx.push_back(names.index_of(node.name));
        g.type_idx.push_back(types.index_of(node.ast_type));
        auto bits = rules::featurize(node, rules);
        for (std::size_t k = 0; k < bits.size(); ++k) g.behavior(i, static_cast<Eigen::Index>(k)) = bits[k];
    }
    for (auto [a, b] : graph.index_edges()) {
        g.edges.emplace_back(static_cast<int>(std::min(a, b)), static_cast<int>(std::max(a, b)));
    }
    if (n > 0) g.a_hat = normalize_adjacency(n, g.edges);
    return g;
}

// ---- adjacency normalization -------------------------------------------------

SpMat normalize_adjacency(int n, const std::vector<std::pair<int, int>>& edges, const std::vector<double>* weights) {
    if (n < 1) throw Error("normalize_adjacency needs at least one node");
    if (weights && weights->size() != edges.size()) throw Error("edge weight count does not match edge count");
    std::map<std::pair<int, int>, double> sym;
    for (std::size_t e = 0; e < edges.size(); ++e) {
        auto [a, b] = edges[e];
        if (a < 0 || b < 0 || a >= n || b >= n) throw Error(fmt::format("edge ({}, {}) out of range", a, b));
        double w = weights ? (*weights)[e] : 1.0;
        if (!(w >= 0.0)) throw Error(fmt::format("negative edge weight {}", w));
        if (a == b) continue;
        auto key = std::minmax(a, b);
        auto [it, fresh] = sym.emplace(key, w);
        if (!fresh) it->second = std::max(it->second, w);
    }
    Eigen::VectorXd deg = Eigen::VectorXd::Ones(n);
    for (const auto& [key, w] : sym) {
        deg(key.first) += w;
        deg(key.second) += w;
    }
    Eigen::VectorXd inv = deg.cwiseSqrt().cwiseInverse();
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(n) + 2 * sym.size());
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, inv(i) * inv(i));
    for (const auto& [key, w] : sym) {
        double v = w * inv(key.first) * inv(key.second);
        trips.emplace_back(key.first, key.second, v);
        trips.emplace_back(key.second, key.first, v);
    }
    SpMat out(n, n);
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

Eigen::MatrixXd normalize_dense(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols() || a.rows() == 0) throw Error("adjacency must be square and non-empty");
    if ((a.array() < 0.0).any()) throw Error("negative edge weight");
    const Eigen::Index n = a.rows();
    Eigen::MatrixXd s = a + Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd inv = s.rowwise().sum().cwiseSqrt().cwiseInverse();
    return inv.asDiagonal() * s * inv.asDiagonal();
}

Eigen::MatrixXd normalize_dense_backward(const Eigen::MatrixXd& a, const Eigen::MatrixXd& a_hat,
                                         const Eigen::MatrixXd& grad_a_hat) {
    // Â_ij = S_ij / sqrt(d_i d_j), S = A + I, d = S 1. Each A_ij feeds S_ij and d_i.
    const Eigen::Index n = a.rows();
    Eigen::VectorXd d = (a + Eigen::MatrixXd::Identity(n, n)).rowwise().sum();
    Eigen::VectorXd inv = d.cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd ga = grad_a_hat.cwiseProduct(a_hat);
    Eigen::VectorXd s = ga.rowwise().sum() + ga.colwise().sum().transpose();
    Eigen::VectorXd dd = -0.5 * s.cwiseQuotient(d);
    Eigen::MatrixXd out = inv.asDiagonal() * grad_a_hat * inv.asDiagonal();
    out.colwise() += dd;
    return out;
}

// ---- parameters ----------------------------------------------------------------

GcnParams GcnParams::zeros(int names, int types, int behaviors, int hidden) {
    if (names < 1 || types < 1 || behaviors < 0 || hidden < 1) throw ConfigError("invalid model dimensions");
    GcnParams p;
    int d_in = kNameDim + kTypeDim + behaviors;
    p.name_table = Eigen::MatrixXd::Zero(names, kNameDim);
    p.type_table = Eigen::MatrixXd::Zero(types, kTypeDim);
    p.w1 = Eigen::MatrixXd::Zero(d_in, hidden);
    p.b1 = Eigen::VectorXd::Zero(hidden);
    p.w2 = Eigen::MatrixXd::Zero(hidden, hidden);
    p.b2 = Eigen::VectorXd::Zero(hidden);
    p.wc = Eigen::MatrixXd::Zero(hidden, 2);
    p.bc = Eigen::VectorXd::Zero(2);
    return p;
}

GcnParams GcnParams::init(int names, int types, int behaviors, int hidden, Rng& rng) {
    GcnParams p = zeros(names, types, behaviors, hidden);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto glorot = [&](Eigen::MatrixXd& w) {
        double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
        }
    };
    for (Eigen::Index j = 0; j < p.name_table.cols(); ++j) {
        for (Eigen::Index i = 0; i < p.name_table.rows(); ++i) p.name_table(i, j) = normal(rng);
    }
    for (Eigen::Index j = 0; j < p.type_table.cols(); ++j) {
        for (Eigen::Index i = 0; i < p.type_table.rows(); ++i) p.type_table(i, j) = normal(rng);
    }
    glorot(p.w1);
    glorot(p.w2);
    glorot(p.wc);
    return p;
}

void GcnParams::check_shapes() const {
    auto bad = [](const std::string& what) { throw FormatError("inconsistent model parameters: " + what); };
    if (name_table.cols() != kNameDim || name_table.rows() < 1) bad("name table");
    if (type_table.cols() != kTypeDim || type_table.rows() < 1) bad("type table");
    if (w1.rows() < kNameDim + kTypeDim || w1.cols() < 1) bad("W1");
    const Eigen::Index h = w1.cols();
    if (b1.size() != h) bad("b1");
    if (w2.rows() != h || w2.cols() != h) bad("W2");
    if (b2.size() != h) bad("b2");
    if (wc.rows() != h || wc.cols() != 2) bad("Wc");
    if (bc.size() != 2) bad("bc");
}

bool GcnParams::all_finite() const {
    bool ok = true;
    for_each([&](const auto& m) { ok = ok && m.allFinite(); });
    return ok;
}

std::size_t GcnParams::num_scalars() const {
    std::size_t n = 0;
    for_each([&](const auto& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

// ---- forward / backward --------------------------------------------------------

Eigen::MatrixXd input_features(const EncodedGraph& g, const GcnParams& params) {
    const int n = g.num_nodes();
    const Eigen::Index s = g.behavior.cols();
    if (s != params.behaviors()) {
        throw Error(fmt::format("graph has {} behavior bits, model expects {}", s, params.behaviors()));
    }
    Eigen::MatrixXd h0(n, kNameDim + kTypeDim + s);
    for (int i = 0; i < n; ++i) {
        int ni = g.name_idx[static_cast<std::size_t>(i)];
        int ti = g.type_idx[static_cast<std::size_t>(i)];
        if (ni < 0 || ni >= params.name_table.rows()) ni = 0;
        if (ti < 0 || ti >= params.type_table.rows()) ti = 0;
        h0.row(i).segment(0, kNameDim) = params.name_table.row(ni);
        h0.row(i).segment(kNameDim, kTypeDim) = params.type_table.row(ti);
        h0.row(i).segment(kNameDim + kTypeDim, s) = g.behavior.row(i);
    }
    return h0;
}

namespace {

Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, const Dropout& d) {
    if (!d.active()) return Eigen::MatrixXd::Ones(rows, cols);
    std::bernoulli_distribution keep(1.0 - d.rate);
    const double scale = 1.0 / (1.0 - d.rate);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = keep(*d.rng) ? scale : 0.0;
    }
    return m;
}

}  // namespace

Probs forward(const GcnParams& params, const SpMat& a_hat, const Eigen::MatrixXd& h0, ForwardCache* cache,
              Dropout dropout) {
    const Eigen::Index n = h0.rows();
    if (n == 0) throw Error("graph has no nodes");
    if (a_hat.rows() != n || a_hat.cols() != n || h0.cols() != params.w1.rows()) {
        throw Error("forward: input shapes do not match the model");
    }
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.h0 = h0;
    c.ah0 = a_hat * h0;
    c.z1 = (c.ah0 * params.w1).rowwise() + params.b1.transpose();
    c.drop1 = dropout_mask(n, params.hidden(), dropout);
    c.h1 = c.z1.cwiseMax(0.0).cwiseProduct(c.drop1);
    c.ah1 = a_hat * c.h1;
    c.z2 = (c.ah1 * params.w2).rowwise() + params.b2.transpose();
    c.drop2 = dropout_mask(n, params.hidden(), dropout);
    c.h2 = c.z2.cwiseMax(0.0).cwiseProduct(c.drop2);
    c.pooled = c.h2.colwise().mean();
    c.logits = c.pooled * params.wc + params.bc.transpose();
    double m = c.logits.maxCoeff();
    double e0 = std::exp(c.logits(0) - m);
    double e1 = std::exp(c.logits(1) - m);
    c.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
    return c.probs;
}

Probs forward(const GcnParams& params, const EncodedGraph& g) {
    return forward(params, g.a_hat, input_features(g, params));
}

double sample_loss(const Probs& p, int label) {
    double py = label == 1 ? p.p1 : p.p0;
    return -std::log(std::clamp(py, kProbClamp, 1.0 - kProbClamp));
}

double decay_term(const GcnParams& params, double weight_decay) {
    return 0.5 * weight_decay * (params.w1.squaredNorm() + params.w2.squaredNorm() + params.wc.squaredNorm());
}

Eigen::RowVector2d loss_logit_grad(const ForwardCache& cache, int label) {
    double py = label == 1 ? cache.probs.p1 : cache.probs.p0;
    if (py < kProbClamp || py > 1.0 - kProbClamp) return Eigen::RowVector2d::Zero();  // clamp is flat here
    Eigen::RowVector2d g(cache.probs.p0, cache.probs.p1);
    g(label == 1 ? 1 : 0) -= 1.0;
    return g;
}

void backward(const GcnParams& params, const SpMat& a_hat, const EncodedGraph* g, const ForwardCache& c, int label,
              double scale, GcnParams& grads, BackwardOutputs extra) {
    backward_logits(params, a_hat, g, c, scale * loss_logit_grad(c, label), &grads, extra);
}

void backward_logits(const GcnParams& params, const SpMat& a_hat, const EncodedGraph* g, const ForwardCache& c,
                     const Eigen::RowVector2d& dlogits, GcnParams* grads, BackwardOutputs extra) {
    const Eigen::Index n = c.h0.rows();
    if (grads) {
        grads->wc.noalias() += c.pooled.transpose() * dlogits;
        grads->bc += dlogits.transpose();
    }
    Eigen::RowVectorXd dpooled = dlogits * params.wc.transpose();

    // Mean pooling spreads the gradient evenly over node rows.
    Eigen::MatrixXd dz2 = (dpooled / static_cast<double>(n)).replicate(n, 1);
    dz2 = dz2.cwiseProduct(c.drop2).cwiseProduct((c.z2.array() > 0.0).cast<double>().matrix());
    if (grads) {
        grads->w2.noalias() += c.ah1.transpose() * dz2;
        grads->b2 += dz2.colwise().sum().transpose();
    }
    Eigen::MatrixXd dz2w = dz2 * params.w2.transpose();
    Eigen::MatrixXd dh1 = a_hat.transpose() * dz2w;

    Eigen::MatrixXd dz1 = dh1.cwiseProduct(c.drop1).cwiseProduct((c.z1.array() > 0.0).cast<double>().matrix());
    if (grads) {
        grads->w1.noalias() += c.ah0.transpose() * dz1;
        grads->b1 += dz1.colwise().sum().transpose();
    }
    Eigen::MatrixXd dz1w = dz1 * params.w1.transpose();
    Eigen::MatrixXd dh0 = a_hat.transpose() * dz1w;

    if (grads && g) {
        for (Eigen::Index i = 0; i < n; ++i) {
            int ni = g->name_idx[static_cast<std::size_t>(i)];
            int ti = g->type_idx[static_cast<std::size_t>(i)];
            if (ni < 0 || ni >= params.name_table.rows()) ni = 0;
            if (ti < 0 || ti >= params.type_table.rows()) ti = 0;
            grads->name_table.row(ni) += dh0.row(i).segment(0, kNameDim);
            grads->type_table.row(ti) += dh0.row(i).segment(kNameDim, kTypeDim);
        }
    }
    if (extra.d_h0) *extra.d_h0 = dh0;
    if (extra.d_a_hat) {
        // Z1 = Â (H0 W1) + b1 and Z2 = Â (H1 W2) + b2, so dÂ = dZ1 (H0 W1)^T + dZ2 (H1 W2)^T.
        Eigen::MatrixXd xw1 = c.h0 * params.w1;
        Eigen::MatrixXd hw2 = c.h1 * params.w2;
        SpMat d = a_hat;
        for (int k = 0; k < d.outerSize(); ++k) {
            for (SpMat::InnerIterator it(d, k); it; ++it) {
                it.valueRef() = dz1.row(it.row()).dot(xw1.row(it.col())) + dz2.row(it.row()).dot(hw2.row(it.col()));
            }
        }
        *extra.d_a_hat = std::move(d);
    }
}

double batch_loss(const GcnParams& params, const std::vector<const Sample*>& batch, double weight_decay,
                  Dropout dropout) {
    if (batch.empty()) throw Error("empty batch");
    double total = 0.0;
    for (const Sample* s : batch) {
        total += sample_loss(forward(params, s->graph.a_hat, input_features(s->graph, params), nullptr, dropout),
                             s->label);
    }
    return total / static_cast<double>(batch.size()) + decay_term(params, weight_decay);
}

GcnParams batch_grad(const GcnParams& params, const std::vector<const Sample*>& batch, double weight_decay,
                     Dropout dropout, double* loss_out) {
    if (batch.empty()) throw Error("empty batch");
    GcnParams grads = GcnParams::zeros(static_cast<int>(params.name_table.rows()),
                                       static_cast<int>(params.type_table.rows()), params.behaviors(), params.hidden());
    const double scale = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    ForwardCache cache;
    for (const Sample* s : batch) {
        forward(params, s->graph.a_hat, input_features(s->graph, params), &cache, dropout);
        total += sample_loss(cache.probs, s->label);
        backward(params, s->graph.a_hat, &s->graph, cache, s->label, scale, grads);
    }
    grads.w1 += weight_decay * params.w1;
    grads.w2 += weight_decay * params.w2;
    grads.wc += weight_decay * params.wc;
    if (loss_out) *loss_out = total * scale + decay_term(params, weight_decay);
    return grads;
}

// ---- training ------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (hidden < 1) throw ConfigError("hidden must be at least 1");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("lr and weight_decay must be non-negative");
}

json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"dropout", c.dropout},
            {"seed", c.seed},
            {"hidden", c.hidden},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    try {
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.dropout = j.value("dropout", c.dropout);
        c.seed = j.value("seed", c.seed);
        c.hidden = j.value("hidden", c.hidden);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("bad training config: {}", e.what()));
    }
    c.validate();
    return c;
}

Adam::Adam(const GcnParams& shape, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_ = GcnParams::zeros(static_cast<int>(shape.name_table.rows()), static_cast<int>(shape.type_table.rows()),
                          shape.behaviors(), shape.hidden());
    v_ = m_;
}

void Adam::step(GcnParams& params, const GcnParams& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
        p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    update(params.name_table, grads.name_table, m_.name_table, v_.name_table);
    update(params.type_table, grads.type_table, m_.type_table, v_.type_table);
    update(params.w1, grads.w1, m_.w1, v_.w1);
    update(params.b1, grads.b1, m_.b1, v_.b1);
    update(params.w2, grads.w2, m_.w2, v_.w2);
    update(params.b2, grads.b2, m_.b2, v_.b2);
    update(params.wc, grads.wc, m_.wc, v_.wc);
    update(params.bc, grads.bc, m_.bc, v_.bc);
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (truth.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) ok += predicted[i] == truth[i];
    return static_cast<double>(ok) / static_cast<double>(truth.size());
}

double f1_score(const std::vector<int>& predicted, const std::vector<int>& truth) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        tp += predicted[i] == 1 && truth[i] == 1;
        fp += predicted[i] == 1 && truth[i] == 0;
        fn += predicted[i] == 0 && truth[i] == 1;
    }
    return tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

namespace {

EpochStats evaluate(const GcnParams& params, const std::vector<Sample>& test_set) {
    EpochStats s;
    if (test_set.empty()) return s;
    std::vector<int> pred, truth;
    for (const auto& t : test_set) {
        pred.push_back(predict(params, t.graph).label == Label::Malicious ? 1 : 0);
        truth.push_back(t.label);
    }
    s.test_accuracy = accuracy(pred, truth);
    s.test_f1 = f1_score(pred, truth);
    return s;
}

}  // namespace

TrainResult train_from(GcnParams start, const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                       const TrainConfig& config) {
    config.validate();
    if (train_set.empty()) throw Error("training split is empty");
    start.check_shapes();
    TrainResult out;
    out.initial = start;
    out.params = std::move(start);

    Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    Adam adam(out.params, config.lr, config.beta1, config.beta2, config.adam_eps);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config.batch_size)) {
            std::vector<const Sample*> batch;
            for (std::size_t k = at; k < std::min(order.size(), at + static_cast<std::size_t>(config.batch_size)); ++k) {
                batch.push_back(&train_set[order[k]]);
            }
            double loss = 0.0;
            GcnParams grads = batch_grad(out.params, batch, config.weight_decay, {config.dropout, &rng}, &loss);
            adam.step(out.params, grads);
            epoch_loss += loss;
            ++batches;
        }
        EpochStats stats = evaluate(out.params, test_set);
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / static_cast<double>(batches);
        out.history.push_back(stats);
        spdlog::debug("epoch {}: loss {:.4f} test acc {:.4f}", epoch, stats.train_loss, stats.test_accuracy);
    }
    if (!out.params.all_finite()) throw Error("training diverged: non-finite parameters");
    return out;
}

TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& test_set, int name_vocab,
                  int type_vocab, int behaviors, const TrainConfig& config) {
    config.validate();
    Rng init_rng(config.seed);
    return train_from(GcnParams::init(name_vocab, type_vocab, behaviors, config.hidden, init_rng), train_set, test_set,
                      config);
}

Prediction predict(const GcnParams& params, const EncodedGraph& g) {
    Prediction out;
    if (g.num_nodes() == 0) {
        out.probs = {1.0, 0.0};
        out.label = Label::Benign;
        out.diagnostic = "graph has no nodes; reported as benign";
        return out;
    }
    out.probs = forward(params, g);
    out.label = out.probs.p1 > out.probs.p0 ? Label::Malicious : Label::Benign;
    return out;
}

// ---- persistence ---------------------------------------------------------------

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from(const json& j) {
    auto rows = j.at("rows").get<Eigen::Index>();
    auto cols = j.at("cols").get<Eigen::Index>();
    auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
        throw FormatError("matrix size does not match its data");
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[static_cast<std::size_t>(i * cols + j2)];
    }
    return m;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const json& j) {
    auto data = j.get<std::vector<double>>();
    return Eigen::Map<Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace

json to_json(const Model& m) {
    json history = json::array();
    for (const auto& h : m.history) {
        history.push_back(
            {{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"test_accuracy", h.test_accuracy}, {"test_f1", h.test_f1}});
    }
    const GcnParams& p = m.params;
    return {{"schema", Model::kSchema},
            {"config", to_json(m.config)},
            {"name_vocab", std::vector<std::string>(m.names.tokens().begin() + 1, m.names.tokens().end())},
            {"type_vocab", std::vector<std::string>(m.types.tokens().begin() + 1, m.types.tokens().end())},
            {"rules", rules::to_json(m.rules)},
            {"params",
             {{"name_table", matrix_json(p.name_table)},
              {"type_table", matrix_json(p.type_table)},
              {"w1", matrix_json(p.w1)},
              {"b1", vector_json(p.b1)},
              {"w2", matrix_json(p.w2)},
              {"b2", vector_json(p.b2)},
              {"wc", matrix_json(p.wc)},
              {"bc", vector_json(p.bc)}}},
            {"history", history}};
}

Model model_from_json(const json& j) {
    try {
        if (j.at("schema").get<std::string>() != Model::kSchema) throw FormatError("not a pkgscope model checkpoint");
        Model m;
        m.config = train_config_from_json(j.at("config"));
        m.names = Vocabulary(j.at("name_vocab").get<std::vector<std::string>>());
        m.types = Vocabulary(j.at("type_vocab").get<std::vector<std::string>>());
        m.rules = rules::ruleset_from_json(j.at("rules"));
        const json& p = j.at("params");
        m.params.name_table = matrix_from(p.at("name_table"));
        m.params.type_table = matrix_from(p.at("type_table"));
        m.params.w1 = matrix_from(p.at("w1"));
        m.params.b1 = vector_from(p.at("b1"));
        m.params.w2 = matrix_from(p.at("w2"));
        m.params.b2 = vector_from(p.at("b2"));
        m.params.wc = matrix_from(p.at("wc"));
        m.params.bc = vector_from(p.at("bc"));
        m.params.check_shapes();
        if (m.params.name_table.rows() != static_cast<Eigen::Index>(m.names.size()) ||
            m.params.type_table.rows() != static_cast<Eigen::Index>(m.types.size()) ||
            m.params.behaviors() != static_cast<int>(m.rules.size())) {
            throw FormatError("checkpoint parameters do not match its vocabularies and rules");
        }
        if (!m.params.all_finite()) throw FormatError("checkpoint contains non-finite parameters");
        for (const auto& h : j.value("history", json::array())) {
            m.history.push_back({h.at("epoch").get<int>(), h.at("train_loss").get<double>(),
                                 h.at("test_accuracy").get<double>(), h.at("test_f1").get<double>()});
        }
        return m;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("malformed model checkpoint: {}", e.what()));
    } catch (const ConfigError& e) {
        throw FormatError(fmt::format("malformed model checkpoint: {}", e.what()));
    }
}

void save_model(const Model& m, const std::filesystem::path& path) { write_file(path, to_json(m).dump() + "\n"); }

Model load_model(const std::filesystem::path& path) {
    try {
        return model_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace pkgscope::gcn
