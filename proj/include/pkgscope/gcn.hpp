#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <json.hpp>

#include "pkgscope/code_graph.hpp"
#include "pkgscope/error.hpp"
#include "pkgscope/rules.hpp"

namespace pkgscope::gcn {

using SpMat = Eigen::SparseMatrix<double>;
using Rng = std::mt19937_64;

inline constexpr int kNameDim = 64;
inline constexpr int kTypeDim = 16;

/// Frozen token list; index 0 is reserved for unknown tokens.
class Vocabulary {
public:
    Vocabulary();
    explicit Vocabulary(const std::vector<std::string>& tokens);  ///< tokens after the reserved slot

    int index_of(std::string_view token) const;
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// A code graph reduced to model inputs.
struct EncodedGraph {
    std::vector<int> name_idx;
    std::vector<int> type_idx;
    Eigen::MatrixXd behavior;              ///< n x |S|, entries 0/1
    std::vector<std::pair<int, int>> edges;  ///< undirected, i < j
    SpMat a_hat;                           ///< normalized adjacency of `edges`

    int num_nodes() const noexcept { return static_cast<int>(name_idx.size()); }
};

EncodedGraph encode(const CodeGraph& graph, const Vocabulary& names, const Vocabulary& types,
                    const rules::RuleSet& rules);

/// D^-1/2 (A + I) D^-1/2 with A symmetrized by the max of both directions.
/// Self-loops in `edges` are ignored; weights default to 1.
SpMat normalize_adjacency(int n, const std::vector<std::pair<int, int>>& edges,
                          const std::vector<double>* weights = nullptr);
/// Same normalization for a dense, square, non-negative A (diagonal is used as given).
Eigen::MatrixXd normalize_dense(const Eigen::MatrixXd& a);
/// Gradient with respect to the entries of A given dL/dÂ for Â = normalize_dense(A).
Eigen::MatrixXd normalize_dense_backward(const Eigen::MatrixXd& a, const Eigen::MatrixXd& a_hat,
                                         const Eigen::MatrixXd& grad_a_hat);

struct GcnParams {
    Eigen::MatrixXd name_table;  ///< |V_name| x 64
    Eigen::MatrixXd type_table;  ///< |V_type| x 16
    Eigen::MatrixXd w1;          ///< d_in x d_h
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;          ///< d_h x d_h
    Eigen::VectorXd b2;
    Eigen::MatrixXd wc;          ///< d_h x 2
    Eigen::VectorXd bc;

    static GcnParams zeros(int names, int types, int behaviors, int hidden);
    /// Glorot-uniform weights, zero biases, N(0, 1) embedding rows.
    static GcnParams init(int names, int types, int behaviors, int hidden, Rng& rng);

    int hidden() const { return static_cast<int>(w1.cols()); }
    int behaviors() const { return static_cast<int>(w1.rows()) - kNameDim - kTypeDim; }
    void check_shapes() const;  ///< throws FormatError on inconsistency
    bool all_finite() const;

    std::size_t num_scalars() const;
    /// Visits every parameter block in a fixed order.
    template <typename F>
    void for_each(F&& f) {
        f(name_table); f(type_table); f(w1); f(b1); f(w2); f(b2); f(wc); f(bc);
    }
    template <typename F>
    void for_each(F&& f) const {
        f(name_table); f(type_table); f(w1); f(b1); f(w2); f(b2); f(wc); f(bc);
    }
};

/// Inverted dropout after each GCN layer; inactive when rate is 0 or rng is null (Eval mode).
struct Dropout {
    double rate = 0.0;
    Rng* rng = nullptr;
    bool active() const noexcept { return rate > 0.0 && rng != nullptr; }
};

struct Probs {
    double p0 = 0.5;
    double p1 = 0.5;
};

/// Intermediate values of one forward pass, kept for backprop.
struct ForwardCache {
    Eigen::MatrixXd h0, ah0, z1, drop1, h1, ah1, z2, drop2, h2;
    Eigen::RowVectorXd pooled;
    Eigen::RowVector2d logits;
    Probs probs;
};

/// H0 = [name embedding | type embedding | behavior bits], one row per node.
Eigen::MatrixXd input_features(const EncodedGraph& g, const GcnParams& params);

/// Two GCN layers with ReLU and dropout, mean pooling, linear head and softmax.
Probs forward(const GcnParams& params, const SpMat& a_hat, const Eigen::MatrixXd& h0, ForwardCache* cache = nullptr,
              Dropout dropout = {});
Probs forward(const GcnParams& params, const EncodedGraph& g);

inline constexpr double kProbClamp = 1e-12;

/// Cross-entropy of one sample with clamped probabilities.
double sample_loss(const Probs& p, int label);
/// Weight-decay term: wd/2 * (|W1|^2 + |W2|^2 + |Wc|^2); embeddings and biases excluded.
double decay_term(const GcnParams& params, double weight_decay);

struct BackwardOutputs {
    Eigen::MatrixXd* d_h0 = nullptr;  ///< dL/dH0
    SpMat* d_a_hat = nullptr;         ///< dL/dÂ on Â's sparsity pattern
};

/// Accumulates `scale` * d(sample_loss)/dθ into `grads` for the cached pass.
/// Embedding rows receive gradient only where a node uses them.
void backward(const GcnParams& params, const SpMat& a_hat, const EncodedGraph* g, const ForwardCache& cache, int label,
              double scale, GcnParams& grads, BackwardOutputs extra = {});
/// Backpropagates an arbitrary dL/dlogits; `grads` may be null when only
/// the input gradients in `extra` are wanted.
void backward_logits(const GcnParams& params, const SpMat& a_hat, const EncodedGraph* g, const ForwardCache& cache,
                     const Eigen::RowVector2d& dlogits, GcnParams* grads, BackwardOutputs extra = {});
/// Gradient of dL/dlogits for the clamped cross-entropy.
Eigen::RowVector2d loss_logit_grad(const ForwardCache& cache, int label);

struct Sample {
    EncodedGraph graph;
    int label = 0;  ///< 1 = malicious
};

/// Mean sample loss over the batch plus the decay term.
double batch_loss(const GcnParams& params, const std::vector<const Sample*>& batch, double weight_decay,
                  Dropout dropout = {});
/// Gradient of batch_loss for the realized dropout masks.
GcnParams batch_grad(const GcnParams& params, const std::vector<const Sample*>& batch, double weight_decay,
                     Dropout dropout = {}, double* loss_out = nullptr);

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-3;
    int batch_size = 128;
    int epochs = 100;
    double dropout = 0.6;
    std::uint64_t seed = 0;
    int hidden = 64;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    double test_f1 = 0.0;
};

/// Adam over all parameter blocks with shapes mirroring GcnParams.
class Adam {
public:
    Adam(const GcnParams& shape, double lr, double beta1, double beta2, double eps);
    void step(GcnParams& params, const GcnParams& grads);

private:
    GcnParams m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

struct TrainResult {
    GcnParams params;
    GcnParams initial;
    std::vector<EpochStats> history;
};

/// Trains from scratch. Fully deterministic for a given config.seed.
TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& test_set, int name_vocab,
                  int type_vocab, int behaviors, const TrainConfig& config);
/// Continues from `start` (used by tests of the optimizer contract).
TrainResult train_from(GcnParams start, const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                       const TrainConfig& config);

struct Prediction {
    Probs probs;
    Label label = Label::Benign;
    std::string diagnostic;
};

/// Eval-mode forward; p1 > p0 is Malicious, ties are Benign. An empty graph
/// is Benign with p = (1, 0).
Prediction predict(const GcnParams& params, const EncodedGraph& g);

/// Everything needed to featurize and classify a new package.
struct Model {
    static constexpr const char* kSchema = "pkgscope.model/1";
    Vocabulary names;
    Vocabulary types;
    rules::RuleSet rules;
    TrainConfig config;
    GcnParams params;
    std::vector<EpochStats> history;

    EncodedGraph encode(const CodeGraph& graph) const { return gcn::encode(graph, names, types, rules); }
};

/// Name and AST-type vocabularies from the given (training) graphs, sorted.
std::pair<Vocabulary, Vocabulary> build_vocabularies(const std::vector<const CodeGraph*>& graphs);

nlohmann::json to_json(const Model& m);
Model model_from_json(const nlohmann::json& j);
void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);
double f1_score(const std::vector<int>& predicted, const std::vector<int>& truth);

}  // namespace pkgscope::gcn
