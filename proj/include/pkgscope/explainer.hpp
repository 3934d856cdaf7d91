#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pkgscope/gcn.hpp"

namespace pkgscope::explain {

using gcn::SpMat;

/// Pre-activation masks for one graph. `m_edge` holds an entry for both
/// directions of every edge and nothing else.
struct ExplanationMasks {
    SpMat m_edge;
    Eigen::VectorXd m_feat;

    int num_nodes() const noexcept { return static_cast<int>(m_feat.size()); }
};

struct ExplainerConfig {
    int steps = 100;
    double lr = 0.01;
    double lambda_size = 0.005;
    double lambda_ent = 1.0;
    double epsilon = 1e-15;
    std::uint64_t seed = 0;

    void validate() const;  ///< throws ConfigError
};

nlohmann::json to_json(const ExplainerConfig& c);
ExplainerConfig explainer_config_from_json(const nlohmann::json& j, ExplainerConfig base = {});

/// Symmetric 0/1 adjacency of the graph's undirected edges, zero diagonal.
SpMat adjacency(const gcn::EncodedGraph& g);

/// Entries ~ N(0, sqrt(1/|V|)): edges in (i, j) order drawing (i,j) then (j,i),
/// then one draw per node for the feature mask.
ExplanationMasks init_masks(const gcn::EncodedGraph& g, std::uint64_t seed);

struct MaskedInputs {
    SpMat weights;           ///< (A ⊙ M̃) ⊙ (1 - I), symmetric
    SpMat a_hat;             ///< normalized `weights` with self-loops
    Eigen::MatrixXd h;       ///< diag(σ(m_feat)) H
    Eigen::VectorXd feat_gate;  ///< σ(m_feat)
};

/// M̃ = (σ(M) + σ(M)ᵀ)/2 restricted to A's support; H' scales whole node rows.
MaskedInputs masked_inputs(const ExplanationMasks& masks, const SpMat& a, const Eigen::MatrixXd& h);

struct LossTerms {
    double total = 0.0;
    double pred = 0.0;
    double size = 0.0;
    double ent = 0.0;
    double p1 = 0.0;  ///< malicious probability under the masks
};

/// Gradient of the total loss with respect to the pre-activation masks.
struct MaskGradients {
    SpMat d_edge;  ///< same pattern as m_edge
    Eigen::VectorXd d_feat;
};

LossTerms explain_loss(const ExplanationMasks& masks, const gcn::EncodedGraph& g, const gcn::GcnParams& params,
                       const ExplainerConfig& config, MaskGradients* grads = nullptr);

struct Explanation {
    ExplanationMasks masks;
    /// trace[0] is the loss at initialization, trace[t] after t updates.
    std::vector<double> trace;
    bool aborted = false;
    std::string diagnostic;
};

/// Adam on the masks only; the model is read, never written.
Explanation optimize_masks(const gcn::EncodedGraph& g, const gcn::GcnParams& params, const ExplainerConfig& config);

struct EdgeScore {
    int u = 0;  ///< u < v
    int v = 0;
    double score = 0.0;
};

struct AttentionScores {
    std::vector<double> node;
    std::vector<EdgeScore> edges;  ///< ascending (u, v)

    double edge(int a, int b) const;  ///< symmetric lookup; throws for non-edges
};

AttentionScores attention_scores(const ExplanationMasks& masks);

nlohmann::json to_json(const ExplanationMasks& m);
ExplanationMasks masks_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Explanation& e, const ExplainerConfig& config);
Explanation explanation_from_json(const nlohmann::json& j);
void save_explanation(const Explanation& e, const ExplainerConfig& config, const std::filesystem::path& path);
Explanation load_explanation(const std::filesystem::path& path);

}  // namespace pkgscope::explain
