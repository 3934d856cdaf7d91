#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pkgscope/code_graph.hpp"
#include "pkgscope/explainer.hpp"

namespace pkgscope::subgraph {

struct SubgraphNode {
    std::string id;
    double score = 0.0;
    std::string source;

    friend bool operator==(const SubgraphNode&, const SubgraphNode&) = default;
};

struct SubgraphEdge {
    std::string src;
    std::string dst;
    double score = 0.0;

    friend bool operator==(const SubgraphEdge&, const SubgraphEdge&) = default;
};

struct Mode {
    enum class Kind { TopK, Threshold, Full };
    Kind kind = Kind::TopK;
    int k = 20;
    double gamma_node = 0.0;
    double gamma_edge = 0.0;

    friend bool operator==(const Mode&, const Mode&) = default;
};

/// High-attention part of a code graph. Nodes are sorted by id, edges by
/// score descending then (src, dst).
struct AttentionSubgraph {
    std::string package;
    std::vector<SubgraphNode> nodes;
    std::vector<SubgraphEdge> edges;
    Mode mode;
    bool fallback = false;  ///< nothing passed the cut; holds the single best node

    friend bool operator==(const AttentionSubgraph&, const AttentionSubgraph&) = default;
};

inline constexpr int kDefaultTopK = 20;

/// Keeps the min(K, |E|) highest-scoring edges and their endpoints. Edges
/// are oriented as in the code graph.
AttentionSubgraph extract_topk(const CodeGraph& graph, const explain::AttentionScores& scores, int k = kDefaultTopK);
/// Nodes with a_v > gamma_node, edges with a_vw > gamma_edge and their endpoints.
AttentionSubgraph extract_threshold(const CodeGraph& graph, const explain::AttentionScores& scores, double gamma_node,
                                    double gamma_edge);
/// Every node and edge with its score, for rendering.
AttentionSubgraph full_graph(const CodeGraph& graph, const explain::AttentionScores& scores);

inline constexpr std::size_t kDefaultSourceCap = 4096;
inline constexpr std::string_view kTruncatedMarker = "...[truncated]";

std::string serialize_prompt_text(const AttentionSubgraph& sub, std::size_t source_cap = kDefaultSourceCap);

enum class RenderFormat { Dot, GraphML };
RenderFormat parse_render_format(std::string_view text);

/// Viridis colormap; 0 -> "#440154", 1 -> "#FDE725". Input is clamped to [0, 1].
std::string viridis(double t);

std::string render_dot(const AttentionSubgraph& sub);
std::string render_graphml(const AttentionSubgraph& sub);
void export_render(const AttentionSubgraph& sub, RenderFormat format, const std::filesystem::path& path);
void export_render(const CodeGraph& graph, const explain::AttentionScores& scores, RenderFormat format,
                   const std::filesystem::path& path);

nlohmann::json to_json(const AttentionSubgraph& sub);
AttentionSubgraph subgraph_from_json(const nlohmann::json& j);

}  // namespace pkgscope::subgraph
