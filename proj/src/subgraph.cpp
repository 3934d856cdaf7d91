#include "pkgscope/subgraph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>

#include "pkgscope/error.hpp"
#include "pkgscope/util.hpp"

using nlohmann::json;

namespace pkgscope::subgraph {

namespace {

struct Oriented {
    std::size_t src = 0;
    std::size_t dst = 0;
    double score = 0.0;
};

void check_scores(const CodeGraph& graph, const explain::AttentionScores& scores) {
    if (graph.nodes.empty()) throw Error("cannot extract from an empty graph");
    if (scores.node.size() != graph.nodes.size()) {
        throw Error(fmt::format("{} node scores for {} nodes", scores.node.size(), graph.nodes.size()));
    }
}

// Undirected scored edges turned back into code-graph orientation: the first
// code edge joining the pair decides the direction.
std::vector<Oriented> oriented_edges(const CodeGraph& graph, const explain::AttentionScores& scores) {
    std::map<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>> dir;
    for (const auto& e : graph.edges) {
        auto s = graph.index_of(e.src);
        auto d = graph.index_of(e.dst);
        if (!s || !d || *s == *d) continue;
        dir.emplace(std::minmax(*s, *d), std::make_pair(*s, *d));
    }
    if (dir.size() != scores.edges.size()) {
        throw Error(fmt::format("{} edge scores for {} edges", scores.edges.size(), dir.size()));
    }
    std::vector<Oriented> out;
    for (const auto& e : scores.edges) {
        auto it = dir.find({static_cast<std::size_t>(e.u), static_cast<std::size_t>(e.v)});
        if (it == dir.end()) throw Error(fmt::format("scored pair ({}, {}) is not a graph edge", e.u, e.v));
        out.push_back({it->second.first, it->second.second, e.score});
    }
    const auto& nodes = graph.nodes;
    std::sort(out.begin(), out.end(), [&](const Oriented& a, const Oriented& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(nodes[a.src].id, nodes[a.dst].id) < std::tie(nodes[b.src].id, nodes[b.dst].id);
    });
    return out;
}

AttentionSubgraph assemble(const CodeGraph& graph, const explain::AttentionScores& scores,
                           const std::set<std::size_t>& keep_nodes, const std::vector<Oriented>& keep_edges, Mode mode) {
    AttentionSubgraph sub;
    sub.package = graph.package;
    sub.mode = mode;
    std::set<std::size_t> nodes = keep_nodes;
    for (const auto& e : keep_edges) {
        nodes.insert(e.src);
        nodes.insert(e.dst);
        sub.edges.push_back({graph.nodes[e.src].id, graph.nodes[e.dst].id, e.score});
    }
    if (nodes.empty()) {
        // Highest node score; the earliest node wins ties.
        std::size_t best = 0;
        for (std::size_t i = 1; i < scores.node.size(); ++i) {
            if (scores.node[i] > scores.node[best]) best = i;
        }
        nodes.insert(best);
        sub.fallback = true;
    }
    for (std::size_t i : nodes) sub.nodes.push_back({graph.nodes[i].id, scores.node[i], graph.nodes[i].source});
    std::sort(sub.nodes.begin(), sub.nodes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return sub;
}

std::string utf8_prefix(std::string_view s, std::size_t cap) {
    if (s.size() <= cap) return std::string(s);
    std::size_t cut = cap;
    while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
    return std::string(s.substr(0, cut));
}

std::string dot_quote(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out + "\"";
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string_view mode_name(Mode::Kind k) {
    switch (k) {
        case Mode::Kind::TopK: return "topk";
        case Mode::Kind::Threshold: return "threshold";
        case Mode::Kind::Full: return "full";
    }
    return "?";
}

}  // namespace

AttentionSubgraph extract_topk(const CodeGraph& graph, const explain::AttentionScores& scores, int k) {
    if (k < 1) throw ConfigError("top-K budget must be at least 1");
    check_scores(graph, scores);
    auto edges = oriented_edges(graph, scores);
    if (edges.size() > static_cast<std::size_t>(k)) edges.resize(static_cast<std::size_t>(k));
    return assemble(graph, scores, {}, edges, {Mode::Kind::TopK, k, 0.0, 0.0});
}

AttentionSubgraph extract_threshold(const CodeGraph& graph, const explain::AttentionScores& scores, double gamma_node,
                                    double gamma_edge) {
    for (double g : {gamma_node, gamma_edge}) {
        if (!(g >= 0.0 && g < 1.0)) throw ConfigError(fmt::format("threshold {} outside [0, 1)", g));
    }
    check_scores(graph, scores);
    std::set<std::size_t> nodes;
    for (std::size_t i = 0; i < scores.node.size(); ++i) {
        if (scores.node[i] > gamma_node) nodes.insert(i);
    }
    std::vector<Oriented> edges;
    for (const auto& e : oriented_edges(graph, scores)) {
        if (e.score > gamma_edge) edges.push_back(e);
    }
    return assemble(graph, scores, nodes, edges, {Mode::Kind::Threshold, 0, gamma_node, gamma_edge});
}

AttentionSubgraph full_graph(const CodeGraph& graph, const explain::AttentionScores& scores) {
    check_scores(graph, scores);
    std::set<std::size_t> nodes;
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) nodes.insert(i);
    return assemble(graph, scores, nodes, oriented_edges(graph, scores), {Mode::Kind::Full, 0, 0.0, 0.0});
}

std::string serialize_prompt_text(const AttentionSubgraph& sub, std::size_t source_cap) {
    std::string out = "Nodes:\n";
    for (const auto& n : sub.nodes) out += n.id + "\n";
    out += "\nEdges:\n";
    for (const auto& e : sub.edges) out += e.src + " → " + e.dst + "\n";
    out += "\nNode Attributes:\n";
    bool first = true;
    for (const auto& n : sub.nodes) {
        if (!first) out += "\n";
        first = false;
        out += "Codes of " + n.id + " are\n";
        std::string src = utf8_prefix(n.source, source_cap);
        bool cut = src.size() < n.source.size();
        while (!src.empty() && (src.back() == '\n' || src.back() == '\r')) src.pop_back();
        if (cut) src += std::string(kTruncatedMarker);
        std::size_t pos = 0;
        while (pos <= src.size()) {
            std::size_t nl = src.find('\n', pos);
            std::string_view line = std::string_view(src).substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            out += line.empty() ? std::string() : "    " + std::string(line);
            out += "\n";
            if (nl == std::string::npos) break;
            pos = nl + 1;
        }
    }
    return out;
}

RenderFormat parse_render_format(std::string_view text) {
    std::string t = to_lower(text);
    if (t == "dot") return RenderFormat::Dot;
    if (t == "graphml") return RenderFormat::GraphML;
    throw ConfigError(fmt::format("unknown render format '{}'", text));
}

std::string viridis(double t) {
    // Eight evenly spaced samples of the matplotlib map, interpolated in RGB.
    static constexpr std::array<std::array<int, 3>, 8> kStops{{{0x44, 0x01, 0x54},
                                                               {0x46, 0x32, 0x7e},
                                                               {0x36, 0x5c, 0x8d},
                                                               {0x27, 0x7f, 0x8e},
                                                               {0x1f, 0xa1, 0x87},
                                                               {0x4a, 0xc1, 0x6d},
                                                               {0xa0, 0xda, 0x39},
                                                               {0xfd, 0xe7, 0x25}}};
    if (!std::isfinite(t)) t = 0.0;
    t = std::clamp(t, 0.0, 1.0);
    double x = t * 7.0;
    auto i = std::min<std::size_t>(static_cast<std::size_t>(x), 6);
    double f = x - static_cast<double>(i);
    std::array<int, 3> c{};
    for (std::size_t k = 0; k < 3; ++k) {
        c[k] = static_cast<int>(std::lround(kStops[i][k] + f * (kStops[i + 1][k] - kStops[i][k])));
    }
    return fmt::format("#{:02X}{:02X}{:02X}", c[0], c[1], c[2]);
}

std::string render_dot(const AttentionSubgraph& sub) {
    std::string out = fmt::format("digraph {} {{\n", dot_quote(sub.package));
    out += "  node [shape=box, style=filled, fontname=\"Helvetica\"];\n";
    for (const auto& n : sub.nodes) {
        out += fmt::format("  {} [score={:.6f}, fillcolor=\"{}\", fontcolor=\"{}\"];\n", dot_quote(n.id), n.score,
                           viridis(n.score), n.score < 0.5 ? "white" : "black");
    }
    for (const auto& e : sub.edges) {
        out += fmt::format("  {} -> {} [score={:.6f}, color=\"{}\", penwidth={:.2f}];\n", dot_quote(e.src),
                           dot_quote(e.dst), e.score, viridis(e.score), 1.0 + 3.0 * e.score);
    }
    return out + "}\n";
}

std::string render_graphml(const AttentionSubgraph& sub) {
    std::string out =
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n"
        "  <key id=\"ns\" for=\"node\" attr.name=\"score\" attr.type=\"double\"/>\n"
        "  <key id=\"nc\" for=\"node\" attr.name=\"color\" attr.type=\"string\"/>\n"
        "  <key id=\"es\" for=\"edge\" attr.name=\"score\" attr.type=\"double\"/>\n"
        "  <key id=\"ec\" for=\"edge\" attr.name=\"color\" attr.type=\"string\"/>\n";
    out += fmt::format("  <graph id=\"{}\" edgedefault=\"directed\">\n", xml_escape(sub.package));
    for (const auto& n : sub.nodes) {
        out += fmt::format("    <node id=\"{}\"><data key=\"ns\">{:.6f}</data><data key=\"nc\">{}</data></node>\n",
                           xml_escape(n.id), n.score, viridis(n.score));
    }
    for (const auto& e : sub.edges) {
        out += fmt::format(
            "    <edge source=\"{}\" target=\"{}\"><data key=\"es\">{:.6f}</data><data key=\"ec\">{}</data></edge>\n",
            xml_escape(e.src), xml_escape(e.dst), e.score, viridis(e.score));
    }
    return out + "  </graph>\n</graphml>\n";
}

void export_render(const AttentionSubgraph& sub, RenderFormat format, const std::filesystem::path& path) {
    write_file(path, format == RenderFormat::Dot ? render_dot(sub) : render_graphml(sub));
}

void export_render(const CodeGraph& graph, const explain::AttentionScores& scores, RenderFormat format,
                   const std::filesystem::path& path) {
    export_render(full_graph(graph, scores), format, path);
}

json to_json(const AttentionSubgraph& sub) {
    json nodes = json::array(), edges = json::array();
    for (const auto& n : sub.nodes) nodes.push_back({{"id", n.id}, {"score", n.score}, {"source", n.source}});
    for (const auto& e : sub.edges) edges.push_back({{"src", e.src}, {"dst", e.dst}, {"score", e.score}});
    json mode = {{"kind", mode_name(sub.mode.kind)}};
    if (sub.mode.kind == Mode::Kind::TopK) mode["k"] = sub.mode.k;
    if (sub.mode.kind == Mode::Kind::Threshold) {
        mode["gamma_node"] = sub.mode.gamma_node;
        mode["gamma_edge"] = sub.mode.gamma_edge;
    }
    return {{"schema", "pkgscope.subgraph/1"}, {"package", sub.package}, {"mode", mode},
            {"fallback", sub.fallback}, {"nodes", nodes},          {"edges", edges}};
}

AttentionSubgraph subgraph_from_json(const json& j) {
    try {
        if (j.value("schema", "") != "pkgscope.subgraph/1") throw FormatError("not a subgraph file");
        AttentionSubgraph sub;
        sub.package = j.at("package").get<std::string>();
        sub.fallback = j.value("fallback", false);
        const auto& m = j.at("mode");
        auto kind = m.at("kind").get<std::string>();
        if (kind == "topk") sub.mode = {Mode::Kind::TopK, m.at("k").get<int>(), 0.0, 0.0};
        else if (kind == "threshold")
            sub.mode = {Mode::Kind::Threshold, 0, m.at("gamma_node").get<double>(), m.at("gamma_edge").get<double>()};
        else if (kind == "full") sub.mode = {Mode::Kind::Full, 0, 0.0, 0.0};
        else throw FormatError(fmt::format("unknown subgraph mode '{}'", kind));
        std::set<std::string> ids;
        for (const auto& n : j.at("nodes")) {
            sub.nodes.push_back({n.at("id").get<std::string>(), n.at("score").get<double>(),
                                 n.at("source").get<std::string>()});
            ids.insert(sub.nodes.back().id);
        }
        for (const auto& e : j.at("edges")) {
            sub.edges.push_back({e.at("src").get<std::string>(), e.at("dst").get<std::string>(),
                                 e.at("score").get<double>()});
            if (!ids.count(sub.edges.back().src) || !ids.count(sub.edges.back().dst)) {
                throw FormatError("subgraph edge endpoint missing from its nodes");
            }
        }
        return sub;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("subgraph: {}", e.what()));
    }
}

}  // namespace pkgscope::subgraph
