#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace pkgscope {

struct PackageRecord;

enum class NodeKind { Module, Class, Function };
enum class EdgeKind { Definition, Inheritance, Decorator, CallFunctionLevel, CallModuleLevel, Hook };

std::string_view to_string(NodeKind k) noexcept;
std::string_view to_string(EdgeKind k) noexcept;
NodeKind parse_node_kind(std::string_view text);
EdgeKind parse_edge_kind(std::string_view text);

struct CodeNode {
    std::string id;
    NodeKind kind = NodeKind::Module;
    std::string ast_type;  ///< Module, ClassDef, FunctionDef or AsyncFunctionDef
    std::string name;      ///< bare identifier (file stem for modules)
    std::string file;      ///< path relative to the package root, '/' separated
    int start_line = 0;
    int end_line = 0;
    std::string source;
    /// Import-expanded dotted names of the calls attributed to this node,
    /// sorted and unique. Functions include calls of nested definitions;
    /// classes and modules exclude calls made inside contained functions.
    std::vector<std::string> calls;
    /// Modules imported within the node, under the same scoping as `calls`.
    std::vector<std::string> imports;
};

struct CodeEdge {
    std::string src;
    std::string dst;
    EdgeKind kind = EdgeKind::Definition;

    friend bool operator==(const CodeEdge&, const CodeEdge&) = default;
};

struct CodeGraph {
    static constexpr std::string_view kSchema = "pkgscope.graph/1";

    std::string package;
    std::vector<CodeNode> nodes;
    std::vector<CodeEdge> edges;
    std::vector<std::string> diagnostics;

    std::optional<std::size_t> index_of(std::string_view id) const;
    /// Undirected edge list over node indices, self-loops and duplicates removed.
    std::vector<std::pair<std::size_t, std::size_t>> index_edges() const;
};

/// One source file handed to the builder.
struct SourceFile {
    std::string relpath;  ///< '/' separated, ends in ".py"
    std::string text;
};

/// Per-scope symbol tables produced while building, used to resolve call
/// targets. Scopes are identified by node index.
struct SymbolIndex {
    struct Scope {
        int parent = -1;  ///< enclosing scope, -1 for modules
        int module = -1;  ///< module scope of the file
        NodeKind kind = NodeKind::Module;
        std::map<std::string, int> defs;             ///< name -> node index
        std::map<std::string, std::string> imports;  ///< bound name -> qualified dotted name
        std::vector<std::string> star_imports;
        std::vector<int> bases;  ///< in-graph base classes (class scopes)
    };
    std::vector<Scope> scopes;                  ///< parallel to CodeGraph::nodes
    std::map<std::string, int> modules;         ///< dotted module name -> node index
    std::vector<std::string> module_names;      ///< node index -> dotted module name ("" for non-modules)
};

struct Resolution {
    std::string qualified;  ///< import-expanded dotted name, always set
    std::optional<int> target;
};

/// Resolves a dotted callee name seen in `scope`: enclosing scopes first
/// (class scopes are invisible from nested functions), definitions before
/// imports within a scope, then the import map, then `self`/`cls` members.
Resolution resolve_callee(const SymbolIndex& index, std::string_view raw_name, int scope);

CodeGraph build_graph(std::string package, const std::vector<SourceFile>& files);
CodeGraph build_graph(const PackageRecord& package);
/// Reads every ".py" file below `root`, sorted by relative path.
std::vector<SourceFile> read_sources(const std::filesystem::path& root, std::vector<std::string>* diagnostics = nullptr);

nlohmann::json to_json(const CodeGraph& graph);
CodeGraph graph_from_json(const nlohmann::json& doc);
void save_graph(const CodeGraph& graph, const std::filesystem::path& path);
CodeGraph load_graph(const std::filesystem::path& path);

}  // namespace pkgscope
