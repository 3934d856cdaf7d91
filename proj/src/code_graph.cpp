#include "pkgscope/code_graph.hpp"

#include <algorithm>
#include <memory>
#include <set>
#include <tuple>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pkgscope/error.hpp"
#include "pkgscope/ingest.hpp"
#include "pkgscope/python/parser.hpp"
#include "pkgscope/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
namespace py = pkgscope::python;

namespace pkgscope {

namespace {

constexpr int kMaxResolveDepth = 8;

std::vector<std::string> split_dots(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto dot = s.find('.', start);
        out.emplace_back(s.substr(start, dot - start));
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    return out;
}

std::string join_dots(const std::vector<std::string>& parts, std::size_t from, std::size_t to) {
    std::string out;
    for (std::size_t i = from; i < to; ++i) {
        if (!out.empty()) out += '.';
        out += parts[i];
    }
    return out;
}

std::string append_dotted(std::string base, std::string_view tail) {
    if (tail.empty()) return base;
    if (base.empty()) return std::string(tail);
    base += '.';
    base += tail;
    return base;
}

class Resolver {
public:
    explicit Resolver(const SymbolIndex& ix) : ix_(ix) {}

    Resolution resolve(std::string_view raw, int scope) const {
        Resolution res{std::string(raw), std::nullopt};
        auto parts = split_dots(raw);
        const std::string& head = parts[0];
        for (int s = scope; s != -1; s = ix_.scopes[s].parent) {
            const auto& sc = ix_.scopes[s];
            if (sc.kind == NodeKind::Class && s != scope) continue;
            if (auto it = sc.defs.find(head); it != sc.defs.end()) {
                res.target = member(it->second, parts, 1, 0);
                return finish(res);
            }
            if (auto it = sc.imports.find(head); it != sc.imports.end()) {
                res.qualified = append_dotted(it->second, join_dots(parts, 1, parts.size()));
                res.target = resolve_qualified(res.qualified, 0);
                return finish(res);
            }
        }
        if (scope >= 0) {
            for (const auto& star : ix_.scopes[ix_.scopes[scope].module].star_imports) {
                if (auto t = resolve_qualified(append_dotted(star, raw), 0)) {
                    res.target = t;
                    return finish(res);
                }
            }
        }
        if ((head == "self" || head == "cls") && parts.size() >= 2) {
            if (auto cls = enclosing_class(scope)) res.target = member(*cls, parts, 1, 0);
        }
        return finish(res);
    }

    std::optional<int> resolve_qualified(const std::string& q, int depth) const {
        if (depth > kMaxResolveDepth) return std::nullopt;
        auto parts = split_dots(q);
        for (std::size_t k = parts.size(); k >= 1; --k) {
            if (auto m = lookup_module(join_dots(parts, 0, k))) return member(*m, parts, k, depth);
        }
        return std::nullopt;
    }

    std::optional<int> member(int node, const std::vector<std::string>& parts, std::size_t i, int depth) const {
        if (depth > kMaxResolveDepth) return std::nullopt;
        if (i == parts.size()) return node;
        const auto& sc = ix_.scopes[node];
        const std::string& name = parts[i];
        switch (sc.kind) {
            case NodeKind::Module: {
                if (auto it = sc.defs.find(name); it != sc.defs.end()) return member(it->second, parts, i + 1, depth);
                std::string tail = join_dots(parts, i + 1, parts.size());
                if (auto it = sc.imports.find(name); it != sc.imports.end()) {
                    return resolve_qualified(append_dotted(it->second, tail), depth + 1);
                }
                for (const auto& star : sc.star_imports) {
                    if (auto t = resolve_qualified(append_dotted(append_dotted(star, name), tail), depth + 1)) return t;
                }
                return std::nullopt;
            }
            case NodeKind::Class: {
                if (auto it = sc.defs.find(name); it != sc.defs.end()) return member(it->second, parts, i + 1, depth);
                for (int base : sc.bases) {
                    if (auto t = member(base, parts, i, depth + 1)) return t;
                }
                return std::nullopt;
            }
            case NodeKind::Function:
                return std::nullopt;
        }
        return std::nullopt;
    }

    std::optional<int> lookup_module(const std::string& dotted) const {
        if (auto it = cache_.find(dotted); it != cache_.end()) return it->second;
        std::optional<int> found;
        if (auto it = ix_.modules.find(dotted); it != ix_.modules.end()) {
            found = it->second;
        } else {
            std::string suffix = "." + dotted;
            std::size_t best_len = 0;
            for (const auto& [name, idx] : ix_.modules) {
                if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
                    if (!found || name.size() < best_len) {
                        found = idx;
                        best_len = name.size();
                    }
                }
            }
        }
        cache_.emplace(dotted, found);
        return found;
    }

    std::optional<int> enclosing_class(int scope) const {
        for (int s = scope; s != -1; s = ix_.scopes[s].parent) {
            int parent = ix_.scopes[s].parent;
            if (ix_.scopes[s].kind == NodeKind::Function && parent != -1 && ix_.scopes[parent].kind == NodeKind::Class) {
                return parent;
            }
        }
        return std::nullopt;
    }

private:
    Resolution finish(Resolution res) const {
        if (res.target && ix_.scopes[*res.target].kind == NodeKind::Module) res.target.reset();
        return res;
    }

    const SymbolIndex& ix_;
    mutable std::map<std::string, std::optional<int>> cache_;
};

std::string module_dotted(std::string_view relpath) {
    std::string s(relpath.substr(0, relpath.size() - 3));  // strip ".py"
    std::replace(s.begin(), s.end(), '/', '.');
    return s;
}

int count_lines(std::string_view text) {
    if (text.empty()) return 1;
    int n = static_cast<int>(std::count(text.begin(), text.end(), '\n'));
    return text.back() == '\n' ? n : n + 1;
}

struct CallSite {
    int file;
    int scope;
    const py::Node* call;
    std::string raw;
};

struct PendingEdge {
    int file;
    std::size_t site;
    EdgeKind kind;
    int src;
    int dst;
};

struct FileState {
    std::string relpath;
    std::string package;  ///< dotted package used for relative imports
    int module = -1;
    std::unique_ptr<py::Tree> tree;
    std::map<std::string, const py::Node*> assignments;  ///< module-level name = value
};

class Builder {
public:
    explicit Builder(std::string package) { graph_.package = std::move(package); }

    CodeGraph run(const std::vector<SourceFile>& sources) {
        for (const auto& src : sources) add_file(src);
        resolve_bases();
        resolve_decorators();
        resolve_calls();
        finalize_edges();
        finalize_features();
        return std::move(graph_);
    }

private:
    void add_file(const SourceFile& src) {
        auto tree = std::make_unique<py::Tree>();
        try {
            *tree = py::parse_module(src.text);
        } catch (const py::SyntaxError& e) {
            diag(fmt::format("{}: skipped, {}", src.relpath, e.what()));
            return;
        }
        int file = static_cast<int>(files_.size());
        FileState& fs = files_.emplace_back();
        fs.relpath = src.relpath;
        fs.tree = std::move(tree);

        std::string dotted = module_dotted(src.relpath);
        bool is_init = dotted == "__init__" || (dotted.size() > 9 && dotted.ends_with(".__init__"));
        std::string import_name = is_init ? (dotted == "__init__" ? "" : dotted.substr(0, dotted.size() - 9)) : dotted;
        if (is_init) {
            fs.package = import_name;
        } else {
            auto dot = dotted.rfind('.');
            fs.package = dot == std::string::npos ? "" : dotted.substr(0, dot);
        }

        CodeNode node;
        node.id = unique_id(graph_.package + "." + dotted, src.relpath, 1);
        node.kind = NodeKind::Module;
        node.ast_type = "Module";
        node.name = dotted.substr(dotted.rfind('.') == std::string::npos ? 0 : dotted.rfind('.') + 1);
        node.file = src.relpath;
        node.start_line = 1;
        node.end_line = count_lines(src.text);
        node.source = src.text;
        int mod = add_node(std::move(node), -1, -1);
        fs.module = mod;
        ix_.module_names[mod] = import_name.empty() ? dotted : import_name;
        if (!import_name.empty() && !ix_.modules.count(import_name)) ix_.modules[import_name] = mod;

        text_ = &src.text;
        file_ = file;
        for (const py::Node* stmt : fs.tree->root()->body) {
            if (stmt->kind == py::Kind::Assign && stmt->kids.size() == 2 && stmt->kids[0]->kind == py::Kind::Name) {
                fs.assignments[stmt->kids[0]->value] = stmt->kids[1];
            }
        }
        visit_block(fs.tree->root()->body, mod);
    }

    int add_node(CodeNode node, int parent, int module) {
        int idx = static_cast<int>(graph_.nodes.size());
        SymbolIndex::Scope sc;
        sc.parent = parent;
        sc.module = module == -1 ? idx : module;
        sc.kind = node.kind;
        graph_.nodes.push_back(std::move(node));
        ix_.scopes.push_back(std::move(sc));
        ix_.module_names.emplace_back();
        call_sets_.emplace_back();
        import_sets_.emplace_back();
        return idx;
    }

    std::string unique_id(std::string id, std::string_view file, int line) {
        if (ids_.insert(id).second) return id;
        for (int k = 2;; ++k) {
            std::string alt = fmt::format("{}#{}", id, k);
            if (ids_.insert(alt).second) {
                diag(fmt::format("{}:{}: duplicate qualified name {} renamed to {}", file, line, id, alt));
                return alt;
            }
        }
    }

    void diag(std::string msg) {
        spdlog::warn("{}", msg);
        graph_.diagnostics.push_back(std::move(msg));
    }

    void visit_block(const std::vector<py::Node*>& stmts, int scope) {
        for (const py::Node* s : stmts) visit(s, scope);
    }

    void visit(const py::Node* n, int scope) {
        if (n == nullptr) return;
        switch (n->kind) {
            case py::Kind::FunctionDef:
            case py::Kind::AsyncFunctionDef:
            case py::Kind::ClassDef:
                visit_def(n, scope);
                return;
            case py::Kind::Import:
                for (const py::Node* alias : n->kids) {
                    const std::string& mod = alias->value;
                    if (!alias->text.empty()) {
                        ix_.scopes[scope].imports[alias->text] = mod;
                    } else {
                        std::string head = mod.substr(0, mod.find('.'));
                        ix_.scopes[scope].imports[head] = head;
                    }
                    record_import(scope, mod);
                }
                return;
            case py::Kind::ImportFrom: {
                std::string base = absolute_module(n->value, n->flags);
                record_import(scope, base);
                for (const py::Node* alias : n->kids) {
                    if (alias->value == "*") {
                        ix_.scopes[scope].star_imports.push_back(base);
                        continue;
                    }
                    std::string full = append_dotted(base, alias->value);
                    ix_.scopes[scope].imports[alias->text.empty() ? alias->value : alias->text] = full;
                    record_import(scope, full);
                }
                return;
            }
            case py::Kind::Call:
                record_call(n, scope);
                break;
            default:
                break;
        }
        for (const py::Node* d : n->decorators) visit(d, scope);
        for (const py::Node* k : n->kids) visit(k, scope);
        visit(n->annotation, scope);
        visit_block(n->body, scope);
        visit_block(n->orelse, scope);
        visit_block(n->finalbody, scope);
    }

    void visit_def(const py::Node* n, int scope) {
        const FileState& fs = files_[file_];
        bool is_class = n->kind == py::Kind::ClassDef;
        CodeNode node;
        node.id = unique_id(graph_.nodes[scope].id + "." + n->value, fs.relpath, n->span.line);
        node.kind = is_class ? NodeKind::Class : NodeKind::Function;
        node.ast_type = std::string(py::kind_name(n->kind));
        node.name = n->value;
        node.file = fs.relpath;
        node.start_line = n->span.line;
        node.end_line = n->span.end_line;
        node.source = text_->substr(n->span.begin, n->span.end - n->span.begin);
        int idx = add_node(std::move(node), scope, ix_.scopes[scope].module);
        ix_.scopes[scope].defs[n->value] = idx;
        pending_.push_back({file_, n->span.begin, EdgeKind::Definition, scope, idx});

        // Decorators, defaults, annotations and bases evaluate in the enclosing scope.
        for (const py::Node* d : n->decorators) {
            decorators_.push_back({file_, scope, idx, d});
            visit(d, scope);
        }
        for (const py::Node* k : n->kids) {
            if (k->kind == py::Kind::TypeParam) continue;
            if (is_class && k->kind != py::Kind::Keyword) bases_.push_back({file_, scope, idx, k});
            visit(k, scope);
        }
        visit(n->annotation, scope);
        visit_block(n->body, idx);
    }

    std::string absolute_module(const std::string& name, int level) const {
        if (level == 0) return name;
        auto parts = files_[file_].package.empty() ? std::vector<std::string>{} : split_dots(files_[file_].package);
        for (int i = 1; i < level && !parts.empty(); ++i) parts.pop_back();
        return append_dotted(join_dots(parts, 0, parts.size()), name);
    }

    static std::string callee_text(const py::Node* func) {
        std::string name = py::dotted_name(func);
        if (!name.empty()) return name;
        // __import__('x').attr / importlib.import_module('x').attr
        std::vector<std::string> attrs;
        const py::Node* cur = func;
        while (cur->kind == py::Kind::Attribute) {
            attrs.push_back(cur->value);
            cur = cur->kids[0];
        }
        if (attrs.empty() || cur->kind != py::Kind::Call) return "";
        std::string loader = py::dotted_name(cur->kids[0]);
        if (loader != "__import__" && loader != "importlib.import_module") return "";
        if (cur->kids.size() < 2 || cur->kids[1]->kind != py::Kind::Constant || cur->kids[1]->flags != py::flag::kStr) {
            return "";
        }
        std::string out = cur->kids[1]->value;
        for (auto it = attrs.rbegin(); it != attrs.rend(); ++it) out = append_dotted(out, *it);
        return out;
    }

    void record_call(const py::Node* call, int scope) {
        std::string raw = callee_text(call->kids[0]);
        if (raw.empty()) return;
        calls_.push_back({file_, scope, call, std::move(raw)});
    }

    void record_import(int scope, const std::string& name) {
        if (!name.empty()) imports_.emplace_back(scope, name);
    }

    void resolve_bases() {
        Resolver r(ix_);
        for (const auto& site : bases_) {
            std::string name = py::dotted_name(site.expr);
            if (name.empty()) continue;
            auto res = r.resolve(name, site.scope);
            if (res.target && graph_.nodes[*res.target].kind == NodeKind::Class && *res.target != site.node) {
                ix_.scopes[site.node].bases.push_back(*res.target);
                pending_.push_back({site.file, site.expr->span.begin, EdgeKind::Inheritance, site.node, *res.target});
            }
        }
    }

    void resolve_decorators() {
        Resolver r(ix_);
        for (const auto& site : decorators_) {
            const py::Node* expr = site.expr->kind == py::Kind::Call ? site.expr->kids[0] : site.expr;
            std::string name = py::dotted_name(expr);
            if (name.empty()) continue;
            auto res = r.resolve(name, site.scope);
            if (res.target && graph_.nodes[*res.target].kind != NodeKind::Module) {
                pending_.push_back({site.file, site.expr->span.begin, EdgeKind::Decorator, *res.target, site.node});
            }
        }
    }

    void resolve_calls() {
        Resolver r(ix_);
        for (const auto& site : calls_) {
            auto res = r.resolve(site.raw, site.scope);
            attribute(call_sets_, site.scope, res.qualified);
            if (res.target) {
                EdgeKind kind = graph_.nodes[site.scope].kind == NodeKind::Function ? EdgeKind::CallFunctionLevel
                                                                                      : EdgeKind::CallModuleLevel;
                pending_.push_back({site.file, site.call->span.begin, kind, site.scope, *res.target});
            }
            if (is_setup_call(res)) detect_hook(r, site);
        }
        for (const auto& [scope, name] : imports_) attribute(import_sets_, scope, name);
    }

    static bool is_setup_call(const Resolution& res) {
        if (res.target) return false;
        return res.qualified == "setup" || res.qualified == "setuptools.setup" ||
               res.qualified == "distutils.core.setup";
    }

    void detect_hook(const Resolver& r, const CallSite& site) {
        const FileState& fs = files_[site.file];
        const py::Node* cmdclass = nullptr;
        for (const py::Node* k : site.call->kids) {
            if (k->kind == py::Kind::Keyword && k->value == "cmdclass") cmdclass = k->kids[0];
        }
        if (cmdclass == nullptr) return;
        const py::Node* map = cmdclass;
        if (map->kind == py::Kind::Name) {
            auto it = fs.assignments.find(map->value);
            if (it != fs.assignments.end()) map = it->second;
        }
        const py::Node* install = nullptr;
        bool literal = false;
        if (map->kind == py::Kind::Dict) {
            literal = true;
            for (std::size_t i = 0; i + 1 < map->kids.size(); i += 2) {
                const py::Node* key = map->kids[i];
                if (key == nullptr) {
                    literal = false;
                    continue;
                }
                if (key->kind == py::Kind::Constant && key->flags == py::flag::kStr && key->value == "install") {
                    install = map->kids[i + 1];
                }
            }
        } else if (map->kind == py::Kind::Call && py::dotted_name(map->kids[0]) == "dict") {
            literal = map->kids.size() > 1;
            for (std::size_t i = 1; i < map->kids.size(); ++i) {
                const py::Node* k = map->kids[i];
                if (k->kind != py::Kind::Keyword || k->value.empty()) {
                    literal = false;
                } else if (k->value == "install") {
                    install = k->kids[0];
                }
            }
        }
        int line = site.call->span.line;
        if (install == nullptr) {
            if (!literal) diag(fmt::format("{}:{}: cmdclass is not a literal mapping, no hook edge", fs.relpath, line));
            return;
        }
        std::string cls_name = py::dotted_name(install);
        auto cls = cls_name.empty() ? std::nullopt : r.resolve(cls_name, site.scope).target;
        if (!cls || graph_.nodes[*cls].kind != NodeKind::Class) {
            diag(fmt::format("{}:{}: install command class is not defined in the package, no hook edge", fs.relpath,
                             line));
            return;
        }
        auto run = r.member(*cls, {"run"}, 0, 0);
        if (!run || graph_.nodes[*run].kind != NodeKind::Function) {
            diag(fmt::format("{}:{}: {} has no run method, no hook edge", fs.relpath, line, graph_.nodes[*cls].id));
            return;
        }
        pending_.push_back({site.file, site.call->span.begin, EdgeKind::Hook, site.scope, *run});
    }

    // Functions collect everything nested in them; classes and modules stop at
    // the innermost function.
    void attribute(std::vector<std::set<std::string>>& sets, int scope, const std::string& name) {
        bool past_function = false;
        for (int s = scope; s != -1; s = ix_.scopes[s].parent) {
            bool is_fn = ix_.scopes[s].kind == NodeKind::Function;
            if (is_fn || !past_function) sets[s].insert(name);
            past_function = past_function || is_fn;
        }
    }

    void finalize_edges() {
        std::stable_sort(pending_.begin(), pending_.end(), [&](const PendingEdge& a, const PendingEdge& b) {
            return std::tie(a.file, a.site, a.kind, graph_.nodes[a.src].id, graph_.nodes[a.dst].id) <
                   std::tie(b.file, b.site, b.kind, graph_.nodes[b.src].id, graph_.nodes[b.dst].id);
        });
        std::set<std::tuple<int, int, EdgeKind>> seen;
        for (const auto& e : pending_) {
            if (!seen.emplace(e.src, e.dst, e.kind).second) continue;
            graph_.edges.push_back({graph_.nodes[e.src].id, graph_.nodes[e.dst].id, e.kind});
        }
    }

    void finalize_features() {
        for (std::size_t i = 0; i < graph_.nodes.size(); ++i) {
            graph_.nodes[i].calls.assign(call_sets_[i].begin(), call_sets_[i].end());
            graph_.nodes[i].imports.assign(import_sets_[i].begin(), import_sets_[i].end());
        }
    }

    struct ExprSite {
        int file;
        int scope;
        int node;
        const py::Node* expr;
    };

    CodeGraph graph_;
    SymbolIndex ix_;
    std::vector<FileState> files_;
    std::set<std::string> ids_;
    const std::string* text_ = nullptr;
    int file_ = -1;
    std::vector<CallSite> calls_;
    std::vector<std::pair<int, std::string>> imports_;
    std::vector<ExprSite> bases_;
    std::vector<ExprSite> decorators_;
    std::vector<PendingEdge> pending_;
    std::vector<std::set<std::string>> call_sets_;
    std::vector<std::set<std::string>> import_sets_;
};

}  // namespace

std::string_view to_string(NodeKind k) noexcept {
    switch (k) {
        case NodeKind::Module: return "Module";
        case NodeKind::Class: return "Class";
        case NodeKind::Function: return "Function";
    }
    return "Module";
}

std::string_view to_string(EdgeKind k) noexcept {
    switch (k) {
        case EdgeKind::Definition: return "Definition";
        case EdgeKind::Inheritance: return "Inheritance";
        case EdgeKind::Decorator: return "Decorator";
        case EdgeKind::CallFunctionLevel: return "CallFunctionLevel";
        case EdgeKind::CallModuleLevel: return "CallModuleLevel";
        case EdgeKind::Hook: return "Hook";
    }
    return "Definition";
}

NodeKind parse_node_kind(std::string_view text) {
    for (auto k : {NodeKind::Module, NodeKind::Class, NodeKind::Function}) {
        if (to_string(k) == text) return k;
    }
    throw FormatError(fmt::format("unknown node kind '{}'", text));
}

EdgeKind parse_edge_kind(std::string_view text) {
    for (auto k : {EdgeKind::Definition, EdgeKind::Inheritance, EdgeKind::Decorator, EdgeKind::CallFunctionLevel,
                   EdgeKind::CallModuleLevel, EdgeKind::Hook}) {
        if (to_string(k) == text) return k;
    }
    throw FormatError(fmt::format("unknown edge kind '{}'", text));
}

std::optional<std::size_t> CodeGraph::index_of(std::string_view id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].id == id) return i;
    }
    return std::nullopt;
}

std::vector<std::pair<std::size_t, std::size_t>> CodeGraph::index_edges() const {
    std::map<std::string_view, std::size_t> index;
    for (std::size_t i = 0; i < nodes.size(); ++i) index.emplace(nodes[i].id, i);
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& e : edges) {
        auto a = index.at(e.src);
        auto b = index.at(e.dst);
        if (a == b) continue;
        pairs.emplace(std::min(a, b), std::max(a, b));
    }
    return {pairs.begin(), pairs.end()};
}

Resolution resolve_callee(const SymbolIndex& index, std::string_view raw_name, int scope) {
    return Resolver(index).resolve(raw_name, scope);
}

CodeGraph build_graph(std::string package, const std::vector<SourceFile>& files) {
    return Builder(std::move(package)).run(files);
}

std::vector<SourceFile> read_sources(const fs::path& root, std::vector<std::string>* diagnostics) {
    std::vector<SourceFile> out;
    std::error_code ec;
    fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied, ec);
    if (ec) throw IoError(fmt::format("cannot read package {}: {}", root.string(), ec.message()));
    for (; it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) break;
        const auto& entry = *it;
        if (!entry.is_regular_file(ec) || entry.path().extension() != ".py") continue;
        std::string rel = fs::relative(entry.path(), root).generic_string();
        try {
            out.push_back({rel, read_file(entry.path())});
        } catch (const IoError& e) {
            if (diagnostics) diagnostics->push_back(fmt::format("{}: skipped, {}", rel, e.what()));
        }
    }
    std::sort(out.begin(), out.end(), [](const SourceFile& a, const SourceFile& b) { return a.relpath < b.relpath; });
    return out;
}

CodeGraph build_graph(const PackageRecord& package) {
    std::vector<std::string> diags;
    auto files = read_sources(package.root_path, &diags);
    CodeGraph g = build_graph(package.id, files);
    g.diagnostics.insert(g.diagnostics.begin(), diags.begin(), diags.end());
    return g;
}

json to_json(const CodeGraph& graph) {
    json nodes = json::array();
    for (const auto& n : graph.nodes) {
        nodes.push_back({{"id", n.id},
                         {"kind", to_string(n.kind)},
                         {"ast_type", n.ast_type},
                         {"name", n.name},
                         {"file", n.file},
                         {"span", {n.start_line, n.end_line}},
                         {"source", n.source},
                         {"calls", n.calls},
                         {"imports", n.imports}});
    }
    json edges = json::array();
    for (const auto& e : graph.edges) edges.push_back({{"src", e.src}, {"dst", e.dst}, {"kind", to_string(e.kind)}});
    return {{"schema", CodeGraph::kSchema},
            {"package", graph.package},
            {"nodes", std::move(nodes)},
            {"edges", std::move(edges)},
            {"diagnostics", graph.diagnostics}};
}

CodeGraph graph_from_json(const json& doc) {
    try {
        if (doc.at("schema").get<std::string>() != CodeGraph::kSchema) {
            throw FormatError(fmt::format("unsupported graph schema {}", doc.at("schema").dump()));
        }
        CodeGraph g;
        g.package = doc.at("package").get<std::string>();
        std::set<std::string> ids;
        for (const auto& j : doc.at("nodes")) {
            CodeNode n;
            n.id = j.at("id").get<std::string>();
            n.kind = parse_node_kind(j.at("kind").get<std::string>());
            n.ast_type = j.at("ast_type").get<std::string>();
            n.name = j.at("name").get<std::string>();
            n.file = j.at("file").get<std::string>();
            n.start_line = j.at("span").at(0).get<int>();
            n.end_line = j.at("span").at(1).get<int>();
            n.source = j.at("source").get<std::string>();
            n.calls = j.at("calls").get<std::vector<std::string>>();
            n.imports = j.at("imports").get<std::vector<std::string>>();
            if (!ids.insert(n.id).second) throw FormatError(fmt::format("duplicate node id {}", n.id));
            g.nodes.push_back(std::move(n));
        }
        for (const auto& j : doc.at("edges")) {
            CodeEdge e{j.at("src").get<std::string>(), j.at("dst").get<std::string>(),
                       parse_edge_kind(j.at("kind").get<std::string>())};
            if (!ids.count(e.src) || !ids.count(e.dst)) {
                throw FormatError(fmt::format("edge {} -> {} references an unknown node", e.src, e.dst));
            }
            g.edges.push_back(std::move(e));
        }
        g.diagnostics = doc.value("diagnostics", std::vector<std::string>{});
        return g;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("malformed graph: {}", e.what()));
    }
}

void save_graph(const CodeGraph& graph, const fs::path& path) { write_file(path, to_json(graph).dump(2) + "\n"); }

CodeGraph load_graph(const fs::path& path) {
    try {
        return graph_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace pkgscope
