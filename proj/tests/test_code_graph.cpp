#include <catch_amalgamated.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "pkgscope/code_graph.hpp"
#include "pkgscope/ingest.hpp"
#include "pkgscope/util.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace pkgscope;
using testsupport::listing;

namespace {

CodeGraph build_one(const std::string& src, const std::string& rel = "m.py") {
    return build_graph("pkg", {{rel, src}});
}

const CodeNode& node(const CodeGraph& g, std::string_view id) {
    auto idx = g.index_of(id);
    REQUIRE(idx.has_value());
    return g.nodes[*idx];
}

std::vector<std::string> sorted(std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

TEST_CASE("fixture corpus matches the hand-enumerated graphs", "[graph][fixture]") {
    auto expected = testsupport::load_expected_graphs();
    REQUIRE(expected.size() == 6);
    auto start = std::chrono::steady_clock::now();
    int hooks = 0;
    for (const auto& [id, want] : expected) {
        PackageRecord rec;
        rec.id = id;
        rec.root_path = testsupport::corpus() / id;
        std::string first;
        for (int round = 0; round < 3; ++round) {
            CodeGraph g = build_graph(rec);
            auto got = listing(g);
            INFO(id);
            CHECK(sorted(got.nodes) == sorted(want.nodes));
            CHECK(sorted(got.edges) == sorted(want.edges));
            CHECK(got.nodes == want.nodes);
            CHECK(got.edges == want.edges);
            std::string dump = to_json(g).dump();
            if (round == 0) first = dump;
            else CHECK(dump == first);
            if (round == 0) {
                for (const auto& e : g.edges) hooks += e.kind == EdgeKind::Hook;
            }
        }
    }
    CHECK(hooks == 2);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(5));
}

TEST_CASE("fixture diagnostics", "[graph][fixture]") {
    PackageRecord rec;
    rec.id = "brokenpkg-0.0.1";
    rec.root_path = testsupport::corpus() / rec.id;
    auto g = build_graph(rec);
    REQUIRE(g.diagnostics.size() == 3);
    CHECK(g.diagnostics[0].rfind("brokenpkg/__init__.py: skipped", 0) == 0);
    CHECK(g.diagnostics[1].find("renamed to brokenpkg-0.0.1.brokenpkg.cmds.get_commands#2") != std::string::npos);
    CHECK(g.diagnostics[2].find("cmdclass is not a literal mapping") != std::string::npos);
}

TEST_CASE("empty package gives an empty graph", "[graph]") {
    auto g = build_graph("empty", {});
    CHECK(g.nodes.empty());
    CHECK(g.edges.empty());
    auto broken = build_graph("broken", {{"a.py", "def f(:\n"}});
    CHECK(broken.nodes.empty());
    CHECK(broken.diagnostics.size() == 1);
}

TEST_CASE("callee resolution records import-expanded names", "[graph]") {
    auto g = build_one(
        "from os import system as run_it\n"
        "import numpy as np, urllib.request\n"
        "def f():\n"
        "    run_it('id')\n"
        "    np.array([1])\n"
        "    urllib.request.urlopen('u')\n"
        "    __import__('base64').b64decode('x')\n"
        "    g()\n"
        "def g():\n"
        "    pass\n"
        "g()\n");
    const auto& f = node(g, "pkg.m.f");
    CHECK(f.calls == std::vector<std::string>{"__import__", "base64.b64decode", "g", "numpy.array", "os.system",
                                              "urllib.request.urlopen"});
    const auto& m = node(g, "pkg.m");
    CHECK(m.calls == std::vector<std::string>{"g"});
    CHECK(m.imports == std::vector<std::string>{"numpy", "os", "os.system", "urllib.request"});
    CHECK(std::count(g.edges.begin(), g.edges.end(), CodeEdge{"pkg.m.f", "pkg.m.g", EdgeKind::CallFunctionLevel}) == 1);
    CHECK(std::count(g.edges.begin(), g.edges.end(), CodeEdge{"pkg.m", "pkg.m.g", EdgeKind::CallModuleLevel}) == 1);
    CHECK(g.edges.size() == 4);
}

TEST_CASE("scope rules for resolution", "[graph]") {
    auto g = build_one(
        "def helper():\n"
        "    pass\n"
        "class K:\n"
        "    def helper(self):\n"
        "        pass\n"
        "    def go(self):\n"
        "        helper()\n"        // class scope is invisible: module helper
        "        self.helper()\n"   // method
        "    x = helper()\n");      // class body sees K.helper
    auto has = [&](const char* s, const char* d, EdgeKind k) {
        return std::count(g.edges.begin(), g.edges.end(), CodeEdge{s, d, k}) == 1;
    };
    CHECK(has("pkg.m.K.go", "pkg.m.helper", EdgeKind::CallFunctionLevel));
    CHECK(has("pkg.m.K.go", "pkg.m.K.helper", EdgeKind::CallFunctionLevel));
    CHECK(has("pkg.m.K", "pkg.m.K.helper", EdgeKind::CallModuleLevel));

    SymbolIndex empty;
    auto r = resolve_callee(empty, "os.system", -1);
    CHECK(r.qualified == "os.system");
    CHECK_FALSE(r.target.has_value());
}

TEST_CASE("cross-file resolution follows re-exports and relative imports", "[graph]") {
    auto g = build_graph("p", {{"src/lib/__init__.py", "from .impl import work\n"},
                               {"src/lib/impl.py", "def work():\n    pass\n"},
                               {"app.py", "import lib\nfrom lib import work as w\nlib.work()\nw()\n"}});
    CHECK(std::count(g.edges.begin(), g.edges.end(),
                     CodeEdge{"p.app", "p.src.lib.impl.work", EdgeKind::CallModuleLevel}) == 1);
    CHECK(node(g, "p.app").calls == std::vector<std::string>{"lib.work"});
}

TEST_CASE("hook detection variants", "[graph]") {
    const char* base =
        "from setuptools import setup\n"
        "from setuptools.command.install import install\n"
        "class I(install):\n"
        "    def run(self):\n"
        "        pass\n";
    auto hooks = [](const CodeGraph& g) {
        return std::count_if(g.edges.begin(), g.edges.end(), [](const CodeEdge& e) { return e.kind == EdgeKind::Hook; });
    };
    CHECK(hooks(build_one(std::string(base) + "setup(cmdclass={'install': I})\n")) == 1);
    CHECK(hooks(build_one(std::string(base) + "setup(cmdclass=dict(install=I))\n")) == 1);
    CHECK(hooks(build_one(std::string(base) + "c = {'install': I}\nsetup(cmdclass=c)\n")) == 1);
    CHECK(hooks(build_one(std::string(base) + "setup(name='x')\n")) == 0);
    CHECK(hooks(build_one(std::string(base) + "setup(cmdclass={'develop': I})\n")) == 0);
    auto dyn = build_one(std::string(base) + "setup(cmdclass=make())\n");
    CHECK(hooks(dyn) == 0);
    CHECK(dyn.diagnostics.size() == 1);
    auto g = build_one(std::string(base) + "setup(cmdclass={'install': I})\n");
    CHECK(g.edges.back() == CodeEdge{"pkg.m", "pkg.m.I.run", EdgeKind::Hook});
}

TEST_CASE("feature scopes for nested definitions", "[graph]") {
    PackageRecord rec;
    rec.id = "tinyutil-0.1.0";
    rec.root_path = testsupport::corpus() / rec.id;
    auto g = build_graph(rec);
    CHECK(node(g, "tinyutil-0.1.0.tinyutil").calls == std::vector<std::string>{"Table", "fib", "print"});
    CHECK(node(g, "tinyutil-0.1.0.tinyutil.memo").calls == std::vector<std::string>{"fn", "functools.wraps"});
    CHECK(node(g, "tinyutil-0.1.0.tinyutil.memo.inner").calls == std::vector<std::string>{"fn"});
    CHECK(node(g, "tinyutil-0.1.0.tinyutil.Table").calls == std::vector<std::string>{"fib"});
    CHECK(node(g, "tinyutil-0.1.0.tinyutil.Table.rows").calls == std::vector<std::string>{"range", "self.cell"});
    CHECK(node(g, "tinyutil-0.1.0.tinyutil").imports == std::vector<std::string>{"functools"});
}

TEST_CASE("node sources are verbatim slices", "[graph]") {
    std::string src = "@d\nclass A:\n    def f(self):\n        return 1\n";
    auto g = build_one(src);
    CHECK(node(g, "pkg.m").source == src);
    CHECK(node(g, "pkg.m.A").source == "class A:\n    def f(self):\n        return 1");
    CHECK(node(g, "pkg.m.A").start_line == 2);
    CHECK(node(g, "pkg.m.A.f").source == "def f(self):\n        return 1");
    CHECK(node(g, "pkg.m.A.f").end_line == 4);
}

TEST_CASE("graph JSON round-trips", "[graph]") {
    PackageRecord rec;
    rec.id = "helperlib-1.2.0";
    rec.root_path = testsupport::corpus() / rec.id;
    auto g = build_graph(rec);
    testsupport::TempDir dir;
    save_graph(g, dir / "g.json");
    auto back = load_graph(dir / "g.json");
    CHECK(to_json(back).dump() == to_json(g).dump());
}

namespace {

// Random nested programs of defs, classes and calls between them.
std::string random_program(std::mt19937_64& rng) {
    std::vector<std::string> names;
    std::ostringstream out;
    std::function<void(int, int)> block = [&](int depth, int count) {
        std::string pad(static_cast<std::size_t>(depth) * 4, ' ');
        for (int i = 0; i < count; ++i) {
            int pick = static_cast<int>(rng() % 5);
            std::string name = "n" + std::to_string(rng() % 6);
            if (pick == 0 && depth < 4) {
                out << pad << "class " << name << "(" << (names.empty() ? "object" : names[rng() % names.size()])
                    << "):\n";
                names.push_back(name);
                block(depth + 1, 1 + static_cast<int>(rng() % 3));
            } else if (pick == 1 && depth < 4) {
                if (!names.empty() && rng() % 2) out << pad << "@" << names[rng() % names.size()] << "\n";
                out << pad << "def " << name << "(self=None):\n";
                names.push_back(name);
                block(depth + 1, 1 + static_cast<int>(rng() % 3));
            } else if (!names.empty()) {
                out << pad << names[rng() % names.size()] << "()\n";
            } else {
                out << pad << "pass\n";
            }
        }
    };
    block(0, 2 + static_cast<int>(rng() % 5));
    return out.str();
}

}  // namespace

TEST_CASE("graph invariants hold on random programs", "[graph][property]") {
    std::mt19937_64 rng(1234);
    for (int trial = 0; trial < 200; ++trial) {
        std::string src = random_program(rng);
        INFO(src);
        auto g = build_graph("r", {{"a.py", src}, {"b/c.py", src}});
        std::set<std::string> ids;
        for (const auto& n : g.nodes) CHECK(ids.insert(n.id).second);
        std::map<std::string, int> def_in;
        for (const auto& e : g.edges) {
            CHECK(ids.count(e.src) == 1);
            CHECK(ids.count(e.dst) == 1);
            if (e.kind == EdgeKind::Definition) {
                CHECK(e.src != e.dst);
                ++def_in[e.dst];
            }
        }
        for (const auto& n : g.nodes) {
            CHECK(def_in[n.id] == (n.kind == NodeKind::Module ? 0 : 1));
            if (n.kind != NodeKind::Module) {
                CHECK_FALSE(n.source.empty());
                CHECK(src.find(n.source) != std::string::npos);
            }
        }
        CHECK(to_json(g).dump() == to_json(build_graph("r", {{"a.py", src}, {"b/c.py", src}})).dump());
    }
}
