#include "pkgscope/python/ast.hpp"

#include <array>

namespace pkgscope::python {

std::string_view kind_name(Kind kind) noexcept {
    static constexpr std::array<std::string_view, static_cast<std::size_t>(Kind::MatchOr) + 1> kNames = {
        "Module",        "FunctionDef",   "AsyncFunctionDef", "ClassDef",     "Return",       "Delete",
        "Assign",        "AugAssign",     "AnnAssign",        "TypeAlias",    "For",          "AsyncFor",
        "While",         "If",            "With",             "AsyncWith",    "Match",        "Raise",
        "Try",           "TryStar",       "Assert",           "Import",       "ImportFrom",   "Global",
        "Nonlocal",      "Expr",          "Pass",             "Break",        "Continue",     "ExceptHandler",
        "MatchCase",     "WithItem",      "Alias",            "Arguments",    "Arg",          "Keyword",
        "TypeParam",     "Comprehension", "BoolOp",           "NamedExpr",    "BinOp",        "UnaryOp",
        "Lambda",        "IfExp",         "Dict",             "Set",          "ListComp",     "SetComp",
        "DictComp",      "GeneratorExp",  "Await",            "Yield",        "YieldFrom",    "Compare",
        "Call",          "FormattedValue", "JoinedStr",       "Constant",     "Attribute",    "Subscript",
        "Starred",       "Name",          "List",             "Tuple",        "Slice",        "MatchValue",
        "MatchSingleton", "MatchSequence", "MatchMapping",    "MatchClass",   "MatchStar",    "MatchAs",
        "MatchOr",
    };
    auto index = static_cast<std::size_t>(kind);
    return index < kNames.size() ? kNames[index] : std::string_view{};
}

std::string dotted_name(const Node* expr) {
    std::string out;
    while (expr != nullptr && expr->kind == Kind::Attribute) {
        out.insert(0, "." + expr->value);
        expr = expr->kids.empty() ? nullptr : expr->kids[0];
    }
    if (expr == nullptr || expr->kind != Kind::Name) return {};
    return expr->value + out;
}

}  // namespace pkgscope::python
