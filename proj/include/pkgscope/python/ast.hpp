#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <vector>

namespace pkgscope::python {

/// Source region of a token or node. Lines are 1-based, columns are 0-based
/// byte offsets within the line, and `begin`/`end` are byte offsets into the
/// whole file (half-open).
struct Span {
    int line = 0;
    int col = 0;
    int end_line = 0;
    int end_col = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

enum class Kind : std::uint8_t {
    Module,

    // statements
    FunctionDef,
    AsyncFunctionDef,
    ClassDef,
    Return,
    Delete,
    Assign,
    AugAssign,
    AnnAssign,
    TypeAlias,
    For,
    AsyncFor,
    While,
    If,
    With,
    AsyncWith,
    Match,
    Raise,
    Try,
    TryStar,
    Assert,
    Import,
    ImportFrom,
    Global,
    Nonlocal,
    Expr,
    Pass,
    Break,
    Continue,

    // auxiliary nodes
    ExceptHandler,
    MatchCase,
    WithItem,
    Alias,
    Arguments,
    Arg,
    Keyword,
    TypeParam,
    Comprehension,

    // expressions
    BoolOp,
    NamedExpr,
    BinOp,
    UnaryOp,
    Lambda,
    IfExp,
    Dict,
    Set,
    ListComp,
    SetComp,
    DictComp,
    GeneratorExp,
    Await,
    Yield,
    YieldFrom,
    Compare,
    Call,
    FormattedValue,
    JoinedStr,
    Constant,
    Attribute,
    Subscript,
    Starred,
    Name,
    List,
    Tuple,
    Slice,

    // patterns
    MatchValue,
    MatchSingleton,
    MatchSequence,
    MatchMapping,
    MatchClass,
    MatchStar,
    MatchAs,
    MatchOr,
};

std::string_view kind_name(Kind kind) noexcept;

/// Sub-classification carried in `Node::flags` for a few node kinds.
namespace flag {
// Constant
inline constexpr int kStr = 1;
inline constexpr int kBytes = 2;
inline constexpr int kNumber = 3;
inline constexpr int kNone = 4;
inline constexpr int kTrue = 5;
inline constexpr int kFalse = 6;
inline constexpr int kEllipsis = 7;
// Arg
inline constexpr int kPositionalOnly = 1;
inline constexpr int kPositional = 2;
inline constexpr int kVarArg = 3;
inline constexpr int kKeywordOnly = 4;
inline constexpr int kKwArg = 5;
// Comprehension
inline constexpr int kAsync = 1;
}  // namespace flag

/// Generic syntax tree node. The meaning of `kids` depends on `kind`:
///
///   FunctionDef   value=name; kids = [Arguments, TypeParam...]; annotation = returns
///   ClassDef      value=name; kids = bases, Keyword..., TypeParam...
///   Call          kids[0] = func; then positional args (Starred allowed), then Keyword
///   Keyword       value = arg name ("" for `**`); kids[0] = value
///   Attribute     value = attr; kids[0] = object
///   Name          value = identifier
///   Constant      value = decoded text for str/bytes, literal text otherwise
///   Dict          kids = key,value pairs flattened; key is nullptr for `**x`
///   Import        kids = Alias (value = dotted name, text = asname)
///   ImportFrom    value = module ("" when only dots); flags = level; kids = Alias
///   If/While      kids[0] = test; body; orelse
///   For           kids = [target, iter]; body; orelse
///   Try           body; kids = ExceptHandler...; orelse; finalbody
///   Match         kids = [subject, MatchCase...]
///   MatchCase     kids = [pattern, guard?]; body
///
/// Every other kind lists its sub-expressions in source order.
struct Node {
    Kind kind = Kind::Module;
    Span span;
    std::string value;
    std::string text;  ///< secondary string (alias asname, operator spelling)
    int flags = 0;
    std::vector<Node*> kids;
    std::vector<Node*> body;
    std::vector<Node*> orelse;
    std::vector<Node*> finalbody;
    std::vector<Node*> decorators;
    Node* annotation = nullptr;
};

/// Owns every node of one parsed file. Node addresses are stable.
class Tree {
public:
    Node* make(Kind kind, const Span& span) {
        Node& node = arena_.emplace_back();
        node.kind = kind;
        node.span = span;
        return &node;
    }

    Node* root() const noexcept { return root_; }
    void set_root(Node* root) noexcept { root_ = root; }
    std::size_t size() const noexcept { return arena_.size(); }

private:
    std::deque<Node> arena_;
    Node* root_ = nullptr;
};

/// Visits `node` and all descendants in source order (decorators, kids,
/// annotation, body, orelse, finalbody). The callback returns false to skip a
/// node's children.
template <typename F>
void walk(const Node* node, F&& visit) {
    if (node == nullptr || !visit(node)) {
        return;
    }
    for (const Node* d : node->decorators) walk(d, visit);
    for (const Node* k : node->kids) walk(k, visit);
    walk(node->annotation, visit);
    for (const Node* s : node->body) walk(s, visit);
    for (const Node* s : node->orelse) walk(s, visit);
    for (const Node* s : node->finalbody) walk(s, visit);
}

/// Dotted name for a Name/Attribute chain ("os.path.join"), or empty when the
/// chain bottoms out in anything other than a Name.
std::string dotted_name(const Node* expr);

}  // namespace pkgscope::python
