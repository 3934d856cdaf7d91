#include "pkgscope/python/parser.hpp"

#include <algorithm>
#include <array>
#include <initializer_list>

namespace pkgscope::python {

namespace {

constexpr std::array<std::string_view, 35> kKeywords = {
    "False", "None",   "True",    "and",      "as",   "assert", "async",  "await", "break",
    "class", "continue", "def",   "del",      "elif", "else",   "except", "finally", "for",
    "from",  "global", "if",      "import",   "in",   "is",     "lambda", "nonlocal", "not",
    "or",    "pass",   "raise",   "return",   "try",  "while",  "with",   "yield",
};

constexpr std::array<std::string_view, 13> kAugOps = {"+=", "-=", "*=", "/=", "//=", "%=", "@=",
                                                      "&=", "|=", "^=", ">>=", "<<=", "**="};

constexpr int kMaxDepth = 600;

bool is_keyword(std::string_view word) {
    return std::find(kKeywords.begin(), kKeywords.end(), word) != kKeywords.end();
}

Span join(const Span& a, const Span& b) {
    Span s = a;
    s.end = b.end;
    s.end_line = b.end_line;
    s.end_col = b.end_col;
    return s;
}

void append_utf8(std::string& out, unsigned long cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    c = static_cast<char>(c | 0x20);
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
}

class Parser {
public:
    Parser(std::string_view src, std::vector<Token> tokens, Tree& tree, int depth = 0)
        : src_(src), toks_(std::move(tokens)), tree_(tree), depth_(depth) {}

    Node* file() {
        Span whole;
        whole.line = 1;
        whole.begin = 0;
        whole.end = src_.size();
        whole.end_line = toks_.back().span.line;
        whole.end_col = toks_.back().span.col;
        Node* mod = tree_.make(Kind::Module, whole);
        while (!at(TokenKind::EndMarker)) statement(mod->body);
        return mod;
    }

    Node* lone_expression() {
        Node* e = expression();
        if (!at(TokenKind::EndMarker)) fail("invalid syntax");
        return e;
    }

    Node* field_expression() {
        if (at(TokenKind::EndMarker)) fail("f-string: valid expression required");
        Node* e = at_kw("yield") ? yield_expr() : star_expressions();
        if (!at(TokenKind::EndMarker)) fail("f-string: expecting '}'");
        return e;
    }

private:
    struct Mark {
        std::size_t i;
        std::size_t last;
    };

    class DepthGuard {
    public:
        explicit DepthGuard(Parser& p) : p_(p) {
            if (++p_.depth_ > kMaxDepth) p_.fail("too many nested expressions");
        }
        ~DepthGuard() { --p_.depth_; }
        DepthGuard(const DepthGuard&) = delete;
        DepthGuard& operator=(const DepthGuard&) = delete;

    private:
        Parser& p_;
    };

    // ---- token helpers ---------------------------------------------------

    const Token& peek(std::size_t k = 0) const { return toks_[std::min(i_ + k, toks_.size() - 1)]; }
    bool at(TokenKind kind, std::size_t k = 0) const { return peek(k).kind == kind; }
    bool at_op(std::string_view op, std::size_t k = 0) const {
        const Token& t = peek(k);
        return t.kind == TokenKind::Op && t.text == op;
    }
    bool at_kw(std::string_view kw, std::size_t k = 0) const {
        const Token& t = peek(k);
        return t.kind == TokenKind::Name && t.text == kw;
    }
    bool at_name(std::size_t k = 0) const {
        const Token& t = peek(k);
        return t.kind == TokenKind::Name && !is_keyword(t.text);
    }

    const Token& advance() {
        const Token& t = toks_[i_];
        if (t.kind != TokenKind::Newline && t.kind != TokenKind::Indent && t.kind != TokenKind::Dedent) last_ = i_;
        if (i_ + 1 < toks_.size()) ++i_;
        return t;
    }
    bool accept_op(std::string_view op) {
        if (!at_op(op)) return false;
        advance();
        return true;
    }
    bool accept_kw(std::string_view kw) {
        if (!at_kw(kw)) return false;
        advance();
        return true;
    }
    const Token& expect_op(std::string_view op) {
        if (!at_op(op)) fail("expected '" + std::string(op) + "'");
        return advance();
    }
    const Token& expect_kw(std::string_view kw) {
        if (!at_kw(kw)) fail("expected '" + std::string(kw) + "'");
        return advance();
    }
    const Token& expect_name() {
        if (!at_name()) fail("expected name");
        return advance();
    }
    void expect(TokenKind kind, const char* what) {
        if (!at(kind)) fail(std::string("expected ") + what);
        advance();
    }

    [[noreturn]] void fail(const std::string& message) const {
        const Token& t = peek();
        std::string msg = message;
        if (message == "invalid syntax" || message.rfind("expected", 0) == 0) {
            if (t.kind == TokenKind::EndMarker) msg += " at end of input";
            else if (t.kind == TokenKind::Newline) msg += " at end of line";
            else if (t.kind == TokenKind::Indent) msg = "unexpected indent";
            else if (t.kind != TokenKind::Dedent) msg += " near '" + std::string(t.text.substr(0, 20)) + "'";
        }
        throw SyntaxError(msg, t.span.line, t.span.col);
    }

    Mark mark() const { return {i_, last_}; }
    void reset(Mark m) {
        i_ = m.i;
        last_ = m.last;
    }

    Node* make(Kind kind, std::size_t start) {
        return tree_.make(kind, join(toks_[start].span, toks_[std::max(last_, start)].span));
    }
    // Recomputes a node's span once all of its tokens are consumed.
    Node* close(Node* node, std::size_t start) {
        node->span = join(toks_[start].span, toks_[std::max(last_, start)].span);
        return node;
    }

    bool starts_expression(bool allow_star) const {
        const Token& t = peek();
        switch (t.kind) {
            case TokenKind::Name:
                if (!is_keyword(t.text)) return true;
                return t.text == "None" || t.text == "True" || t.text == "False" || t.text == "not" ||
                       t.text == "lambda" || t.text == "await";
            case TokenKind::Number:
            case TokenKind::String:
                return true;
            case TokenKind::Op:
                return t.text == "(" || t.text == "[" || t.text == "{" || t.text == "-" || t.text == "+" ||
                       t.text == "~" || t.text == "..." || (allow_star && t.text == "*");
            default:
                return false;
        }
    }

    // ---- statements ------------------------------------------------------

    void statement(std::vector<Node*>& out) {
        if (at(TokenKind::Indent)) fail("unexpected indent");
        if (at(TokenKind::Dedent)) fail("unexpected unindent");
        if (Node* s = compound_statement()) {
            out.push_back(s);
            return;
        }
        simple_statements(out);
    }

    Node* compound_statement() {
        if (at_op("@")) return decorated();
        if (peek().kind != TokenKind::Name) return nullptr;
        std::string_view w = peek().text;
        if (w == "def") return function_def(i_, {});
        if (w == "class") return class_def({});
        if (w == "if") return if_stmt();
        if (w == "while") return while_stmt();
        if (w == "for") return for_stmt(i_);
        if (w == "try") return try_stmt();
        if (w == "with") return with_stmt(i_);
        if (w == "async") {
            std::size_t start = i_;
            advance();
            if (at_kw("def")) return function_def(start, {});
            if (at_kw("for")) return for_stmt(start);
            if (at_kw("with")) return with_stmt(start);
            fail("invalid syntax");
        }
        if (w == "match") return match_stmt();
        return nullptr;
    }

    void simple_statements(std::vector<Node*>& out) {
        while (true) {
            out.push_back(simple_statement());
            if (!accept_op(";")) break;
            if (at(TokenKind::Newline)) break;
        }
        expect(TokenKind::Newline, "newline");
    }

    std::vector<Node*> block() {
        std::vector<Node*> body;
        if (at(TokenKind::Newline)) {
            advance();
            if (!at(TokenKind::Indent)) fail("expected an indented block");
            advance();
            while (!at(TokenKind::Dedent) && !at(TokenKind::EndMarker)) statement(body);
            if (at(TokenKind::Dedent)) advance();
        } else {
            simple_statements(body);
        }
        return body;
    }

    Node* simple_statement() {
        std::size_t start = i_;
        const Token& t = peek();
        if (t.kind == TokenKind::Name) {
            std::string_view w = t.text;
            if (w == "pass" || w == "break" || w == "continue") {
                advance();
                return make(w == "pass" ? Kind::Pass : w == "break" ? Kind::Break : Kind::Continue, start);
            }
            if (w == "return") {
                advance();
                Node* n = make(Kind::Return, start);
                if (starts_expression(true)) n->kids.push_back(star_expressions());
                return close(n, start);
            }
            if (w == "raise") {
                advance();
                Node* n = make(Kind::Raise, start);
                if (starts_expression(false)) {
                    n->kids.push_back(expression());
                    if (accept_kw("from")) n->kids.push_back(expression());
                }
                return close(n, start);
            }
            if (w == "global" || w == "nonlocal") {
                advance();
                Node* n = make(w == "global" ? Kind::Global : Kind::Nonlocal, start);
                do {
                    std::size_t ns = i_;
                    const Token& name = expect_name();
                    Node* id = make(Kind::Name, ns);
                    id->value = std::string(name.text);
                    n->kids.push_back(id);
                } while (accept_op(","));
                return close(n, start);
            }
            if (w == "del") {
                advance();
                Node* n = make(Kind::Delete, start);
                do {
                    if (!starts_expression(false)) break;
                    Node* target = bitwise_or();
                    check_target(target, false, "delete");
                    n->kids.push_back(target);
                } while (accept_op(","));
                if (n->kids.empty()) fail("invalid syntax");
                return close(n, start);
            }
            if (w == "assert") {
                advance();
                Node* n = make(Kind::Assert, start);
                n->kids.push_back(expression());
                if (accept_op(",")) n->kids.push_back(expression());
                return close(n, start);
            }
            if (w == "import") return import_stmt();
            if (w == "from") return from_import();
            if (w == "type" && at(TokenKind::Name, 1) && (at_op("=", 2) || at_op("[", 2))) return type_alias();
        }
        return expression_statement();
    }

    Node* import_stmt() {
        std::size_t start = i_;
        advance();
        Node* n = make(Kind::Import, start);
        do {
            std::size_t as = i_;
            Node* alias = make(Kind::Alias, as);
            alias->value = dotted_module_name();
            if (accept_kw("as")) alias->text = std::string(expect_name().text);
            n->kids.push_back(close(alias, as));
        } while (accept_op(","));
        return close(n, start);
    }

    std::string dotted_module_name() {
        std::string name(expect_name().text);
        while (accept_op(".")) {
            name += '.';
            name += expect_name().text;
        }
        return name;
    }

    Node* from_import() {
        std::size_t start = i_;
        advance();
        Node* n = make(Kind::ImportFrom, start);
        int level = 0;
        while (at_op(".") || at_op("...")) level += static_cast<int>(advance().text.size());
        if (!at_kw("import")) n->value = dotted_module_name();
        else if (level == 0) fail("invalid syntax");
        n->flags = level;
        expect_kw("import");
        if (at_op("*")) {
            std::size_t as = i_;
            advance();
            Node* alias = make(Kind::Alias, as);
            alias->value = "*";
            n->kids.push_back(alias);
            return close(n, start);
        }
        bool parens = accept_op("(");
        do {
            if (parens && at_op(")")) break;
            std::size_t as = i_;
            Node* alias = make(Kind::Alias, as);
            alias->value = std::string(expect_name().text);
            if (accept_kw("as")) alias->text = std::string(expect_name().text);
            n->kids.push_back(close(alias, as));
        } while (accept_op(","));
        if (parens) expect_op(")");
        if (n->kids.empty()) fail("invalid syntax");
        return close(n, start);
    }

    Node* type_alias() {
        std::size_t start = i_;
        advance();
        Node* n = make(Kind::TypeAlias, start);
        std::size_t ns = i_;
        Node* name = make(Kind::Name, ns);
        name->value = std::string(expect_name().text);
        n->kids.push_back(name);
        if (at_op("[")) type_params(n->kids);
        expect_op("=");
        n->kids.push_back(expression());
        return close(n, start);
    }

    Node* expression_statement() {
        std::size_t start = i_;
        Node* first = at_kw("yield") ? yield_expr() : star_expressions();
        if (at_op(":")) {
            check_target(first, false, "annotated assignment");
            if (first->kind == Kind::Tuple || first->kind == Kind::List) {
                fail("only single target (not tuple) can be annotated");
            }
            advance();
            Node* n = make(Kind::AnnAssign, start);
            n->kids.push_back(first);
            n->annotation = expression();
            if (accept_op("=")) n->kids.push_back(annotated_rhs());
            return close(n, start);
        }
        for (std::string_view op : kAugOps) {
            if (at_op(op)) {
                if (first->kind != Kind::Name && first->kind != Kind::Attribute && first->kind != Kind::Subscript) {
                    fail("illegal expression for augmented assignment");
                }
                advance();
                Node* n = make(Kind::AugAssign, start);
                n->text = std::string(op.substr(0, op.size() - 1));
                n->kids.push_back(first);
                n->kids.push_back(annotated_rhs());
                return close(n, start);
            }
        }
        if (at_op("=")) {
            Node* n = make(Kind::Assign, start);
            n->kids.push_back(first);
            while (accept_op("=")) n->kids.push_back(annotated_rhs());
            for (std::size_t k = 0; k + 1 < n->kids.size(); ++k) check_target(n->kids[k], true, "assignment");
            return close(n, start);
        }
        Node* n = make(Kind::Expr, start);
        n->kids.push_back(first);
        return close(n, start);
    }

    Node* annotated_rhs() { return at_kw("yield") ? yield_expr() : star_expressions(); }

    void check_target(const Node* n, bool allow_sequence, const char* context) {
        switch (n->kind) {
            case Kind::Name:
            case Kind::Attribute:
            case Kind::Subscript:
                return;
            case Kind::Starred:
                if (allow_sequence) {
                    check_target(n->kids[0], allow_sequence, context);
                    return;
                }
                break;
            case Kind::Tuple:
            case Kind::List:
                for (const Node* k : n->kids) check_target(k, true, context);
                return;
            default:
                break;
        }
        throw SyntaxError(std::string("cannot use ") + std::string(kind_name(n->kind)) + " as " + context +
                              " target",
                          n->span.line, n->span.col);
    }

    // ---- compound statements --------------------------------------------

    Node* decorated() {
        std::vector<Node*> decorators;
        while (accept_op("@")) {
            decorators.push_back(named_expression());
            expect(TokenKind::Newline, "newline after decorator");
        }
        if (at_kw("def")) return function_def(i_, std::move(decorators));
        if (at_kw("async") && at_kw("def", 1)) return function_def(i_, std::move(decorators));
        if (at_kw("class")) return class_def(std::move(decorators));
        fail("invalid syntax");
    }

    Node* function_def(std::size_t start, std::vector<Node*> decorators) {
        accept_kw("async");
        bool is_async = i_ != start;
        expect_kw("def");
        Node* n = make(is_async ? Kind::AsyncFunctionDef : Kind::FunctionDef, start);
        n->decorators = std::move(decorators);
        n->value = std::string(expect_name().text);
        std::vector<Node*> tparams;
        if (at_op("[")) type_params(tparams);
        expect_op("(");
        n->kids.push_back(parameters(")", true));
        expect_op(")");
        for (Node* tp : tparams) n->kids.push_back(tp);
        if (accept_op("->")) n->annotation = expression();
        expect_op(":");
        n->body = block();
        return close(n, start);
    }

    Node* class_def(std::vector<Node*> decorators) {
        std::size_t start = i_;
        expect_kw("class");
        Node* n = make(Kind::ClassDef, start);
        n->decorators = std::move(decorators);
        n->value = std::string(expect_name().text);
        std::vector<Node*> tparams;
        if (at_op("[")) type_params(tparams);
        if (accept_op("(")) {
            call_arguments(n->kids);
            expect_op(")");
        }
        for (Node* tp : tparams) n->kids.push_back(tp);
        expect_op(":");
        n->body = block();
        return close(n, start);
    }

    void type_params(std::vector<Node*>& out) {
        expect_op("[");
        do {
            if (at_op("]")) break;
            std::size_t s = i_;
            int kind = 0;
            if (accept_op("*")) kind = 1;
            else if (accept_op("**")) kind = 2;
            Node* tp = make(Kind::TypeParam, s);
            tp->flags = kind;
            tp->value = std::string(expect_name().text);
            if (kind == 0 && accept_op(":")) tp->annotation = expression();
            if (accept_op("=")) tp->kids.push_back(kind == 1 && at_op("*") ? star_expression() : expression());
            out.push_back(close(tp, s));
        } while (accept_op(","));
        expect_op("]");
    }

    // Parameter list of a def (`annotations`) or lambda, up to `closer`.
    Node* parameters(std::string_view closer, bool annotations) {
        std::size_t start = i_;
        Node* args = make(Kind::Arguments, start);
        bool seen_star = false;
        bool seen_slash = false;
        bool seen_kwarg = false;
        bool need_default = false;
        while (!at_op(closer)) {
            if (seen_kwarg) fail("arguments cannot follow var-keyword argument");
            std::size_t s = i_;
            if (accept_op("/")) {
                if (seen_slash || seen_star || args->kids.empty()) fail("invalid syntax");
                seen_slash = true;
                for (Node* a : args->kids) a->flags = flag::kPositionalOnly;
            } else if (accept_op("**")) {
                Node* a = param(s, annotations, false);
                a->flags = flag::kKwArg;
                if (at_op("=")) fail("var-keyword argument cannot have default value");
                args->kids.push_back(a);
                seen_kwarg = true;
            } else if (accept_op("*")) {
                if (seen_star) fail("* argument may appear only once");
                seen_star = true;
                if (at_op(",") || at_op(closer)) {
                    if (at_op(closer) || at_op(closer, 1)) fail("named arguments must follow bare *");
                } else {
                    Node* a = param(s, annotations, true);
                    a->flags = flag::kVarArg;
                    if (at_op("=")) fail("var-positional argument cannot have default value");
                    args->kids.push_back(a);
                }
            } else {
                Node* a = param(s, annotations, false);
                a->flags = seen_star ? flag::kKeywordOnly : flag::kPositional;
                if (accept_op("=")) {
                    a->kids.push_back(expression());
                    if (!seen_star) need_default = true;
                } else if (need_default && !seen_star) {
                    fail("parameter without a default follows parameter with a default");
                }
                close(a, s);
                args->kids.push_back(a);
            }
            if (!accept_op(",")) break;
        }
        return close(args, start);
    }

    Node* param(std::size_t start, bool annotations, bool star_annotation) {
        const Token& name = expect_name();
        Node* a = make(Kind::Arg, start);
        a->value = std::string(name.text);
        if (annotations && accept_op(":")) {
            a->annotation = star_annotation && at_op("*") ? star_expression() : expression();
        }
        return close(a, start);
    }

    Node* if_stmt() {
        std::size_t start = i_;
        advance();  // 'if' or 'elif'
        Node* n = make(Kind::If, start);
        n->kids.push_back(named_expression());
        expect_op(":");
        n->body = block();
        if (at_kw("elif")) {
            n->orelse.push_back(if_stmt());
        } else if (accept_kw("else")) {
            expect_op(":");
            n->orelse = block();
        }
        return close(n, start);
    }

    Node* while_stmt() {
        std::size_t start = i_;
        advance();
        Node* n = make(Kind::While, start);
        n->kids.push_back(named_expression());
        expect_op(":");
        n->body = block();
        if (accept_kw("else")) {
            expect_op(":");
            n->orelse = block();
        }
        return close(n, start);
    }

    Node* for_stmt(std::size_t start) {
        bool is_async = i_ != start;
        expect_kw("for");
        Node* n = make(is_async ? Kind::AsyncFor : Kind::For, start);
        n->kids.push_back(target_list());
        expect_kw("in");
        n->kids.push_back(star_expressions());
        expect_op(":");
        n->body = block();
        if (accept_kw("else")) {
            expect_op(":");
            n->orelse = block();
        }
        return close(n, start);
    }

    // Targets of `for` loops and comprehensions, up to the `in` keyword.
    Node* target_list() {
        std::size_t start = i_;
        Node* first = star_target();
        if (!at_op(",")) return first;
        Node* tuple = make(Kind::Tuple, start);
        tuple->kids.push_back(first);
        while (accept_op(",")) {
            if (at_kw("in") || !starts_expression(true)) break;
            tuple->kids.push_back(star_target());
        }
        return close(tuple, start);
    }

    Node* star_target() {
        std::size_t start = i_;
        Node* t;
        if (accept_op("*")) {
            t = make(Kind::Starred, start);
            t->kids.push_back(bitwise_or());
            close(t, start);
        } else {
            t = bitwise_or();
        }
        check_target(t, true, "loop");
        return t;
    }

    Node* try_stmt() {
        std::size_t start = i_;
        advance();
        expect_op(":");
        Node* n = make(Kind::Try, start);
        n->body = block();
        bool star = false;
        bool plain = false;
        while (at_kw("except")) {
            std::size_t hs = i_;
            advance();
            Node* h = make(Kind::ExceptHandler, hs);
            if (accept_op("*")) {
                star = true;
                h->flags = 1;
            } else {
                plain = true;
            }
            if (!at_op(":")) {
                h->kids.push_back(expression());
                if (at_op(",")) {
                    // `except A, B:` without parentheses is rejected by the language
                    fail("multiple exception types must be parenthesized");
                }
                if (accept_kw("as")) h->value = std::string(expect_name().text);
            } else if (h->flags == 1) {
                fail("expected one or more exception types");
            }
            expect_op(":");
            h->body = block();
            n->kids.push_back(close(h, hs));
        }
        if (star && plain) fail("cannot have both 'except' and 'except*' on the same 'try'");
        if (star) n->kind = Kind::TryStar;
        if (accept_kw("else")) {
            if (n->kids.empty()) fail("expected 'except' or 'finally' block");
            expect_op(":");
            n->orelse = block();
        }
        if (accept_kw("finally")) {
            expect_op(":");
            n->finalbody = block();
        }
        if (n->kids.empty() && n->finalbody.empty()) fail("expected 'except' or 'finally' block");
        return close(n, start);
    }

    Node* with_stmt(std::size_t start) {
        bool is_async = i_ != start;
        expect_kw("with");
        Node* n = make(is_async ? Kind::AsyncWith : Kind::With, start);
        bool done = false;
        if (at_op("(")) {
            Mark m = mark();
            try {
                advance();
                std::vector<Node*> items;
                do {
                    if (at_op(")")) break;
                    items.push_back(with_item());
                } while (accept_op(","));
                expect_op(")");
                if (!at_op(":")) throw SyntaxError("", 0, 0);
                n->kids = std::move(items);
                done = true;
            } catch (const SyntaxError&) {
                reset(m);
            }
        }
        if (!done) {
            do {
                n->kids.push_back(with_item());
            } while (accept_op(","));
        }
        expect_op(":");
        n->body = block();
        return close(n, start);
    }

    Node* with_item() {
        std::size_t start = i_;
        Node* item = make(Kind::WithItem, start);
        item->kids.push_back(expression());
        if (accept_kw("as")) item->kids.push_back(star_target());
        return close(item, start);
    }

    // ---- match statement -------------------------------------------------

    Node* match_stmt() {
        std::size_t start = i_;
        Mark m = mark();
        Node* subject = nullptr;
        try {
            advance();
            if (!starts_expression(true)) throw SyntaxError("", 0, 0);
            std::size_t ss = i_;
            subject = star_named_expression();
            if (at_op(",")) {
                Node* t = make(Kind::Tuple, ss);
                t->kids.push_back(subject);
                while (accept_op(",")) {
                    if (!starts_expression(true)) break;
                    t->kids.push_back(star_named_expression());
                }
                subject = close(t, ss);
            }
            expect_op(":");
            expect(TokenKind::Newline, "newline");
            expect(TokenKind::Indent, "indent");
            if (!at_kw("case")) throw SyntaxError("", 0, 0);
        } catch (const SyntaxError&) {
            reset(m);
            return nullptr;  // `match` used as an ordinary name
        }
        Node* n = make(Kind::Match, start);
        n->kids.push_back(subject);
        while (at_kw("case")) {
            std::size_t cs = i_;
            advance();
            Node* c = make(Kind::MatchCase, cs);
            c->kids.push_back(patterns());
            if (accept_kw("if")) c->kids.push_back(named_expression());
            expect_op(":");
            c->body = block();
            n->kids.push_back(close(c, cs));
        }
        if (!at(TokenKind::Dedent) && !at(TokenKind::EndMarker)) fail("expected 'case'");
        if (at(TokenKind::Dedent)) advance();
        return close(n, start);
    }

    Node* patterns() {
        std::size_t start = i_;
        Node* first = maybe_star_pattern();
        if (!at_op(",")) {
            if (first->kind == Kind::MatchStar) fail("can't use starred pattern here");
            return first;
        }
        Node* seq = make(Kind::MatchSequence, start);
        seq->kids.push_back(first);
        while (accept_op(",")) {
            if (at_op(":") || at_kw("if")) break;
            seq->kids.push_back(maybe_star_pattern());
        }
        return close(seq, start);
    }

    Node* maybe_star_pattern() {
        std::size_t start = i_;
        if (accept_op("*")) {
            Node* n = make(Kind::MatchStar, start);
            const Token& name = expect_name();
            if (name.text != "_") n->value = std::string(name.text);
            return close(n, start);
        }
        return pattern();
    }

    Node* pattern() {
        DepthGuard guard(*this);
        std::size_t start = i_;
        Node* p = or_pattern();
        if (accept_kw("as")) {
            const Token& name = expect_name();
            if (name.text == "_") fail("cannot use '_' as a target");
            Node* as = make(Kind::MatchAs, start);
            as->value = std::string(name.text);
            as->kids.push_back(p);
            return close(as, start);
        }
        return p;
    }

    Node* or_pattern() {
        std::size_t start = i_;
        Node* first = closed_pattern();
        if (!at_op("|")) return first;
        Node* n = make(Kind::MatchOr, start);
        n->kids.push_back(first);
        while (accept_op("|")) n->kids.push_back(closed_pattern());
        return close(n, start);
    }

    Node* closed_pattern() {
        std::size_t start = i_;
        const Token& t = peek();
        if (t.kind == TokenKind::Number || t.kind == TokenKind::String || at_op("-")) {
            Node* n = make(Kind::MatchValue, start);
            n->kids.push_back(literal_value());
            return close(n, start);
        }
        if (at_kw("None") || at_kw("True") || at_kw("False")) {
            Node* n = make(Kind::MatchSingleton, start);
            n->value = std::string(advance().text);
            return close(n, start);
        }
        if (at_op("(") || at_op("[")) {
            bool paren = at_op("(");
            std::string_view closer = paren ? ")" : "]";
            advance();
            Node* seq = make(Kind::MatchSequence, start);
            bool trailing_comma = false;
            while (!at_op(closer)) {
                seq->kids.push_back(maybe_star_pattern());
                trailing_comma = false;
                if (!accept_op(",")) break;
                trailing_comma = true;
            }
            expect_op(closer);
            if (paren && seq->kids.size() == 1 && !trailing_comma && seq->kids[0]->kind != Kind::MatchStar) {
                return seq->kids[0];  // group pattern
            }
            return close(seq, start);
        }
        if (at_op("{")) return mapping_pattern();
        if (at_name()) {
            std::size_t ns = i_;
            Node* name = make(Kind::Name, ns);
            name->value = std::string(advance().text);
            Node* ref = name;
            while (accept_op(".")) {
                Node* attr = tree_.make(Kind::Attribute, ref->span);
                attr->kids.push_back(ref);
                attr->value = std::string(expect_name().text);
                ref = close(attr, ns);
            }
            if (accept_op("(")) return class_pattern(ref, start);
            if (ref != name) {
                Node* n = make(Kind::MatchValue, start);
                n->kids.push_back(ref);
                return n;
            }
            Node* as = make(Kind::MatchAs, start);
            if (name->value != "_") as->value = name->value;
            return as;
        }
        fail("invalid pattern");
    }

    Node* literal_value() {
        std::size_t start = i_;
        if (at(TokenKind::String)) return strings();
        Node* v;
        if (at_op("-")) {
            advance();
            if (!at(TokenKind::Number)) fail("invalid pattern");
            v = make(Kind::UnaryOp, start);
            v->text = "-";
            v->kids.push_back(number());
            close(v, start);
        } else {
            v = number();
        }
        if (at_op("+") || at_op("-")) {
            Node* b = make(Kind::BinOp, start);
            b->text = std::string(advance().text);
            if (!at(TokenKind::Number)) fail("invalid pattern");
            b->kids.push_back(v);
            b->kids.push_back(number());
            v = close(b, start);
        }
        return v;
    }

    Node* number() {
        std::size_t start = i_;
        Node* n = make(Kind::Constant, start);
        n->flags = flag::kNumber;
        n->value = std::string(advance().text);
        return n;
    }

    Node* mapping_pattern() {
        std::size_t start = i_;
        expect_op("{");
        Node* n = make(Kind::MatchMapping, start);
        while (!at_op("}")) {
            if (accept_op("**")) {
                n->value = std::string(expect_name().text);
                accept_op(",");
                break;
            }
            Node* key;
            if (at_kw("None") || at_kw("True") || at_kw("False")) {
                std::size_t ks = i_;
                key = make(Kind::Constant, ks);
                key->value = std::string(advance().text);
                key->flags = key->value == "None" ? flag::kNone : key->value == "True" ? flag::kTrue : flag::kFalse;
            } else if (at_name()) {
                key = atom_name_chain();
                if (key->kind != Kind::Attribute) fail("mapping pattern keys may only match literals and attribute lookups");
            } else {
                key = literal_value();
            }
            expect_op(":");
            n->kids.push_back(key);
            n->kids.push_back(pattern());
            if (!accept_op(",")) break;
        }
        expect_op("}");
        return close(n, start);
    }

    Node* atom_name_chain() {
        std::size_t ns = i_;
        Node* ref = make(Kind::Name, ns);
        ref->value = std::string(expect_name().text);
        while (accept_op(".")) {
            Node* attr = tree_.make(Kind::Attribute, ref->span);
            attr->kids.push_back(ref);
            attr->value = std::string(expect_name().text);
            ref = close(attr, ns);
        }
        return ref;
    }

    Node* class_pattern(Node* cls, std::size_t start) {
        Node* n = make(Kind::MatchClass, start);
        n->kids.push_back(cls);
        bool keywords = false;
        while (!at_op(")")) {
            if (at_name() && at_op("=", 1)) {
                std::size_t ks = i_;
                Node* kw = make(Kind::Keyword, ks);
                kw->value = std::string(advance().text);
                advance();
                kw->kids.push_back(pattern());
                n->kids.push_back(close(kw, ks));
                keywords = true;
            } else {
                if (keywords) fail("positional patterns follow keyword patterns");
                n->kids.push_back(pattern());
            }
            if (!accept_op(",")) break;
        }
        expect_op(")");
        return close(n, start);
    }

    // ---- expressions -----------------------------------------------------

    Node* star_expressions() {
        std::size_t start = i_;
        Node* first = star_expression();
        if (!at_op(",")) return first;
        Node* tuple = make(Kind::Tuple, start);
        tuple->kids.push_back(first);
        while (accept_op(",")) {
            if (!starts_expression(true)) break;
            tuple->kids.push_back(star_expression());
        }
        return close(tuple, start);
    }

    Node* star_expression() {
        std::size_t start = i_;
        if (accept_op("*")) {
            Node* n = make(Kind::Starred, start);
            n->kids.push_back(bitwise_or());
            return close(n, start);
        }
        return expression();
    }

    Node* star_named_expression() {
        std::size_t start = i_;
        if (accept_op("*")) {
            Node* n = make(Kind::Starred, start);
            n->kids.push_back(bitwise_or());
            return close(n, start);
        }
        return named_expression();
    }

    Node* named_expression() {
        std::size_t start = i_;
        if (at_name() && at_op(":=", 1)) {
            Node* target = make(Kind::Name, start);
            target->value = std::string(advance().text);
            advance();
            Node* n = make(Kind::NamedExpr, start);
            n->kids.push_back(target);
            n->kids.push_back(expression());
            return close(n, start);
        }
        Node* e = expression();
        if (at_op(":=")) fail("cannot use assignment expressions with " + std::string(kind_name(e->kind)));
        return e;
    }

    Node* expression() {
        DepthGuard guard(*this);
        if (at_kw("lambda")) return lambda();
        std::size_t start = i_;
        Node* body = disjunction();
        if (!at_kw("if")) return body;
        advance();
        Node* n = make(Kind::IfExp, start);
        n->kids.push_back(body);
        n->kids.push_back(disjunction());
        expect_kw("else");
        n->kids.push_back(expression());
        return close(n, start);
    }

    Node* lambda() {
        std::size_t start = i_;
        advance();
        Node* n = make(Kind::Lambda, start);
        n->kids.push_back(parameters(":", false));
        expect_op(":");
        n->kids.push_back(expression());
        return close(n, start);
    }

    Node* yield_expr() {
        std::size_t start = i_;
        expect_kw("yield");
        if (accept_kw("from")) {
            Node* n = make(Kind::YieldFrom, start);
            n->kids.push_back(expression());
            return close(n, start);
        }
        Node* n = make(Kind::Yield, start);
        if (starts_expression(true)) n->kids.push_back(star_expressions());
        return close(n, start);
    }

    Node* bool_chain(std::string_view op, Node* (Parser::*operand)()) {
        std::size_t start = i_;
        Node* first = (this->*operand)();
        if (!at_kw(op)) return first;
        Node* n = make(Kind::BoolOp, start);
        n->text = std::string(op);
        n->kids.push_back(first);
        while (accept_kw(op)) n->kids.push_back((this->*operand)());
        return close(n, start);
    }

    Node* disjunction() { return bool_chain("or", &Parser::conjunction); }
    Node* conjunction() { return bool_chain("and", &Parser::inversion); }

    Node* inversion() {
        if (!at_kw("not")) return comparison();
        DepthGuard guard(*this);
        std::size_t start = i_;
        advance();
        Node* n = make(Kind::UnaryOp, start);
        n->text = "not";
        n->kids.push_back(inversion());
        return close(n, start);
    }

    std::string comparison_operator() {
        static constexpr std::array<std::string_view, 6> kOps = {"==", "!=", "<", "<=", ">", ">="};
        for (std::string_view op : kOps) {
            if (at_op(op)) return std::string(op);
        }
        if (at_kw("in")) return "in";
        if (at_kw("not") && at_kw("in", 1)) return "not in";
        if (at_kw("is")) return at_kw("not", 1) ? "is not" : "is";
        return {};
    }

    Node* comparison() {
        std::size_t start = i_;
        Node* left = bitwise_or();
        std::string op = comparison_operator();
        if (op.empty()) return left;
        Node* n = make(Kind::Compare, start);
        n->kids.push_back(left);
        while (!op.empty()) {
            advance();
            if (op == "not in" || op == "is not") advance();
            if (!n->text.empty()) n->text += ',';
            n->text += op;
            n->kids.push_back(bitwise_or());
            op = comparison_operator();
        }
        return close(n, start);
    }

    Node* binary(std::initializer_list<std::string_view> ops, Node* (Parser::*operand)()) {
        std::size_t start = i_;
        Node* left = (this->*operand)();
        while (true) {
            std::string_view hit;
            for (std::string_view op : ops) {
                if (at_op(op)) {
                    hit = op;
                    break;
                }
            }
            if (hit.empty()) return left;
            advance();
            Node* n = make(Kind::BinOp, start);
            n->text = std::string(hit);
            n->kids.push_back(left);
            n->kids.push_back((this->*operand)());
            left = close(n, start);
        }
    }

    Node* bitwise_or() { return binary({"|"}, &Parser::bitwise_xor); }
    Node* bitwise_xor() { return binary({"^"}, &Parser::bitwise_and); }
    Node* bitwise_and() { return binary({"&"}, &Parser::shift_expr); }
    Node* shift_expr() { return binary({"<<", ">>"}, &Parser::sum); }
    Node* sum() { return binary({"+", "-"}, &Parser::term); }
    Node* term() { return binary({"*", "/", "//", "%", "@"}, &Parser::factor); }

    Node* factor() {
        if (at_op("+") || at_op("-") || at_op("~")) {
            DepthGuard guard(*this);
            std::size_t start = i_;
            Node* n = make(Kind::UnaryOp, start);
            n->text = std::string(advance().text);
            n->kids.push_back(factor());
            return close(n, start);
        }
        return power();
    }

    Node* power() {
        std::size_t start = i_;
        Node* base = await_primary();
        if (!at_op("**")) return base;
        advance();
        Node* n = make(Kind::BinOp, start);
        n->text = "**";
        n->kids.push_back(base);
        n->kids.push_back(factor());
        return close(n, start);
    }

    Node* await_primary() {
        if (!at_kw("await")) return primary();
        std::size_t start = i_;
        advance();
        Node* n = make(Kind::Await, start);
        n->kids.push_back(primary());
        return close(n, start);
    }

    Node* primary() {
        DepthGuard guard(*this);
        std::size_t start = i_;
        Node* e = atom();
        while (true) {
            if (accept_op(".")) {
                Node* n = make(Kind::Attribute, start);
                n->kids.push_back(e);
                n->value = std::string(expect_name().text);
                e = close(n, start);
            } else if (accept_op("(")) {
                Node* n = make(Kind::Call, start);
                n->kids.push_back(e);
                call_arguments(n->kids);
                expect_op(")");
                e = close(n, start);
            } else if (accept_op("[")) {
                Node* n = make(Kind::Subscript, start);
                n->kids.push_back(e);
                n->kids.push_back(slices());
                expect_op("]");
                e = close(n, start);
            } else {
                return e;
            }
        }
    }

    // Parses call arguments (after '(') into `out`: positional ones first,
    // then Keyword nodes, each group in source order.
    void call_arguments(std::vector<Node*>& out) {
        std::vector<Node*> positional;
        std::vector<Node*> keywords;
        bool seen_kwunpack = false;
        while (!at_op(")")) {
            std::size_t start = i_;
            if (accept_op("*")) {
                if (seen_kwunpack) fail("iterable argument unpacking follows keyword argument unpacking");
                Node* s = make(Kind::Starred, start);
                s->kids.push_back(expression());
                positional.push_back(close(s, start));
            } else if (accept_op("**")) {
                Node* k = make(Kind::Keyword, start);
                k->kids.push_back(expression());
                keywords.push_back(close(k, start));
                seen_kwunpack = true;
            } else if (at_name() && at_op("=", 1)) {
                Node* k = make(Kind::Keyword, start);
                k->value = std::string(advance().text);
                advance();
                k->kids.push_back(expression());
                keywords.push_back(close(k, start));
            } else {
                Node* e = named_expression();
                if (at_kw("for") || (at_kw("async") && at_kw("for", 1))) {
                    Node* gen = make(Kind::GeneratorExp, start);
                    gen->kids.push_back(e);
                    comprehension_clauses(gen->kids);
                    close(gen, start);
                    if (!positional.empty() || !keywords.empty() || !at_op(")")) {
                        fail("Generator expression must be parenthesized");
                    }
                    e = gen;
                } else if (!keywords.empty()) {
                    if (seen_kwunpack) fail("positional argument follows keyword argument unpacking");
                    fail("positional argument follows keyword argument");
                }
                positional.push_back(e);
            }
            if (!accept_op(",")) break;
        }
        out.insert(out.end(), positional.begin(), positional.end());
        out.insert(out.end(), keywords.begin(), keywords.end());
    }

    Node* slices() {
        std::size_t start = i_;
        Node* first = slice_item();
        if (!at_op(",")) return first;
        Node* tuple = make(Kind::Tuple, start);
        tuple->kids.push_back(first);
        while (accept_op(",")) {
            if (at_op("]")) break;
            tuple->kids.push_back(slice_item());
        }
        return close(tuple, start);
    }

    Node* slice_item() {
        std::size_t start = i_;
        if (at_op("*")) return star_expression();
        Node* lower = nullptr;
        if (!at_op(":")) {
            lower = named_expression();
            if (!at_op(":")) return lower;
        }
        advance();
        Node* n = make(Kind::Slice, start);
        if (lower != nullptr) {
            n->kids.push_back(lower);
            n->flags |= 1;
        }
        if (!at_op(":") && !at_op(",") && !at_op("]")) {
            n->kids.push_back(expression());
            n->flags |= 2;
        }
        if (accept_op(":") && !at_op(",") && !at_op("]")) {
            n->kids.push_back(expression());
            n->flags |= 4;
        }
        return close(n, start);
    }

    void comprehension_clauses(std::vector<Node*>& out) {
        while (at_kw("for") || (at_kw("async") && at_kw("for", 1))) {
            std::size_t start = i_;
            Node* c = make(Kind::Comprehension, start);
            if (accept_kw("async")) c->flags = flag::kAsync;
            expect_kw("for");
            c->kids.push_back(target_list());
            expect_kw("in");
            c->kids.push_back(disjunction());
            while (accept_kw("if")) c->kids.push_back(disjunction());
            out.push_back(close(c, start));
        }
    }

    bool at_comprehension() const { return at_kw("for") || (at_kw("async") && at_kw("for", 1)); }

    Node* atom() {
        std::size_t start = i_;
        const Token& t = peek();
        switch (t.kind) {
            case TokenKind::Name: {
                if (t.text == "None" || t.text == "True" || t.text == "False") {
                    Node* n = make(Kind::Constant, start);
                    n->value = std::string(t.text);
                    n->flags = t.text == "None" ? flag::kNone : t.text == "True" ? flag::kTrue : flag::kFalse;
                    advance();
                    return n;
                }
                if (is_keyword(t.text)) fail("invalid syntax");
                Node* n = make(Kind::Name, start);
                n->value = std::string(t.text);
                advance();
                return n;
            }
            case TokenKind::Number:
                return number();
            case TokenKind::String:
                return strings();
            case TokenKind::Op:
                if (t.text == "(") return paren_atom();
                if (t.text == "[") return list_atom();
                if (t.text == "{") return brace_atom();
                if (t.text == "...") {
                    Node* n = make(Kind::Constant, start);
                    n->value = "...";
                    n->flags = flag::kEllipsis;
                    advance();
                    return n;
                }
                break;
            default:
                break;
        }
        fail("invalid syntax");
    }

    Node* paren_atom() {
        std::size_t start = i_;
        advance();
        if (accept_op(")")) return make(Kind::Tuple, start);
        if (at_kw("yield")) {
            Node* y = yield_expr();
            expect_op(")");
            return y;
        }
        Node* first = star_named_expression();
        if (at_comprehension()) {
            if (first->kind == Kind::Starred) fail("iterable unpacking cannot be used in comprehension");
            Node* gen = make(Kind::GeneratorExp, start);
            gen->kids.push_back(first);
            comprehension_clauses(gen->kids);
            expect_op(")");
            return close(gen, start);
        }
        if (at_op(",")) {
            Node* tuple = make(Kind::Tuple, start);
            tuple->kids.push_back(first);
            while (accept_op(",")) {
                if (at_op(")")) break;
                tuple->kids.push_back(star_named_expression());
            }
            expect_op(")");
            return close(tuple, start);
        }
        expect_op(")");
        if (first->kind == Kind::Starred) fail("cannot use starred expression here");
        return first;
    }

    Node* list_atom() {
        std::size_t start = i_;
        advance();
        if (accept_op("]")) return make(Kind::List, start);
        Node* first = star_named_expression();
        if (at_comprehension()) {
            if (first->kind == Kind::Starred) fail("iterable unpacking cannot be used in comprehension");
            Node* comp = make(Kind::ListComp, start);
            comp->kids.push_back(first);
            comprehension_clauses(comp->kids);
            expect_op("]");
            return close(comp, start);
        }
        Node* list = make(Kind::List, start);
        list->kids.push_back(first);
        while (accept_op(",")) {
            if (at_op("]")) break;
            list->kids.push_back(star_named_expression());
        }
        expect_op("]");
        return close(list, start);
    }

    Node* brace_atom() {
        std::size_t start = i_;
        advance();
        if (accept_op("}")) return make(Kind::Dict, start);
        if (at_op("**")) return dict_rest(start, nullptr, nullptr);
        Node* first = star_named_expression();
        if (accept_op(":")) {
            if (first->kind == Kind::Starred) fail("cannot use a starred expression in a dictionary key");
            Node* value = expression();
            if (at_comprehension()) {
                Node* comp = make(Kind::DictComp, start);
                comp->kids.push_back(first);
                comp->kids.push_back(value);
                comprehension_clauses(comp->kids);
                expect_op("}");
                return close(comp, start);
            }
            return dict_rest(start, first, value);
        }
        if (at_comprehension()) {
            if (first->kind == Kind::Starred) fail("iterable unpacking cannot be used in comprehension");
            Node* comp = make(Kind::SetComp, start);
            comp->kids.push_back(first);
            comprehension_clauses(comp->kids);
            expect_op("}");
            return close(comp, start);
        }
        Node* set = make(Kind::Set, start);
        set->kids.push_back(first);
        while (accept_op(",")) {
            if (at_op("}")) break;
            set->kids.push_back(star_named_expression());
        }
        expect_op("}");
        return close(set, start);
    }

    // Continues a dict display after its first entry (if any was parsed).
    Node* dict_rest(std::size_t start, Node* key, Node* value) {
        Node* dict = make(Kind::Dict, start);
        bool need_entry = key == nullptr;
        if (key != nullptr) {
            dict->kids.push_back(key);
            dict->kids.push_back(value);
        }
        while (need_entry || accept_op(",")) {
            need_entry = false;
            if (at_op("}")) break;
            if (accept_op("**")) {
                dict->kids.push_back(nullptr);
                dict->kids.push_back(bitwise_or());
                continue;
            }
            Node* k = expression();
            expect_op(":");
            dict->kids.push_back(k);
            dict->kids.push_back(expression());
        }
        expect_op("}");
        return close(dict, start);
    }

    // ---- string literals -------------------------------------------------

    Node* strings() {
        std::size_t start = i_;
        bool formatted = false;
        bool bytes = false;
        bool text = false;
        std::size_t end = i_;
        while (toks_[end].kind == TokenKind::String) {
            StringPrefix p = string_prefix(toks_[end].text);
            formatted = formatted || p.formatted;
            (p.bytes ? bytes : text) = true;
            ++end;
        }
        if (bytes && text) fail("cannot mix bytes and nonbytes literals");

        Node* node = make(formatted ? Kind::JoinedStr : Kind::Constant, start);
        std::string pending;
        for (std::size_t k = start; k < end; ++k) {
            const Token& tok = toks_[k];
            StringPrefix p = string_prefix(tok.text);
            std::size_t q = tok.text.size() - p.length >= 6 &&
                                    tok.text[p.length] == tok.text[p.length + 1] &&
                                    tok.text[p.length] == tok.text[p.length + 2]
                                ? 3
                                : 1;
            std::size_t body_begin = tok.span.begin + p.length + q;
            std::size_t body_end = tok.span.end - q;
            if (p.formatted) {
                fstring_body(tok, body_begin, body_end, p.raw, false, node, pending);
            } else {
                pending += decode_string_body(src_.substr(body_begin, body_end - body_begin), p.raw, p.bytes);
            }
            advance();
        }
        if (formatted) {
            flush_literal(node, pending, toks_[start].span);
        } else {
            node->value = std::move(pending);
            node->flags = bytes ? flag::kBytes : flag::kStr;
        }
        return close(node, start);
    }

    void flush_literal(Node* joined, std::string& pending, const Span& span) {
        if (pending.empty()) return;
        Node* c = tree_.make(Kind::Constant, span);
        c->flags = flag::kStr;
        c->value = std::move(pending);
        pending.clear();
        joined->kids.push_back(c);
    }

    // Walks an f-string body (or a format spec when `spec`), appending parts
    // to `joined`. Returns where it stopped: `end`, or the format field's closing '}'.
    std::size_t fstring_body(const Token& tok, std::size_t pos, std::size_t end, bool raw, bool spec, Node* joined,
                             std::string& pending) {
        std::size_t chunk = pos;
        auto take_chunk = [&](std::size_t upto) {
            if (upto > chunk) pending += decode_string_body(src_.substr(chunk, upto - chunk), raw, false);
        };
        while (pos < end) {
            char c = src_[pos];
            if (c == '\\' && !raw) {
                if (pos + 2 < end && src_[pos + 1] == 'N' && src_[pos + 2] == '{') {
                    std::size_t close_brace = src_.find('}', pos + 3);
                    pos = close_brace == std::string_view::npos ? end : close_brace + 1;
                } else if (pos + 1 < end && (src_[pos + 1] == '{' || src_[pos + 1] == '}')) {
                    pos += 1;
                } else {
                    pos += 2;
                }
                continue;
            }
            if (c == '{') {
                take_chunk(pos);
                if (!spec && pos + 1 < end && src_[pos + 1] == '{') {
                    pending += '{';
                    pos += 2;
                    chunk = pos;
                    continue;
                }
                flush_literal(joined, pending, tok.span);
                pos = replacement_field(tok, pos + 1, end, raw, joined);
                chunk = pos;
                continue;
            }
            if (c == '}') {
                take_chunk(pos);
                if (spec) return pos;
                pending += '}';
                pos += 2;
                chunk = pos;
                continue;
            }
            ++pos;
        }
        take_chunk(std::min(pos, end));
        return end;
    }

    // `pos` is just after '{'. Returns the position after the closing '}'.
    std::size_t replacement_field(const Token& tok, std::size_t pos, std::size_t end, bool raw, Node* joined) {
        std::size_t expr_begin = pos;
        std::size_t stop = scan_field_expression(src_, pos, end);
        std::size_t expr_end = stop;

        // self-documenting `{expr=}`
        std::size_t trimmed = expr_end;
        while (trimmed > expr_begin && (src_[trimmed - 1] == ' ' || src_[trimmed - 1] == '\t' ||
                                        src_[trimmed - 1] == '\n' || src_[trimmed - 1] == '\r')) {
            --trimmed;
        }
        bool debug = false;
        if (trimmed > expr_begin && src_[trimmed - 1] == '=') {
            char before = trimmed - 1 > expr_begin ? src_[trimmed - 2] : '\0';
            if (before != '=' && before != '!' && before != '<' && before != '>') {
                debug = true;
                expr_end = trimmed - 1;
            }
        }

        int line = tok.span.line;
        int col = tok.span.col + static_cast<int>(expr_begin - tok.span.begin);
        for (std::size_t p = tok.span.begin; p < expr_begin; ++p) {
            if (src_[p] == '\n') {
                ++line;
                col = static_cast<int>(expr_begin - p - 1);
            }
        }
        TokenizeRange range{expr_begin, expr_end, line, col, true};
        Parser sub(src_, tokenize(src_, range), tree_, depth_);
        Node* expr = sub.field_expression();

        if (debug) {
            Node* text = tree_.make(Kind::Constant, tok.span);
            text->flags = flag::kStr;
            text->value = std::string(src_.substr(expr_begin, stop - expr_begin));
            joined->kids.push_back(text);
        }

        Node* fv = tree_.make(Kind::FormattedValue, expr->span);
        fv->kids.push_back(expr);
        pos = stop;
        if (src_[pos] == '!') {
            char conv = pos + 1 < end ? src_[pos + 1] : '\0';
            if (conv != 's' && conv != 'r' && conv != 'a') {
                throw SyntaxError("f-string: invalid conversion character", tok.span.line, tok.span.col);
            }
            fv->text = std::string(1, conv);
            pos += 2;
        } else if (debug) {
            fv->text = "r";
        }
        if (pos < end && src_[pos] == ':') {
            Node* spec = tree_.make(Kind::JoinedStr, tok.span);
            std::string spec_text;
            pos = fstring_body(tok, pos + 1, end, raw, true, spec, spec_text);
            flush_literal(spec, spec_text, tok.span);
            fv->kids.push_back(spec);
            if (debug && fv->text == "r") fv->text.clear();
        }
        if (pos >= end || src_[pos] != '}') {
            throw SyntaxError("f-string: expecting '}'", tok.span.line, tok.span.col);
        }
        joined->kids.push_back(fv);
        return pos + 1;
    }

    std::string_view src_;
    std::vector<Token> toks_;
    Tree& tree_;
    std::size_t i_ = 0;
    std::size_t last_ = 0;
    int depth_ = 0;
};

}  // namespace

std::string decode_string_body(std::string_view body, bool raw, bool bytes) {
    if (raw) return std::string(body);
    std::string out;
    out.reserve(body.size());
    for (std::size_t i = 0; i < body.size(); ++i) {
        char c = body[i];
        if (c != '\\' || i + 1 >= body.size()) {
            out.push_back(c);
            continue;
        }
        char e = body[++i];
        switch (e) {
            case '\n': break;
            case '\r':
                if (i + 1 < body.size() && body[i + 1] == '\n') ++i;
                break;
            case '\\': out.push_back('\\'); break;
            case '\'': out.push_back('\''); break;
            case '"': out.push_back('"'); break;
            case 'a': out.push_back('\a'); break;
            case 'b': out.push_back('\b'); break;
            case 'f': out.push_back('\f'); break;
            case 'n': out.push_back('\n'); break;
            case 'r': out.push_back('\r'); break;
            case 't': out.push_back('\t'); break;
            case 'v': out.push_back('\v'); break;
            case '0': case '1': case '2': case '3': case '4': case '5': case '6': case '7': {
                unsigned value = 0;
                std::size_t n = 0;
                while (n < 3 && i < body.size() && body[i] >= '0' && body[i] <= '7') {
                    value = value * 8 + static_cast<unsigned>(body[i] - '0');
                    ++i;
                    ++n;
                }
                --i;
                if (bytes) out.push_back(static_cast<char>(value & 0xFF));
                else append_utf8(out, value);
                break;
            }
            case 'x': case 'u': case 'U': {
                std::size_t digits = e == 'x' ? 2 : e == 'u' ? 4 : 8;
                if ((e != 'x' && bytes) || i + digits >= body.size()) {
                    out.push_back('\\');
                    out.push_back(e);
                    break;
                }
                unsigned long value = 0;
                bool ok = true;
                for (std::size_t k = 1; k <= digits; ++k) {
                    int h = hex_value(body[i + k]);
                    if (h < 0) {
                        ok = false;
                        break;
                    }
                    value = value * 16 + static_cast<unsigned long>(h);
                }
                if (!ok) {
                    out.push_back('\\');
                    out.push_back(e);
                    break;
                }
                i += digits;
                if (bytes) out.push_back(static_cast<char>(value));
                else append_utf8(out, value);
                break;
            }
            default:
                // unknown escapes (and \N{...}) are kept verbatim
                out.push_back('\\');
                out.push_back(e);
                break;
        }
    }
    return out;
}

Tree parse_module(std::string_view source) {
    Tree tree;
    Parser parser(source, tokenize(source), tree);
    tree.set_root(parser.file());
    return tree;
}

Node* parse_expression(Tree& tree, std::string_view source) {
    TokenizeRange range;
    range.inside_brackets = true;
    Parser parser(source, tokenize(source, range), tree);
    return parser.lone_expression();
}

}  // namespace pkgscope::python
