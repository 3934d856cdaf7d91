#include "pkgscope/python/tokenizer.hpp"

#include <algorithm>
#include <array>

namespace pkgscope::python {

bool is_identifier_start(unsigned char c) noexcept {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c >= 0x80;
}

bool is_identifier_char(unsigned char c) noexcept {
    return is_identifier_start(c) || (c >= '0' && c <= '9');
}

StringPrefix string_prefix(std::string_view literal) {
    StringPrefix prefix;
    std::size_t i = 0;
    while (i < literal.size() && literal[i] != '\'' && literal[i] != '"') {
        switch (literal[i]) {
            case 'r': case 'R': prefix.raw = true; break;
            case 'b': case 'B': prefix.bytes = true; break;
            case 'f': case 'F': prefix.formatted = true; break;
            default: break;  // 'u'
        }
        ++i;
    }
    prefix.length = i;
    return prefix;
}

namespace {

// Tracks line/column while scanning so spans can be reported.
struct Cursor {
    std::string_view src;
    std::size_t pos;
    std::size_t limit;
    int line;
    int line_start;  // byte offset of the current line start, may be negative for sub-ranges

    bool done() const { return pos >= limit; }
    char peek(std::size_t ahead = 0) const {
        return pos + ahead < limit ? src[pos + ahead] : '\0';
    }
    int col() const { return static_cast<int>(pos) - line_start; }

    void advance_to(std::size_t target) {
        while (pos < target) {
            if (src[pos] == '\n') {
                ++line;
                line_start = static_cast<int>(pos) + 1;
            }
            ++pos;
        }
    }
};

bool is_prefix_char(char c) {
    switch (c) {
        case 'r': case 'R': case 'b': case 'B': case 'u': case 'U': case 'f': case 'F':
            return true;
        default:
            return false;
    }
}

// Recognises a legal string prefix (case-insensitive): r u b f br rb fr rf.
std::size_t string_prefix_length(std::string_view src, std::size_t pos, std::size_t limit) {
    std::size_t n = 0;
    while (pos + n < limit && n < 2 && is_prefix_char(src[pos + n])) ++n;
    if (pos + n >= limit || (src[pos + n] != '\'' && src[pos + n] != '"')) return std::string_view::npos;
    std::string lower;
    for (std::size_t i = 0; i < n; ++i) lower.push_back(static_cast<char>(src[pos + i] | 0x20));
    static constexpr std::array<std::string_view, 9> kLegal = {"", "r", "u", "b", "f", "br", "rb", "fr", "rf"};
    if (std::find(kLegal.begin(), kLegal.end(), lower) == kLegal.end()) return std::string_view::npos;
    return n;
}

[[noreturn]] void fail_at(std::string_view src, std::size_t pos, const std::string& message) {
    int line = 1 + static_cast<int>(std::count(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
    std::size_t nl = src.rfind('\n', pos == 0 ? 0 : pos - 1);
    int col = static_cast<int>(nl == std::string_view::npos || pos == 0 ? pos : pos - nl - 1);
    throw SyntaxError(message, line, col);
}

std::size_t scan_replacement_field(std::string_view src, std::size_t pos, std::size_t limit, bool triple);

// Scans the literal part of an f-string (or a format spec when `spec` is set)
// starting at `pos`. Returns the position of the terminating quote run (or of
// the closing '}' for a spec).
std::size_t scan_fstring_body(std::string_view src, std::size_t pos, std::size_t limit,
                              char quote, bool triple, bool raw, bool spec) {
    while (pos < limit) {
        char c = src[pos];
        if (!spec) {
            if (c == quote) {
                if (!triple) return pos;
                if (pos + 2 < limit && src[pos + 1] == quote && src[pos + 2] == quote) return pos;
            }
        } else if (c == '}') {
            return pos;
        } else if (c == quote && !triple) {
            fail_at(src, pos, "f-string: expecting '}'");
        }
        if (c == '\\' && !raw) {
            if (pos + 2 < limit && src[pos + 1] == 'N' && src[pos + 2] == '{') {
                std::size_t close = src.find('}', pos + 3);
                pos = close == std::string_view::npos ? limit : close + 1;
            } else if (pos + 1 < limit && (src[pos + 1] == '{' || src[pos + 1] == '}')) {
                pos += 1;
            } else {
                pos += 2;
            }
            continue;
        }
        if (c == '\\' && raw) {
            // a raw backslash still cannot escape past the closing quote
            if (pos + 1 < limit && (src[pos + 1] == quote || src[pos + 1] == '\\')) {
                pos += 2;
                continue;
            }
        }
        if (c == '\n' && !triple) fail_at(src, pos, "unterminated f-string literal");
        if (c == '{') {
            if (!spec && pos + 1 < limit && src[pos + 1] == '{') {
                pos += 2;
                continue;
            }
            pos = scan_replacement_field(src, pos + 1, limit, triple);
            continue;
        }
        if (c == '}') {
            if (pos + 1 < limit && src[pos + 1] == '}') {
                pos += 2;
                continue;
            }
            fail_at(src, pos, "f-string: single '}' is not allowed");
        }
        ++pos;
    }
    fail_at(src, limit, "unterminated f-string literal");
}

// `pos` is just after '{'. Returns the position after the matching '}'.
std::size_t scan_replacement_field(std::string_view src, std::size_t pos, std::size_t limit, bool triple) {
    pos = scan_field_expression(src, pos, limit);
    if (src[pos] == '!') {
        pos += 2;  // conversion: !r !s !a
        if (pos >= limit) fail_at(src, limit, "f-string: expecting '}'");
    }
    if (src[pos] == ':') {
        std::size_t end = scan_fstring_body(src, pos + 1, limit, '\0', triple, false, true);
        return end + 1;
    }
    if (src[pos] != '}') fail_at(src, pos, "f-string: expecting '}'");
    return pos + 1;
}

}  // namespace

std::size_t scan_string_literal(std::string_view src, std::size_t pos, std::size_t limit) {
    std::size_t start = pos;
    std::size_t plen = string_prefix_length(src, pos, limit);
    if (plen == std::string_view::npos) fail_at(src, pos, "invalid string prefix");
    StringPrefix prefix = string_prefix(src.substr(pos, plen + 1));
    pos += plen;
    char quote = src[pos];
    bool triple = pos + 2 < limit && src[pos + 1] == quote && src[pos + 2] == quote;
    pos += triple ? 3 : 1;
    if (prefix.formatted) {
        pos = scan_fstring_body(src, pos, limit, quote, triple, prefix.raw, false);
        return pos + (triple ? 3 : 1);
    }
    while (pos < limit) {
        char c = src[pos];
        if (c == '\\') {
            pos += 2;
            continue;
        }
        if (c == quote) {
            if (!triple) return pos + 1;
            if (pos + 2 < limit && src[pos + 1] == quote && src[pos + 2] == quote) return pos + 3;
        }
        if (c == '\n' && !triple) fail_at(src, start, "unterminated string literal");
        ++pos;
    }
    fail_at(src, start, triple ? "unterminated triple-quoted string literal" : "unterminated string literal");
}

std::size_t scan_field_expression(std::string_view src, std::size_t pos, std::size_t limit) {
    int depth = 0;
    while (pos < limit) {
        char c = src[pos];
        if (c == '\'' || c == '"' ||
            (is_prefix_char(c) && string_prefix_length(src, pos, limit) != std::string_view::npos &&
             (pos == 0 || !is_identifier_char(static_cast<unsigned char>(src[pos - 1]))))) {
            pos = scan_string_literal(src, pos, limit);
            continue;
        }
        if (is_identifier_char(static_cast<unsigned char>(c))) {
            while (pos < limit && is_identifier_char(static_cast<unsigned char>(src[pos]))) ++pos;
            continue;
        }
        if (c == '#') {
            while (pos < limit && src[pos] != '\n') ++pos;
            continue;
        }
        if (c == '(' || c == '[' || c == '{') {
            ++depth;
        } else if (c == ')' || c == ']') {
            --depth;
        } else if (c == '}') {
            if (depth == 0) return pos;
            --depth;
        } else if (depth == 0 && ((c == '!' && pos + 1 < limit && src[pos + 1] != '=') || c == ':')) {
            return pos;
        }
        ++pos;
    }
    fail_at(src, limit, "f-string: expecting '}'");
}

namespace {

constexpr std::array<std::string_view, 5> kOps3 = {"**=", "//=", ">>=", "<<=", "..."};
constexpr std::array<std::string_view, 19> kOps2 = {"->", ":=", "**", "//", ">>", "<<", "<=", ">=", "==", "!=",
                                                    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@="};
constexpr std::string_view kOps1 = "+-*/%@&|^~<>()[]{},:;.=";

std::size_t op_length(std::string_view src, std::size_t pos, std::size_t limit) {
    auto matches = [&](std::string_view op) {
        return pos + op.size() <= limit && src.substr(pos, op.size()) == op;
    };
    for (auto op : kOps3) {
        if (matches(op)) return 3;
    }
    for (auto op : kOps2) {
        if (matches(op)) return 2;
    }
    if (pos < limit && kOps1.find(src[pos]) != std::string_view::npos) return 1;
    return 0;
}

std::size_t scan_number(std::string_view src, std::size_t pos, std::size_t limit) {
    auto digit_run = [&](auto pred) {
        while (pos < limit && (pred(src[pos]) || (src[pos] == '_' && pos + 1 < limit && pred(src[pos + 1])))) ++pos;
    };
    auto dec = [](char c) { return c >= '0' && c <= '9'; };
    if (src[pos] == '0' && pos + 1 < limit) {
        char x = static_cast<char>(src[pos + 1] | 0x20);
        auto hex = [](char c) { return (c >= '0' && c <= '9') || ((c | 0x20) >= 'a' && (c | 0x20) <= 'f'); };
        auto oct = [](char c) { return c >= '0' && c <= '7'; };
        auto bin = [](char c) { return c == '0' || c == '1'; };
        if (x == 'x' || x == 'o' || x == 'b') {
            pos += 2;
            if (pos < limit && src[pos] == '_') ++pos;
            std::size_t before = pos;
            if (x == 'x') digit_run(hex);
            else if (x == 'o') digit_run(oct);
            else digit_run(bin);
            if (pos == before) fail_at(src, pos, "invalid number literal");
            return pos;
        }
    }
    digit_run(dec);
    if (pos < limit && src[pos] == '.') {
        ++pos;
        digit_run(dec);
    }
    if (pos < limit && (src[pos] == 'e' || src[pos] == 'E')) {
        std::size_t save = pos;
        ++pos;
        if (pos < limit && (src[pos] == '+' || src[pos] == '-')) ++pos;
        if (pos < limit && dec(src[pos])) digit_run(dec);
        else pos = save;
    }
    if (pos < limit && (src[pos] == 'j' || src[pos] == 'J')) ++pos;
    return pos;
}

}  // namespace

std::vector<Token> tokenize(std::string_view source, const TokenizeRange& range) {
    std::size_t limit = std::min(range.end, source.size());
    Cursor cur{source, range.begin, limit, range.line, static_cast<int>(range.begin) - range.col};
    if (cur.pos == 0 && source.substr(0, 3) == "\xEF\xBB\xBF") {
        cur.pos = 3;
        cur.line_start = 3;
    }

    std::vector<Token> tokens;
    std::vector<int> indents{0};
    std::vector<char> brackets;
    int paren_base = range.inside_brackets ? 1 : 0;
    bool at_line_start = !range.inside_brackets;
    bool line_has_tokens = false;

    auto make_span = [&](std::size_t begin, int line, int col) {
        Span s;
        s.begin = begin;
        s.end = cur.pos;
        s.line = line;
        s.col = col;
        s.end_line = cur.line;
        s.end_col = cur.col();
        return s;
    };
    auto push = [&](TokenKind kind, std::size_t begin, int line, int col) {
        tokens.push_back(Token{kind, source.substr(begin, cur.pos - begin), make_span(begin, line, col)});
    };
    auto push_empty = [&](TokenKind kind) {
        Span s;
        s.begin = s.end = cur.pos;
        s.line = s.end_line = cur.line;
        s.col = s.end_col = cur.col();
        tokens.push_back(Token{kind, source.substr(cur.pos, 0), s});
    };

    while (true) {
        if (at_line_start) {
            // measure indentation of a new logical line
            int column = 0;
            std::size_t p = cur.pos;
            while (p < limit) {
                char c = source[p];
                if (c == ' ') ++column;
                else if (c == '\t') column = (column / 8 + 1) * 8;
                else if (c == '\f') column = 0;
                else break;
                ++p;
            }
            cur.advance_to(p);
            char c = cur.peek();
            if (cur.done()) break;
            if (c == '#' || c == '\n' || c == '\r') {
                if (c == '#') {
                    while (!cur.done() && cur.peek() != '\n' && cur.peek() != '\r') cur.advance_to(cur.pos + 1);
                }
                if (cur.peek() == '\r') cur.advance_to(cur.pos + 1);
                if (cur.peek() == '\n') cur.advance_to(cur.pos + 1);
                continue;  // blank or comment-only line
            }
            if (column > indents.back()) {
                indents.push_back(column);
                push_empty(TokenKind::Indent);
            } else {
                while (column < indents.back()) {
                    indents.pop_back();
                    push_empty(TokenKind::Dedent);
                }
                if (column != indents.back()) {
                    throw SyntaxError("unindent does not match any outer indentation level", cur.line, cur.col());
                }
            }
            at_line_start = false;
        }
        if (cur.done()) break;
        char c = cur.peek();
        std::size_t begin = cur.pos;
        int line = cur.line;
        int col = cur.col();

        if (c == ' ' || c == '\t' || c == '\f') {
            cur.advance_to(cur.pos + 1);
            continue;
        }
        if (c == '#') {
            while (!cur.done() && cur.peek() != '\n' && cur.peek() != '\r') cur.advance_to(cur.pos + 1);
            continue;
        }
        if (c == '\\') {
            std::size_t p = cur.pos + 1;
            if (p < limit && source[p] == '\r') ++p;
            if (p < limit && source[p] == '\n') {
                cur.advance_to(p + 1);
                if (cur.done()) throw SyntaxError("unexpected EOF while parsing", cur.line, cur.col());
                continue;
            }
            throw SyntaxError("unexpected character after line continuation character", line, col);
        }
        if (c == '\r' || c == '\n') {
            if (c == '\r') cur.advance_to(cur.pos + 1);
            if (cur.peek() == '\n') cur.advance_to(cur.pos + 1);
            if (brackets.size() + static_cast<std::size_t>(paren_base) == 0) {
                if (line_has_tokens) {
                    Span s;
                    s.begin = begin;
                    s.end = begin + 1;
                    s.line = s.end_line = line;
                    s.col = col;
                    s.end_col = col + 1;
                    tokens.push_back(Token{TokenKind::Newline, source.substr(begin, 1), s});
                }
                line_has_tokens = false;
                at_line_start = true;
            }
            continue;
        }

        line_has_tokens = true;
        std::size_t plen = is_prefix_char(c) ? string_prefix_length(source, cur.pos, limit) : std::string_view::npos;
        if (c == '\'' || c == '"' || plen != std::string_view::npos) {
            std::size_t end = scan_string_literal(source, cur.pos, limit);
            cur.advance_to(end);
            push(TokenKind::String, begin, line, col);
            continue;
        }
        if (is_identifier_start(static_cast<unsigned char>(c))) {
            std::size_t p = cur.pos;
            while (p < limit && is_identifier_char(static_cast<unsigned char>(source[p]))) ++p;
            cur.advance_to(p);
            push(TokenKind::Name, begin, line, col);
            continue;
        }
        if ((c >= '0' && c <= '9') || (c == '.' && cur.peek(1) >= '0' && cur.peek(1) <= '9')) {
            cur.advance_to(scan_number(source, cur.pos, limit));
            push(TokenKind::Number, begin, line, col);
            continue;
        }
        std::size_t olen = op_length(source, cur.pos, limit);
        if (olen == 0) {
            throw SyntaxError(std::string("invalid character '") + c + "'", line, col);
        }
        std::string_view op = source.substr(cur.pos, olen);
        if (op == "(" || op == "[" || op == "{") {
            if (brackets.size() >= 200) throw SyntaxError("too many nested parentheses", line, col);
            brackets.push_back(op[0]);
        } else if (op == ")" || op == "]" || op == "}") {
            if (brackets.empty()) {
                throw SyntaxError(std::string("unmatched '") + op[0] + "'", line, col);
            }
            char open = brackets.back();
            if ((open == '(' && op[0] != ')') || (open == '[' && op[0] != ']') || (open == '{' && op[0] != '}')) {
                throw SyntaxError(std::string("closing parenthesis '") + op[0] + "' does not match '" + open + "'",
                                  line, col);
            }
            brackets.pop_back();
        }
        cur.advance_to(cur.pos + olen);
        push(TokenKind::Op, begin, line, col);
    }

    if (!brackets.empty()) {
        throw SyntaxError(std::string("'") + brackets.back() + "' was never closed", cur.line, cur.col());
    }
    if (line_has_tokens && !range.inside_brackets) {
        push_empty(TokenKind::Newline);
    }
    if (!range.inside_brackets) {
        while (indents.size() > 1) {
            indents.pop_back();
            push_empty(TokenKind::Dedent);
        }
    }
    push_empty(TokenKind::EndMarker);
    return tokens;
}

}  // namespace pkgscope::python
