#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pkgscope/python/ast.hpp"

namespace pkgscope::python {

class SyntaxError : public std::runtime_error {
public:
    SyntaxError(const std::string& message, int line, int col)
        : std::runtime_error(message + " (line " + std::to_string(line) + ", col " +
                             std::to_string(col) + ")"),
          line_(line),
          col_(col) {}

    int line() const noexcept { return line_; }
    int col() const noexcept { return col_; }

private:
    int line_;
    int col_;
};

enum class TokenKind {
    Name,
    Number,
    String,  ///< any string literal, including f-strings (one token each)
    Op,
    Newline,
    Indent,
    Dedent,
    EndMarker,
};

struct Token {
    TokenKind kind;
    std::string_view text;  ///< raw source text, prefix and quotes included
    Span span;
};

/// Where a token stream starts inside the file. Sub-streams are used for
/// replacement fields of f-strings, which tokenize as if inside brackets.
struct TokenizeRange {
    std::size_t begin = 0;
    std::size_t end = std::string_view::npos;
    int line = 1;
    int col = 0;
    bool inside_brackets = false;
};

/// Converts Python 3 source into tokens, producing NEWLINE/INDENT/DEDENT per
/// the language's logical-line rules. Throws SyntaxError on malformed input.
std::vector<Token> tokenize(std::string_view source, const TokenizeRange& range = {});

/// Returns the byte offset one past the end of the string literal starting at
/// `pos` (which must point at the prefix or the opening quote). Handles nested
/// replacement fields of f-strings. Throws SyntaxError when unterminated.
std::size_t scan_string_literal(std::string_view source, std::size_t pos, std::size_t limit);

/// Scans the expression part of an f-string replacement field starting just
/// after '{'. Returns the position of the terminator at bracket depth zero:
/// '}', ':' (format spec) or '!' (conversion).
std::size_t scan_field_expression(std::string_view source, std::size_t pos, std::size_t limit);

struct StringPrefix {
    bool raw = false;
    bool bytes = false;
    bool formatted = false;
    std::size_t length = 0;  ///< number of prefix characters
};

StringPrefix string_prefix(std::string_view literal);

bool is_identifier_start(unsigned char c) noexcept;
bool is_identifier_char(unsigned char c) noexcept;

}  // namespace pkgscope::python
