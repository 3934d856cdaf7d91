#pragma once

#include <string_view>

#include "pkgscope/python/ast.hpp"
#include "pkgscope/python/tokenizer.hpp"

namespace pkgscope::python {

/// Parses a complete Python 3 source file. The root of the returned tree is a
/// Module node. Throws SyntaxError for input the language grammar rejects.
Tree parse_module(std::string_view source);

/// Parses `source` as a single expression (newlines are insignificant, as if
/// the text were wrapped in parentheses). The node is owned by `tree`.
Node* parse_expression(Tree& tree, std::string_view source);

/// Decodes the body of a (non-formatted) string literal: escape sequences are
/// expanded unless `raw`; \u and \N escapes are only honoured for str.
std::string decode_string_body(std::string_view body, bool raw, bool bytes);

}  // namespace pkgscope::python
