#pragma once

#include <map>
#include <string>
#include <string_view>

namespace pkgscope::prompts {

/// Template version shared by all embedded prompt texts (prompts/*.<version>.txt).
std::string_view version() noexcept;

std::string_view common_rules() noexcept;   ///< system prompt for common rule synthesis
std::string_view data_rules() noexcept;     ///< system prompt for per-sample rule synthesis
std::string_view analysis() noexcept;       ///< system prompt for subgraph analysis
std::string_view judge_system() noexcept;
std::string_view judge_user() noexcept;     ///< slots: {explanation}, {ground_truth}

/// Replaces `{name}` for every name in `slots` in a single left-to-right pass;
/// substituted text is never rescanned and unknown braces are kept.
std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& slots);

}  // namespace pkgscope::prompts
