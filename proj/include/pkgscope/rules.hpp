#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pkgscope/code_graph.hpp"
#include "pkgscope/error.hpp"
#include "pkgscope/ingest.hpp"
#include "pkgscope/llm.hpp"

namespace pkgscope::rules {

enum class MatchKind { Prefix, Exact, Contains };
std::string_view to_string(MatchKind k) noexcept;
MatchKind parse_match_kind(std::string_view s);

/// Name test over dotted call names. Values are kept sorted and unique.
struct Matcher {
    MatchKind kind = MatchKind::Exact;
    std::vector<std::string> values;

    Matcher() = default;
    Matcher(MatchKind kind, std::vector<std::string> values);

    bool matches(std::string_view name) const;
    friend bool operator==(const Matcher&, const Matcher&) = default;
};

struct Rule {
    std::string id;
    Matcher matcher;
    friend bool operator==(const Rule&, const Rule&) = default;
};

/// Ordered rule list; a rule's position is its feature index.
class RuleSet {
public:
    RuleSet() = default;
    /// Throws Error on duplicate ids or empty matchers.
    explicit RuleSet(std::vector<Rule> rules);

    /// Adds `rule` unless an identical (id, matcher) pair exists. A clashing id
    /// with a different matcher is renamed to id_2, id_3, ... Returns whether
    /// the set grew.
    bool merge(Rule rule);

    const std::vector<Rule>& rules() const noexcept { return rules_; }
    std::size_t size() const noexcept { return rules_.size(); }
    bool empty() const noexcept { return rules_.empty(); }
    std::optional<std::size_t> index_of(std::string_view id) const;
    const std::map<std::string, std::size_t, std::less<>>& behavior2idx() const noexcept { return index_; }

private:
    std::vector<Rule> rules_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Union of `a` then `b` under RuleSet::merge.
RuleSet merge(const RuleSet& a, const RuleSet& b);

/// Rejected rule text; the message names the offending construct.
class RuleError : public Error {
public:
    using Error::Error;
};

/// Compiles one rule of the form `"id": lambda n: <body>`, `id = lambda n: <body>`
/// or a bare `lambda n: <body>` (id anon_<hash>). The body must be an `or` of
///   n.startswith(<str or tuple of str>)       prefix
///   n == "s", "s" == n, n in (<str>, ...)      exact
///   "s" in n                                   contains
///   any(<one of the above on s> for s in (<str>, ...))
/// with all terms of one kind. The text is parsed, never evaluated.
Rule compile_rule(std::string_view text);

RuleSet load_static_rules();

using FeatureVector = std::vector<std::uint8_t>;

FeatureVector featurize(const std::vector<std::string>& names, const RuleSet& rules);
/// Features of a graph node over its recorded calls and imports.
FeatureVector featurize(const CodeNode& node, const RuleSet& rules);

nlohmann::json to_json(const RuleSet& rules);
RuleSet ruleset_from_json(const nlohmann::json& j);
void save_rules(const RuleSet& rules, const std::filesystem::path& path);
RuleSet load_rules(const std::filesystem::path& path);

// ---- synthesis -------------------------------------------------------------

/// Candidate rule snippets found in a free-form response: one per line that
/// contains a lambda, with list markers, code fences and trailing commas removed.
std::vector<std::string> extract_rule_lines(std::string_view response);

/// Compiles every extracted line, skipping failures, merging into one set.
RuleSet compile_response(std::string_view response);

struct CommonSynthesisOptions {
    std::size_t min_rules = 5;  ///< below this the static set is returned
    llm::RetryPolicy policy;
};

RuleSet synthesize_common_rules(llm::ChatClient& client, const CommonSynthesisOptions& options = {});

struct DataSynthesisOptions {
    double fraction = 0.10;
    std::uint64_t seed = 0;
    std::size_t source_cap = 48 * 1024;  ///< bytes of package source sent per request
    llm::RetryPolicy policy;
};

/// ceil(fraction * |train|) training ids, chosen by a seeded shuffle of the sorted ids.
std::vector<std::string> sample_training_ids(const DatasetManifest& manifest, double fraction, std::uint64_t seed);

/// Concatenated `.py` sources of a package, each file preceded by a
/// `# file: <relpath>` line, truncated to `cap` bytes.
std::string package_source_text(const std::filesystem::path& root, std::size_t cap);

RuleSet synthesize_data_rules(llm::ChatClient& client, const DatasetManifest& manifest,
                              const DataSynthesisOptions& options = {});

}  // namespace pkgscope::rules
