#include "pkgscope/rules.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <regex>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pkgscope/prompts.hpp"
#include "pkgscope/python/parser.hpp"
#include "pkgscope/util.hpp"

using nlohmann::json;
namespace py = pkgscope::python;

namespace pkgscope::rules {

std::string_view to_string(MatchKind k) noexcept {
    switch (k) {
        case MatchKind::Prefix: return "prefix";
        case MatchKind::Exact: return "exact";
        case MatchKind::Contains: return "contains";
    }
    return "exact";
}

MatchKind parse_match_kind(std::string_view s) {
    if (s == "prefix") return MatchKind::Prefix;
    if (s == "exact") return MatchKind::Exact;
    if (s == "contains") return MatchKind::Contains;
    throw FormatError(fmt::format("unknown matcher kind '{}'", s));
}

Matcher::Matcher(MatchKind k, std::vector<std::string> v) : kind(k), values(std::move(v)) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    if (values.empty()) throw Error("matcher has no values");
    if (values.front().empty()) throw Error("matcher has an empty value");
}

bool Matcher::matches(std::string_view name) const {
    switch (kind) {
        case MatchKind::Prefix:
            return std::any_of(values.begin(), values.end(), [&](const std::string& v) { return name.rfind(v, 0) == 0; });
        case MatchKind::Exact:
            return std::binary_search(values.begin(), values.end(), name);
        case MatchKind::Contains:
            return std::any_of(values.begin(), values.end(),
                               [&](const std::string& v) { return name.find(v) != std::string_view::npos; });
    }
    return false;
}

// ---- RuleSet -----------------------------------------------------------------

RuleSet::RuleSet(std::vector<Rule> rules) {
    for (auto& r : rules) {
        if (r.id.empty()) throw Error("rule with empty id");
        if (r.matcher.values.empty()) throw Error(fmt::format("rule '{}' has no values", r.id));
        if (!index_.emplace(r.id, rules_.size()).second) throw Error(fmt::format("duplicate rule id '{}'", r.id));
        rules_.push_back(std::move(r));
    }
}

bool RuleSet::merge(Rule rule) {
    std::string base = rule.id;
    for (int n = 1;; ++n) {
        std::string id = n == 1 ? base : fmt::format("{}_{}", base, n);
        auto it = index_.find(id);
        if (it == index_.end()) {
            rule.id = id;
            index_.emplace(id, rules_.size());
            rules_.push_back(std::move(rule));
            return true;
        }
        if (rules_[it->second].matcher == rule.matcher) return false;
    }
}

std::optional<std::size_t> RuleSet::index_of(std::string_view id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

RuleSet merge(const RuleSet& a, const RuleSet& b) {
    RuleSet out = a;
    for (const auto& r : b.rules()) out.merge(r);
    return out;
}

// ---- compile_rule ------------------------------------------------------------

namespace {

constexpr std::size_t kMaxRuleBytes = 4096;

std::string describe(const py::Node* n) {
    if (n->kind == py::Kind::Call) {
        std::string name = py::dotted_name(n->kids[0]);
        if (name.empty()) name = std::string(py::kind_name(n->kids[0]->kind));
        return fmt::format("call to non-whitelisted name '{}'", name);
    }
    if (n->kind == py::Kind::Attribute) return fmt::format("attribute access '.{}'", n->value);
    if (n->kind == py::Kind::BoolOp) return fmt::format("'{}' combination", n->text);
    if (n->kind == py::Kind::UnaryOp) return fmt::format("unary '{}'", n->text);
    return fmt::format("disallowed construct {}", py::kind_name(n->kind));
}

std::optional<std::string> str_const(const py::Node* n) {
    if (n->kind == py::Kind::Constant && n->flags == py::flag::kStr) return n->value;
    return std::nullopt;
}

bool is_name(const py::Node* n, std::string_view name) { return n->kind == py::Kind::Name && n->value == name; }

struct Term {
    MatchKind kind;
    std::vector<std::string> values;
};

class RuleCompiler {
public:
    explicit RuleCompiler(std::string param) : p_(std::move(param)) {}

    Matcher compile(const py::Node* body) {
        std::vector<const py::Node*> terms;
        flatten(body, terms);
        std::optional<MatchKind> kind;
        std::vector<std::string> values;
        for (const py::Node* t : terms) {
            Term term = compile_term(t);
            if (kind && *kind != term.kind) {
                throw RuleError(fmt::format("mixed matcher kinds ({} and {})", to_string(*kind), to_string(term.kind)));
            }
            kind = term.kind;
            values.insert(values.end(), term.values.begin(), term.values.end());
        }
        if (values.empty()) throw RuleError("empty string set");
        for (const auto& v : values) {
            if (v.empty()) throw RuleError("empty string literal");
        }
        return Matcher(*kind, std::move(values));
    }

private:
    void flatten(const py::Node* n, std::vector<const py::Node*>& out) {
        if (n->kind == py::Kind::BoolOp && n->text == "or") {
            for (const py::Node* k : n->kids) flatten(k, out);
        } else {
            out.push_back(n);
        }
    }

    std::vector<std::string> str_collection(const py::Node* n) {
        if (n->kind != py::Kind::Tuple && n->kind != py::Kind::List && n->kind != py::Kind::Set) {
            throw RuleError(fmt::format("expected a literal string collection, found {}", describe(n)));
        }
        std::vector<std::string> out;
        for (const py::Node* k : n->kids) {
            auto s = str_const(k);
            if (!s) throw RuleError(fmt::format("non-string element in literal collection: {}", describe(k)));
            out.push_back(*s);
        }
        return out;
    }

    void plain_args(const py::Node* call) {
        for (std::size_t i = 1; i < call->kids.size(); ++i) {
            if (call->kids[i]->kind == py::Kind::Keyword) throw RuleError("keyword arguments");
            if (call->kids[i]->kind == py::Kind::Starred) throw RuleError("starred arguments");
        }
    }

    bool is_startswith_on(const py::Node* func, std::string_view subject) const {
        return func->kind == py::Kind::Attribute && func->value == "startswith" && is_name(func->kids[0], subject);
    }

    Term compile_term(const py::Node* n) {
        switch (n->kind) {
            case py::Kind::Call: {
                plain_args(n);
                const py::Node* func = n->kids[0];
                if (is_startswith_on(func, p_)) {
                    if (n->kids.size() < 2) throw RuleError("startswith without arguments");
                    Term t{MatchKind::Prefix, {}};
                    for (std::size_t i = 1; i < n->kids.size(); ++i) {
                        if (auto s = str_const(n->kids[i])) {
                            t.values.push_back(*s);
                        } else {
                            auto c = str_collection(n->kids[i]);
                            t.values.insert(t.values.end(), c.begin(), c.end());
                        }
                    }
                    return t;
                }
                if (is_name(func, "any") && n->kids.size() == 2 && n->kids[1]->kind == py::Kind::GeneratorExp) {
                    return generator_term(n->kids[1]);
                }
                throw RuleError(describe(n));
            }
            case py::Kind::Compare: {
                if (n->text.find(',') != std::string::npos) throw RuleError("chained comparison");
                const py::Node* l = n->kids[0];
                const py::Node* r = n->kids[1];
                if (n->text == "==") {
                    if (is_name(l, p_)) std::swap(l, r);
                    auto s = str_const(l);
                    if (s && is_name(r, p_)) return {MatchKind::Exact, {*s}};
                    throw RuleError("equality must compare the parameter with a string literal");
                }
                if (n->text == "in") {
                    if (auto s = str_const(l); s && is_name(r, p_)) return {MatchKind::Contains, {*s}};
                    if (is_name(l, p_)) return {MatchKind::Exact, str_collection(r)};
                    throw RuleError("membership test must involve the parameter and string literals");
                }
                throw RuleError(fmt::format("comparison operator '{}'", n->text));
            }
            default:
                throw RuleError(describe(n));
        }
    }

    Term generator_term(const py::Node* gen) {
        if (gen->kids.size() != 2) throw RuleError("nested comprehension");
        const py::Node* comp = gen->kids[1];
        if (comp->flags == py::flag::kAsync) throw RuleError("async comprehension");
        if (comp->kids.size() != 2) throw RuleError("filtered comprehension");
        const py::Node* target = comp->kids[0];
        if (target->kind != py::Kind::Name || target->value == p_) throw RuleError("comprehension target must be a fresh name");
        const std::string& v = target->value;
        auto values = str_collection(comp->kids[1]);
        const py::Node* elt = gen->kids[0];
        if (elt->kind == py::Kind::Compare && elt->text == "in" && is_name(elt->kids[0], v) && is_name(elt->kids[1], p_)) {
            return {MatchKind::Contains, values};
        }
        if (elt->kind == py::Kind::Compare && elt->text == "==" &&
            ((is_name(elt->kids[0], v) && is_name(elt->kids[1], p_)) ||
             (is_name(elt->kids[0], p_) && is_name(elt->kids[1], v)))) {
            return {MatchKind::Exact, values};
        }
        if (elt->kind == py::Kind::Call && is_startswith_on(elt->kids[0], p_) && elt->kids.size() == 2 &&
            is_name(elt->kids[1], v)) {
            return {MatchKind::Prefix, values};
        }
        throw RuleError(fmt::format("generator element: {}", describe(elt)));
    }

    std::string p_;
};

Matcher compile_lambda(const py::Node* lambda) {
    if (lambda->kind != py::Kind::Lambda) throw RuleError(fmt::format("expected a lambda, found {}", describe(lambda)));
    const py::Node* args = lambda->kids[0];
    if (args->kids.size() != 1) throw RuleError("lambda must take exactly one parameter");
    const py::Node* param = args->kids[0];
    if (param->flags != py::flag::kPositional && param->flags != py::flag::kPositionalOnly) {
        throw RuleError("lambda parameter must be a plain positional name");
    }
    if (!param->kids.empty()) throw RuleError("parameter default");
    return RuleCompiler(param->value).compile(lambda->kids[1]);
}

void check_id(const std::string& id) {
    static const std::regex kId(R"([A-Za-z0-9_][A-Za-z0-9_.\-]{0,63})");
    if (!std::regex_match(id, kId)) throw RuleError(fmt::format("invalid rule id '{}'", id));
}

}  // namespace

Rule compile_rule(std::string_view text) {
    std::string_view s = trim(text);
    while (!s.empty() && (s.back() == ',' || s.back() == ';')) s = trim(s.substr(0, s.size() - 1));
    if (s.empty()) throw RuleError("empty rule text");
    if (s.size() > kMaxRuleBytes) throw RuleError("rule text too long");
    std::string src(s);

    static const std::regex kAssign(R"(^([A-Za-z_][\w.\-]*)\s*=\s*(lambda\b[\s\S]*)$)");
    static const std::regex kBareKey(R"(^([A-Za-z_][\w.\-]*)\s*:\s*(lambda\b[\s\S]*)$)");
    static const std::regex kLambda(R"(^lambda\b[\s\S]*$)");

    Rule rule;
    py::Tree tree;
    try {
        std::smatch m;
        const py::Node* lambda = nullptr;
        if (std::regex_match(src, kLambda)) {
            rule.id = "anon_" + hex64(fnv1a64(src)).substr(0, 8);
            lambda = py::parse_expression(tree, src);
        } else if (std::regex_match(src, m, kAssign) || std::regex_match(src, m, kBareKey)) {
            rule.id = m[1].str();
            lambda = py::parse_expression(tree, m[2].str());
        } else if (src.front() == '"' || src.front() == '\'') {
            const py::Node* dict = py::parse_expression(tree, "{" + src + "}");
            if (dict->kind != py::Kind::Dict || dict->kids.size() != 2 || dict->kids[0] == nullptr) {
                throw RuleError("expected a single \"id\": lambda entry");
            }
            auto key = str_const(dict->kids[0]);
            if (!key) throw RuleError("rule id must be a string literal");
            rule.id = *key;
            lambda = dict->kids[1];
        } else {
            throw RuleError("expected a lambda rule");
        }
        check_id(rule.id);
        rule.matcher = compile_lambda(lambda);
    } catch (const py::SyntaxError& e) {
        throw RuleError(fmt::format("syntax error: {}", e.what()));
    }
    return rule;
}

// ---- static rules ------------------------------------------------------------

RuleSet load_static_rules() {
    using K = MatchKind;
    auto r = [](std::string id, K k, std::vector<std::string> v) { return Rule{std::move(id), Matcher(k, std::move(v))}; };
    return RuleSet({
        r("network", K::Prefix, {"socket.", "requests.", "urllib."}),
        r("phishing", K::Exact, {"requests.post", "HTTPConnection"}),
        r("http_client", K::Prefix, {"http.client.", "httpx.", "aiohttp.", "urllib3.", "pycurl."}),
        r("code_exec", K::Exact, {"exec", "eval", "compile", "builtins.exec", "builtins.eval", "execfile"}),
        r("dynamic_import", K::Exact,
          {"__import__", "importlib.import_module", "importlib.__import__", "imp.load_source", "imp.load_module",
           "importlib.util.spec_from_file_location", "importlib.util.module_from_spec"}),
        r("shell_exec", K::Exact,
          {"os.system", "os.popen", "os.execv", "os.execve", "os.execl", "os.execlp", "os.execvp", "os.spawnl",
           "os.spawnv", "os.startfile", "pty.spawn", "commands.getoutput"}),
        r("subprocess", K::Prefix, {"subprocess."}),
        r("file_delete", K::Exact, {"os.remove", "os.unlink", "os.rmdir", "os.removedirs", "shutil.rmtree"}),
        r("file_permissions", K::Exact, {"os.chmod", "os.chown", "os.lchown", "os.setuid", "os.setgid", "os.umask"}),
        r("env_access", K::Exact,
          {"os.getenv", "os.putenv", "os.environ.get", "os.environ.copy", "os.environ.items", "os.environ.setdefault"}),
        r("user_info", K::Exact,
          {"getpass.getuser", "os.getlogin", "os.getuid", "pwd.getpwuid", "pwd.getpwnam", "os.path.expanduser"}),
        r("system_info", K::Prefix, {"platform.", "psutil.", "socket.gethostname", "uuid.getnode", "os.uname"}),
        r("crypto", K::Prefix, {"Crypto.", "Cryptodome.", "cryptography.", "hashlib.", "nacl.", "rsa."}),
        r("obfuscation", K::Prefix, {"base64.", "binascii.", "codecs.decode", "zlib.decompress", "lzma.decompress"}),
        r("deserialization", K::Prefix, {"pickle.", "marshal.", "dill.", "shelve.", "jsonpickle.", "yaml.load"}),
        r("clipboard", K::Prefix, {"pyperclip.", "clipboard.", "win32clipboard."}),
        r("registry", K::Prefix, {"winreg.", "_winreg."}),
        r("screenshot", K::Prefix, {"PIL.ImageGrab.", "ImageGrab.", "pyautogui.screenshot", "mss.", "pyscreenshot."}),
        r("anti_debug", K::Exact,
          {"sys.gettrace", "sys.settrace", "ctypes.windll.kernel32.IsDebuggerPresent",
           "ctypes.windll.kernel32.CheckRemoteDebuggerPresent"}),
        r("memory_manipulation", K::Prefix, {"ctypes.", "mmap."}),
        r("keylogging", K::Prefix, {"pynput.", "keyboard.", "pyHook.", "win32api.GetAsyncKeyState"}),
        r("browser_data", K::Contains, {"browser_cookie3", "CryptUnprotectData"}),
        r("persistence", K::Prefix, {"crontab.", "win32service.", "win32serviceutil.", "plistlib.dump"}),
        r("exfiltration", K::Prefix, {"smtplib.", "ftplib.", "paramiko.", "telnetlib.", "dropbox.", "discord_webhook."}),
        r("process_control", K::Exact, {"os.kill", "os.killpg", "os.fork", "os._exit", "signal.signal"}),
        r("web_browser", K::Prefix, {"webbrowser."}),
    });
}

// ---- features ----------------------------------------------------------------

FeatureVector featurize(const std::vector<std::string>& names, const RuleSet& rules) {
    FeatureVector bits(rules.size(), 0);
    for (std::size_t k = 0; k < rules.size(); ++k) {
        const Matcher& m = rules.rules()[k].matcher;
        bits[k] = std::any_of(names.begin(), names.end(), [&](const std::string& n) { return m.matches(n); });
    }
    return bits;
}

FeatureVector featurize(const CodeNode& node, const RuleSet& rules) {
    std::vector<std::string> names = node.calls;
    names.insert(names.end(), node.imports.begin(), node.imports.end());
    return featurize(names, rules);
}

// ---- persistence -------------------------------------------------------------

json to_json(const RuleSet& rules) {
    json arr = json::array();
    for (const auto& r : rules.rules()) {
        arr.push_back({{"id", r.id}, {"kind", to_string(r.matcher.kind)}, {"values", r.matcher.values}});
    }
    return arr;
}

RuleSet ruleset_from_json(const json& j) {
    if (!j.is_array()) throw FormatError("rule set must be a JSON array");
    std::vector<Rule> rules;
    try {
        for (const auto& e : j) {
            Rule r;
            r.id = e.at("id").get<std::string>();
            r.matcher = Matcher(parse_match_kind(e.at("kind").get<std::string>()),
                                e.at("values").get<std::vector<std::string>>());
            rules.push_back(std::move(r));
        }
        return RuleSet(std::move(rules));
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("malformed rule set: {}", e.what()));
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(fmt::format("invalid rule set: {}", e.what()));
    }
}

void save_rules(const RuleSet& rules, const std::filesystem::path& path) {
    write_file(path, to_json(rules).dump(2) + "\n");
}

RuleSet load_rules(const std::filesystem::path& path) {
    try {
        return ruleset_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

// ---- synthesis ---------------------------------------------------------------

std::vector<std::string> extract_rule_lines(std::string_view response) {
    static const std::regex kMarker(R"(^\s*(?:[-*+]|\d+[.)])\s+)");
    static const std::regex kLambdaWord(R"(\blambda\b)");
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= response.size()) {
        auto nl = response.find('\n', pos);
        std::string line(response.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
        pos = nl == std::string_view::npos ? response.size() + 1 : nl + 1;

        std::smatch lm;
        if (!std::regex_search(line, lm, kLambdaWord)) continue;
        line = std::regex_replace(line, kMarker, "");
        line.erase(std::remove(line.begin(), line.end(), '`'), line.end());
        std::string_view l = trim(line);
        while (!l.empty() && l.back() == ',') l = trim(l.substr(0, l.size() - 1));
        std::string s(l);

        // Keep the `key:` / `key =` immediately before the lambda, drop any prose before that.
        std::smatch m;
        if (!std::regex_search(s, m, kLambdaWord)) continue;
        std::size_t lam = static_cast<std::size_t>(m.position());
        std::size_t start = lam;
        std::size_t k = lam;
        while (k > 0 && std::isspace(static_cast<unsigned char>(s[k - 1]))) --k;
        if (k > 0 && (s[k - 1] == ':' || s[k - 1] == '=')) {
            std::size_t e = k - 1;
            while (e > 0 && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
            if (e > 0 && (s[e - 1] == '"' || s[e - 1] == '\'')) {
                auto open = s.rfind(s[e - 1], e >= 2 ? e - 2 : 0);
                if (open != std::string::npos && open < e - 1) start = open;
            } else {
                std::size_t b = e;
                while (b > 0 && (std::isalnum(static_cast<unsigned char>(s[b - 1])) || s[b - 1] == '_' ||
                                 s[b - 1] == '-' || s[b - 1] == '.')) {
                    --b;
                }
                if (b < e) start = b;
            }
        }
        out.push_back(s.substr(start));
    }
    return out;
}

RuleSet compile_response(std::string_view response) {
    RuleSet out;
    for (const auto& line : extract_rule_lines(response)) {
        try {
            out.merge(compile_rule(line));
        } catch (const RuleError& e) {
            spdlog::debug("dropped rule '{}': {}", line, e.what());
        }
    }
    return out;
}

RuleSet synthesize_common_rules(llm::ChatClient& client, const CommonSynthesisOptions& options) {
    std::vector<llm::ChatMessage> messages{{llm::Role::System, std::string(prompts::common_rules())}};
    RuleSet rules;
    try {
        rules = compile_response(llm::call_with_retry(client, messages, options.policy));
    } catch (const Error& e) {
        spdlog::warn("common rule synthesis failed, using the static rule set: {}", e.what());
        return load_static_rules();
    }
    if (rules.size() < options.min_rules) {
        spdlog::warn("only {} common rules compiled (need {}), using the static rule set", rules.size(),
                     options.min_rules);
        return load_static_rules();
    }
    return rules;
}

std::vector<std::string> sample_training_ids(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError(fmt::format("sample fraction {} not in (0, 1]", fraction));
    std::vector<std::string> ids(manifest.train_ids.begin(), manifest.train_ids.end());
    auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ids.size()) - 1e-9));
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(std::min(k, ids.size()));
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::string package_source_text(const std::filesystem::path& root, std::size_t cap) {
    std::string out;
    for (const auto& f : read_sources(root)) {
        out += fmt::format("# file: {}\n{}", f.relpath, f.text);
        if (!out.empty() && out.back() != '\n') out += '\n';
        if (out.size() >= cap) break;
    }
    if (out.size() > cap) {
        std::size_t cut = cap;
        while (cut > 0 && (static_cast<unsigned char>(out[cut]) & 0xC0) == 0x80) --cut;
        out.resize(cut);
    }
    return out;
}

RuleSet synthesize_data_rules(llm::ChatClient& client, const DatasetManifest& manifest,
                              const DataSynthesisOptions& options) {
    RuleSet out;
    for (const auto& id : sample_training_ids(manifest, options.fraction, options.seed)) {
        const PackageRecord* rec = manifest.find(id);
        if (rec == nullptr) {
            spdlog::warn("training id {} missing from the manifest", id);
            continue;
        }
        std::string code;
        try {
            code = package_source_text(rec->root_path, options.source_cap);
        } catch (const Error& e) {
            spdlog::warn("cannot read sources of {}: {}", id, e.what());
            continue;
        }
        if (code.empty()) continue;
        std::vector<llm::ChatMessage> messages{{llm::Role::System, std::string(prompts::data_rules())},
                                               {llm::Role::User, std::move(code)}};
        try {
            RuleSet got = compile_response(llm::call_with_retry(client, messages, options.policy));
            for (const auto& r : got.rules()) out.merge(r);
        } catch (const Error& e) {
            spdlog::warn("data rule synthesis for {} failed: {}", id, e.what());
        }
    }
    return out;
}

}  // namespace pkgscope::rules
