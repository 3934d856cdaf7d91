#include "pkgscope/llm.hpp"

#include <cctype>
#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pkgscope/prompts.hpp"
#include "pkgscope/util.hpp"

using nlohmann::json;

namespace pkgscope::llm {

std::string_view to_string(Role r) noexcept { return r == Role::System ? "system" : "user"; }

GatewayConfig gateway_config_from_json(const json& j, GatewayConfig c) {
    c.base_url = j.value("base_url", c.base_url);
    c.model = j.value("model", c.model);
    c.temperature = j.value("temperature", c.temperature);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.tokenizer_id = j.value("tokenizer_id", c.tokenizer_id);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
    if (c.max_retries < 1) throw ConfigError("max_retries must be at least 1");
    if (c.max_concurrency < 1 || c.max_concurrency > 64) throw ConfigError("max_concurrency must be in 1..64");
    if (c.timeout_s < 1) throw ConfigError("timeout_s must be positive");
    return c;
}

namespace {

json messages_json(const std::vector<ChatMessage>& messages) {
    json arr = json::array();
    for (const auto& m : messages) arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    return arr;
}

}  // namespace

std::string request_hash(const std::vector<ChatMessage>& messages) {
    // Invalid UTF-8 in package sources is replaced rather than rejected.
    return hex64(fnv1a64(json{{"messages", messages_json(messages)}}.dump(-1, ' ', false, json::error_handler_t::replace)));
}

// ---- MockClient --------------------------------------------------------------

MockClient::MockClient(std::vector<Entry> entries) : entries_(std::move(entries)) {}

std::vector<MockClient::Entry> MockClient::parse_fixture(const json& doc) {
    if (!doc.is_array()) throw FormatError("mock fixture must be a JSON array");
    std::vector<Entry> out;
    for (const auto& j : doc) {
        try {
            Entry e;
            e.request_hash = j.at("request_hash").get<std::string>();
            e.response_text = j.value("response_text", "");
            e.error = j.value("error", "");
            if (!e.error.empty() && e.error != "transient" && e.error != "fatal") {
                throw FormatError(fmt::format("unknown mock error kind '{}'", e.error));
            }
            out.push_back(std::move(e));
        } catch (const json::exception& ex) {
            throw FormatError(fmt::format("malformed mock fixture entry: {}", ex.what()));
        }
    }
    return out;
}

MockClient MockClient::from_file(const std::filesystem::path& path) {
    try {
        return MockClient(parse_fixture(json::parse(read_file(path))));
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string MockClient::complete(const std::vector<ChatMessage>& messages) {
    std::string hash = request_hash(messages);
    std::lock_guard lock(mu_);
    ++calls_;
    requests_.push_back(messages);
    for (const std::string& key : {hash, std::string("*")}) {
        std::vector<const Entry*> hits;
        for (const auto& e : entries_) {
            if (e.request_hash == key) hits.push_back(&e);
        }
        if (hits.empty()) continue;
        std::size_t& pos = cursor_[key];
        const Entry* e = hits[std::min(pos, hits.size() - 1)];
        ++pos;
        if (!e->error.empty()) {
            throw TransportError(fmt::format("mock {} failure for request {}", e->error, hash), e->error == "transient");
        }
        return e->response_text;
    }
    throw TransportError(fmt::format("no recorded response for request {}", hash), false);
}

std::vector<std::vector<ChatMessage>> MockClient::requests() const {
    std::lock_guard lock(mu_);
    return requests_;
}

// ---- HttpClient --------------------------------------------------------------

HttpClient::HttpClient(GatewayConfig config)
    : config_(std::move(config)), slots_(std::clamp(config_.max_concurrency, 1, 64)) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw ConfigError(fmt::format("environment variable {} is not set; a live gateway needs an API key",
                                      config_.api_key_env));
    }
    api_key_ = key;
    if (config_.base_url.rfind("http://", 0) != 0 && config_.base_url.rfind("https://", 0) != 0) {
        throw ConfigError(fmt::format("base_url '{}' must start with http:// or https://", config_.base_url));
    }
}

json HttpClient::request_body(const GatewayConfig& config, const std::vector<ChatMessage>& messages) {
    return {{"model", config.model}, {"messages", messages_json(messages)}, {"temperature", config.temperature}};
}

std::string HttpClient::parse_response_body(const std::string& body) {
    try {
        auto doc = json::parse(body);
        return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError(fmt::format("unexpected chat-completion response: {}", e.what()), false);
    }
}

std::string HttpClient::complete(const std::vector<ChatMessage>& messages) {
    slots_.acquire();
    struct Release {
        std::counting_semaphore<64>& s;
        ~Release() { s.release(); }
    } release{slots_};

    // Split "scheme://host[:port]/prefix" into the client origin and path prefix.
    auto scheme_end = config_.base_url.find("://") + 3;
    auto path_start = config_.base_url.find('/', scheme_end);
    std::string origin = config_.base_url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

    httplib::Client cli(origin);
    cli.set_connection_timeout(std::chrono::seconds(config_.timeout_s));
    cli.set_read_timeout(std::chrono::seconds(config_.timeout_s));
    cli.set_write_timeout(std::chrono::seconds(config_.timeout_s));
    httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
    auto res = cli.Post(prefix + "/chat/completions", headers, request_body(config_, messages).dump(-1, ' ', false, json::error_handler_t::replace),
                        "application/json");
    if (!res) {
        throw TransportError(fmt::format("request to {} failed: {}", origin, httplib::to_string(res.error())), true);
    }
    if (res->status >= 400) {
        bool transient = res->status == 429 || res->status >= 500;
        throw TransportError(fmt::format("HTTP {}: {}", res->status, res->body), transient, res->status);
    }
    return parse_response_body(res->body);
}

// ---- CachingClient -----------------------------------------------------------

CachingClient::CachingClient(ChatClient& inner, std::filesystem::path dir) : inner_(inner), dir_(std::move(dir)) {}

std::string CachingClient::complete(const std::vector<ChatMessage>& messages) {
    auto path = dir_ / (request_hash(messages) + ".txt");
    {
        std::lock_guard lock(mu_);
        std::error_code ec;
        if (std::filesystem::exists(path, ec)) return read_file(path);
    }
    std::string text = inner_.complete(messages);
    std::lock_guard lock(mu_);
    write_file(path, text);
    return text;
}

// ---- retry -------------------------------------------------------------------

void RetryPolicy::wait(int failed_attempts) const {
    auto delay = first_backoff * (1LL << std::max(0, failed_attempts - 1));
    if (sleep) sleep(delay);
    else std::this_thread::sleep_for(delay);
}

std::string call_with_retry(ChatClient& client, const std::vector<ChatMessage>& messages, const RetryPolicy& policy) {
    for (int attempt = 1;; ++attempt) {
        try {
            return client.complete(messages);
        } catch (const TransportError& e) {
            if (!e.transient() || attempt >= policy.max_attempts) throw;
            spdlog::warn("transient gateway failure (attempt {}/{}): {}", attempt, policy.max_attempts, e.what());
            policy.wait(attempt);
        }
    }
}

// ---- tokenizers --------------------------------------------------------------

std::size_t WsPunctTokenizer::count(std::string_view text) const {
    std::size_t n = 0;
    bool in_word = false;
    for (unsigned char c : text) {
        bool word = std::isalnum(c) || c == '_' || c >= 0x80;
        if (word) {
            if (!in_word) ++n;
            in_word = true;
        } else {
            in_word = false;
            if (!std::isspace(c)) ++n;
        }
    }
    return n;
}

namespace {

struct Registry {
    std::mutex mu;
    std::map<std::string, std::shared_ptr<const Tokenizer>, std::less<>> items;
    Registry() {
        auto ws = std::make_shared<WsPunctTokenizer>();
        items.emplace(std::string(ws->id()), ws);
    }
};

Registry& registry() {
    static Registry r;
    return r;
}

}  // namespace

void register_tokenizer(std::shared_ptr<const Tokenizer> tokenizer) {
    auto& r = registry();
    std::lock_guard lock(r.mu);
    r.items[std::string(tokenizer->id())] = std::move(tokenizer);
}

std::shared_ptr<const Tokenizer> get_tokenizer(std::string_view id) {
    auto& r = registry();
    std::lock_guard lock(r.mu);
    auto it = r.items.find(id);
    if (it == r.items.end()) throw ConfigError(fmt::format("unknown tokenizer '{}'", id));
    return it->second;
}

TokenReport count_tokens(const std::vector<ChatMessage>& messages, const Tokenizer& tokenizer) {
    TokenReport r;
    r.tokenizer_id = std::string(tokenizer.id());
    r.prompt_tokens = tokenizer.reply_priming();
    for (const auto& m : messages) r.prompt_tokens += tokenizer.per_message_overhead() + tokenizer.count(m.content);
    return r;
}

// ---- analysis ----------------------------------------------------------------

namespace {

std::string strip_decoration(std::string_view s) {
    auto is_junk = [](char c) {
        return std::isspace(static_cast<unsigned char>(c)) || c == '"' || c == '\'' || c == '*' || c == ',' ||
               c == '`' || c == '.' || c == '}' || c == '{' || c == '_' || c == '#';
    };
    while (!s.empty() && is_junk(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_junk(s.back())) s.remove_suffix(1);
    return std::string(s);
}

// Strips surrounding whitespace, one pair of quotes and JSON-ish trailing
// punctuation from a section body.
std::string clean_section(std::string_view s) {
    s = trim(s);
    while (!s.empty() && (s.back() == '}' || s.back() == ',' || std::isspace(static_cast<unsigned char>(s.back())))) {
        s.remove_suffix(1);
    }
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return std::string(trim(s));
}

}  // namespace

std::optional<AnalysisVerdict> parse_analysis(std::string_view text) {
    static const std::regex header(R"re(["*_#]*\b(verdict|reasoning|mitigation)\b["*_]*\s*:["*_]*)re", std::regex::icase);
    struct Hit {
        std::string key;
        std::size_t begin;  // start of header
        std::size_t body;   // start of section body
    };
    std::vector<Hit> hits;
    std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), header); it != std::sregex_iterator(); ++it) {
        std::string key = to_lower((*it)[1].str());
        bool seen = std::any_of(hits.begin(), hits.end(), [&](const Hit& h) { return h.key == key; });
        if (seen) continue;
        hits.push_back({key, static_cast<std::size_t>(it->position()),
                        static_cast<std::size_t>(it->position() + it->length())});
    }
    auto section = [&](const std::string& key) -> std::optional<std::string> {
        for (std::size_t i = 0; i < hits.size(); ++i) {
            if (hits[i].key != key) continue;
            std::size_t end = i + 1 < hits.size() ? hits[i + 1].begin : s.size();
            return s.substr(hits[i].body, end - hits[i].body);
        }
        return std::nullopt;
    };
    auto verdict = section("verdict");
    auto reasoning = section("reasoning");
    if (!verdict || !reasoning) return std::nullopt;
    std::string v = to_lower(strip_decoration(*verdict));
    AnalysisVerdict out;
    if (v == "malicious") out.verdict = Label::Malicious;
    else if (v == "benign") out.verdict = Label::Benign;
    else return std::nullopt;
    out.reasoning = clean_section(*reasoning);
    if (out.reasoning.empty()) return std::nullopt;
    if (auto m = section("mitigation")) out.mitigation = clean_section(*m);
    return out;
}

std::vector<ChatMessage> analysis_messages(std::string_view prompt_text) {
    return {{Role::System, std::string(prompts::analysis())}, {Role::User, std::string(prompt_text)}};
}

namespace {

// Shared attempt loop: transient transport failures back off, unusable
// responses are re-issued immediately, at most policy.max_attempts calls.
template <typename Parse>
auto attempt_loop(ChatClient& client, const std::vector<ChatMessage>& messages, const RetryPolicy& policy,
                  Parse parse, int& attempts, std::string& last) -> decltype(parse(std::string_view{})) {
    for (attempts = 1;; ++attempts) {
        try {
            last = client.complete(messages);
            if (auto parsed = parse(last)) return parsed;
            spdlog::warn("unusable gateway response (attempt {}/{})", attempts, policy.max_attempts);
            if (attempts >= policy.max_attempts) return std::nullopt;
        } catch (const TransportError& e) {
            if (!e.transient() || attempts >= policy.max_attempts) throw;
            spdlog::warn("transient gateway failure (attempt {}/{}): {}", attempts, policy.max_attempts, e.what());
            policy.wait(attempts);
        }
    }
}

}  // namespace

AnalysisOutcome analyze(std::string_view prompt_text, ChatClient& client, const Tokenizer& tokenizer,
                        const RetryPolicy& policy) {
    AnalysisOutcome out;
    auto messages = analysis_messages(prompt_text);
    out.tokens = count_tokens(messages, tokenizer);
    out.verdict = attempt_loop(client, messages, policy, parse_analysis, out.attempts, out.last_response);
    return out;
}

// ---- judge -------------------------------------------------------------------

std::optional<JudgeScores> parse_judge(std::string_view text) {
    auto first = text.find('{');
    auto last = text.rfind('}');
    if (first == std::string_view::npos || last == std::string_view::npos || last < first) return std::nullopt;
    auto try_parse = [](std::string_view body) -> std::optional<json> {
        auto doc = json::parse(body, nullptr, false);
        if (doc.is_discarded() || !doc.is_object() || !doc.contains("quality_scores")) return std::nullopt;
        return doc;
    };
    // Tolerate the two score blocks printed without an enclosing object.
    auto doc = try_parse(text.substr(first, last - first + 1));
    if (auto key = text.find("\"quality_scores\""); !doc && key != std::string_view::npos && key < last) {
        doc = try_parse("{" + std::string(text.substr(key, last + 1 - key)) + "}");
    }
    if (!doc) return std::nullopt;
    auto score = [](const json& obj, const char* key, int lo, int hi) -> std::optional<int> {
        if (!obj.is_object() || !obj.contains(key) || !obj[key].is_number_integer()) return std::nullopt;
        int v = obj[key].get<int>();
        if (v < lo || v > hi) return std::nullopt;
        return v;
    };
    if (!doc->contains("alignment_score")) return std::nullopt;
    const json& q = (*doc)["quality_scores"];
    const json& a = (*doc)["alignment_score"];
    auto t = score(q, "threat_tactic_generalization", 1, 5);
    auto p = score(q, "execution_path_traceability", 1, 5);
    auto e = score(q, "evidence_groundedness", 1, 5);
    auto f = score(a, "factual_alignment", 1, 5);
    if (!t || !p || !e || !f || (*f != 1 && *f != 3 && *f != 5)) return std::nullopt;
    return JudgeScores{*t, *p, *e, *f};
}

std::vector<ChatMessage> judge_messages(std::string_view explanation, std::string_view ground_truth) {
    std::string user = prompts::fill(prompts::judge_user(), {{"explanation", std::string(explanation)},
                                                             {"ground_truth", std::string(ground_truth)}});
    return {{Role::System, std::string(prompts::judge_system())}, {Role::User, std::move(user)}};
}

JudgeOutcome judge(std::string_view explanation, std::string_view ground_truth, Label predicted, ChatClient& client,
                   const RetryPolicy& policy) {
    if (trim(ground_truth).empty()) throw Error("judge needs a non-empty ground-truth summary");
    JudgeOutcome out;
    if (predicted != Label::Malicious) {
        out.scores = JudgeScores{};
        out.penalized = true;
        return out;
    }
    std::string last;
    out.scores = attempt_loop(client, judge_messages(explanation, ground_truth), policy, parse_judge, out.attempts, last);
    return out;
}

}  // namespace pkgscope::llm
