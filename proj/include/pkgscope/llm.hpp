#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pkgscope/error.hpp"
#include "pkgscope/ingest.hpp"

namespace pkgscope::llm {

enum class Role { System, User };
std::string_view to_string(Role r) noexcept;

struct ChatMessage {
    Role role = Role::User;
    std::string content;
};

/// Failure talking to the chat endpoint. Transient failures (timeouts, 429,
/// 5xx) are retried by the retry policy; others are raised immediately.
class TransportError : public Error {
public:
    TransportError(const std::string& what, bool transient, int status = 0)
        : Error(what), transient_(transient), status_(status) {}
    bool transient() const noexcept { return transient_; }
    int status() const noexcept { return status_; }

private:
    bool transient_;
    int status_;
};

struct GatewayConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4o";
    double temperature = 0.0;
    int timeout_s = 120;
    int max_retries = 3;
    std::string tokenizer_id = "ws-punct";
    std::string api_key_env = "PKGSCOPE_API_KEY";
    int max_concurrency = 4;
};

GatewayConfig gateway_config_from_json(const nlohmann::json& j, GatewayConfig base = {});

/// Stable identifier of a request: FNV-1a 64 of the canonical JSON of the
/// messages, as 16 hex digits. Recorded fixtures are keyed by it.
std::string request_hash(const std::vector<ChatMessage>& messages);

class ChatClient {
public:
    virtual ~ChatClient() = default;
    /// Single-turn completion; returns the assistant text.
    virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

/// Replays recorded responses. Entries sharing a request hash are returned in
/// order, the last one repeating; the hash "*" matches any request. An entry
/// may carry {"error": "transient"|"fatal"} instead of a response.
class MockClient : public ChatClient {
public:
    struct Entry {
        std::string request_hash;
        std::string response_text;
        std::string error;
    };

    explicit MockClient(std::vector<Entry> entries);
    static MockClient from_file(const std::filesystem::path& path);
    static std::vector<Entry> parse_fixture(const nlohmann::json& doc);

    std::string complete(const std::vector<ChatMessage>& messages) override;

    int calls() const noexcept { return calls_.load(); }
    std::vector<std::vector<ChatMessage>> requests() const;

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> cursor_;
    std::vector<std::vector<ChatMessage>> requests_;
    std::atomic<int> calls_{0};
    mutable std::mutex mu_;
};

/// OpenAI-compatible HTTP chat-completion client. The API key is read from
/// the environment at construction; a missing key is a ConfigError raised
/// before any network I/O.
class HttpClient : public ChatClient {
public:
    explicit HttpClient(GatewayConfig config);
    std::string complete(const std::vector<ChatMessage>& messages) override;

    static nlohmann::json request_body(const GatewayConfig& config, const std::vector<ChatMessage>& messages);
    static std::string parse_response_body(const std::string& body);

private:
    GatewayConfig config_;
    std::string api_key_;
    std::counting_semaphore<64> slots_;
};

/// Disk cache in front of another client, keyed by request hash.
class CachingClient : public ChatClient {
public:
    CachingClient(ChatClient& inner, std::filesystem::path dir);
    std::string complete(const std::vector<ChatMessage>& messages) override;

private:
    ChatClient& inner_;
    std::filesystem::path dir_;
    std::mutex mu_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds first_backoff{1000};  ///< doubles after every failed attempt
    std::function<void(std::chrono::milliseconds)> sleep;  ///< defaults to std::this_thread::sleep_for

    void wait(int failed_attempts) const;
};

/// Calls the client, retrying transient transport failures with exponential backoff.
std::string call_with_retry(ChatClient& client, const std::vector<ChatMessage>& messages, const RetryPolicy& policy);

// ---- token accounting ------------------------------------------------------

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::string_view id() const = 0;
    virtual std::size_t count(std::string_view text) const = 0;
    /// Control tokens the chat template adds around every message.
    virtual std::size_t per_message_overhead() const = 0;
    /// Tokens priming the assistant reply, added once per request.
    virtual std::size_t reply_priming() const = 0;
};

/// Words (runs of letters, digits, '_' and non-ASCII bytes) and single
/// punctuation characters are tokens; whitespace separates.
class WsPunctTokenizer : public Tokenizer {
public:
    std::string_view id() const override { return "ws-punct"; }
    std::size_t count(std::string_view text) const override;
    std::size_t per_message_overhead() const override { return 4; }
    std::size_t reply_priming() const override { return 3; }
};

void register_tokenizer(std::shared_ptr<const Tokenizer> tokenizer);
/// Throws ConfigError for an unknown id.
std::shared_ptr<const Tokenizer> get_tokenizer(std::string_view id);

struct TokenReport {
    std::size_t prompt_tokens = 0;
    std::string tokenizer_id;
};

TokenReport count_tokens(const std::vector<ChatMessage>& messages, const Tokenizer& tokenizer);

// ---- analysis and judging --------------------------------------------------

struct AnalysisVerdict {
    Label verdict = Label::Benign;  ///< Malicious or Benign
    std::string reasoning;
    std::string mitigation;
};

/// Parses the Verdict / Reasoning / Mitigation sections. Returns nullopt when
/// the verdict is missing or not exactly Malicious/Benign, or reasoning is empty.
std::optional<AnalysisVerdict> parse_analysis(std::string_view text);

struct AnalysisOutcome {
    std::optional<AnalysisVerdict> verdict;  ///< nullopt: Invalid
    TokenReport tokens;
    int attempts = 0;
    std::string last_response;
};

std::vector<ChatMessage> analysis_messages(std::string_view prompt_text);

AnalysisOutcome analyze(std::string_view prompt_text, ChatClient& client, const Tokenizer& tokenizer,
                        const RetryPolicy& policy = {});

struct JudgeScores {
    int threat_generalization = 0;
    int path_traceability = 0;
    int evidence_groundedness = 0;
    int factual_alignment = 0;

    double average_quality() const {
        return (threat_generalization + path_traceability + evidence_groundedness) / 3.0;
    }
    friend bool operator==(const JudgeScores&, const JudgeScores&) = default;
};

/// Validates the judge's JSON output: three quality scores in 1..5 and a
/// factual alignment in {1, 3, 5}.
std::optional<JudgeScores> parse_judge(std::string_view text);

struct JudgeOutcome {
    std::optional<JudgeScores> scores;  ///< nullopt: Invalid
    int attempts = 0;
    bool penalized = false;
};

std::vector<ChatMessage> judge_messages(std::string_view explanation, std::string_view ground_truth);

/// Benign predictions on malicious samples score all zeros without a call.
JudgeOutcome judge(std::string_view explanation, std::string_view ground_truth, Label predicted, ChatClient& client,
                   const RetryPolicy& policy = {});

}  // namespace pkgscope::llm
