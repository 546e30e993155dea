#pragma once

// Text-generation and embedding boundary. Prompt templates live here; the
// backends behind CompletionBackend / EmbeddingBackend are swappable between
// an OpenAI-compatible HTTP service and deterministic offline doubles.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxintel/clock.hpp"
#include "ctxintel/domain.hpp"
#include "ctxintel/http.hpp"

namespace ctxintel {

enum class TemplateId { NerExtraction, Contextualize, CorrectnessJudge };

std::string_view to_string(TemplateId id);
/// Throws UnknownTemplate.
TemplateId parse_template_id(std::string_view name);

using Bindings = std::map<std::string, std::string>;

struct PromptTemplate {
    TemplateId id;
    std::string instruction;
    std::string body;
    std::vector<std::string> slot_names;
};

const PromptTemplate& prompt_template(TemplateId id);

/// Version tag of the built-in template set; bump whenever wording changes.
inline constexpr std::string_view kPromptSetVersion = "prompts-v1";

/// Substitutes `{slot}` placeholders in one pass; bound values are never
/// re-scanned. Every slot must be bound and no extra bindings are accepted.
/// Throws MissingSlot / UnexpectedSlot.
std::string render_prompt(TemplateId id, const Bindings& bindings);
/// Overload for callers holding an unvalidated template name.
std::string render_prompt(std::string_view template_name, const Bindings& bindings);

/// SHA-256 over the canonical JSON encoding of `bindings`.
std::string bindings_digest(const Bindings& bindings);

struct DecodingParams {
    std::optional<double> temperature;  // unset: backend default
    std::optional<int> max_tokens;
};

struct GenerationRequest {
    TemplateId template_id = TemplateId::NerExtraction;
    std::string prompt;
    std::string model_id;  // empty: backend's configured model
    DecodingParams decoding;
    std::string bindings_digest;
};

struct TokenUsage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct GenerationResult {
    std::string text;
    TokenUsage usage;
    std::chrono::milliseconds latency{0};
    std::string model_id;
};

/// Rough token estimate used for context budgeting: ceil(bytes / 4).
std::size_t estimate_tokens(std::string_view text);

class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    virtual GenerationResult complete(const GenerationRequest& request) = 0;
    virtual std::string model_id() const = 0;
    virtual std::size_t context_budget_tokens() const = 0;
};

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::vector<Vector> embed(std::span<const std::string> texts) = 0;
    virtual std::size_t dimension() = 0;
    virtual std::string model_id() const = 0;
};

/// Offline embedder: signed feature hashing of bag-of-words tokens (FNV-1a,
/// stopwords dropped) into a fixed number of buckets, L2-normalized. A text
/// without usable tokens hashes its raw bytes into a single bucket.
class HashingEmbedder final : public EmbeddingBackend {
public:
    static constexpr std::size_t kDefaultDimension = 256;

    explicit HashingEmbedder(std::size_t dimension = kDefaultDimension);

    std::vector<Vector> embed(std::span<const std::string> texts) override;
    std::size_t dimension() override { return dimension_; }
    std::string model_id() const override;

    Vector embed_one(std::string_view text) const;
    /// Bucket a token lands in; exposed for tests that need collision-free inputs.
    std::size_t bucket(std::string_view token) const;

private:
    std::size_t dimension_;
};

/// Offline completion double. Lookup order: exact (template, bindings digest)
/// entry, then the first rule for the template whose `when_contains`
/// substrings all occur in the prompt, then the template's default, then a
/// labeled placeholder. Never fails on unknown keys.
class ScriptedCompletionBackend final : public CompletionBackend {
public:
    explicit ScriptedCompletionBackend(std::string model_id = "scripted-offline",
                                       std::size_t context_budget_tokens = 32768);

    /// Script file format: {"model_id", "context_budget_tokens", "responses": [
    /// {"template", "bindings_digest"? , "when_contains"? : [..], "text"}],
    /// "defaults": {"<template>": "text"}}
    static std::shared_ptr<ScriptedCompletionBackend> load(const std::filesystem::path& path);
    static std::shared_ptr<ScriptedCompletionBackend> from_json(const Json& script);

    void add_response(TemplateId id, std::string digest, std::string text);
    void add_rule(TemplateId id, std::vector<std::string> when_contains, std::string text);
    void set_default(TemplateId id, std::string text);

    GenerationResult complete(const GenerationRequest& request) override;
    std::string model_id() const override { return model_id_; }
    std::size_t context_budget_tokens() const override { return budget_; }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    struct Rule {
        TemplateId id;
        std::vector<std::string> when_contains;
        std::string text;
    };

    std::string model_id_;
    std::size_t budget_;
    std::map<std::pair<TemplateId, std::string>, std::string> exact_;
    std::vector<Rule> rules_;
    std::map<TemplateId, std::string> defaults_;
    std::atomic<std::size_t> calls_{0};
};

struct RemoteBackendConfig {
    std::string base_url;  // e.g. https://api.openai.com or http://localhost:8000/v1
    std::string api_key;
    std::string model_id;
    std::string embed_model_id;
    std::size_t context_budget_tokens = 128000;
    std::optional<std::size_t> embed_dimension;
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
    std::chrono::milliseconds timeout{120000};

    /// LLM_BASE_URL, LLM_API_KEY, LLM_MODEL_ID, EMBED_MODEL_ID.
    static RemoteBackendConfig from_env();
};

/// Chat-completions client (POST {base}/v1/chat/completions, bearer key).
class RemoteCompletionBackend final : public CompletionBackend {
public:
    RemoteCompletionBackend(RemoteBackendConfig config, std::shared_ptr<HttpTransport> transport,
                            std::shared_ptr<Clock> clock);

    GenerationResult complete(const GenerationRequest& request) override;
    std::string model_id() const override { return config_.model_id; }
    std::size_t context_budget_tokens() const override { return config_.context_budget_tokens; }

private:
    RemoteBackendConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    std::shared_ptr<Clock> clock_;
};

/// Embeddings client (POST {base}/v1/embeddings). The dimension is taken from
/// config or learned from the first response.
class RemoteEmbeddingBackend final : public EmbeddingBackend {
public:
    RemoteEmbeddingBackend(RemoteBackendConfig config, std::shared_ptr<HttpTransport> transport,
                           std::shared_ptr<Clock> clock);

    std::vector<Vector> embed(std::span<const std::string> texts) override;
    std::size_t dimension() override;
    std::string model_id() const override { return config_.embed_model_id; }

private:
    RemoteBackendConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    std::shared_ptr<Clock> clock_;
    std::mutex mu_;
    std::optional<std::size_t> dimension_;
};

/// Joins a base URL and an API path, tolerating a trailing "/v1" on the base.
std::string join_api_url(std::string_view base_url, std::string_view api_path);

struct GatewayOptions {
    std::ptrdiff_t max_in_flight = 4;
    // Debug exchange log (JSON lines). Any string in `redact` is masked.
    std::optional<std::filesystem::path> exchange_log;
    std::vector<std::string> redact;
};

class GenerationGateway {
public:
    GenerationGateway(std::shared_ptr<CompletionBackend> completion,
                      std::shared_ptr<EmbeddingBackend> embedding,
                      std::shared_ptr<Clock> clock, GatewayOptions options = {});

    /// Throws ContextOverflow before dispatch when the prompt exceeds the
    /// backend budget, EmptyCompletion when the backend returns blank text.
    GenerationResult complete(GenerationRequest request);

    /// Throws InvalidArgument on an empty list; one vector per text.
    std::vector<Vector> embed(std::span<const std::string> texts);
    Vector embed_one(std::string_view text);

    std::size_t dimension();
    std::string completion_model_id() const { return completion_->model_id(); }
    std::string embedding_model_id() const { return embedding_->model_id(); }

    std::size_t completion_calls() const noexcept { return completion_calls_.load(); }
    std::size_t embed_calls() const noexcept { return embed_calls_.load(); }

private:
    void log_exchange(const GenerationRequest& request, const GenerationResult* result,
                      std::string_view error);

    std::shared_ptr<CompletionBackend> completion_;
    std::shared_ptr<EmbeddingBackend> embedding_;
    std::shared_ptr<Clock> clock_;
    GatewayOptions options_;
    std::counting_semaphore<> slots_;
    std::mutex log_mu_;
    std::atomic<std::size_t> completion_calls_{0};
    std::atomic<std::size_t> embed_calls_{0};
};

}  // namespace ctxintel
