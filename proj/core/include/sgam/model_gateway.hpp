#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "sgam/errors.hpp"

namespace sgam::gateway {

using EmbeddingVector = std::vector<double>;

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual EmbeddingVector embed(const std::string& text) = 0;
    virtual size_t dimension() const = 0;
};

// Deterministic offline embedder: tokens map to pseudo-random unit vectors
// through a stable hash of (token, seed); the text embedding is the
// normalized token sum, e_0 for texts with no usable token. Byte-identical
// across runs and platforms.
EmbeddingVector mock_embed(const std::string& text, size_t dimension, std::uint64_t seed);

class MockEmbeddingProvider final : public EmbeddingProvider {
public:
    MockEmbeddingProvider(size_t dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {}
    EmbeddingVector embed(const std::string& text) override { return mock_embed(text, dimension_, seed_); }
    size_t dimension() const override { return dimension_; }

private:
    size_t dimension_;
    std::uint64_t seed_;
};

// Memoizes an inner provider. With caching the results must equal the
// uncached provider's results, so this is a pure passthrough on miss.
class CachingEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit CachingEmbeddingProvider(std::unique_ptr<EmbeddingProvider> inner) : inner_(std::move(inner)) {}
    EmbeddingVector embed(const std::string& text) override;
    size_t dimension() const override { return inner_->dimension(); }
    size_t hits() const { return hits_; }

private:
    std::unique_ptr<EmbeddingProvider> inner_;
    std::mutex mutex_;
    std::map<std::string, EmbeddingVector> cache_;
    size_t hits_ = 0;
};

struct TokenUsage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct ChatRequest {
    std::string template_id;
    std::map<std::string, std::string> bindings;
    std::string prompt;  // rendered template text
    double temperature = 0.0;
    int max_tokens = 2048;
};

struct ChatResponse {
    std::string text;
    TokenUsage usage;
};

class ChatProvider {
public:
    virtual ~ChatProvider() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// Offline chat double. Answers from a scripted map keyed by
// (template id, hash of the bound placeholders) and fails loudly on anything
// unscripted.
class ScriptedChatProvider final : public ChatProvider {
public:
    ScriptedChatProvider() = default;

    static std::string script_key(const std::string& template_id,
                                  const std::map<std::string, std::string>& bindings);

    void add_response(const std::string& template_id, const std::map<std::string, std::string>& bindings,
                      const std::string& response);
    void add_keyed_response(const std::string& key, const std::string& response);

    ChatResponse complete(const ChatRequest& request) override;

    // Script file: JSON {"entries": [{"key", "template", "response"}, ...]}.
    static ScriptedChatProvider from_file(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    size_t size() const { return responses_.size(); }

private:
    std::map<std::string, std::string> responses_;
    std::map<std::string, std::string> templates_;  // key -> template id, for the script file
};

struct PromptTemplate {
    std::string id;
    std::string body;
};

// Registry of prompt templates. render() performs byte-exact single-pass
// substitution of {placeholder} occurrences and throws UnboundPlaceholder
// when the template references a name the bindings do not cover.
class TemplateRegistry {
public:
    void register_template(PromptTemplate tmpl);
    bool has(const std::string& id) const { return templates_.count(id) > 0; }
    const PromptTemplate& get(const std::string& id) const;
    std::string render(const std::string& id, const std::map<std::string, std::string>& bindings) const;

    // Template file: JSON {"templates": [{"id", "body", "reconstructed": [..]}]}.
    static TemplateRegistry from_file(const std::filesystem::path& path);

private:
    std::map<std::string, PromptTemplate> templates_;
};

struct HttpProviderConfig {
    std::string base_url;        // e.g. "https://api.openai.com"
    std::string model;           // e.g. "text-embedding-3-small"
    std::string api_key_env;     // environment variable holding the key
    int timeout_seconds = 60;
    size_t dimension = 1536;     // embeddings only
    int max_attempts = 3;
    int retry_base_delay_ms = 1000;
};

// OpenAI-style /v1/embeddings client with retry on retryable transport
// errors (3 attempts, exponential backoff).
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HttpEmbeddingProvider(HttpProviderConfig config);
    EmbeddingVector embed(const std::string& text) override;
    size_t dimension() const override { return config_.dimension; }

private:
    HttpProviderConfig config_;
};

// OpenAI-style /v1/chat/completions client.
class HttpChatProvider final : public ChatProvider {
public:
    explicit HttpChatProvider(HttpProviderConfig config);
    ChatResponse complete(const ChatRequest& request) override;

private:
    HttpProviderConfig config_;
};

// Front door for the pipeline: owns the providers, enforces the in-flight
// request cap, validates inputs, and renders templates for chat calls.
class Gateway {
public:
    Gateway(std::unique_ptr<EmbeddingProvider> embedding, std::unique_ptr<ChatProvider> chat,
            TemplateRegistry templates, int max_in_flight = 4);

    // Unit vector for non-empty text; deterministic per provider contract.
    EmbeddingVector embed(const std::string& text);

    // Renders the template and forwards to the chat provider.
    ChatResponse complete(const std::string& template_id, const std::map<std::string, std::string>& bindings,
                          double temperature = 0.0);

    const TemplateRegistry& templates() const { return templates_; }
    EmbeddingProvider& embedding_provider() { return *embedding_; }
    size_t embedding_dimension() const { return embedding_->dimension(); }

private:
    std::unique_ptr<EmbeddingProvider> embedding_;
    std::unique_ptr<ChatProvider> chat_;
    TemplateRegistry templates_;
    int max_in_flight_;
    struct Semaphore;
    std::shared_ptr<Semaphore> slots_;
};

}  // namespace sgam::gateway
