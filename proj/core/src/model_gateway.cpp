#include "sgam/model_gateway.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sgam/text_util.hpp"

namespace sgam::gateway {

namespace {

using nlohmann::json;

std::vector<double> unit_normalize(std::vector<double> v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw ZeroVector("embedding has zero norm");
    for (double& x : v) x /= norm;
    return v;
}

std::string canonical_bindings(const std::map<std::string, std::string>& bindings) {
    std::string out;
    for (const auto& [name, value] : bindings) {
        out += name;
        out += '\x1f';
        out += value;
        out += '\x1e';
    }
    return out;
}

}  // namespace

EmbeddingVector mock_embed(const std::string& text, size_t dimension, std::uint64_t seed) {
    if (dimension < 8) throw DimensionMismatch("mock embeddings need dimension >= 8");
    const auto tokens = text::tokenize(text);
    if (tokens.empty()) {
        EmbeddingVector basis(dimension, 0.0);
        basis[0] = 1.0;
        return basis;
    }
    EmbeddingVector sum(dimension, 0.0);
    for (const auto& token : tokens) {
        std::uint64_t state = text::fnv1a64(token) ^ (seed * 0x9e3779b97f4a7c15ULL);
        EmbeddingVector v(dimension);
        for (size_t i = 0; i < dimension; ++i) {
            // Uniform in [-1, 1) from the top 53 bits.
            const std::uint64_t bits = text::splitmix64(state);
            v[i] = static_cast<double>(bits >> 11) * (1.0 / 4503599627370496.0) - 1.0;
        }
        v = unit_normalize(std::move(v));
        for (size_t i = 0; i < dimension; ++i) sum[i] += v[i];
    }
    return unit_normalize(std::move(sum));
}

EmbeddingVector CachingEmbeddingProvider::embed(const std::string& text) {
    {
        std::lock_guard lock(mutex_);
        auto it = cache_.find(text);
        if (it != cache_.end()) {
            ++hits_;
            return it->second;
        }
    }
    EmbeddingVector v = inner_->embed(text);
    std::lock_guard lock(mutex_);
    cache_.emplace(text, v);
    return v;
}

std::string ScriptedChatProvider::script_key(const std::string& template_id,
                                             const std::map<std::string, std::string>& bindings) {
    return template_id + ":" + text::hex64(text::fnv1a64(canonical_bindings(bindings)));
}

void ScriptedChatProvider::add_response(const std::string& template_id,
                                        const std::map<std::string, std::string>& bindings,
                                        const std::string& response) {
    const std::string key = script_key(template_id, bindings);
    responses_[key] = response;
    templates_[key] = template_id;
}

void ScriptedChatProvider::add_keyed_response(const std::string& key, const std::string& response) {
    responses_[key] = response;
    templates_[key] = key.substr(0, key.find(':'));
}

ChatResponse ScriptedChatProvider::complete(const ChatRequest& request) {
    const std::string key = script_key(request.template_id, request.bindings);
    auto it = responses_.find(key);
    if (it == responses_.end()) {
        std::ostringstream msg;
        msg << "no scripted response for template \"" << request.template_id << "\" (key " << key << ")";
        msg << "; bound placeholders:";
        for (const auto& [name, value] : request.bindings) {
            std::string preview = value.substr(0, 60);
            std::replace(preview.begin(), preview.end(), '\n', ' ');
            msg << " " << name << "=\"" << preview << (value.size() > 60 ? "..." : "") << "\"";
        }
        throw UnscriptedMockInput(msg.str());
    }
    ChatResponse response;
    response.text = it->second;
    response.usage.prompt_tokens = static_cast<int>(request.prompt.size() / 4);
    response.usage.completion_tokens = static_cast<int>(response.text.size() / 4);
    return response;
}

ScriptedChatProvider ScriptedChatProvider::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mock script " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SyntaxError("malformed mock script " + path.string() + ": " + e.what());
    }
    ScriptedChatProvider provider;
    for (const auto& entry : doc.at("entries")) {
        provider.add_keyed_response(entry.at("key").get<std::string>(), entry.at("response").get<std::string>());
    }
    return provider;
}

void ScriptedChatProvider::save(const std::filesystem::path& path) const {
    json doc;
    doc["entries"] = json::array();
    for (const auto& [key, response] : responses_) {
        json entry;
        entry["key"] = key;
        auto it = templates_.find(key);
        entry["template"] = it == templates_.end() ? "" : it->second;
        entry["response"] = response;
        doc["entries"].push_back(std::move(entry));
    }
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write mock script " + path.string());
    out << doc.dump(2) << "\n";
}

void TemplateRegistry::register_template(PromptTemplate tmpl) {
    if (tmpl.id.empty()) throw ValidationError("prompt template id must be non-empty");
    templates_[tmpl.id] = std::move(tmpl);
}

const PromptTemplate& TemplateRegistry::get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw ValidationError("no prompt template registered under \"" + id + "\"");
    return it->second;
}

std::string TemplateRegistry::render(const std::string& id,
                                     const std::map<std::string, std::string>& bindings) const {
    const PromptTemplate& tmpl = get(id);
    std::string out;
    const std::string& body = tmpl.body;
    auto is_name = [](const std::string& s) {
        if (s.empty()) return false;
        if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
        for (char c : s) {
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
        }
        return true;
    };
    for (size_t i = 0; i < body.size();) {
        if (body[i] == '{') {
            auto close = body.find('}', i);
            if (close != std::string::npos) {
                const std::string name = body.substr(i + 1, close - i - 1);
                if (is_name(name)) {
                    auto it = bindings.find(name);
                    if (it == bindings.end()) {
                        throw UnboundPlaceholder("template \"" + id + "\" placeholder {" + name +
                                                 "} has no binding");
                    }
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(body[i++]);
    }
    return out;
}

TemplateRegistry TemplateRegistry::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open template file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SyntaxError("malformed template file " + path.string() + ": " + e.what());
    }
    TemplateRegistry registry;
    for (const auto& entry : doc.at("templates")) {
        registry.register_template({entry.at("id").get<std::string>(), entry.at("body").get<std::string>()});
    }
    return registry;
}

namespace {

std::string require_api_key(const HttpProviderConfig& config) {
    if (config.api_key_env.empty()) return "";
    const char* key = std::getenv(config.api_key_env.c_str());
    if (!key || !*key) {
        throw ProviderError("environment variable " + config.api_key_env + " is unset; cannot authenticate",
                            /*retryable=*/false);
    }
    return key;
}

// Issues a POST with the configured retry policy. `send` returns the parsed
// body or throws ProviderError; retryable failures are retried with
// exponential backoff starting at retry_base_delay_ms.
json post_with_retry(const HttpProviderConfig& config, const std::string& path, const json& body) {
    const std::string key = require_api_key(config);
    int attempt = 0;
    int delay_ms = config.retry_base_delay_ms;
    while (true) {
        ++attempt;
        try {
            httplib::Client client(config.base_url);
            client.set_connection_timeout(config.timeout_seconds, 0);
            client.set_read_timeout(config.timeout_seconds, 0);
            httplib::Headers headers;
            if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
            auto result = client.Post(path, headers, body.dump(), "application/json");
            if (!result) {
                throw ProviderError("transport failure calling " + config.base_url + path + ": " +
                                        httplib::to_string(result.error()),
                                    /*retryable=*/true);
            }
            if (result->status == 401 || result->status == 403) {
                throw ProviderError("authentication rejected by " + config.base_url + " (HTTP " +
                                        std::to_string(result->status) + ")",
                                    /*retryable=*/false);
            }
            if (result->status >= 500) {
                throw ProviderError("server error from " + config.base_url + " (HTTP " +
                                        std::to_string(result->status) + ")",
                                    /*retryable=*/true);
            }
            if (result->status != 200) {
                throw ProviderError("unexpected HTTP " + std::to_string(result->status) + " from " +
                                        config.base_url + path + ": " + result->body,
                                    /*retryable=*/false);
            }
            return json::parse(result->body);
        } catch (const ProviderError& e) {
            if (!e.retryable() || attempt >= config.max_attempts) throw;
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
            delay_ms *= 2;
        } catch (const json::parse_error& e) {
            throw ProviderError(std::string("unparseable provider response: ") + e.what(), /*retryable=*/false);
        }
    }
}

}  // namespace

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpProviderConfig config) : config_(std::move(config)) {}

EmbeddingVector HttpEmbeddingProvider::embed(const std::string& text) {
    json body = {{"model", config_.model}, {"input", text}};
    json response = post_with_retry(config_, "/v1/embeddings", body);
    try {
        auto vec = response.at("data").at(0).at("embedding").get<std::vector<double>>();
        return unit_normalize(std::move(vec));
    } catch (const json::exception& e) {
        throw ProviderError(std::string("embedding response missing fields: ") + e.what(), /*retryable=*/false);
    }
}

HttpChatProvider::HttpChatProvider(HttpProviderConfig config) : config_(std::move(config)) {}

ChatResponse HttpChatProvider::complete(const ChatRequest& request) {
    json body = {{"model", config_.model},
                 {"temperature", request.temperature},
                 {"max_tokens", request.max_tokens},
                 {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})}};
    json response = post_with_retry(config_, "/v1/chat/completions", body);
    try {
        ChatResponse out;
        out.text = response.at("choices").at(0).at("message").at("content").get<std::string>();
        if (response.contains("usage")) {
            out.usage.prompt_tokens = response["usage"].value("prompt_tokens", 0);
            out.usage.completion_tokens = response["usage"].value("completion_tokens", 0);
        }
        return out;
    } catch (const json::exception& e) {
        throw ProviderError(std::string("chat response missing fields: ") + e.what(), /*retryable=*/false);
    }
}

// Plain counting semaphore; std::counting_semaphore needs a compile-time max,
// and the cap is configuration.
struct Gateway::Semaphore {
    std::mutex mutex;
    std::condition_variable cv;
    int available;

    explicit Semaphore(int count) : available(count) {}

    void acquire() {
        std::unique_lock lock(mutex);
        cv.wait(lock, [&] { return available > 0; });
        --available;
    }
    void release() {
        {
            std::lock_guard lock(mutex);
            ++available;
        }
        cv.notify_one();
    }
};

Gateway::Gateway(std::unique_ptr<EmbeddingProvider> embedding, std::unique_ptr<ChatProvider> chat,
                 TemplateRegistry templates, int max_in_flight)
    : embedding_(std::move(embedding)),
      chat_(std::move(chat)),
      templates_(std::move(templates)),
      max_in_flight_(max_in_flight),
      slots_(std::make_shared<Semaphore>(max_in_flight > 0 ? max_in_flight : 1)) {}

EmbeddingVector Gateway::embed(const std::string& text) {
    if (text::trim(text).empty()) throw EmptyText("cannot embed empty text");
    slots_->acquire();
    struct Release {
        Semaphore* s;
        ~Release() { s->release(); }
    } release{slots_.get()};
    return unit_normalize(embedding_->embed(text));
}

ChatResponse Gateway::complete(const std::string& template_id,
                               const std::map<std::string, std::string>& bindings, double temperature) {
    ChatRequest request;
    request.template_id = template_id;
    request.bindings = bindings;
    request.prompt = templates_.render(template_id, bindings);
    request.temperature = temperature;
    slots_->acquire();
    struct Release {
        Semaphore* s;
        ~Release() { s->release(); }
    } release{slots_.get()};
    return chat_->complete(request);
}

}  // namespace sgam::gateway
