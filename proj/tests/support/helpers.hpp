#pragma once

#include <atomic>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "ctxintel/app.hpp"
#include "ctxintel/feed.hpp"
#include "ctxintel/gateway.hpp"
#include "ctxintel/http.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path fixtures() { return fs::path(CTXINTEL_FIXTURES); }
inline fs::path fixture(const std::string& rel) { return fixtures() / rel; }

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, const std::string& data) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << data;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "ctxintel-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline ctxintel::Timestamp epoch_2024() { return *ctxintel::parse_timestamp("2024-08-12T00:00:00.000Z"); }

/// Wraps a feed and counts every call that reaches it.
class CountingFeed final : public ctxintel::VulnerabilityFeed {
public:
    explicit CountingFeed(std::shared_ptr<ctxintel::VulnerabilityFeed> inner) : inner_(std::move(inner)) {}

    ctxintel::ThreatReport fetch_by_id(std::string_view id) override {
        ++calls;
        return inner_->fetch_by_id(id);
    }
    ctxintel::FeedPage search_keyword(std::string_view keyword, int limit) override {
        ++calls;
        return inner_->search_keyword(keyword, limit);
    }
    std::string name() const override { return "counting-" + inner_->name(); }

    std::atomic<int> calls{0};

private:
    std::shared_ptr<ctxintel::VulnerabilityFeed> inner_;
};

class CountingCompletion final : public ctxintel::CompletionBackend {
public:
    explicit CountingCompletion(std::shared_ptr<ctxintel::CompletionBackend> inner) : inner_(std::move(inner)) {}

    ctxintel::GenerationResult complete(const ctxintel::GenerationRequest& r) override {
        ++calls;
        return inner_->complete(r);
    }
    std::string model_id() const override { return inner_->model_id(); }
    std::size_t context_budget_tokens() const override { return inner_->context_budget_tokens(); }

    std::atomic<int> calls{0};

private:
    std::shared_ptr<ctxintel::CompletionBackend> inner_;
};

class CountingEmbedding final : public ctxintel::EmbeddingBackend {
public:
    explicit CountingEmbedding(std::shared_ptr<ctxintel::EmbeddingBackend> inner) : inner_(std::move(inner)) {}

    std::vector<ctxintel::Vector> embed(std::span<const std::string> texts) override {
        ++calls;
        return inner_->embed(texts);
    }
    std::size_t dimension() override { return inner_->dimension(); }
    std::string model_id() const override { return inner_->model_id(); }

    std::atomic<int> calls{0};

private:
    std::shared_ptr<ctxintel::EmbeddingBackend> inner_;
};

/// Completion double answering from a callable.
class LambdaCompletion final : public ctxintel::CompletionBackend {
public:
    using Fn = std::function<std::string(const ctxintel::GenerationRequest&)>;
    explicit LambdaCompletion(Fn fn, std::size_t budget = 32768) : fn_(std::move(fn)), budget_(budget) {}

    ctxintel::GenerationResult complete(const ctxintel::GenerationRequest& r) override {
        ++calls;
        ctxintel::GenerationResult out;
        out.text = fn_(r);
        out.model_id = "lambda";
        return out;
    }
    std::string model_id() const override { return "lambda"; }
    std::size_t context_budget_tokens() const override { return budget_; }

    std::atomic<int> calls{0};

private:
    Fn fn_;
    std::size_t budget_;
};

/// Records requests and answers from a queue (or a responder callable).
class FakeTransport final : public ctxintel::HttpTransport {
public:
    ctxintel::HttpResponse send(const ctxintel::HttpRequest& request) override {
        std::lock_guard lock(mu_);
        requests.push_back(request);
        if (responder) return responder(request);
        if (queue.empty()) return {404, "", ""};
        auto r = queue.front();
        queue.pop_front();
        return r;
    }

    std::function<ctxintel::HttpResponse(const ctxintel::HttpRequest&)> responder;
    std::deque<ctxintel::HttpResponse> queue;
    std::vector<ctxintel::HttpRequest> requests;

private:
    std::mutex mu_;
};

inline std::shared_ptr<ctxintel::GenerationGateway> offline_gateway(
    std::shared_ptr<ctxintel::CompletionBackend> completion = nullptr,
    std::shared_ptr<ctxintel::EmbeddingBackend> embedding = nullptr) {
    if (!completion) completion = ctxintel::ScriptedCompletionBackend::load(fixture("scripts/offline.json"));
    if (!embedding) embedding = std::make_shared<ctxintel::HashingEmbedder>();
    return std::make_shared<ctxintel::GenerationGateway>(std::move(completion), std::move(embedding),
                                                         std::make_shared<ctxintel::ManualClock>(epoch_2024(), true));
}

/// Offline settings pointing at the bundled fixtures.
inline ctxintel::Settings offline_settings() {
    ctxintel::Settings s;
    s.backends.script = fixture("scripts/offline.json");
    s.backends.feed_fixtures = fixture("feed");
    s.backends.frozen_clock = true;
    return s;
}

inline ctxintel::ThreatReport load_trigger(const std::string& rel) {
    return ctxintel::decode<ctxintel::ThreatReport>(read_file(fixture(rel)));
}

}  // namespace testing_support
