#pragma once

// Global threat repository: the public vulnerability feed (NVD CVE API 2.0),
// its record normalization, response cache and request budget.

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctxintel/clock.hpp"
#include "ctxintel/domain.hpp"
#include "ctxintel/http.hpp"

namespace ctxintel {

/// Normalizes one upstream record. Accepts a full API page holding exactly
/// one vulnerability, a `{"cve": {...}}` element, or a bare cve object.
/// Unknown cve fields are kept in `extra` (strings verbatim, everything else
/// as compact JSON). Throws ParseError.
ThreatReport parse_feed_record(std::string_view raw);

/// Every vulnerability of an API page, in upstream order.
std::vector<ThreatReport> parse_feed_page(std::string_view raw);

/// Admits at most `budget` events in any sliding window. `acquire` waits on
/// the injected clock, so a ManualClock turns waits into simulated time.
class SlidingWindowRateLimiter {
public:
    SlidingWindowRateLimiter(std::size_t budget, std::chrono::milliseconds window,
                             std::shared_ptr<Clock> clock);

    void acquire();

    std::size_t budget() const noexcept { return budget_; }
    std::chrono::milliseconds window() const noexcept { return window_; }
    /// Admission times, oldest first (complete history, for audit and tests).
    std::vector<Timestamp> admissions() const;

private:
    std::size_t budget_;
    std::chrono::milliseconds window_;
    std::shared_ptr<Clock> clock_;
    mutable std::mutex mu_;
    std::deque<Timestamp> recent_;
    std::vector<Timestamp> history_;
};

/// Response cache keyed by request URL. With a directory it is
/// content-addressed on disk (sha256(url).json) and survives restarts.
class ResponseCache {
public:
    ResponseCache(std::optional<std::filesystem::path> dir, std::chrono::milliseconds ttl,
                  std::shared_ptr<Clock> clock);

    std::optional<std::string> get(const std::string& key);
    void put(const std::string& key, const std::string& body);

private:
    struct Entry {
        Timestamp stored_at;
        std::string body;
    };

    std::filesystem::path path_for(const std::string& key) const;

    std::optional<std::filesystem::path> dir_;
    std::chrono::milliseconds ttl_;
    std::shared_ptr<Clock> clock_;
    std::mutex mu_;
    std::map<std::string, Entry> memory_;
};

struct FeedPage {
    std::vector<ThreatReport> reports;  // upstream rank order
    bool cache_hit = false;
};

class VulnerabilityFeed {
public:
    virtual ~VulnerabilityFeed() = default;
    /// Throws NotFound, FeedUnavailable or ParseError.
    virtual ThreatReport fetch_by_id(std::string_view cve_id) = 0;
    virtual FeedPage search_keyword(std::string_view keyword, int limit) = 0;
    virtual std::string name() const = 0;
};

struct NvdOptions {
    std::string base_url = "https://services.nvd.nist.gov/rest/json/cves/2.0";
    std::string api_key;
    // Requests per window; unset means 5 without a key and 50 with one.
    std::optional<std::size_t> request_budget;
    std::chrono::milliseconds window{30000};
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
    std::chrono::milliseconds timeout{30000};
    std::optional<std::filesystem::path> cache_dir;
    std::chrono::milliseconds cache_ttl{std::chrono::hours{24}};

    std::size_t effective_budget() const {
        return request_budget.value_or(api_key.empty() ? 5 : 50);
    }

    /// Reads NVD_API_KEY.
    static NvdOptions from_env();
};

class NvdFeed final : public VulnerabilityFeed {
public:
    NvdFeed(NvdOptions options, std::shared_ptr<HttpTransport> transport, std::shared_ptr<Clock> clock);

    ThreatReport fetch_by_id(std::string_view cve_id) override;
    FeedPage search_keyword(std::string_view keyword, int limit) override;
    std::string name() const override { return "nvd"; }

    std::size_t upstream_requests() const noexcept { return upstream_requests_.load(); }
    const SlidingWindowRateLimiter& rate_limiter() const noexcept { return limiter_; }

private:
    struct Fetched {
        std::string body;
        int status = 0;
        bool cache_hit = false;
    };

    Fetched get(const std::string& url);

    NvdOptions options_;
    std::shared_ptr<HttpTransport> transport_;
    std::shared_ptr<Clock> clock_;
    SlidingWindowRateLimiter limiter_;
    ResponseCache cache_;
    std::atomic<std::size_t> upstream_requests_{0};
};

/// Hermetic feed over a fixture directory: one file per record holding raw
/// upstream bytes, named by report id (optionally with a .json suffix).
/// Keyword search mirrors the upstream semantics: every word of the keyword
/// must occur in the description, case-insensitively; rank = id order.
class StubFeed final : public VulnerabilityFeed {
public:
    explicit StubFeed(const std::filesystem::path& fixture_dir);
    explicit StubFeed(std::vector<ThreatReport> reports);

    ThreatReport fetch_by_id(std::string_view cve_id) override;
    FeedPage search_keyword(std::string_view keyword, int limit) override;
    std::string name() const override { return "stub"; }

    std::size_t upstream_requests() const noexcept { return requests_.load(); }
    std::size_t size() const noexcept { return reports_.size(); }

private:
    std::map<std::string, ThreatReport> reports_;
    std::atomic<std::size_t> requests_{0};
};

struct GlobalQueryLog {
    std::string keyword;
    Timestamp requested_at{};
    std::vector<std::string> result_ids;
    bool cache_hit = false;
    std::optional<std::string> error;
};

void to_json(Json& j, const GlobalQueryLog& v);

struct GlobalSearchResult {
    std::vector<ThreatReport> reports;  // deduplicated, (keyword index, rank) order
    std::vector<GlobalQueryLog> logs;   // one per keyword, keyword order
};

class GlobalRepository {
public:
    GlobalRepository(std::shared_ptr<VulnerabilityFeed> feed, std::shared_ptr<Clock> clock,
                     std::size_t max_concurrency = 4);

    /// Throws InvalidArgument when `cve_id` is not a CVE identifier.
    ThreatReport fetch_by_id(std::string_view cve_id);

    /// One feed query per keyword, each capped at `limit`. A failing keyword
    /// is annotated in its log entry instead of failing the batch.
    GlobalSearchResult search_keywords(const QuerySet& queries, int limit);

    VulnerabilityFeed& feed() noexcept { return *feed_; }

private:
    std::shared_ptr<VulnerabilityFeed> feed_;
    std::shared_ptr<Clock> clock_;
    std::size_t max_concurrency_;
};

}  // namespace ctxintel
