#pragma once

#include <chrono>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace ctxintel {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// ISO-8601 UTC, always with millisecond precision: 2024-03-13T07:15:07.560Z
std::string format_timestamp(Timestamp t);

/// Accepts `YYYY-MM-DDTHH:MM:SS[.fff][Z]`, the shape NVD and our own
/// serializer emit. Returns nullopt on anything else.
std::optional<Timestamp> parse_timestamp(std::string_view text);

/// Time source. Everything that reads the wall clock or waits goes through
/// this so tests can freeze or simulate time.
class Clock {
public:
    virtual ~Clock() = default;
    virtual Timestamp now() const = 0;
    virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SystemClock final : public Clock {
public:
    Timestamp now() const override;
    void sleep_for(std::chrono::milliseconds d) override;
};

/// Simulated clock. `sleep_for` advances time instantly; with `frozen` set,
/// sleeping does not advance time at all (used for byte-stable runs).
class ManualClock final : public Clock {
public:
    explicit ManualClock(Timestamp start, bool frozen = false) : now_(start), frozen_(frozen) {}

    Timestamp now() const override;
    void sleep_for(std::chrono::milliseconds d) override;
    void advance(std::chrono::milliseconds d);

    std::chrono::milliseconds total_slept() const;

private:
    mutable std::mutex mu_;
    Timestamp now_;
    bool frozen_;
    std::chrono::milliseconds slept_{0};
};

}  // namespace ctxintel
