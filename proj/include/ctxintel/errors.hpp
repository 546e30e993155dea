#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace ctxintel {

/// Root of every error the engine throws. `kind()` is a stable short tag used
/// in traces, HTTP responses and CLI output.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define CTXINTEL_DEFINE_ERROR(Name)                                        \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& message) : Error(#Name, message) {} \
    }

CTXINTEL_DEFINE_ERROR(InvalidArgument);
CTXINTEL_DEFINE_ERROR(NotFound);
CTXINTEL_DEFINE_ERROR(FeedUnavailable);
CTXINTEL_DEFINE_ERROR(StorageError);
CTXINTEL_DEFINE_ERROR(DimensionMismatch);
CTXINTEL_DEFINE_ERROR(EmbeddingBackendError);
CTXINTEL_DEFINE_ERROR(BackendUnavailable);
CTXINTEL_DEFINE_ERROR(ContextOverflow);
CTXINTEL_DEFINE_ERROR(EmptyCompletion);
CTXINTEL_DEFINE_ERROR(MissingSlot);
CTXINTEL_DEFINE_ERROR(UnexpectedSlot);
CTXINTEL_DEFINE_ERROR(UnknownTemplate);
CTXINTEL_DEFINE_ERROR(NerParseError);
CTXINTEL_DEFINE_ERROR(JudgeParseError);
CTXINTEL_DEFINE_ERROR(EmptyInput);
CTXINTEL_DEFINE_ERROR(RaggedMatrix);
CTXINTEL_DEFINE_ERROR(DegenerateAgreement);

#undef CTXINTEL_DEFINE_ERROR

/// Configuration invariant violation; `field()` names the first offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error("ConfigError", field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Malformed upstream or serialized payload. Carries the JSON field path that
/// failed and, for syntax errors, the byte offset reported by the parser.
class ParseError : public Error {
public:
    ParseError(std::string field, const std::string& message,
               std::optional<std::size_t> byte_offset = std::nullopt)
        : Error("ParseError", describe(field, message, byte_offset)),
          field_(std::move(field)), byte_offset_(byte_offset) {}

    const std::string& field() const noexcept { return field_; }
    std::optional<std::size_t> byte_offset() const noexcept { return byte_offset_; }

private:
    static std::string describe(const std::string& field, const std::string& message,
                                std::optional<std::size_t> byte_offset) {
        std::string out = message;
        if (!field.empty()) out += " (field '" + field + "')";
        if (byte_offset) out += " at byte " + std::to_string(*byte_offset);
        return out;
    }

    std::string field_;
    std::optional<std::size_t> byte_offset_;
};

/// A scenario file line that failed to parse or validate. `line()` is 1-based.
class DatasetParseError : public Error {
public:
    DatasetParseError(std::size_t line, const std::string& message)
        : Error("DatasetParseError", "line " + std::to_string(line) + ": " + message),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace ctxintel
