#pragma once

#include <stdexcept>
#include <string>

namespace sgam {

// Base class for every error raised by the library. Callers that do not care
// about the precise failure catch this one.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& message) : std::runtime_error(message) {}
};

#define SGAM_DEFINE_ERROR(NAME)                                              \
    class NAME : public Error {                                              \
    public:                                                                  \
        using Error::Error;                                                  \
    }

// Schema / graph
SGAM_DEFINE_ERROR(ValidationError);
SGAM_DEFINE_ERROR(UnknownNode);

// Path engine
SGAM_DEFINE_ERROR(NotAKey);
SGAM_DEFINE_ERROR(NoReachableKey);
SGAM_DEFINE_ERROR(PathExplosion);
SGAM_DEFINE_ERROR(MixedTablePath);

// Retrieval
SGAM_DEFINE_ERROR(EmptyInput);
SGAM_DEFINE_ERROR(EmptyIndex);
SGAM_DEFINE_ERROR(EmptyKeywordSet);
SGAM_DEFINE_ERROR(DimensionMismatch);
SGAM_DEFINE_ERROR(ZeroVector);
SGAM_DEFINE_ERROR(EmbeddingError);

// Table store
SGAM_DEFINE_ERROR(MissingTableFile);
SGAM_DEFINE_ERROR(HeaderMismatch);
SGAM_DEFINE_ERROR(DuplicateKey);
SGAM_DEFINE_ERROR(UnknownAttribute);
SGAM_DEFINE_ERROR(UnjoinableGroups);
SGAM_DEFINE_ERROR(TemplateColumnMissing);

// Model gateway
SGAM_DEFINE_ERROR(EmptyText);
SGAM_DEFINE_ERROR(UnboundPlaceholder);
SGAM_DEFINE_ERROR(UnscriptedMockInput);

// Pipeline
SGAM_DEFINE_ERROR(MalformedDecomposition);
SGAM_DEFINE_ERROR(UnmappableConstraint);
SGAM_DEFINE_ERROR(NoFacts);
SGAM_DEFINE_ERROR(EmptyPaths);
SGAM_DEFINE_ERROR(ConfigError);

#undef SGAM_DEFINE_ERROR

// Malformed input document. Carries the 1-based line/column where parsing
// stopped when the underlying parser can tell us.
class SyntaxError : public Error {
public:
    SyntaxError(const std::string& message, int line, int column)
        : Error(message), line_(line), column_(column) {}
    explicit SyntaxError(const std::string& message) : Error(message) {}

    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_ = 0;
    int column_ = 0;
};

// Transport or protocol failure talking to an embedding / chat provider.
// retryable() tells the gateway whether another attempt can possibly help.
class ProviderError : public Error {
public:
    ProviderError(const std::string& message, bool retryable)
        : Error(message), retryable_(retryable) {}

    bool retryable() const { return retryable_; }

private:
    bool retryable_;
};

}  // namespace sgam
