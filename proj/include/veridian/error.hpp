#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace veridian {

enum class ErrorCode {
    MissingFile,
    MalformedRow,
    BadLabel,
    DuplicateId,
    EmptyDataset,
    BadMaxLength,
    ShapeMismatch,
    NotScalarLoss,
    BadConfig,
    BadSequenceLength,
    IdOutOfVocab,
    CorruptCheckpoint,
    DivergedLoss,
    LengthMismatch,
    InvalidWeights,
    AllZeroAccuracies,
    BatchSizeMismatch,
    EmptyMatrix,
    VocabMismatch,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Single exception type for the library. `location` carries the line number
// for row errors and the epoch index for DivergedLoss.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message,
          std::optional<std::size_t> location = std::nullopt);

    ErrorCode code() const noexcept { return code_; }
    std::optional<std::size_t> location() const noexcept { return location_; }

private:
    ErrorCode code_;
    std::optional<std::size_t> location_;
};

} // namespace veridian
