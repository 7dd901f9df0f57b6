#include "veridian/error.hpp"

namespace veridian {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::BadMaxLength: return "BadMaxLength";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NotScalarLoss: return "NotScalarLoss";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadSequenceLength: return "BadSequenceLength";
    case ErrorCode::IdOutOfVocab: return "IdOutOfVocab";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidWeights: return "InvalidWeights";
    case ErrorCode::AllZeroAccuracies: return "AllZeroAccuracies";
    case ErrorCode::BatchSizeMismatch: return "BatchSizeMismatch";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::VocabMismatch: return "VocabMismatch";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

namespace {

std::string compose(ErrorCode code, const std::string& message,
                    std::optional<std::size_t> location) {
    std::string out(to_string(code));
    if (location) {
        out += "(" + std::to_string(*location) + ")";
    }
    if (!message.empty()) {
        out += ": " + message;
    }
    return out;
}

} // namespace

Error::Error(ErrorCode code, const std::string& message,
             std::optional<std::size_t> location)
    : std::runtime_error(compose(code, message, location)), code_(code),
      location_(location) {}

} // namespace veridian
