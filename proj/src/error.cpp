#include "dermapipe/error.hpp"

namespace dermapipe {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::ParseError: return "ParseError";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::InvalidLabel: return "InvalidLabel";
    case Errc::EmptyManifest: return "EmptyManifest";
    case Errc::FractionOutOfRange: return "FractionOutOfRange";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::ZeroDimension: return "ZeroDimension";
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::NonFinite: return "NonFinite";
    case Errc::IoError: return "IoError";
    case Errc::UnknownId: return "UnknownId";
    case Errc::ProvenanceMismatch: return "ProvenanceMismatch";
    case Errc::EmptyCandidates: return "EmptyCandidates";
    case Errc::BackendFailure: return "BackendFailure";
    case Errc::MalformedBackendOutput: return "MalformedBackendOutput";
    case Errc::Timeout: return "Timeout";
    case Errc::StaleCache: return "StaleCache";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::MissingFeature: return "MissingFeature";
    case Errc::MissingLabel: return "MissingLabel";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::EmptyList: return "EmptyList";
    case Errc::ConfigError: return "ConfigError";
    case Errc::MissingReport: return "MissingReport";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

int exit_code(Errc code) noexcept {
  switch (code) {
    case Errc::ConfigError:
    case Errc::InvalidArgument:
      return 2;
    case Errc::BackendFailure:
    case Errc::MalformedBackendOutput:
    case Errc::Timeout:
      return 4;
    default:
      return 3;
  }
}

}  // namespace dermapipe
