#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dermapipe {

enum class Errc {
  // dataset
  MissingFile,
  ParseError,
  DuplicateId,
  InvalidLabel,
  EmptyManifest,
  FractionOutOfRange,
  // imageops
  UnsupportedFormat,
  CorruptFile,
  ZeroDimension,
  // featurestore
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  DimMismatch,
  NonFinite,
  IoError,
  UnknownId,
  ProvenanceMismatch,
  // retrieval
  EmptyCandidates,
  // segmentation
  BackendFailure,
  MalformedBackendOutput,
  Timeout,
  // mlp
  StaleCache,
  ShapeMismatch,
  MissingFeature,
  MissingLabel,
  // metrics
  LengthMismatch,
  EmptyInput,
  EmptyList,
  // experiment
  ConfigError,
  MissingReport,
  InvalidArgument,
};

std::string_view errc_name(Errc code) noexcept;

/// Process exit status for the CLI: 2 config, 3 data, 4 backend.
int exit_code(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace dermapipe
