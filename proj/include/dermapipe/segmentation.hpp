#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dermapipe/dataset.hpp"
#include "dermapipe/featurestore.hpp"
#include "dermapipe/imageops.hpp"
#include "dermapipe/retrieval.hpp"

namespace dermapipe {

struct SegmentationJob {
  std::string record_id;
  std::filesystem::path image;
  PromptSet prompts;
  std::filesystem::path out_mask;
  int size = kSegmenterSize;
};

/// The job.json document handed to external backends.
nlohmann::json to_json(const SegmentationJob& job);

/// Produces a mask for one job at any resolution; segment() brings it back to
/// the inference image's resolution.
class SegmenterBackend {
 public:
  virtual ~SegmenterBackend() = default;
  /// Stable identifier used in mask cache keys.
  virtual std::string id() const = 0;
  virtual BinaryMask run(const SegmentationJob& job) const = 0;
};

/// Test double that returns each record's annotated mask.
class OracleBackend final : public SegmenterBackend {
 public:
  explicit OracleBackend(const Manifest& manifest) : manifest_(manifest) {}
  std::string id() const override { return "oracle"; }
  BinaryMask run(const SegmentationJob& job) const override;

 private:
  const Manifest& manifest_;
};

/// Marks the whole image as foreground.
class TrivialBackend final : public SegmenterBackend {
 public:
  std::string id() const override { return "trivial"; }
  BinaryMask run(const SegmentationJob& job) const override;
};

/// Runs `command <job.json>` through /bin/sh. The command must write an 8-bit
/// PNG to the job's out_mask and exit 0.
class ProcessBackend final : public SegmenterBackend {
 public:
  explicit ProcessBackend(std::string command, std::chrono::milliseconds timeout = std::chrono::seconds(120));
  std::string id() const override;
  BinaryMask run(const SegmentationJob& job) const override;

 private:
  std::string command_;
  std::chrono::milliseconds timeout_;
};

/// Runs the backend and returns a binary mask at the inference image's
/// original resolution (nearest-neighbor). Throws InvalidArgument when a
/// prompt mask is missing; backend errors propagate.
BinaryMask segment(const SegmentationJob& job, const SegmenterBackend& backend);

struct SegmentationBatchOptions {
  std::filesystem::path out_dir;
  int k = kDefaultPromptCount;
  int jobs = 1;
  bool force = false;
  /// Prompt candidates; every annotated record when empty.
  std::vector<std::string> pool;
};

struct SegmentationIndex {
  std::string backend;
  int k = kDefaultPromptCount;
  std::map<std::string, std::filesystem::path> masks;
  std::map<std::string, std::string> failures;
  /// Number of records that actually reached the backend in this run.
  std::size_t backend_calls = 0;
};

nlohmann::json to_json(const SegmentationIndex& index);

/// Segments every manifest record. Masks are cached under
/// out_dir/<backend>_k<K>/<id>.png and reused unless options.force is set.
/// Per-record failures are collected rather than thrown. Writes
/// out_dir/index.json once all records are done.
SegmentationIndex run_segmentation_batch(const Manifest& manifest, const FeatureStore& whole_image_features,
                                         const SegmenterBackend& backend, const SegmentationBatchOptions& options);

}  // namespace dermapipe
