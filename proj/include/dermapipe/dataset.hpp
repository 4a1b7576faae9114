#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace dermapipe {

inline constexpr int kNumClasses = 4;

/// Eczema severity on the 0..3 scale (none, mild, moderate, severe).
class SeverityLabel {
 public:
  constexpr SeverityLabel() = default;
  /// Throws InvalidLabel when value is outside [0, 3].
  explicit SeverityLabel(int value);

  constexpr int value() const noexcept { return value_; }
  friend constexpr bool operator==(SeverityLabel, SeverityLabel) = default;

 private:
  int value_ = 0;
};

struct ImageRecord {
  std::string id;
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> mask_path;
  SeverityLabel label;
  std::string source;
};

class Manifest {
 public:
  Manifest() = default;
  /// Throws DuplicateId or InvalidArgument (empty image path).
  explicit Manifest(std::vector<ImageRecord> records);

  const std::vector<ImageRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const ImageRecord* find(const std::string& id) const;
  /// Throws UnknownId.
  const ImageRecord& at(const std::string& id) const;

  std::vector<std::string> ids() const;
  std::unordered_map<std::string, SeverityLabel> labels() const;

 private:
  std::vector<ImageRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One train/validation partition. Ids keep the order they were drawn in.
struct SplitSpec {
  std::uint64_t seed = 0;
  int split_index = 0;
  double fraction = 1.0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// Round-half-up of a non-negative scaled count.
std::size_t round_count(double scaled);

/// Reads a JSON-lines manifest. Relative image/mask paths are resolved
/// against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct SplitOptions {
  int n_splits = 5;
  double train_ratio = 0.8;
  std::uint64_t seed = 0;
  bool stratified = false;
};

std::vector<SplitSpec> make_splits(const Manifest& manifest, const SplitOptions& options);

/// Keeps round(fraction * |train|) train ids: a prefix of one permutation
/// seeded by (seed, split_index), so subsets for growing fractions are nested.
/// Selected ids retain their original relative order.
SplitSpec subsample_train(const SplitSpec& split, double fraction, std::uint64_t seed);

/// FNV-1a over the train and val id sequences.
std::uint64_t split_hash(const SplitSpec& split);

nlohmann::json to_json(const SplitSpec& split);
SplitSpec split_from_json(const nlohmann::json& j);
void write_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec read_split(const std::filesystem::path& path);

}  // namespace dermapipe
