#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace dermapipe {

using EmbeddingVector = Eigen::VectorXf;

enum class Masking { Unknown, Masked, WholeImage };

std::string_view masking_name(Masking m) noexcept;
/// Throws ParseError for anything other than "masked" / "whole_image".
Masking parse_masking(std::string_view s);

struct Provenance {
  std::string provider;
  Masking masking = Masking::Unknown;
  std::int64_t created_unix = 0;
};

/// Anything that can hand out an embedding per record id.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual int dim() const = 0;
  virtual const EmbeddingVector& get_embedding(const std::string& id) const = 0;
};

/// In-memory id -> embedding map with one fixed dimension. Insertion order is
/// preserved and is the order used when writing.
class FeatureStore final : public EmbeddingProvider {
 public:
  explicit FeatureStore(int dim, Provenance provenance = {});

  int dim() const override { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  bool contains(const std::string& id) const { return index_.contains(id); }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Provenance& provenance() const noexcept { return provenance_; }
  void set_provenance(Provenance p) { provenance_ = std::move(p); }

  /// Throws DimMismatch, NonFinite, or DuplicateId.
  void add(const std::string& id, EmbeddingVector v);

  /// Throws UnknownId.
  const EmbeddingVector& get_embedding(const std::string& id) const override;
  const EmbeddingVector* find(const std::string& id) const;

  /// Appends the other store's records. Throws ProvenanceMismatch when the
  /// masking tags are known and differ, DimMismatch on differing dims.
  void merge(const FeatureStore& other);

 private:
  int dim_;
  Provenance provenance_;
  std::vector<std::string> ids_;
  std::vector<EmbeddingVector> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr char kFeatureMagic[4] = {'D', 'D', 'X', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 20;

/// Reads the binary file and, when present, its `{path}.meta.json` sidecar.
/// Throws BadMagic, UnsupportedVersion, TruncatedFile, DimMismatch, NonFinite.
FeatureStore read_feature_file(const std::filesystem::path& path);

/// Writes the binary file. The metadata sidecar is written only when
/// write_meta is set (its timestamp makes it non-reproducible).
void write_feature_file(const FeatureStore& store, const std::filesystem::path& path, bool write_meta = true);

std::filesystem::path meta_path_for(const std::filesystem::path& path);
std::optional<Provenance> read_feature_meta(const std::filesystem::path& path);

}  // namespace dermapipe
