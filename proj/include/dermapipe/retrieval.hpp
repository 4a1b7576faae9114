#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dermapipe/dataset.hpp"
#include "dermapipe/featurestore.hpp"

namespace dermapipe {

inline constexpr int kDefaultPromptCount = 2;

struct Neighbor {
  std::string id;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Squared Euclidean distance accumulated in double.
template <typename DerivedA, typename DerivedB>
double squared_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  return (a.template cast<double>() - b.template cast<double>()).squaredNorm();
}

struct KnnOptions {
  /// Candidate with this id is skipped (self-exclusion).
  std::optional<std::string> exclude_id;
  /// Restricts the search to these ids; all store ids when unset.
  const std::vector<std::string>* allowed_ids = nullptr;
};

/// Exact brute-force K nearest neighbors by Euclidean distance, ascending,
/// ties broken by ascending id. Returns min(K, candidates) entries.
/// Throws InvalidArgument (K < 1), DimMismatch, EmptyCandidates.
std::vector<Neighbor> knn(const EmbeddingVector& query, const FeatureStore& candidates, int k,
                          const KnnOptions& options = {});

struct PromptPair {
  std::string id;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  double distance = 0.0;
};

struct PromptSet {
  int k = kDefaultPromptCount;
  std::vector<PromptPair> pairs;
};

/// Retrieves segmentation prompts for one record: neighbors among
/// `pool` (e.g. the training fold) that carry an annotated mask, measured in
/// whole-image embedding space, excluding the query itself.
PromptSet retrieve_prompts(const std::string& query_id, const FeatureStore& whole_image_features,
                           const Manifest& manifest, const std::vector<std::string>& pool, int k);

}  // namespace dermapipe
