#include "dermapipe/retrieval.hpp"

#include <algorithm>
#include <cmath>

#include "dermapipe/error.hpp"

namespace dermapipe {

std::vector<Neighbor> knn(const EmbeddingVector& query, const FeatureStore& candidates, int k,
                          const KnnOptions& options) {
  if (k < 1) fail(Errc::InvalidArgument, "K must be >= 1");
  if (query.size() != candidates.dim()) {
    fail(Errc::DimMismatch, "query dim " + std::to_string(query.size()) + " vs store dim " +
                                std::to_string(candidates.dim()));
  }
  const auto& ids = options.allowed_ids != nullptr ? *options.allowed_ids : candidates.ids();

  // Squared distances order identically to distances; the root is taken last.
  std::vector<Neighbor> all;
  all.reserve(ids.size());
  for (const auto& id : ids) {
    if (options.exclude_id && id == *options.exclude_id) continue;
    const auto& c = candidates.get_embedding(id);
    all.push_back({id, squared_distance(query, c)});
  }
  if (all.empty()) fail(Errc::EmptyCandidates, "no retrieval candidates");

  const auto by_distance_then_id = [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  };
  const auto keep = std::min(all.size(), static_cast<std::size_t>(k));
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), by_distance_then_id);
  all.resize(keep);
  for (auto& n : all) n.distance = std::sqrt(n.distance);
  return all;
}

PromptSet retrieve_prompts(const std::string& query_id, const FeatureStore& whole_image_features,
                           const Manifest& manifest, const std::vector<std::string>& pool, int k) {
  std::vector<std::string> annotated;
  annotated.reserve(pool.size());
  for (const auto& id : pool) {
    const auto* rec = manifest.find(id);
    if (rec != nullptr && rec->mask_path && whole_image_features.contains(id)) annotated.push_back(id);
  }
  const auto& query = whole_image_features.get_embedding(query_id);
  KnnOptions options;
  options.exclude_id = query_id;
  options.allowed_ids = &annotated;

  PromptSet prompts;
  prompts.k = k;
  for (auto& n : knn(query, whole_image_features, k, options)) {
    const auto& rec = manifest.at(n.id);
    prompts.pairs.push_back({n.id, rec.image_path, *rec.mask_path, n.distance});
  }
  return prompts;
}

}  // namespace dermapipe
