#pragma once

// Reference implementations written without the library's code paths, used
// as test oracles.

#include <cstdint>
#include <string>
#include <vector>

#include "dermapipe/featurestore.hpp"
#include "dermapipe/mlp.hpp"
#include "dermapipe/retrieval.hpp"

namespace dermapipe::testing {

/// Scalar-loop forward pass and mean cross-entropy. keep holds the dropout
/// scales per hidden unit and sample, or is empty for none.
double naive_mlp_loss(const MlpParams<double>& params, const Matrix<double>& x, const std::vector<int>& labels,
                      const Matrix<double>& keep);

/// Count of gradient elements (over every parameter) that disagree with
/// central differences of naive_mlp_loss by more than rel_tol. One random
/// 8-dim toy instance per seed.
int gradient_mismatches(std::uint64_t seed, bool with_dropout, double eps = 1e-4, double rel_tol = 1e-3);

/// Per-class F1 as 2tp / (2tp + fp + fn), weighted by support.
double brute_force_weighted_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred);

/// Every distance with a plain loop, then a full sort by (distance, id).
std::vector<Neighbor> brute_force_knn(const EmbeddingVector& query, const FeatureStore& store, int k);

}  // namespace dermapipe::testing
