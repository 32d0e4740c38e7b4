#pragma once

// Cosine assignment of users to cluster centers and spherical k-means over
// static user embeddings.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bridgerec/data.hpp"

namespace bridgerec {

using DenseMatrix = Eigen::MatrixXd;

/// One row per dataset user, in dataset order.
struct UserEmbeddings {
  DenseMatrix vectors;
  std::vector<std::string> warnings;
};

struct ClusterModel {
  DenseMatrix centers;              // k x d_u
  std::vector<Index> assignments;   // per user, index of the hot entry

  Index k() const { return centers.rows(); }
  /// The one-hot row c_i for user i.
  Eigen::VectorXd one_hot(std::size_t user) const;
};

/// One-hot vector at argmax_j cosine(u, centers_j); ties go to the lowest j.
Eigen::VectorXd assign(const Eigen::VectorXd& u, const DenseMatrix& centers);
Index assign_index(const Eigen::VectorXd& u, const DenseMatrix& centers);

/// Spherical k-means: k-means++ seeding on normalised rows, then alternating
/// cosine assignment and mean re-normalisation until assignments stop
/// changing or `iterations` is reached. An emptied cluster is re-seeded with
/// the point farthest (lowest cosine) from its current center. When
/// `initial_centers` is given, seeding is skipped and the fit warm-starts
/// from those centers.
ClusterModel fit_centers(const DenseMatrix& users, Index k, int iterations, std::uint64_t seed,
                         const std::optional<DenseMatrix>& initial_centers = std::nullopt);

/// Parses "num_users dim" followed by "user_id v1 ... v_dim" lines, and maps
/// rows onto the dataset's users. Users missing from the file, NaN values
/// and dimension mismatches raise IngestError; extra users are reported as
/// warnings and ignored.
UserEmbeddings load_user_embeddings(const std::string& path, const Dataset& dataset);
UserEmbeddings load_user_embeddings(std::istream& in, const Dataset& dataset);

/// Fallback user vectors: rank-`rank` truncated SVD (U_r S_r) of the binary
/// user x item matrix built from the training prefixes.
UserEmbeddings svd_user_embeddings(const SplitView& view, Index rank = 64);

}  // namespace bridgerec
