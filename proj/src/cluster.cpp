#include "bridgerec/cluster.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include <Eigen/SVD>

#include "bridgerec/errors.hpp"
#include "bridgerec/rng.hpp"

namespace bridgerec {

Eigen::VectorXd ClusterModel::one_hot(std::size_t user) const {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(k());
  c[assignments.at(user)] = 1.0;
  return c;
}

Index assign_index(const Eigen::VectorXd& u, const DenseMatrix& centers) {
  if (centers.rows() == 0) throw ContractError("assign: no centers");
  if (centers.cols() != u.size()) throw DimensionError("assign: dimension mismatch");
  const double un = u.norm();
  if (!(un > 0)) throw ContractError("assign: zero-norm user vector");
  Index best = 0;
  double best_cos = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < centers.rows(); ++j) {
    const double zn = centers.row(j).norm();
    if (!(zn > 0)) throw ContractError("assign: zero-norm center " + std::to_string(j));
    const double c = centers.row(j).dot(u) / (un * zn);
    if (c > best_cos) {
      best_cos = c;
      best = j;
    }
  }
  return best;
}

Eigen::VectorXd assign(const Eigen::VectorXd& u, const DenseMatrix& centers) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(centers.rows());
  c[assign_index(u, centers)] = 1.0;
  return c;
}

namespace {

DenseMatrix normalized_rows(const DenseMatrix& m) {
  DenseMatrix out = m;
  for (Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > 0)) throw ContractError("user embedding row " + std::to_string(i) + " has zero norm");
    out.row(i) /= n;
  }
  return out;
}

}  // namespace

ClusterModel fit_centers(const DenseMatrix& users, Index k, int iterations, std::uint64_t seed,
                         const std::optional<DenseMatrix>& initial_centers) {
  const Index n = users.rows();
  if (k <= 0) throw ContractError("fit_centers: k must be positive");
  if (k > n) throw ContractError("fit_centers: k exceeds the number of users");
  const DenseMatrix x = normalized_rows(users);
  Rng rng(seed, 0x6b6d65616e73ULL);

  DenseMatrix centers(k, users.cols());
  if (initial_centers) {
    if (initial_centers->rows() != k || initial_centers->cols() != users.cols()) {
      throw DimensionError("fit_centers: initial centers have the wrong shape");
    }
    centers = normalized_rows(*initial_centers);
  } else {
    // k-means++ with cosine distance 1 - cos.
    centers.row(0) = x.row(static_cast<Index>(rng.index(static_cast<std::size_t>(n))));
    Eigen::VectorXd dist(n);
    for (Index i = 0; i < n; ++i) dist[i] = std::max(0.0, 1.0 - x.row(i).dot(centers.row(0)));
    for (Index c = 1; c < k; ++c) {
      const double total = dist.sum();
      Index pick = 0;
      if (total > 0) {
        double r = rng.uniform() * total;
        pick = n - 1;
        for (Index i = 0; i < n; ++i) {
          r -= dist[i];
          if (r < 0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<Index>(rng.index(static_cast<std::size_t>(n)));
      }
      centers.row(c) = x.row(pick);
      for (Index i = 0; i < n; ++i) {
        dist[i] = std::min(dist[i], std::max(0.0, 1.0 - x.row(i).dot(centers.row(c))));
      }
    }
  }

  ClusterModel model;
  model.assignments.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < std::max(iterations, 1); ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      const Index a = assign_index(x.row(i).transpose(), centers);
      if (a != model.assignments[static_cast<std::size_t>(i)]) {
        model.assignments[static_cast<std::size_t>(i)] = a;
        changed = true;
      }
    }
    if (!changed && it > 0) break;

    DenseMatrix sums = DenseMatrix::Zero(k, users.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      const Index a = model.assignments[static_cast<std::size_t>(i)];
      sums.row(a) += x.row(i);
      ++counts[static_cast<std::size_t>(a)];
    }
    for (Index c = 0; c < k; ++c) {
      const double norm = sums.row(c).norm();
      if (counts[static_cast<std::size_t>(c)] > 0 && norm > 0) {
        centers.row(c) = sums.row(c) / norm;
        continue;
      }
      // Empty (or antipodally cancelled) cluster: move it to the point that is
      // worst served by its own center.
      Index far = 0;
      double worst = std::numeric_limits<double>::infinity();
      for (Index i = 0; i < n; ++i) {
        const double cs = x.row(i).dot(centers.row(model.assignments[static_cast<std::size_t>(i)]));
        if (cs < worst) {
          worst = cs;
          far = i;
        }
      }
      centers.row(c) = x.row(far);
      model.assignments[static_cast<std::size_t>(far)] = c;
    }
  }
  for (Index i = 0; i < n; ++i) {
    model.assignments[static_cast<std::size_t>(i)] = assign_index(x.row(i).transpose(), centers);
  }
  model.centers = std::move(centers);
  return model;
}

UserEmbeddings load_user_embeddings(std::istream& in, const Dataset& dataset) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next_line()) throw IngestError("user embedding file is empty");
  long long declared_users = 0, dim = 0;
  {
    std::istringstream hdr(line);
    if (!(hdr >> declared_users >> dim) || declared_users < 0 || dim <= 0) {
      throw IngestError("line 1: expected header 'num_users dim'");
    }
  }

  std::unordered_map<std::int64_t, std::size_t> row_of;
  for (std::size_t u = 0; u < dataset.user_ids.size(); ++u) row_of[dataset.user_ids[u]] = u;

  UserEmbeddings out;
  out.vectors = DenseMatrix::Zero(static_cast<Index>(dataset.num_users()), dim);
  std::vector<bool> filled(dataset.num_users(), false);
  std::vector<std::string> bad;
  std::size_t extra = 0;
  long long rows_read = 0;
  while (next_line()) {
    ++rows_read;
    std::istringstream fields(line);
    std::int64_t user = 0;
    if (!(fields >> user)) throw IngestError("line " + std::to_string(line_no) + ": expected a user id");
    std::vector<double> vals;
    std::string tok;
    bool finite = true;
    while (fields >> tok) {
      double v = 0;
      try {
        std::size_t used = 0;
        v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw IngestError("line " + std::to_string(line_no) + ": bad value '" + tok + "'");
      }
      finite = finite && std::isfinite(v);
      vals.push_back(v);
    }
    if (static_cast<long long>(vals.size()) != dim) {
      bad.push_back("user " + std::to_string(user) + " (line " + std::to_string(line_no) +
                    "): " + std::to_string(vals.size()) + " values, expected " +
                    std::to_string(dim));
      continue;
    }
    if (!finite) {
      bad.push_back("user " + std::to_string(user) + " (line " + std::to_string(line_no) +
                    "): non-finite value");
      continue;
    }
    auto it = row_of.find(user);
    if (it == row_of.end()) {
      ++extra;
      continue;
    }
    for (long long j = 0; j < dim; ++j) {
      out.vectors(static_cast<Index>(it->second), j) = vals[static_cast<std::size_t>(j)];
    }
    filled[it->second] = true;
  }
  for (std::size_t u = 0; u < filled.size(); ++u) {
    if (!filled[u] && bad.size() < 20) {
      bad.push_back("user " + std::to_string(dataset.user_ids[u]) + ": missing");
    }
  }
  if (!bad.empty()) {
    std::string msg = "user embedding file rejected:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw IngestError(msg);
  }
  if (rows_read != declared_users) {
    out.warnings.push_back("header declares " + std::to_string(declared_users) + " users, file has " +
                           std::to_string(rows_read));
  }
  if (extra > 0) {
    out.warnings.push_back(std::to_string(extra) +
                           " user(s) in the embedding file are not in the dataset; ignored");
  }
  return out;
}

UserEmbeddings load_user_embeddings(const std::string& path, const Dataset& dataset) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open user embedding file '" + path + "'");
  return load_user_embeddings(in, dataset);
}

UserEmbeddings svd_user_embeddings(const SplitView& view, Index rank) {
  const Index n = static_cast<Index>(view.users.size());
  DenseMatrix interactions = DenseMatrix::Zero(n, view.num_items);
  for (Index u = 0; u < n; ++u) {
    for (Index item : view.users[static_cast<std::size_t>(u)].train) interactions(u, item) = 1.0;
  }
  Eigen::BDCSVD<DenseMatrix> svd(interactions, Eigen::ComputeThinU);
  const Index r = std::min<Index>({rank, n, view.num_items});
  UserEmbeddings out;
  out.vectors = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
  return out;
}

}  // namespace bridgerec
