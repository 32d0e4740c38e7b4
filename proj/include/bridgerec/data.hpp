#pragma once

// Dataset ingestion, leave-one-out splitting, full-ranking HR@K / NDCG@K and
// the popularity / history-length bucket breakdowns.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace bridgerec {

using Index = Eigen::Index;

struct Dataset {
  std::vector<std::int64_t> user_ids;
  std::vector<std::vector<Index>> sequences;  // chronological item ids
  Index num_items = 0;
  std::size_t dropped_short = 0;  // sequences shorter than 3 seen at ingest

  std::size_t num_users() const { return sequences.size(); }
  void validate() const;
};

/// Reads "user_id item_1 item_2 ..." lines. Sequences shorter than 3 are
/// dropped and counted; malformed lines raise IngestError with the line
/// number. `num_items` defaults to 1 + the largest id seen.
Dataset ingest(const std::string& path, std::optional<Index> num_items = std::nullopt);
Dataset ingest(std::istream& in, std::optional<Index> num_items = std::nullopt);
void write_dataset(const std::string& path, const Dataset& dataset);
void write_dataset(std::ostream& out, const Dataset& dataset);

struct UserSplit {
  std::vector<Index> train;  // everything before the last two items
  Index valid = -1;          // second to last
  Index test = -1;           // last
};

struct SplitView {
  std::vector<UserSplit> users;
  Index num_items = 0;
};

SplitView split(const Dataset& dataset);

enum class Target { kValid, kTest };

/// Model input for evaluating one user: train prefix for validation, train
/// prefix plus the validation item for test.
std::vector<Index> eval_history(const UserSplit& user, Target target);
Index eval_target(const UserSplit& user, Target target);

/// 1 if target appears among the first k of `ranked`.
int hr_at_k(std::span<const Index> ranked, Index target, Index k);
/// 1 / log2(rank + 1) for a 1-based rank <= k, else 0.
double ndcg_at_k(std::span<const Index> ranked, Index target, Index k);

double hr_from_rank(Index rank, Index k);
double ndcg_from_rank(Index rank, Index k);

enum class PopularityBucket { kPopular, kLongTail };
enum class LengthBucket { kShort, kMedium, kLong };

std::string to_string(PopularityBucket b);
std::string to_string(LengthBucket b);

/// Marks the ceil(0.2 V) most frequent items of the training prefixes as
/// popular (ties go to the lower id).
std::vector<bool> popular_items(const SplitView& view, double head_fraction = 0.2);
LengthBucket length_bucket(std::size_t train_length);

/// Per-user outcome of one full-ranking evaluation.
struct UserResult {
  std::size_t user = 0;
  Index target = -1;
  Index rank = 0;  // 1-based among all V items
};

struct MetricRow {
  std::string metric;  // "HR" or "NDCG"
  Index k = 0;
  std::string bucket;  // "all", "popular", "long_tail", "short", "medium", "long"
  double value = 0.0;  // percentage
  std::size_t users = 0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;

  /// Value for (metric, k, bucket), or nullopt when that bucket was empty.
  std::optional<double> get(const std::string& metric, Index k,
                            const std::string& bucket = "all") const;
  double hr(Index k) const;
  double ndcg(Index k) const;

  void write_csv(std::ostream& out) const;
  void write_table(std::ostream& out) const;
};

/// Aggregates per-user ranks into global and bucketed metrics. Buckets with
/// no users are omitted.
EvalReport bucket_report(std::span<const UserResult> results, const SplitView& view,
                         std::span<const Index> ks = {});

}  // namespace bridgerec
