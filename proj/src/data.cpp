#include "bridgerec/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "bridgerec/errors.hpp"

namespace bridgerec {

void Dataset::validate() const {
  if (user_ids.size() != sequences.size()) {
    throw ContractError("dataset: user id and sequence counts differ");
  }
  for (std::size_t u = 0; u < sequences.size(); ++u) {
    if (sequences[u].size() < 3) {
      throw ContractError("dataset: user " + std::to_string(user_ids[u]) +
                          " has fewer than 3 interactions");
    }
    for (Index item : sequences[u]) {
      if (item < 0 || item >= num_items) {
        throw ContractError("dataset: item " + std::to_string(item) + " outside [0, " +
                            std::to_string(num_items) + ")");
      }
    }
  }
}

Dataset ingest(std::istream& in, std::optional<Index> num_items) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  Index max_item = -1;
  std::unordered_set<std::int64_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::int64_t user = 0;
    if (!(fields >> user)) {
      throw IngestError("line " + std::to_string(line_no) + ": expected a user id");
    }
    std::vector<Index> items;
    std::string tok;
    while (fields >> tok) {
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || v < 0) {
        throw IngestError("line " + std::to_string(line_no) + ": bad item id '" + tok + "'");
      }
      items.push_back(static_cast<Index>(v));
      max_item = std::max<Index>(max_item, static_cast<Index>(v));
    }
    if (!seen.insert(user).second) {
      throw IngestError("line " + std::to_string(line_no) + ": duplicate user id " +
                        std::to_string(user));
    }
    if (items.size() < 3) {
      ++ds.dropped_short;
      continue;
    }
    ds.user_ids.push_back(user);
    ds.sequences.push_back(std::move(items));
  }
  ds.num_items = num_items.value_or(max_item + 1);
  if (num_items && max_item >= *num_items) {
    throw IngestError("item id " + std::to_string(max_item) + " exceeds the vocabulary size " +
                      std::to_string(*num_items));
  }
  if (ds.dropped_short > 0) {
    std::cerr << "ingest: dropped " << ds.dropped_short
              << " sequence(s) shorter than 3 interactions\n";
  }
  return ds;
}

Dataset ingest(const std::string& path, std::optional<Index> num_items) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  return ingest(in, num_items);
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  for (std::size_t u = 0; u < dataset.sequences.size(); ++u) {
    out << dataset.user_ids[u];
    for (Index item : dataset.sequences[u]) out << ' ' << item;
    out << '\n';
  }
}

void write_dataset(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset '" + path + "'");
  write_dataset(out, dataset);
}

SplitView split(const Dataset& dataset) {
  dataset.validate();
  SplitView view;
  view.num_items = dataset.num_items;
  view.users.reserve(dataset.sequences.size());
  for (const auto& seq : dataset.sequences) {
    UserSplit u;
    u.train.assign(seq.begin(), seq.end() - 2);
    u.valid = seq[seq.size() - 2];
    u.test = seq.back();
    view.users.push_back(std::move(u));
  }
  return view;
}

std::vector<Index> eval_history(const UserSplit& user, Target target) {
  std::vector<Index> h = user.train;
  if (target == Target::kTest) h.push_back(user.valid);
  return h;
}

Index eval_target(const UserSplit& user, Target target) {
  return target == Target::kValid ? user.valid : user.test;
}

namespace {

void check_unique(std::span<const Index> ranked) {
  std::unordered_set<Index> seen;
  for (Index item : ranked) {
    if (!seen.insert(item).second) {
      throw ContractError("ranking contains item " + std::to_string(item) + " twice");
    }
  }
}

}  // namespace

int hr_at_k(std::span<const Index> ranked, Index target, Index k) {
  check_unique(ranked);
  const auto n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(std::max<Index>(k, 0)));
  return std::find(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n), target) !=
                 ranked.begin() + static_cast<std::ptrdiff_t>(n)
             ? 1
             : 0;
}

double ndcg_at_k(std::span<const Index> ranked, Index target, Index k) {
  check_unique(ranked);
  const auto it = std::find(ranked.begin(), ranked.end(), target);
  if (it == ranked.end()) return 0.0;
  return ndcg_from_rank(static_cast<Index>(it - ranked.begin()) + 1, k);
}

double hr_from_rank(Index rank, Index k) { return rank >= 1 && rank <= k ? 1.0 : 0.0; }

double ndcg_from_rank(Index rank, Index k) {
  if (rank < 1 || rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

std::string to_string(PopularityBucket b) {
  return b == PopularityBucket::kPopular ? "popular" : "long_tail";
}

std::string to_string(LengthBucket b) {
  switch (b) {
    case LengthBucket::kShort: return "short";
    case LengthBucket::kMedium: return "medium";
    case LengthBucket::kLong: return "long";
  }
  return "?";
}

std::vector<bool> popular_items(const SplitView& view, double head_fraction) {
  const Index v = view.num_items;
  std::vector<std::size_t> counts(static_cast<std::size_t>(v), 0);
  for (const auto& u : view.users) {
    for (Index item : u.train) ++counts[static_cast<std::size_t>(item)];
  }
  std::vector<Index> order(static_cast<std::size_t>(v));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
  });
  const auto head = static_cast<std::size_t>(std::ceil(head_fraction * static_cast<double>(v)));
  std::vector<bool> popular(static_cast<std::size_t>(v), false);
  for (std::size_t i = 0; i < head && i < order.size(); ++i) {
    popular[static_cast<std::size_t>(order[i])] = true;
  }
  return popular;
}

LengthBucket length_bucket(std::size_t train_length) {
  if (train_length <= 5) return LengthBucket::kShort;
  if (train_length <= 10) return LengthBucket::kMedium;
  return LengthBucket::kLong;
}

std::optional<double> EvalReport::get(const std::string& metric, Index k,
                                      const std::string& bucket) const {
  for (const auto& r : rows) {
    if (r.metric == metric && r.k == k && r.bucket == bucket) return r.value;
  }
  return std::nullopt;
}

double EvalReport::hr(Index k) const {
  auto v = get("HR", k);
  if (!v) throw ContractError("report has no HR@" + std::to_string(k));
  return *v;
}

double EvalReport::ndcg(Index k) const {
  auto v = get("NDCG", k);
  if (!v) throw ContractError("report has no NDCG@" + std::to_string(k));
  return *v;
}

void EvalReport::write_csv(std::ostream& out) const {
  out << "metric,k,bucket,value\n";
  out << std::setprecision(10);
  for (const auto& r : rows) out << r.metric << ',' << r.k << ',' << r.bucket << ',' << r.value << '\n';
}

void EvalReport::write_table(std::ostream& out) const {
  out << "evaluated users: " << evaluated;
  if (skipped > 0) out << " (skipped " << skipped << ")";
  out << '\n';
  out << std::left << std::setw(8) << "metric" << std::setw(10) << "bucket" << std::right
      << std::setw(8) << "users" << std::setw(12) << "value(%)" << '\n';
  for (const auto& r : rows) {
    const std::string name = r.metric + "@" + std::to_string(r.k);
    out << std::left << std::setw(8) << name << std::setw(10) << r.bucket << std::right
        << std::setw(8) << r.users << std::setw(12) << std::fixed << std::setprecision(4)
        << r.value << '\n';
    out.unsetf(std::ios::fixed);
  }
}

EvalReport bucket_report(std::span<const UserResult> results, const SplitView& view,
                         std::span<const Index> ks) {
  static const Index kDefaultKs[] = {5, 10};
  if (ks.empty()) ks = kDefaultKs;
  const auto popular = popular_items(view);

  struct Acc {
    std::string name;
    std::vector<const UserResult*> members;
  };
  std::vector<Acc> buckets = {{"all", {}},   {"popular", {}}, {"long_tail", {}},
                              {"short", {}}, {"medium", {}},  {"long", {}}};
  for (const auto& r : results) {
    if (r.user >= view.users.size()) throw ContractError("bucket_report: unknown user index");
    buckets[0].members.push_back(&r);
    buckets[popular[static_cast<std::size_t>(r.target)] ? 1 : 2].members.push_back(&r);
    const auto lb = length_bucket(view.users[r.user].train.size());
    buckets[3 + static_cast<std::size_t>(lb)].members.push_back(&r);
  }

  EvalReport report;
  report.evaluated = results.size();
  for (const char* metric : {"HR", "NDCG"}) {
    const bool is_hr = std::string(metric) == "HR";
    for (Index k : ks) {
      for (const auto& b : buckets) {
        if (b.members.empty()) continue;
        double total = 0.0;
        for (const auto* r : b.members) {
          total += is_hr ? hr_from_rank(r->rank, k) : ndcg_from_rank(r->rank, k);
        }
        report.rows.push_back(
            {metric, k, b.name, 100.0 * total / static_cast<double>(b.members.size()),
             b.members.size()});
      }
    }
  }
  return report;
}

}  // namespace bridgerec
