#pragma once

#include <span>
#include <vector>

#include "bridgerec/cluster.hpp"
#include "bridgerec/data.hpp"
#include "bridgerec/model.hpp"
#include "bridgerec/sampler.hpp"
#include "bridgerec/schedule.hpp"

namespace bridgerec {

struct EvalOptions {
  Target target = Target::kTest;
  ScheduleParams schedule;
  SamplerConfig sampler;
  ConnectivityInputConfig input;
  /// When set, sampling is guided by each user's cluster condition with
  /// strength sampler.guidance_w.
  const ClusterModel* clusters = nullptr;
  Retrieval retrieval = Retrieval::kInnerProduct;
  std::vector<Index> ks = {5, 10};
  unsigned threads = 1;
};

/// Generates x0_hat for one history by running the reverse chain.
VectorR generate(const Model& model, std::span<const Index> history, std::optional<Index> condition,
                 const EvalOptions& options, std::uint64_t stream);

/// Full-ranking evaluation: every user is scored against all V items.
std::vector<UserResult> evaluate_users(const Model& model, const SplitView& view,
                                       const EvalOptions& options);

EvalReport evaluate(const Model& model, const SplitView& view, const EvalOptions& options);

struct Recommendation {
  Index item = -1;
  Real score = 0;
};

/// Top-k items for an arbitrary history; k is clamped to the vocabulary size.
std::vector<Recommendation> recommend(const Model& model, std::span<const Index> history, Index k,
                                      std::optional<Index> condition, const EvalOptions& options);

}  // namespace bridgerec
