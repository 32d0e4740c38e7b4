#include "bridgerec/evaluate.hpp"

#include <algorithm>
#include <thread>

namespace bridgerec {

VectorR generate(const Model& model, std::span<const Index> history, std::optional<Index> condition,
                 const EvalOptions& options, std::uint64_t stream) {
  const Real alpha = options.input.mu;
  const Predictor<Real> f = [&model, alpha](const VectorR& x_s, Real s, const VectorR& x1) {
    return model.predict_x0(x_s, s, x1, alpha);
  };
  SamplerConfig cfg = options.sampler;
  cfg.seed = stream_key(options.sampler.seed, stream);
  const VectorR x1_uncond = model.encode_unconditional(history);
  if (!condition) return sample<Real>(x1_uncond, f, options.schedule, cfg);
  const VectorR x1_cond = model.encode_conditional(history, condition);
  return sample_guided<Real>(x1_cond, x1_uncond, f, f, options.schedule, cfg);
}

std::vector<UserResult> evaluate_users(const Model& model, const SplitView& view,
                                       const EvalOptions& options) {
  if (view.num_items != model.config().num_items) {
    throw ContractError("vocabulary mismatch: model has " +
                        std::to_string(model.config().num_items) + " items, dataset has " +
                        std::to_string(view.num_items));
  }
  if (options.clusters && options.clusters->assignments.size() != view.users.size()) {
    throw ContractError("cluster assignments do not cover the evaluated users");
  }
  const std::size_t n = view.users.size();
  std::vector<UserResult> slots(n);
  std::vector<char> used(n, 0);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t u = begin; u < end; ++u) {
      const auto history = eval_history(view.users[u], options.target);
      if (history.empty()) continue;
      std::optional<Index> cond;
      if (options.clusters) cond = options.clusters->assignments[u];
      const VectorR x0_hat = generate(model, history, cond, options, u);
      const VectorR scores = model.score_candidates(x0_hat, options.retrieval);
      const Index target = eval_target(view.users[u], options.target);
      slots[u] = {u, target, rank_of(scores, target)};
      used[u] = 1;
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  std::vector<UserResult> results;
  results.reserve(n);
  for (std::size_t u = 0; u < n; ++u) {
    if (used[u]) results.push_back(slots[u]);
  }
  return results;
}

EvalReport evaluate(const Model& model, const SplitView& view, const EvalOptions& options) {
  const auto results = evaluate_users(model, view, options);
  EvalReport report = bucket_report(results, view, options.ks);
  report.skipped = view.users.size() - results.size();
  return report;
}

std::vector<Recommendation> recommend(const Model& model, std::span<const Index> history, Index k,
                                      std::optional<Index> condition, const EvalOptions& options) {
  if (history.empty()) throw ContractError("recommend: empty history");
  for (Index item : history) {
    if (item < 0 || item >= model.config().num_items) {
      throw ContractError("recommend: unknown item id " + std::to_string(item));
    }
  }
  if (k <= 0) throw ContractError("recommend: K must be positive");
  const VectorR x0_hat = generate(model, history, condition, options, 0);
  const VectorR scores = model.score_candidates(x0_hat, options.retrieval);
  const auto order = rank_items(scores);
  const Index n = std::min<Index>(k, static_cast<Index>(order.size()));
  std::vector<Recommendation> out;
  for (Index i = 0; i < n; ++i) out.push_back({order[static_cast<std::size_t>(i)], scores[order[static_cast<std::size_t>(i)]]});
  return out;
}

}  // namespace bridgerec
