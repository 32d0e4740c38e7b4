#pragma once

// Joint training: bridge-time sampling, condition dropout, cross-entropy over
// the full vocabulary, Adam updates, validation-driven model selection.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bridgerec/cluster.hpp"
#include "bridgerec/data.hpp"
#include "bridgerec/evaluate.hpp"
#include "bridgerec/model.hpp"
#include "bridgerec/sampler.hpp"
#include "bridgerec/schedule.hpp"

namespace bridgerec {

struct TrainConfig {
  ModelConfig model;  // num_items / num_conditions are filled in by fit()
  ScheduleParams schedule;
  ConnectivityInputConfig input;
  SamplerConfig eval_sampler;

  double learning_rate = 0.001;
  Index batch_size = 256;
  int epochs = 200;
  int patience = 20;  // epochs without validation improvement before stopping
  std::uint64_t seed = 0;

  bool con_mode = false;
  double cond_drop_p = 0.1;
  Index k_clusters = 10;
  int cluster_iterations = 50;
  Index svd_rank = 64;

  /// Stop as soon as the selected validation HR@10 (or HR@1) reaches this
  /// percentage. Off when unset.
  std::optional<double> stop_at_valid_hr10;
  std::optional<double> stop_at_valid_hr1;
  unsigned eval_threads = 1;
  bool verbose = false;

  void validate() const;
};

/// One (history, next item) training pair.
struct Example {
  std::size_t user = 0;
  std::vector<Index> history;
  Index target = -1;
};

/// Every prefix of every user's training part paired with the item after it.
std::vector<Example> training_examples(const SplitView& view);

class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<MatrixR> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
};

/// Mean negative log-softmax of x0_hat . e over the full vocabulary.
Tensor ce_loss(Tape& tape, const Tensor& x0_hat, std::span<const Index> targets,
               const Tensor& item_embeddings);

struct StepStats {
  double loss = 0.0;
  std::size_t conditional = 0;
  std::size_t unconditional = 0;
};

/// Per example: draw t ~ U(0,1); x1 from the (conditional with prob 1 - p,
/// else unconditional) encoder; x0 = target embedding; x_t from the bridge
/// marginal; x0_hat from the connectivity model with alpha ~ N(mu, sigma^2).
/// Accumulates the cross-entropy and applies one optimizer update.
StepStats train_step(Model& model, Adam& optimizer, std::span<const Example> batch,
                     const TrainConfig& config, std::uint64_t step,
                     const ClusterModel* clusters = nullptr);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double valid_hr1 = 0.0;
  double valid_hr10 = 0.0;
  double valid_ndcg10 = 0.0;
};

struct FitResult {
  Model model;
  std::optional<ClusterModel> clusters;
  std::vector<EpochLog> history;
  int best_epoch = -1;
  double best_valid_hr1 = -1.0;
  double best_valid_hr10 = -1.0;
  double best_valid_ndcg10 = -1.0;
  bool early_stopped = false;
};

/// Trains on the leave-one-out split of `dataset`, keeping the parameters with
/// the best validation HR@10 (ties broken by NDCG@10). In con-mode the cluster centers are re-fitted
/// (warm-started) at every epoch boundary.
FitResult fit(const Dataset& dataset, const TrainConfig& config,
              const UserEmbeddings* user_embeddings = nullptr);

EvalOptions eval_options(const TrainConfig& config, Target target,
                         const ClusterModel* clusters = nullptr);

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticPattern { kMarkovChain, kBlockCyclic };

struct SyntheticSpec {
  std::size_t num_users = 50;
  Index num_items = 20;
  SyntheticPattern pattern = SyntheticPattern::kBlockCyclic;
  Index num_blocks = 4;
  double noise_rate = 0.0;
  std::size_t min_length = 6;
  std::size_t max_length = 12;
  /// Zipf exponent for start-item popularity; 0 draws starts uniformly.
  double zipf = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  std::vector<Index> population;  // block index per user (block-cyclic)
};

/// Markov chain: item i is followed by (i + 1) mod V. Block-cyclic: items are
/// split into contiguous blocks, every user lives in one block and cycles
/// through it. Each emitted item is replaced by a uniformly random one with
/// probability noise_rate; the underlying chain is unaffected.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace bridgerec
