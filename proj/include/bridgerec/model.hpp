#pragma once

// Learned components: item embeddings, the causal transformer sequence
// encoder (optionally FiLM-conditioned on a cluster one-hot), and the
// connectivity MLP that predicts the target embedding from (x_t, t, x1).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bridgerec/autodiff.hpp"
#include "bridgerec/bridge.hpp"

namespace bridgerec {

using Real = double;
using Index = Eigen::Index;
using Tensor = ad::Tensor<Real>;
using Tape = ad::Tape<Real>;
using MatrixR = ad::Matrix<Real>;
using VectorR = Vector<Real>;

struct ModelConfig {
  Index num_items = 0;
  Index dim = 128;
  Index blocks = 4;
  Index heads = 2;
  Index max_len = 50;
  double dropout = 0.2;
  /// Number of cluster conditions k; 0 disables the FiLM projector.
  Index num_conditions = 0;
  /// Connectivity MLP hidden width; 0 means 2 * dim.
  Index mlp_hidden = 0;
  /// Time amplification applied before the sinusoidal embedding.
  double lambda = 100.0;

  Index hidden() const { return mlp_hidden > 0 ? mlp_hidden : 2 * dim; }
  void validate() const;
};

/// Input-scaling distribution for x_t: alpha ~ N(mu, sigma^2) per coordinate
/// during training, alpha = mu at inference.
struct ConnectivityInputConfig {
  double mu = 0.01;
  double sigma = 0.01;
};

/// Controls dropout for one forward pass. Each dropout site draws from the
/// stream keyed by (seed, site, step).
struct ForwardMode {
  bool train = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  static ForwardMode eval() { return {}; }
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

enum class Retrieval { kInnerProduct, kCosine };

class Model {
 public:
  /// Initialises parameters: Xavier normal for transformer and MLP weights,
  /// N(0, 0.02^2) for item and position embeddings, identity FiLM projector.
  Model(ModelConfig config, std::uint64_t seed);
  // Parameters are shared handles; copies must be explicit via clone().
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& item_embeddings() const { return item_emb_; }

  /// Deep copy of every parameter value (gradients are not copied).
  Model clone() const;
  void copy_values_from(const Model& other);

  // ---- graph-building API (batched) ----

  /// Encodes a batch of histories into user states (B x d). `conditions`
  /// is either empty (no conditioning anywhere) or holds one entry per
  /// history: a cluster index in [0, k) or -1 for the null condition.
  Tensor encode(Tape& tape, std::span<const std::vector<Index>> histories,
                std::span<const Index> conditions, const ForwardMode& mode) const;

  /// x0 estimate f(alpha * x_t, t, x1) for a batch. `alpha_scale` is B x d.
  Tensor predict_x0(Tape& tape, const Tensor& x_t, std::span<const Real> t, const Tensor& x1,
                    const MatrixR& alpha_scale) const;

  /// Logits x0_hat . e_i over the whole vocabulary (B x V).
  Tensor logits(Tape& tape, const Tensor& x0_hat) const;

  // ---- single-example inference helpers ----

  VectorR encode(std::span<const Index> history) const;
  VectorR encode_conditional(std::span<const Index> history, std::optional<Index> condition) const;
  VectorR encode_unconditional(std::span<const Index> history) const;
  VectorR predict_x0(const VectorR& x_t, Real t, const VectorR& x1, Real alpha_scale) const;
  VectorR score_candidates(const VectorR& x0_hat,
                           Retrieval retrieval = Retrieval::kInnerProduct) const;

  /// Sinusoidal features of lambda * t: sin over the first half of the
  /// coordinates, cos over the second, geometric frequencies 1 .. 1e-4.
  VectorR time_embed(Real t) const;

 private:
  struct Block {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, wk, wv, wo;
    Tensor ln2_gain, ln2_bias;
    Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  };

  Tensor& add_param(const std::string& name, MatrixR value);
  void bind_handles();
  std::vector<Index> truncated(std::span<const Index> history) const;

  ModelConfig config_;
  std::vector<NamedParameter> params_;

  Tensor item_emb_, pos_emb_;
  std::vector<Block> blocks_;
  Tensor final_gain_, final_bias_;
  Tensor film_scale_, film_shift_;
  Tensor mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_, mlp_w3_, mlp_b3_;
};

/// Returns item ids ordered by descending score; ties go to the lower id.
std::vector<Index> rank_items(const VectorR& scores);

/// 1-based position of `target` in the descending ranking of `scores`
/// (ties resolved toward the lower id), without sorting.
Index rank_of(const VectorR& scores, Index target);

}  // namespace bridgerec
