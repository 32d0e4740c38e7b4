#include "bridgerec/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bridgerec {

void ModelConfig::validate() const {
  if (num_items <= 0) throw ContractError("model.num_items must be positive");
  if (dim <= 0 || dim % 2 != 0) throw ContractError("model.dim must be positive and even");
  if (blocks < 0) throw ContractError("model.blocks must be nonnegative");
  if (heads <= 0 || dim % heads != 0) throw ContractError("model.heads must divide model.dim");
  if (max_len <= 0) throw ContractError("model.max_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("model.dropout must be in [0, 1)");
  if (num_conditions < 0) throw ContractError("model.num_conditions must be nonnegative");
  if (!(lambda > 0.0)) throw ContractError("model.lambda must be positive");
}

namespace {

MatrixR normal_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  MatrixR m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

MatrixR xavier(Index fan_in, Index fan_out, Rng& rng) {
  return normal_matrix(fan_in, fan_out, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)),
                       rng);
}

MatrixR ones_row(Index n) { return MatrixR::Ones(1, n); }
MatrixR zeros_row(Index n) { return MatrixR::Zero(1, n); }

Tensor affine_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return ad::add(tape, ad::mul(tape, ad::layernorm(tape, x), gain), bias);
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return ad::add(tape, ad::matmul(tape, x, w), b);
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const Index d = config_.dim;
  const Index h = config_.hidden();
  Rng rng(seed, 0x6d6f64656cULL);

  add_param("item_embeddings", normal_matrix(config_.num_items, d, 0.02, rng));
  add_param("position_embeddings", normal_matrix(config_.max_len, d, 0.02, rng));
  for (Index b = 0; b < config_.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    add_param(p + "ln1.gain", ones_row(d));
    add_param(p + "ln1.bias", zeros_row(d));
    add_param(p + "attn.wq", xavier(d, d, rng));
    add_param(p + "attn.wk", xavier(d, d, rng));
    add_param(p + "attn.wv", xavier(d, d, rng));
    add_param(p + "attn.wo", xavier(d, d, rng));
    add_param(p + "ln2.gain", ones_row(d));
    add_param(p + "ln2.bias", zeros_row(d));
    add_param(p + "ff1.w", xavier(d, d, rng));
    add_param(p + "ff1.b", zeros_row(d));
    add_param(p + "ff2.w", xavier(d, d, rng));
    add_param(p + "ff2.b", zeros_row(d));
  }
  add_param("final_ln.gain", ones_row(d));
  add_param("final_ln.bias", zeros_row(d));
  if (config_.num_conditions > 0) {
    // Zero weights give beta = 1, gamma = 0: conditioning starts as identity.
    add_param("film.scale", MatrixR::Zero(config_.num_conditions, d));
    add_param("film.shift", MatrixR::Zero(config_.num_conditions, d));
  }
  add_param("mlp.w1", xavier(3 * d, h, rng));
  add_param("mlp.b1", zeros_row(h));
  add_param("mlp.w2", xavier(h, h, rng));
  add_param("mlp.b2", zeros_row(h));
  add_param("mlp.w3", xavier(h, d, rng));
  add_param("mlp.b3", zeros_row(d));
  bind_handles();
}

Tensor& Model::add_param(const std::string& name, MatrixR value) {
  params_.push_back({name, Tensor::parameter(std::move(value))});
  return params_.back().tensor;
}

Tensor& Model::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ContractError("no parameter named '" + name + "'");
}

void Model::bind_handles() {
  item_emb_ = parameter("item_embeddings");
  pos_emb_ = parameter("position_embeddings");
  blocks_.clear();
  for (Index b = 0; b < config_.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    Block blk;
    blk.ln1_gain = parameter(p + "ln1.gain");
    blk.ln1_bias = parameter(p + "ln1.bias");
    blk.wq = parameter(p + "attn.wq");
    blk.wk = parameter(p + "attn.wk");
    blk.wv = parameter(p + "attn.wv");
    blk.wo = parameter(p + "attn.wo");
    blk.ln2_gain = parameter(p + "ln2.gain");
    blk.ln2_bias = parameter(p + "ln2.bias");
    blk.ff1_w = parameter(p + "ff1.w");
    blk.ff1_b = parameter(p + "ff1.b");
    blk.ff2_w = parameter(p + "ff2.w");
    blk.ff2_b = parameter(p + "ff2.b");
    blocks_.push_back(std::move(blk));
  }
  final_gain_ = parameter("final_ln.gain");
  final_bias_ = parameter("final_ln.bias");
  if (config_.num_conditions > 0) {
    film_scale_ = parameter("film.scale");
    film_shift_ = parameter("film.shift");
  }
  mlp_w1_ = parameter("mlp.w1");
  mlp_b1_ = parameter("mlp.b1");
  mlp_w2_ = parameter("mlp.w2");
  mlp_b2_ = parameter("mlp.b2");
  mlp_w3_ = parameter("mlp.w3");
  mlp_b3_ = parameter("mlp.b3");
}

Model Model::clone() const {
  Model copy(config_, 0);
  copy.copy_values_from(*this);
  return copy;
}

void Model::copy_values_from(const Model& other) {
  if (other.params_.size() != params_.size()) throw ContractError("model structures differ");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name ||
        params_[i].tensor.shape() != other.params_[i].tensor.shape()) {
      throw ContractError("model structures differ at '" + params_[i].name + "'");
    }
    params_[i].tensor.mutable_value() = other.params_[i].tensor.value();
  }
}

std::vector<Index> Model::truncated(std::span<const Index> history) const {
  const std::size_t keep = std::min<std::size_t>(history.size(), config_.max_len);
  return {history.end() - static_cast<std::ptrdiff_t>(keep), history.end()};
}

Tensor Model::encode(Tape& tape, std::span<const std::vector<Index>> histories,
                     std::span<const Index> conditions, const ForwardMode& mode) const {
  const Index batch = static_cast<Index>(histories.size());
  if (batch == 0) throw ContractError("encode: empty batch");
  if (!conditions.empty() && static_cast<Index>(conditions.size()) != batch) {
    throw ContractError("encode: one condition per history required");
  }

  std::vector<Index> ids, positions, owner, last_rows;
  std::vector<ad::Segment> segments;
  for (Index b = 0; b < batch; ++b) {
    const auto seq = truncated(histories[static_cast<std::size_t>(b)]);
    if (seq.empty()) throw ContractError("encode: empty history");
    const Index len = static_cast<Index>(seq.size());
    segments.push_back({static_cast<Index>(ids.size()), len});
    for (Index i = 0; i < len; ++i) {
      ids.push_back(seq[static_cast<std::size_t>(i)]);
      // Positions count back from the most recent item, so the last item
      // always sits at position 0 regardless of history length.
      positions.push_back(len - 1 - i);
      owner.push_back(b);
    }
    last_rows.push_back(static_cast<Index>(ids.size()) - 1);
  }

  Tensor x = ad::gather_rows<Real>(tape, item_emb_, ids);

  bool conditioned = false;
  for (Index c : conditions) {
    if (c < -1 || c >= config_.num_conditions) {
      throw ContractError("encode: condition " + std::to_string(c) + " outside [0, " +
                          std::to_string(config_.num_conditions) + ") and not null");
    }
    conditioned = conditioned || c >= 0;
  }
  if (conditioned) {
    MatrixR onehot = MatrixR::Zero(batch, config_.num_conditions);
    for (Index b = 0; b < batch; ++b) {
      const Index c = conditions[static_cast<std::size_t>(b)];
      if (c >= 0) onehot(b, c) = 1.0;
    }
    const Tensor cond = Tensor::constant(std::move(onehot));
    const Tensor scale = ad::add(tape, ad::matmul(tape, cond, film_scale_), Real(1));
    const Tensor shift = ad::matmul(tape, cond, film_shift_);
    x = ad::add(tape, ad::mul(tape, x, ad::gather_rows<Real>(tape, scale, owner)),
                ad::gather_rows<Real>(tape, shift, owner));
  }

  x = ad::add(tape, x, ad::gather_rows<Real>(tape, pos_emb_, positions));

  std::uint64_t site = 0;
  auto drop = [&](const Tensor& t) {
    Rng rng(mode.seed, site++, mode.step);
    return ad::dropout(tape, t, config_.dropout, rng, mode.train);
  };

  x = drop(x);
  for (const auto& blk : blocks_) {
    const Tensor h = affine_norm(tape, x, blk.ln1_gain, blk.ln1_bias);
    const Tensor q = ad::matmul(tape, h, blk.wq);
    const Tensor k = ad::matmul(tape, h, blk.wk);
    const Tensor v = ad::matmul(tape, h, blk.wv);
    const Tensor attn = ad::causal_attention<Real>(tape, q, k, v, segments, config_.heads);
    x = ad::add(tape, x, drop(ad::matmul(tape, attn, blk.wo)));

    const Tensor h2 = affine_norm(tape, x, blk.ln2_gain, blk.ln2_bias);
    const Tensor ff = linear(tape, ad::gelu(tape, linear(tape, h2, blk.ff1_w, blk.ff1_b)),
                             blk.ff2_w, blk.ff2_b);
    x = ad::add(tape, x, drop(ff));
  }
  x = affine_norm(tape, x, final_gain_, final_bias_);
  return ad::gather_rows<Real>(tape, x, last_rows);
}

Tensor Model::predict_x0(Tape& tape, const Tensor& x_t, std::span<const Real> t, const Tensor& x1,
                         const MatrixR& alpha_scale) const {
  const Index batch = x_t.rows();
  const Index d = config_.dim;
  if (x_t.cols() != d || x1.cols() != d || x1.rows() != batch) {
    throw DimensionError("predict_x0: x_t and x1 must both be B x dim");
  }
  if (static_cast<Index>(t.size()) != batch || alpha_scale.rows() != batch ||
      alpha_scale.cols() != d) {
    throw DimensionError("predict_x0: per-example t and B x dim alpha scale required");
  }
  if (!x_t.value().allFinite() || !x1.value().allFinite() || !alpha_scale.allFinite()) {
    throw NumericError("predict_x0: non-finite input");
  }
  MatrixR temb(batch, d);
  for (Index b = 0; b < batch; ++b) {
    const Real tb = t[static_cast<std::size_t>(b)];
    if (!(tb >= 0.0 && tb <= 1.0)) throw DomainError("predict_x0: t outside [0, 1]");
    temb.row(b) = time_embed(tb).transpose();
  }
  const Tensor scaled = ad::mul(tape, x_t, Tensor::constant(alpha_scale));
  const Tensor input =
      ad::concat_cols<Real>(tape, {scaled, Tensor::constant(std::move(temb)), x1});
  Tensor h = ad::gelu(tape, linear(tape, input, mlp_w1_, mlp_b1_));
  h = ad::gelu(tape, linear(tape, h, mlp_w2_, mlp_b2_));
  return linear(tape, h, mlp_w3_, mlp_b3_);
}

Tensor Model::logits(Tape& tape, const Tensor& x0_hat) const {
  return ad::matmul_nt(tape, x0_hat, item_emb_);
}

VectorR Model::encode(std::span<const Index> history) const {
  return encode_conditional(history, std::nullopt);
}

VectorR Model::encode_unconditional(std::span<const Index> history) const {
  return encode_conditional(history, std::nullopt);
}

VectorR Model::encode_conditional(std::span<const Index> history,
                                  std::optional<Index> condition) const {
  if (history.empty()) throw ContractError("encode: empty history");
  Tape tape(false);
  const std::vector<std::vector<Index>> batch{std::vector<Index>(history.begin(), history.end())};
  std::vector<Index> conds;
  if (condition) {
    if (*condition < 0) throw ContractError("encode_conditional: condition must be nonnegative");
    conds.push_back(*condition);
  }
  const Tensor out = encode(tape, batch, conds, ForwardMode::eval());
  return out.value().row(0).transpose();
}

VectorR Model::predict_x0(const VectorR& x_t, Real t, const VectorR& x1, Real alpha_scale) const {
  Tape tape(false);
  const Real ts[] = {t};
  const MatrixR alpha = MatrixR::Constant(1, config_.dim, alpha_scale);
  const Tensor out =
      predict_x0(tape, Tensor::row(x_t), ts, Tensor::row(x1), alpha);
  return out.value().row(0).transpose();
}

VectorR Model::score_candidates(const VectorR& x0_hat, Retrieval retrieval) const {
  if (x0_hat.size() != config_.dim) throw DimensionError("score_candidates: wrong dimension");
  const auto& table = item_emb_.value();
  if (retrieval == Retrieval::kInnerProduct) return table * x0_hat;
  VectorR scores = table * x0_hat;
  const Real qn = x0_hat.norm();
  for (Index i = 0; i < scores.size(); ++i) {
    const Real denom = qn * table.row(i).norm();
    scores[i] = denom > 0 ? scores[i] / denom : 0.0;
  }
  return scores;
}

VectorR Model::time_embed(Real t) const {
  const Index half = config_.dim / 2;
  const Real at = config_.lambda * t;
  VectorR e(config_.dim);
  for (Index i = 0; i < half; ++i) {
    const Real freq =
        std::exp(-std::log(10000.0) * static_cast<Real>(i) / static_cast<Real>(half));
    e[i] = std::sin(at * freq);
    e[half + i] = std::cos(at * freq);
  }
  return e;
}

std::vector<Index> rank_items(const VectorR& scores) {
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return scores[a] > scores[b]; });
  return order;
}

Index rank_of(const VectorR& scores, Index target) {
  if (target < 0 || target >= scores.size()) throw IndexError("rank_of: target out of range");
  const Real s = scores[target];
  Index better = 0;
  for (Index i = 0; i < scores.size(); ++i) {
    if (scores[i] > s || (scores[i] == s && i < target)) ++better;
  }
  return better + 1;
}

}  // namespace bridgerec
