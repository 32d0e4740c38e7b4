#include "bridgerec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "bridgerec/bridge.hpp"

namespace bridgerec {

void TrainConfig::validate() const {
  schedule.validate();
  eval_sampler.validate();
  if (!(learning_rate >= 0.0)) throw ContractError("train.lr must be nonnegative");
  if (batch_size <= 0) throw ContractError("train.batch_size must be positive");
  if (epochs <= 0) throw ContractError("train.epochs must be positive");
  if (patience <= 0) throw ContractError("train.patience must be positive");
  if (!(cond_drop_p >= 0.0 && cond_drop_p <= 1.0)) {
    throw ContractError("train.cond_drop_p must be in [0, 1]");
  }
  if (con_mode && k_clusters <= 0) throw ContractError("cluster.k must be positive");
  if (!(input.sigma >= 0.0)) throw ContractError("connectivity.sigma must be nonnegative");
}

std::vector<Example> training_examples(const SplitView& view) {
  std::vector<Example> out;
  for (std::size_t u = 0; u < view.users.size(); ++u) {
    const auto& train = view.users[u].train;
    for (std::size_t i = 1; i < train.size(); ++i) {
      out.push_back({u, std::vector<Index>(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(i)),
                     train[i]});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(MatrixR::Zero(p.rows(), p.cols()));
    v_.push_back(MatrixR::Zero(p.rows(), p.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const MatrixR& g = p.node()->grad;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    if (lr_ == 0.0) continue;
    p.mutable_value().array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Tensor ce_loss(Tape& tape, const Tensor& x0_hat, std::span<const Index> targets,
               const Tensor& item_embeddings) {
  return ad::cross_entropy(tape, ad::matmul_nt(tape, x0_hat, item_embeddings), targets);
}

StepStats train_step(Model& model, Adam& optimizer, std::span<const Example> batch,
                     const TrainConfig& config, std::uint64_t step, const ClusterModel* clusters) {
  const Index b = static_cast<Index>(batch.size());
  if (b == 0) throw ContractError("train_step: empty batch");
  if (config.con_mode && clusters == nullptr) {
    throw ContractError("train_step: con-mode requires cluster assignments");
  }
  const Index d = model.config().dim;
  Rng rng(config.seed, 0x747261696e2d7374ULL, step);

  std::vector<std::vector<Index>> histories;
  std::vector<Index> targets, conditions;
  std::vector<Real> times;
  MatrixR w0(b, d), w1(b, d), noise(b, d), alpha(b, d);
  StepStats stats;
  for (Index i = 0; i < b; ++i) {
    const auto& ex = batch[static_cast<std::size_t>(i)];
    histories.push_back(ex.history);
    targets.push_back(ex.target);
    const Real t = rng.uniform();
    times.push_back(t);
    if (config.con_mode) {
      const bool drop = rng.bernoulli(config.cond_drop_p);
      conditions.push_back(drop ? -1 : clusters->assignments.at(ex.user));
      ++(drop ? stats.unconditional : stats.conditional);
    } else {
      ++stats.unconditional;
    }
    const auto w = marginal_weights(coeffs<Real>(config.schedule, t));
    w0.row(i).setConstant(w.w0);
    w1.row(i).setConstant(w.w1);
    for (Index j = 0; j < d; ++j) {
      noise(i, j) = w.noise * rng.normal();
      alpha(i, j) = config.input.mu + config.input.sigma * rng.normal();
    }
  }

  optimizer.zero_grad();
  Tape tape;
  const ForwardMode mode{true, stream_key(config.seed, 0x64726f70ULL), step};
  const Tensor x1 = model.encode(tape, histories, conditions, mode);
  const Tensor x0 = ad::gather_rows<Real>(tape, model.item_embeddings(), targets);
  const Tensor x_t = ad::add(
      tape,
      ad::add(tape, ad::mul(tape, x0, Tensor::constant(std::move(w0))),
              ad::mul(tape, x1, Tensor::constant(std::move(w1)))),
      Tensor::constant(std::move(noise)));
  const Tensor x0_hat = model.predict_x0(tape, x_t, times, x1, alpha);
  const Tensor loss = ce_loss(tape, x0_hat, targets, model.item_embeddings());
  stats.loss = loss.item();
  if (!std::isfinite(stats.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step << "; t =";
    for (Real t : times) msg << ' ' << t;
    msg << "; users =";
    for (const auto& ex : batch) msg << ' ' << ex.user;
    throw NumericError(msg.str());
  }
  tape.backward(loss);
  optimizer.step();
  return stats;
}

EvalOptions eval_options(const TrainConfig& config, Target target, const ClusterModel* clusters) {
  EvalOptions o;
  o.target = target;
  o.schedule = config.schedule;
  o.sampler = config.eval_sampler;
  o.input = config.input;
  o.clusters = clusters;
  o.threads = config.eval_threads;
  o.ks = {1, 5, 10};
  return o;
}

FitResult fit(const Dataset& dataset, const TrainConfig& config,
              const UserEmbeddings* user_embeddings) {
  if (dataset.num_users() == 0) throw ContractError("fit: empty dataset");
  config.validate();
  const SplitView view = split(dataset);
  const auto examples = training_examples(view);
  if (examples.empty()) throw ContractError("fit: no training pairs (all prefixes too short)");

  ModelConfig mc = config.model;
  mc.num_items = dataset.num_items;
  mc.num_conditions = config.con_mode ? config.k_clusters : 0;
  Model model(mc, config.seed);

  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  Adam optimizer(params, config.learning_rate);

  std::optional<ClusterModel> clusters;
  DenseMatrix user_vectors;
  if (config.con_mode) {
    user_vectors = user_embeddings ? user_embeddings->vectors
                                   : svd_user_embeddings(view, config.svd_rank).vectors;
    if (user_vectors.rows() != static_cast<Index>(dataset.num_users())) {
      throw ContractError("user embeddings do not cover the dataset users");
    }
    clusters = fit_centers(user_vectors, config.k_clusters, config.cluster_iterations, config.seed);
  }

  FitResult result{model.clone(), clusters, {}, -1, -1.0, false};
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.con_mode && epoch > 1) {
      clusters = fit_centers(user_vectors, config.k_clusters, config.cluster_iterations,
                             config.seed, clusters->centers);
    }
    Rng shuffle_rng(config.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<Example> batch;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config.batch_size)) {
      batch.clear();
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(config.batch_size));
      for (std::size_t i = at; i < end; ++i) batch.push_back(examples[order[i]]);
      const auto stats = train_step(model, optimizer, batch, config, step++,
                                    clusters ? &*clusters : nullptr);
      loss_sum += stats.loss;
      ++batches;
    }

    const auto report =
        evaluate(model, view, eval_options(config, Target::kValid, clusters ? &*clusters : nullptr));
    EpochLog log{epoch, loss_sum / static_cast<double>(batches), report.hr(1), report.hr(10),
                 report.ndcg(10)};
    result.history.push_back(log);
    if (config.verbose) {
      std::cerr << "epoch " << epoch << " loss " << log.mean_loss << " valid HR@1 "
                << log.valid_hr1 << " HR@10 " << log.valid_hr10 << " NDCG@10 " << log.valid_ndcg10
                << '\n';
    }
    const bool better = log.valid_hr10 > result.best_valid_hr10 ||
                        (log.valid_hr10 == result.best_valid_hr10 &&
                         log.valid_ndcg10 > result.best_valid_ndcg10);
    if (better) {
      result.best_valid_hr1 = log.valid_hr1;
      result.best_valid_hr10 = log.valid_hr10;
      result.best_valid_ndcg10 = log.valid_ndcg10;
      result.best_epoch = epoch;
      result.model.copy_values_from(model);
      result.clusters = clusters;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.early_stopped = true;
      if (config.verbose) std::cerr << "early stop after " << epoch << " epochs\n";
      break;
    }
    if (config.stop_at_valid_hr10 && result.best_valid_hr10 >= *config.stop_at_valid_hr10) break;
    if (config.stop_at_valid_hr1 && result.best_valid_hr1 >= *config.stop_at_valid_hr1) break;
  }
  return result;
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (num_users == 0) throw ContractError("synthetic: num_users must be positive");
  if (num_items < 2) throw ContractError("synthetic: need at least 2 items");
  if (min_length < 3 || max_length < min_length) {
    throw ContractError("synthetic: lengths must satisfy 3 <= min_length <= max_length");
  }
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw ContractError("synthetic: noise_rate must be in [0, 1]");
  }
  if (pattern == SyntheticPattern::kBlockCyclic &&
      (num_blocks <= 0 || num_blocks > num_items / 2)) {
    throw ContractError("synthetic: need 1 <= num_blocks <= num_items / 2");
  }
  if (!(zipf >= 0.0)) throw ContractError("synthetic: zipf exponent must be nonnegative");
}

namespace {

Index weighted_pick(const std::vector<double>& cumulative, Rng& rng) {
  const double r = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
  return std::min<Index>(static_cast<Index>(it - cumulative.begin()),
                         static_cast<Index>(cumulative.size()) - 1);
}

std::vector<double> zipf_cumulative(Index n, double exponent) {
  std::vector<double> c(static_cast<std::size_t>(n));
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    acc += 1.0 / std::pow(static_cast<double>(i + 1), exponent);
    c[static_cast<std::size_t>(i)] = acc;
  }
  return c;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, 0x73796e7468ULL);
  SyntheticData out;
  out.dataset.num_items = spec.num_items;
  const Index v = spec.num_items;
  const bool blocks = spec.pattern == SyntheticPattern::kBlockCyclic;
  const Index nb = blocks ? spec.num_blocks : 1;

  for (std::size_t u = 0; u < spec.num_users; ++u) {
    const Index block = static_cast<Index>(u % static_cast<std::size_t>(nb));
    const Index lo = block * v / nb;
    const Index hi = (block + 1) * v / nb;
    const Index size = hi - lo;
    const auto weights = zipf_cumulative(size, spec.zipf);
    const std::size_t len = spec.min_length + rng.index(spec.max_length - spec.min_length + 1);

    Index cur = lo + weighted_pick(weights, rng);
    std::vector<Index> seq;
    seq.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
      Index emit = cur;
      if (spec.noise_rate > 0.0 && rng.bernoulli(spec.noise_rate)) {
        emit = static_cast<Index>(rng.index(static_cast<std::size_t>(v)));
      }
      seq.push_back(emit);
      cur = lo + (cur - lo + 1) % size;
    }
    out.dataset.user_ids.push_back(static_cast<std::int64_t>(u));
    out.dataset.sequences.push_back(std::move(seq));
    out.population.push_back(block);
  }
  return out;
}

}  // namespace bridgerec
