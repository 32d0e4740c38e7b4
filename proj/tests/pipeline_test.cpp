#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

#include "bridgerec/checkpoint.hpp"
#include "bridgerec/cluster.hpp"
#include "bridgerec/config.hpp"
#include "bridgerec/data.hpp"
#include "bridgerec/evaluate.hpp"
#include "bridgerec/trainer.hpp"
#include "bridgerec/verify.hpp"

namespace br = bridgerec;
using br::Index;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("bridgerec_" + name)).string();
}

br::TrainConfig tiny_config(std::uint64_t seed = 1) {
  br::TrainConfig c;
  c.model.dim = 8;
  c.model.blocks = 1;
  c.model.heads = 2;
  c.model.max_len = 8;
  c.batch_size = 16;
  c.epochs = 2;
  c.patience = 5;
  c.seed = seed;
  c.eval_sampler.seed = seed;
  return c;
}

br::Dataset tiny_dataset(std::uint64_t seed = 2) {
  br::SyntheticSpec s;
  s.num_users = 20;
  s.num_items = 12;
  s.num_blocks = 3;
  s.seed = seed;
  return br::generate_synthetic(s).dataset;
}

}  // namespace

// ---------------------------------------------------------------------------
// Data

TEST(Ingest, TwoLines) {
  std::istringstream in("7 1 2 3\n9 4 5 6 7\n");
  const auto d = br::ingest(in);
  EXPECT_EQ(d.num_users(), 2u);
  EXPECT_EQ(d.user_ids, (std::vector<std::int64_t>{7, 9}));
  EXPECT_EQ(d.num_items, 8);
}

TEST(Ingest, ShortSequenceIsDropped) {
  std::istringstream in("1 4 5\n2 1 2 3\n");
  const auto d = br::ingest(in);
  EXPECT_EQ(d.num_users(), 1u);
  EXPECT_EQ(d.dropped_short, 1u);
}

TEST(Ingest, MalformedLineNamesTheLine) {
  std::istringstream in("1 2 3 4\n2 5 x 6\n");
  try {
    br::ingest(in);
    FAIL() << "expected IngestError";
  } catch (const br::IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Ingest, RoundTripThroughFile) {
  const auto d = tiny_dataset();
  const auto path = temp_path("roundtrip.txt");
  br::write_dataset(path, d);
  const auto back = br::ingest(path, d.num_items);
  EXPECT_EQ(back.sequences, d.sequences);
  EXPECT_EQ(back.user_ids, d.user_ids);
  std::remove(path.c_str());
}

TEST(Split, LeaveOneOut) {
  br::Dataset d;
  d.user_ids = {0, 1};
  d.sequences = {{10, 11, 12}, {1, 2, 3, 4, 5}};
  d.num_items = 13;
  const auto v = br::split(d);
  EXPECT_EQ(v.users[0].train, (std::vector<Index>{10}));
  EXPECT_EQ(v.users[0].valid, 11);
  EXPECT_EQ(v.users[0].test, 12);
  EXPECT_EQ(v.users[1].train, (std::vector<Index>{1, 2, 3}));
  EXPECT_EQ(v.users[1].valid, 4);
  EXPECT_EQ(v.users[1].test, 5);
  EXPECT_EQ(br::eval_history(v.users[1], br::Target::kTest), (std::vector<Index>{1, 2, 3, 4}));
}

TEST(Metrics, HandCases) {
  const std::vector<Index> ranked = {4, 1, 7, 0, 2, 9, 3, 8};
  EXPECT_EQ(br::hr_at_k(ranked, 4, 5), 1);
  EXPECT_DOUBLE_EQ(br::ndcg_at_k(ranked, 4, 5), 1.0);
  EXPECT_DOUBLE_EQ(br::ndcg_at_k(ranked, 7, 5), 0.5);
  EXPECT_EQ(br::hr_at_k(ranked, 3, 5), 0);
  EXPECT_DOUBLE_EQ(br::ndcg_at_k(ranked, 3, 5), 0.0);
}

TEST(Metrics, DuplicateRankingIsContractError) {
  const std::vector<Index> ranked = {1, 2, 1};
  EXPECT_THROW(br::hr_at_k(ranked, 2, 3), br::ContractError);
}

TEST(Metrics, OracleCheckPasses) { EXPECT_TRUE(br::verify::check_metrics().passed); }

// ---------------------------------------------------------------------------
// Synthetic data

TEST(Synthetic, NoiseFreeMarkovIsDeterministic) {
  br::SyntheticSpec s;
  s.pattern = br::SyntheticPattern::kMarkovChain;
  s.num_users = 30;
  s.num_items = 15;
  s.seed = 4;
  const auto d = br::generate_synthetic(s).dataset;
  EXPECT_EQ(d.num_users(), 30u);
  for (const auto& seq : d.sequences) {
    for (std::size_t i = 1; i < seq.size(); ++i) EXPECT_EQ(seq[i], (seq[i - 1] + 1) % 15);
  }
}

TEST(Synthetic, SameSeedSameData) {
  br::SyntheticSpec s;
  s.noise_rate = 0.3;
  s.seed = 8;
  EXPECT_EQ(br::generate_synthetic(s).dataset.sequences,
            br::generate_synthetic(s).dataset.sequences);
}

TEST(Synthetic, ZipfFavoursLowStarts) {
  br::SyntheticSpec s;
  s.pattern = br::SyntheticPattern::kMarkovChain;
  s.num_users = 2000;
  s.num_items = 50;
  s.zipf = 1.2;
  s.seed = 3;
  const auto d = br::generate_synthetic(s).dataset;
  std::vector<int> starts(50, 0);
  for (const auto& seq : d.sequences) ++starts[static_cast<std::size_t>(seq.front())];
  EXPECT_GT(starts[0], starts[10]);
  EXPECT_GT(starts[0], 2000 / 50 * 3);
}

// ---------------------------------------------------------------------------
// Clustering

TEST(Cluster, CosineAssignment) {
  br::DenseMatrix centers(2, 2);
  centers << 1, 0, 0, 1;
  EXPECT_EQ(br::assign(Eigen::Vector2d(1, 0), centers), Eigen::Vector2d(1, 0));
  EXPECT_EQ(br::assign(Eigen::Vector2d(0.2, 3), centers), Eigen::Vector2d(0, 1));
  EXPECT_EQ(br::assign(Eigen::Vector2d(1, 1) / std::sqrt(2.0), centers), Eigen::Vector2d(1, 0));
  EXPECT_THROW(br::assign(Eigen::Vector2d(0, 0), centers), br::ContractError);
}

TEST(Cluster, OneCenterPerUserWhenKEqualsN) {
  br::DenseMatrix users(4, 3);
  users << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, -1;
  const auto m = br::fit_centers(users, 4, 20, 1);
  std::vector<Index> sorted = m.assignments;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<Index>{0, 1, 2, 3}));
}

TEST(Cluster, SeparatedBlobsAndDeterminism) {
  br::Rng rng(2);
  br::DenseMatrix users(40, 3);
  for (Index i = 0; i < 40; ++i) {
    const Eigen::Vector3d base = i < 20 ? Eigen::Vector3d(5, 0, 0) : Eigen::Vector3d(0, 0, 5);
    for (Index j = 0; j < 3; ++j) users(i, j) = base[j] + 0.3 * rng.normal();
  }
  const auto a = br::fit_centers(users, 2, 50, 9);
  for (Index i = 1; i < 20; ++i) EXPECT_EQ(a.assignments[i], a.assignments[0]);
  for (Index i = 21; i < 40; ++i) EXPECT_EQ(a.assignments[i], a.assignments[20]);
  EXPECT_NE(a.assignments[0], a.assignments[20]);
  EXPECT_EQ(br::fit_centers(users, 2, 50, 9).assignments, a.assignments);
}

TEST(Cluster, EmbeddingFile) {
  br::Dataset d;
  d.user_ids = {3, 5, 8};
  d.sequences = {{0, 1, 2}, {0, 1, 2}, {0, 1, 2}};
  d.num_items = 3;
  std::istringstream ok("4 2\n5 0 1\n3 1 0\n8 1 1\n99 2 2\n");
  const auto e = br::load_user_embeddings(ok, d);
  EXPECT_EQ(e.vectors.rows(), 3);
  EXPECT_EQ(e.vectors.row(0), Eigen::RowVector2d(1, 0));
  EXPECT_EQ(e.warnings.size(), 1u);

  std::istringstream nan_row("3 2\n3 1 0\n5 nan 1\n8 1 1\n");
  EXPECT_THROW(br::load_user_embeddings(nan_row, d), br::IngestError);
  std::istringstream missing("2 2\n3 1 0\n5 0 1\n");
  EXPECT_THROW(br::load_user_embeddings(missing, d), br::IngestError);
}

// ---------------------------------------------------------------------------
// Training

TEST(Loss, SingleItemVocabularyIsZero) {
  br::Tape tape;
  const std::vector<Index> t = {0};
  auto loss = br::ce_loss(tape, br::Tensor::constant(br::MatrixR::Ones(1, 3)), t,
                          br::Tensor::constant(br::MatrixR::Ones(1, 3)));
  EXPECT_DOUBLE_EQ(loss.item(), 0.0);
}

TEST(Loss, EqualLogitsGiveLogTwo) {
  br::Tape tape;
  br::MatrixR x(1, 3), e(2, 3);
  x << 0, 0, 1;
  e << 1, 0, 0, 0, 1, 0;
  const std::vector<Index> t = {1};
  auto loss = br::ce_loss(tape, br::Tensor::constant(x), t, br::Tensor::constant(e));
  EXPECT_NEAR(loss.item(), std::log(2.0), 1e-15);
}

namespace {

struct StepFixture {
  br::Dataset data = tiny_dataset();
  br::SplitView view = br::split(data);
  std::vector<br::Example> examples = br::training_examples(view);
  br::TrainConfig config = tiny_config();

  br::Model make_model(Index conditions = 0) {
    auto mc = config.model;
    mc.num_items = data.num_items;
    mc.num_conditions = conditions;
    return br::Model(mc, config.seed);
  }
  std::vector<br::Tensor> params(br::Model& m) {
    std::vector<br::Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.tensor);
    return out;
  }
};

}  // namespace

TEST(TrainStep, LossDecreasesOnAFixedBatch) {
  StepFixture f;
  f.config.model.dropout = 0.0;
  f.config.learning_rate = 0.01;
  auto model = f.make_model();
  br::Adam opt(f.params(model), f.config.learning_rate);
  const std::span<const br::Example> batch(f.examples.data(), 16);
  std::vector<double> losses;
  for (int s = 0; s < 20; ++s) {
    // Same step key every time so t and noise are fixed; only parameters move.
    losses.push_back(br::train_step(model, opt, batch, f.config, 0).loss);
  }
  int rises = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) rises += losses[i] > losses[i - 1];
  EXPECT_LE(rises, 2);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
  StepFixture f;
  f.config.learning_rate = 0.0;
  auto model = f.make_model();
  const auto before = model.clone();
  br::Adam opt(f.params(model), 0.0);
  br::train_step(model, opt, std::span<const br::Example>(f.examples.data(), 8), f.config, 3);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    EXPECT_EQ(model.parameters()[i].tensor.value(), before.parameters()[i].tensor.value())
        << model.parameters()[i].name;
  }
}

TEST(TrainStep, GradientReachesEveryParameterGroup) {
  StepFixture f;
  auto model = f.make_model(2);
  f.config.con_mode = true;
  f.config.cond_drop_p = 0.5;
  br::ClusterModel clusters;
  clusters.centers = br::DenseMatrix::Identity(2, 2);
  for (std::size_t u = 0; u < f.data.num_users(); ++u) clusters.assignments.push_back(Index(u % 2));
  // Perturb FiLM away from zero so both of its factors carry gradient.
  model.parameter("film.scale").mutable_value().setConstant(0.1);
  br::Adam opt(f.params(model), 0.0);
  br::train_step(model, opt, std::span<const br::Example>(f.examples.data(), 16), f.config, 1,
                 &clusters);
  for (const auto& p : model.parameters()) {
    EXPECT_TRUE(p.tensor.has_grad()) << p.name;
    EXPECT_GT(p.tensor.grad().cwiseAbs().maxCoeff(), 0.0) << p.name;
  }
}

TEST(TrainStep, ConditionDropRate) {
  StepFixture f;
  f.config.con_mode = true;
  f.config.learning_rate = 0.0;
  f.config.model.blocks = 0;
  auto model = f.make_model(2);
  br::ClusterModel clusters;
  clusters.centers = br::DenseMatrix::Identity(2, 2);
  clusters.assignments.assign(f.data.num_users(), 1);
  br::Adam opt(f.params(model), 0.0);
  const double p = 0.3;
  f.config.cond_drop_p = p;
  std::size_t dropped = 0, total = 0;
  const std::span<const br::Example> batch(f.examples.data(), 100);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto st = br::train_step(model, opt, batch, f.config, s, &clusters);
    dropped += st.unconditional;
    total += st.conditional + st.unconditional;
  }
  ASSERT_EQ(total, 10000u);
  const double se = std::sqrt(p * (1 - p) / double(total));
  EXPECT_NEAR(double(dropped) / double(total), p, 3 * se);

  for (double edge : {0.0, 1.0}) {
    f.config.cond_drop_p = edge;
    const auto st = br::train_step(model, opt, batch, f.config, 0, &clusters);
    EXPECT_EQ(edge == 0.0 ? st.unconditional : st.conditional, 0u);
  }
}

TEST(Fit, EmptyDatasetIsContractError) {
  EXPECT_THROW(br::fit(br::Dataset{}, tiny_config()), br::ContractError);
}

TEST(Fit, BitwiseReproducible) {
  const auto data = tiny_dataset();
  const auto a = br::fit(data, tiny_config(5));
  const auto b = br::fit(data, tiny_config(5));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].mean_loss, b.history[i].mean_loss);
  }
  for (std::size_t i = 0; i < a.model.parameters().size(); ++i) {
    EXPECT_EQ(a.model.parameters()[i].tensor.value(), b.model.parameters()[i].tensor.value());
  }
}

// ---------------------------------------------------------------------------
// Checkpoint, recommend, config

TEST(Checkpoint, RoundTripReproducesMetrics) {
  const auto data = tiny_dataset();
  auto config = tiny_config(7);
  config.con_mode = true;
  config.k_clusters = 2;
  const auto fit = br::fit(data, config);
  ASSERT_TRUE(fit.clusters.has_value());
  const auto path = temp_path("ckpt.bin");
  br::save_checkpoint(path, fit.model, &*fit.clusters, br::inference_meta(config));
  const auto loaded = br::load_checkpoint(path);
  std::remove(path.c_str());

  ASSERT_TRUE(loaded.clusters.has_value());
  EXPECT_EQ(loaded.clusters->assignments, fit.clusters->assignments);
  EXPECT_EQ(loaded.meta.at("schedule.kind"), "gmax");
  const auto view = br::split(data);
  const auto a = br::evaluate(fit.model, view, br::eval_options(config, br::Target::kTest, &*fit.clusters));
  const auto b = br::evaluate(loaded.model, view,
                              br::eval_options(config, br::Target::kTest, &*loaded.clusters));
  EXPECT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].value, b.rows[i].value);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(br::load_checkpoint(temp_path("does_not_exist.ckpt")), br::IoError);
}

TEST(Recommend, MarkovToyPredictsTheSuccessor) {
  br::SyntheticSpec s;
  s.pattern = br::SyntheticPattern::kMarkovChain;
  s.num_users = 40;
  s.num_items = 15;
  s.seed = 3;
  const auto data = br::generate_synthetic(s).dataset;
  auto config = tiny_config(0);
  config.model.dim = 32;
  config.batch_size = 32;
  config.epochs = 15;
  const auto fit = br::fit(data, config);
  const std::vector<Index> history = {3, 4, 5, 6, 7};
  const auto recs =
      br::recommend(fit.model, history, 3, std::nullopt, br::eval_options(config, br::Target::kTest));
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs.front().item, 8);
}

TEST(Recommend, KClampedAndUnknownIdRejected) {
  auto config = tiny_config();
  config.model.num_items = 5;
  br::Model m(config.model, 1);
  const auto opts = br::eval_options(config, br::Target::kTest);
  EXPECT_EQ(br::recommend(m, std::vector<Index>{1, 2}, 50, std::nullopt, opts).size(), 5u);
  EXPECT_THROW(br::recommend(m, std::vector<Index>{1, 9}, 3, std::nullopt, opts),
               br::ContractError);
}

TEST(Config, ParseAndOverride) {
  std::istringstream in("# comment\nseed = 4\nschedule.kind=vp\nschedule.beta1 = 30 # tail\n");
  auto c = br::Config::parse(in);
  c.set("sampler.steps", "24");
  const auto t = br::train_from(c);
  EXPECT_EQ(t.seed, 4u);
  EXPECT_EQ(t.schedule.kind, br::ScheduleKind::kVp);
  EXPECT_EQ(t.schedule.beta1, 30.0);
  EXPECT_EQ(t.eval_sampler.steps, 24);
  EXPECT_EQ(t.eval_sampler.seed, 4u);
}

TEST(Config, UnknownKeyNamesTheLine) {
  std::istringstream in("seed=1\nbogus=2\n");
  try {
    br::Config::parse(in, "x.cfg");
    FAIL() << "expected ContractError";
  } catch (const br::ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:2"), std::string::npos) << e.what();
  }
}

TEST(Config, BadValuesRejected) {
  br::Config c;
  c.set("sampler.steps", "0");
  EXPECT_THROW(br::sampler_from(c), br::ContractError);
  c.set("sampler.steps", "abc");
  EXPECT_THROW(br::sampler_from(c), br::ContractError);
  br::Config d;
  d.set("schedule.beta1", "0.001");
  EXPECT_THROW(br::schedule_from(d), br::ContractError);
}

TEST(Config, MetaRoundTrip) {
  auto t = tiny_config(9);
  t.schedule.kind = br::ScheduleKind::kVp;
  t.eval_sampler.mode = br::SamplerMode::kOde;
  const auto c = br::config_from_meta(br::inference_meta(t));
  EXPECT_EQ(br::schedule_from(c).kind, br::ScheduleKind::kVp);
  EXPECT_EQ(br::sampler_from(c).mode, br::SamplerMode::kOde);
  EXPECT_EQ(br::input_from(c).mu, t.input.mu);
}
