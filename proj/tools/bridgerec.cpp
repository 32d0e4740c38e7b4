// Command-line entry point: synth, train, eval, recommend, verify, sweep.
//
// Exit codes: 0 success, 1 usage error, 2 verification failure, 3 I/O error.

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "bridgerec/checkpoint.hpp"
#include "bridgerec/config.hpp"
#include "bridgerec/verify.hpp"

namespace br = bridgerec;

namespace {

constexpr int kUsage = 1;
constexpr int kVerifyFailed = 2;
constexpr int kIo = 3;

// Flags shared by every command. Each one maps onto a config key; values
// given here override the --config file.
struct CommonFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key=value config file");
    flag(app, "--seed", "seed", "random seed (all streams derive from it)");
    flag(app, "--schedule", "schedule.kind", "gmax | vp");
    flag(app, "--beta0", "schedule.beta0", "schedule beta0");
    flag(app, "--beta1", "schedule.beta1", "schedule beta1");
    flag(app, "--mode", "sampler.mode", "sde | ode");
    flag(app, "--steps", "sampler.steps", "sampling steps");
    flag(app, "--guidance-w", "sampler.guidance_w", "guidance strength w");
    flag(app, "--k-clusters", "cluster.k", "number of user clusters");
    flag(app, "--cond-drop-p", "train.cond_drop_p", "condition drop probability");
    flag(app, "--mu", "connectivity.mu", "mean of the x_t input scale");
    flag(app, "--sigma", "connectivity.sigma", "std of the x_t input scale");
    flag(app, "--lambda", "model.lambda", "time amplification factor");
    flag(app, "--epochs", "train.epochs", "training epochs");
    flag(app, "--lr", "train.lr", "learning rate");
    flag(app, "--batch", "train.batch_size", "batch size");
    flag(app, "--dim", "model.dim", "embedding dimension");
    flag(app, "--blocks", "model.blocks", "transformer blocks");
    flag(app, "--dropout", "model.dropout", "dropout rate");
    flag(app, "--patience", "train.patience", "early-stopping patience (epochs)");
    flag(app, "--threads", "train.threads", "evaluation threads");
  }

  void flag(CLI::App* app, const std::string& name, const std::string& key,
            const std::string& help) {
    app->add_option_function<std::string>(
        name, [this, key](const std::string& v) { values[key] = v; }, help + " [" + key + "]");
  }

  br::Config resolve() const {
    br::Config c = config_path.empty() ? br::Config{} : br::Config::load(config_path);
    for (const auto& [k, v] : values) c.set(k, v);
    return c;
  }
};

std::uint64_t resolved_seed(const br::Config& c) {
  return static_cast<std::uint64_t>(c.get_int("seed", 0));
}

void print_seed(const br::Config& c) { std::cout << "seed: " << resolved_seed(c) << '\n'; }

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw br::ContractError("'" + item + "' is not an integer in list '" + s + "'");
    }
  }
  if (out.empty()) throw br::ContractError("empty list '" + s + "'");
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw br::ContractError("'" + item + "' is not a number in list '" + s + "'");
    }
  }
  if (out.empty()) throw br::ContractError("empty list '" + s + "'");
  return out;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& s, Parse parse) {
  std::vector<T> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse(item));
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw br::IoError("cannot write '" + path + "'");
  return out;
}

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------

int run_synth(const CommonFlags& flags, const std::map<std::string, std::string>& extra,
              const std::string& out_path) {
  br::Config c = flags.resolve();
  for (const auto& [k, v] : extra) c.set(k, v);
  print_seed(c);
  const auto spec = br::synthetic_from(c);
  const auto data = br::generate_synthetic(spec);
  br::write_dataset(out_path, data.dataset);
  std::cout << "wrote " << data.dataset.num_users() << " users, " << data.dataset.num_items
            << " items to " << out_path << '\n';
  return 0;
}

int run_train(const CommonFlags& flags, const std::string& data_path, const std::string& out_path,
              bool con_mode, const std::string& embeddings_path, bool quiet) {
  br::Config c = flags.resolve();
  if (con_mode) c.set("train.con_mode", "true");
  br::TrainConfig base;
  base.eval_threads = default_threads();
  br::TrainConfig config = br::train_from(c, base);
  config.verbose = !quiet;
  print_seed(c);

  const auto dataset = br::ingest(data_path);
  std::optional<br::UserEmbeddings> embeddings;
  const std::string emb_path =
      embeddings_path.empty() ? c.get_string("cluster.embeddings", "") : embeddings_path;
  if (config.con_mode && !emb_path.empty()) {
    embeddings = br::load_user_embeddings(emb_path, dataset);
    for (const auto& w : embeddings->warnings) std::cerr << "warning: " << w << '\n';
  }
  const auto result = br::fit(dataset, config, embeddings ? &*embeddings : nullptr);
  std::cout << "best epoch " << result.best_epoch << ": valid HR@10 " << result.best_valid_hr10
            << "% NDCG@10 " << result.best_valid_ndcg10 << "%"
            << (result.early_stopped ? " (early stop)" : "") << '\n';
  br::save_checkpoint(out_path, result.model, result.clusters ? &*result.clusters : nullptr,
                      br::inference_meta(config));
  std::cout << "checkpoint: " << out_path << '\n';
  return 0;
}

struct LoadedModel {
  br::Checkpoint ckpt;
  br::Config config;  // checkpoint settings with CLI overrides applied
};

LoadedModel load_with_overrides(const std::string& path, const CommonFlags& flags) {
  LoadedModel lm{br::load_checkpoint(path), {}};
  lm.config = br::config_from_meta(lm.ckpt.meta);
  lm.config.merge(flags.resolve());
  return lm;
}

br::EvalOptions options_from(const br::Config& c, const br::ClusterModel* clusters) {
  br::EvalOptions o;
  o.schedule = br::schedule_from(c);
  o.sampler = br::sampler_from(c);
  o.input = br::input_from(c);
  o.clusters = clusters;
  o.ks = {1, 5, 10, 20};
  o.threads = static_cast<unsigned>(c.get_int("train.threads", default_threads()));
  const std::string retrieval = c.get_string("eval.retrieval", "inner");
  if (retrieval == "cosine") {
    o.retrieval = br::Retrieval::kCosine;
  } else if (retrieval != "inner") {
    throw br::ContractError("eval.retrieval must be inner or cosine");
  }
  return o;
}

int run_eval(const CommonFlags& flags, const std::string& ckpt_path, const std::string& data_path,
             const std::string& target, const std::string& out_path, const std::string& sweep,
             const std::string& sweep_out, const std::string& retrieval) {
  auto lm = load_with_overrides(ckpt_path, flags);
  if (!retrieval.empty()) lm.config.set("eval.retrieval", retrieval);
  print_seed(lm.config);
  const auto dataset = br::ingest(data_path, lm.ckpt.model.config().num_items);
  const auto view = br::split(dataset);
  const br::ClusterModel* clusters = lm.ckpt.clusters ? &*lm.ckpt.clusters : nullptr;
  auto options = options_from(lm.config, clusters);
  if (target == "valid") {
    options.target = br::Target::kValid;
  } else if (target != "test") {
    throw br::ContractError("--target must be valid or test");
  }

  const auto report = br::evaluate(lm.ckpt.model, view, options);
  report.write_table(std::cout);
  if (!out_path.empty()) {
    auto out = open_out(out_path);
    report.write_csv(out);
    std::cout << "metrics: " << out_path << '\n';
  }

  if (!sweep.empty()) {
    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!sweep_out.empty()) {
      file = open_out(sweep_out);
      out = &file;
    }
    *out << "steps,hr10\n";
    for (int steps : parse_int_list(sweep)) {
      auto o = options;
      o.sampler.steps = steps;
      o.ks = {10};
      *out << steps << ',' << br::evaluate(lm.ckpt.model, view, o).hr(10) << '\n';
    }
    if (!sweep_out.empty()) std::cout << "steps sweep: " << sweep_out << '\n';
  }
  return 0;
}

std::vector<br::Index> read_history(const std::string& inline_history, const std::string& file) {
  std::string text = inline_history;
  if (text.empty()) {
    if (!file.empty() && file != "-") {
      std::ifstream in(file);
      if (!in) throw br::IoError("cannot open history file '" + file + "'");
      text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    } else {
      text.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
    }
  }
  for (char& ch : text) {
    if (ch == ',') ch = ' ';
  }
  std::istringstream in(text);
  std::vector<br::Index> out;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(static_cast<br::Index>(v));
    } catch (const std::exception&) {
      throw br::ContractError("history token '" + tok + "' is not an item id");
    }
  }
  return out;
}

int run_recommend(const CommonFlags& flags, const std::string& ckpt_path,
                  const std::string& history_inline, const std::string& history_file, long long k,
                  std::optional<long long> condition) {
  auto lm = load_with_overrides(ckpt_path, flags);
  print_seed(lm.config);
  const auto history = read_history(history_inline, history_file);
  const br::Index vocab = lm.ckpt.model.config().num_items;
  if (k > vocab) {
    std::cerr << "warning: K=" << k << " exceeds the vocabulary; returning " << vocab
              << " items\n";
  }
  std::optional<br::Index> cond;
  if (condition) {
    if (!lm.ckpt.clusters || *condition < 0 || *condition >= lm.ckpt.clusters->k()) {
      throw br::ContractError("--condition needs a con-mode checkpoint and 0 <= c < k");
    }
    cond = static_cast<br::Index>(*condition);
  }
  const auto options = options_from(lm.config, nullptr);
  const auto recs = br::recommend(lm.ckpt.model, history, k, cond, options);
  std::cout << "item,score\n";
  for (const auto& r : recs) std::cout << r.item << ',' << r.score << '\n';
  return 0;
}

int run_verify(bool experiments, std::optional<double> perturb) {
  namespace v = br::verify;
  v::Report report;
  if (perturb) {
    const double delta = *perturb;
    report.checks.push_back(v::check_schedule([delta](const br::ScheduleParams& p, double t) {
      auto c = br::coeffs<double>(p, t);
      c.sigma2 += delta;
      return c;
    }));
  } else {
    report = experiments ? v::run_acceptance() : v::run_oracles();
  }
  report.print(std::cout);
  std::cout << (report.passed() ? "all checks passed" : "verification FAILED") << '\n';
  return report.passed() ? 0 : kVerifyFailed;
}

int run_sweep(const CommonFlags& flags, const std::string& data_path, const std::string& kinds,
              const std::string& modes, const std::string& betas, const std::string& out_path) {
  br::Config c = flags.resolve();
  print_seed(c);
  br::TrainConfig base;
  base.eval_threads = default_threads();
  base = br::train_from(c, base);
  br::Dataset dataset;
  if (data_path.empty()) {
    br::SyntheticSpec spec;
    spec.num_users = 100;
    spec.num_items = 40;
    spec.noise_rate = 0.2;
    spec.seed = base.seed;
    dataset = br::generate_synthetic(spec).dataset;
    std::cout << "no --data given: using a noisy block-cyclic toy (100 users, 40 items)\n";
  } else {
    dataset = br::ingest(data_path);
  }
  const auto cells = br::verify::run_sweep(
      dataset, base, parse_list<br::ScheduleKind>(kinds, br::parse_schedule_kind),
      parse_list<br::SamplerMode>(modes, br::parse_sampler_mode), parse_double_list(betas));
  if (out_path.empty()) {
    br::verify::write_sweep_csv(std::cout, cells);
  } else {
    auto out = open_out(out_path);
    br::verify::write_sweep_csv(out, cells);
    std::cout << "sweep: " << out_path << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Schrodinger-bridge sequential recommender"};
  app.require_subcommand(1);

  // synth
  CommonFlags synth_flags;
  std::string synth_out;
  std::map<std::string, std::string> synth_extra;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth_flags.attach(synth);
  synth->add_option("--out", synth_out, "dataset path")->required();
  for (const auto& [flag, key] :
       std::vector<std::pair<std::string, std::string>>{{"--users", "synth.users"},
                                                        {"--items", "synth.items"},
                                                        {"--pattern", "synth.pattern"},
                                                        {"--num-blocks", "synth.blocks"},
                                                        {"--noise", "synth.noise"},
                                                        {"--min-len", "synth.min_len"},
                                                        {"--max-len", "synth.max_len"},
                                                        {"--zipf", "synth.zipf"}}) {
    synth->add_option_function<std::string>(
        flag, [&synth_extra, key = key](const std::string& v) { synth_extra[key] = v; },
        "[" + key + "]");
  }

  // train
  CommonFlags train_flags;
  std::string train_data, train_out = "model.ckpt", train_embeddings;
  bool train_con = false, train_quiet = false;
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  train_flags.attach(train);
  train->add_option("--data", train_data, "dataset path")->required();
  train->add_option("--out", train_out, "checkpoint path");
  train->add_flag("--con-mode", train_con, "cluster-conditioned training");
  train->add_option("--user-embeddings", train_embeddings,
                    "pre-trained user embeddings (con-mode; SVD fallback otherwise)");
  train->add_flag("--quiet", train_quiet, "suppress per-epoch logging");

  // eval
  CommonFlags eval_flags;
  std::string eval_ckpt, eval_data, eval_target = "test", eval_out, eval_sweep, eval_sweep_out,
                                    eval_retrieval;
  auto* eval = app.add_subcommand("eval", "full-ranking evaluation of a checkpoint");
  eval_flags.attach(eval);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset path")->required();
  eval->add_option("--target", eval_target, "valid | test");
  eval->add_option("--out", eval_out, "metrics CSV path");
  eval->add_option("--steps-sweep", eval_sweep, "comma-separated step counts, e.g. 1,2,4,8,12");
  eval->add_option("--sweep-out", eval_sweep_out, "steps-sweep CSV path (stdout otherwise)");
  eval->add_option("--retrieval", eval_retrieval, "inner | cosine");

  // recommend
  CommonFlags rec_flags;
  std::string rec_ckpt, rec_history, rec_file;
  long long rec_k = 10;
  std::optional<long long> rec_condition;
  auto* rec = app.add_subcommand("recommend", "top-K items for a history");
  rec_flags.attach(rec);
  rec->add_option("--checkpoint", rec_ckpt, "checkpoint path")->required();
  rec->add_option("--history", rec_history, "item ids, space or comma separated");
  rec->add_option("--history-file", rec_file, "file with item ids ('-' or omitted: stdin)");
  rec->add_option("-k,--top-k", rec_k, "number of items")->check(CLI::PositiveNumber);
  rec->add_option("--condition", rec_condition, "cluster index for con-mode checkpoints");

  // verify
  bool verify_experiments = false;
  std::optional<double> verify_perturb;
  auto* verify = app.add_subcommand("verify", "run the oracle and property checks");
  verify->add_flag("--experiments", verify_experiments,
                   "also run the training experiments (several minutes)");
  verify->add_option("--perturb-sigma2", verify_perturb,
                     "add this offset to sigma_t^2 and run the schedule check (mutation test)");

  // sweep
  CommonFlags sweep_flags;
  std::string sweep_data, sweep_kinds = "gmax,vp", sweep_modes = "sde,ode",
                          sweep_betas = "10,20,30,40,50", sweep_out;
  auto* sweep = app.add_subcommand("sweep", "HR@10 over schedule kind x sampler mode x beta1");
  sweep_flags.attach(sweep);
  sweep->add_option("--data", sweep_data, "dataset path (default: noisy synthetic toy)");
  sweep->add_option("--kinds", sweep_kinds, "comma-separated schedule kinds");
  sweep->add_option("--modes", sweep_modes, "comma-separated sampler modes");
  sweep->add_option("--beta1-grid", sweep_betas, "comma-separated beta1 values");
  sweep->add_option("--out", sweep_out, "CSV path (stdout otherwise)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*synth) return run_synth(synth_flags, synth_extra, synth_out);
    if (*train) {
      return run_train(train_flags, train_data, train_out, train_con, train_embeddings,
                       train_quiet);
    }
    if (*eval) {
      return run_eval(eval_flags, eval_ckpt, eval_data, eval_target, eval_out, eval_sweep,
                      eval_sweep_out, eval_retrieval);
    }
    if (*rec) {
      return run_recommend(rec_flags, rec_ckpt, rec_history, rec_file, rec_k, rec_condition);
    }
    if (*verify) return run_verify(verify_experiments, verify_perturb);
    if (*sweep) {
      return run_sweep(sweep_flags, sweep_data, sweep_kinds, sweep_modes, sweep_betas, sweep_out);
    }
  } catch (const br::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const br::IngestError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const br::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
