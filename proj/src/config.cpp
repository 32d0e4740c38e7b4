#include "bridgerec/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <string_view>

namespace bridgerec {

namespace {

constexpr std::array<std::string_view, 40> kKnownKeys = {
    "seed",
    "out",
    "schedule.kind",
    "schedule.beta0",
    "schedule.beta1",
    "sampler.mode",
    "sampler.steps",
    "sampler.guidance_w",
    "sampler.seed",
    "connectivity.mu",
    "connectivity.sigma",
    "model.dim",
    "model.blocks",
    "model.heads",
    "model.max_len",
    "model.dropout",
    "model.mlp_hidden",
    "model.lambda",
    "train.lr",
    "train.batch_size",
    "train.epochs",
    "train.patience",
    "train.cond_drop_p",
    "train.con_mode",
    "train.threads",
    "cluster.k",
    "cluster.iterations",
    "cluster.embeddings",
    "cluster.svd_rank",
    "synth.users",
    "synth.items",
    "synth.pattern",
    "synth.blocks",
    "synth.noise",
    "synth.min_len",
    "synth.max_len",
    "synth.zipf",
    "eval.k",
    "eval.retrieval",
    "eval.steps_sweep",
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
std::string str(T v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

}  // namespace

bool Config::known_key(const std::string& key) {
  return std::find(kKnownKeys.begin(), kKnownKeys.end(), key) != kKnownKeys.end();
}

Config Config::parse(std::istream& in, const std::string& origin) {
  Config c;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError(origin + ":" + std::to_string(n) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!known_key(key)) {
      throw ContractError(origin + ":" + std::to_string(n) + ": unknown key '" + key + "'");
    }
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  return parse(in, path);
}

void Config::set(const std::string& key, const std::string& value) {
  if (!known_key(key)) throw ContractError("unknown config key '" + key + "'");
  values_[key] = value;
}

void Config::merge(const Config& overrides) {
  for (const auto& [k, v] : overrides.values_) values_[k] = v;
}

std::optional<std::string> Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return d;
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "': '" + *v + "' is not a number");
  }
}

long long Config::get_int(const std::string& key, long long fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const long long i = std::stoll(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return i;
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "': '" + *v + "' is not an integer");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "1" || *v == "true" || *v == "yes" || *v == "on") return true;
  if (*v == "0" || *v == "false" || *v == "no" || *v == "off") return false;
  throw ContractError("config key '" + key + "': '" + *v + "' is not a boolean");
}

ScheduleParams schedule_from(const Config& c, const ScheduleParams& base) {
  ScheduleParams p = base;
  if (auto k = c.get("schedule.kind")) p.kind = parse_schedule_kind(*k);
  p.beta0 = c.get_double("schedule.beta0", p.beta0);
  p.beta1 = c.get_double("schedule.beta1", p.beta1);
  p.validate();
  return p;
}

SamplerConfig sampler_from(const Config& c, const SamplerConfig& base) {
  SamplerConfig s = base;
  if (auto m = c.get("sampler.mode")) s.mode = parse_sampler_mode(*m);
  s.steps = static_cast<int>(c.get_int("sampler.steps", s.steps));
  s.guidance_w = c.get_double("sampler.guidance_w", s.guidance_w);
  s.seed = static_cast<std::uint64_t>(
      c.get_int("sampler.seed", c.get_int("seed", static_cast<long long>(s.seed))));
  s.validate();
  return s;
}

ConnectivityInputConfig input_from(const Config& c, const ConnectivityInputConfig& base) {
  ConnectivityInputConfig in = base;
  in.mu = c.get_double("connectivity.mu", in.mu);
  in.sigma = c.get_double("connectivity.sigma", in.sigma);
  return in;
}

ModelConfig model_from(const Config& c, const ModelConfig& base) {
  ModelConfig m = base;
  m.dim = c.get_int("model.dim", m.dim);
  m.blocks = c.get_int("model.blocks", m.blocks);
  m.heads = c.get_int("model.heads", m.heads);
  m.max_len = c.get_int("model.max_len", m.max_len);
  m.dropout = c.get_double("model.dropout", m.dropout);
  m.mlp_hidden = c.get_int("model.mlp_hidden", m.mlp_hidden);
  m.lambda = c.get_double("model.lambda", m.lambda);
  return m;
}

TrainConfig train_from(const Config& c, const TrainConfig& base) {
  TrainConfig t = base;
  t.model = model_from(c, base.model);
  t.schedule = schedule_from(c, base.schedule);
  t.input = input_from(c, base.input);
  t.eval_sampler = sampler_from(c, base.eval_sampler);
  t.learning_rate = c.get_double("train.lr", t.learning_rate);
  t.batch_size = c.get_int("train.batch_size", t.batch_size);
  t.epochs = static_cast<int>(c.get_int("train.epochs", t.epochs));
  t.patience = static_cast<int>(c.get_int("train.patience", t.patience));
  t.cond_drop_p = c.get_double("train.cond_drop_p", t.cond_drop_p);
  t.con_mode = c.get_bool("train.con_mode", t.con_mode);
  t.eval_threads = static_cast<unsigned>(c.get_int("train.threads", t.eval_threads));
  t.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(t.seed)));
  t.k_clusters = c.get_int("cluster.k", t.k_clusters);
  t.cluster_iterations = static_cast<int>(c.get_int("cluster.iterations", t.cluster_iterations));
  t.svd_rank = c.get_int("cluster.svd_rank", t.svd_rank);
  t.validate();
  return t;
}

SyntheticSpec synthetic_from(const Config& c, const SyntheticSpec& base) {
  SyntheticSpec s = base;
  s.num_users = static_cast<std::size_t>(c.get_int("synth.users", static_cast<long long>(s.num_users)));
  s.num_items = c.get_int("synth.items", s.num_items);
  if (auto p = c.get("synth.pattern")) {
    if (*p == "markov" || *p == "markov-chain") {
      s.pattern = SyntheticPattern::kMarkovChain;
    } else if (*p == "block-cyclic" || *p == "block") {
      s.pattern = SyntheticPattern::kBlockCyclic;
    } else {
      throw ContractError("synth.pattern must be markov-chain or block-cyclic");
    }
  }
  s.num_blocks = c.get_int("synth.blocks", s.num_blocks);
  s.noise_rate = c.get_double("synth.noise", s.noise_rate);
  s.min_length = static_cast<std::size_t>(c.get_int("synth.min_len", static_cast<long long>(s.min_length)));
  s.max_length = static_cast<std::size_t>(c.get_int("synth.max_len", static_cast<long long>(s.max_length)));
  s.zipf = c.get_double("synth.zipf", s.zipf);
  s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(s.seed)));
  s.validate();
  return s;
}

std::map<std::string, std::string> inference_meta(const TrainConfig& c) {
  return {
      {"schedule.kind", to_string(c.schedule.kind)},
      {"schedule.beta0", str(c.schedule.beta0)},
      {"schedule.beta1", str(c.schedule.beta1)},
      {"sampler.mode", to_string(c.eval_sampler.mode)},
      {"sampler.steps", str(c.eval_sampler.steps)},
      {"sampler.guidance_w", str(c.eval_sampler.guidance_w)},
      {"connectivity.mu", str(c.input.mu)},
      {"connectivity.sigma", str(c.input.sigma)},
      {"seed", str(c.seed)},
      {"train.con_mode", c.con_mode ? "true" : "false"},
  };
}

Config config_from_meta(const std::map<std::string, std::string>& meta) {
  Config c;
  for (const auto& [k, v] : meta) {
    if (Config::known_key(k) && k.rfind("model.", 0) != 0) c.set(k, v);
  }
  return c;
}

}  // namespace bridgerec
