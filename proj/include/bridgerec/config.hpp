#pragma once

// key=value configuration. Every CLI flag maps onto one of these keys; values
// set on the command line replace those read from --config.

#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "bridgerec/trainer.hpp"

namespace bridgerec {

class Config {
 public:
  static Config load(const std::string& path);
  static Config parse(std::istream& in, const std::string& origin = "<config>");

  /// Throws ContractError for keys outside the known set.
  void set(const std::string& key, const std::string& value);
  void merge(const Config& overrides);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

  static bool known_key(const std::string& key);

 private:
  std::map<std::string, std::string> values_;
};

ScheduleParams schedule_from(const Config& c, const ScheduleParams& base = {});
SamplerConfig sampler_from(const Config& c, const SamplerConfig& base = {});
ConnectivityInputConfig input_from(const Config& c, const ConnectivityInputConfig& base = {});
ModelConfig model_from(const Config& c, const ModelConfig& base = {});
TrainConfig train_from(const Config& c, const TrainConfig& base = {});
SyntheticSpec synthetic_from(const Config& c, const SyntheticSpec& base = {});

/// Serialises the settings that inference needs (schedule, sampler,
/// connectivity input, seed) so they can travel inside a checkpoint.
std::map<std::string, std::string> inference_meta(const TrainConfig& c);
Config config_from_meta(const std::map<std::string, std::string>& meta);

}  // namespace bridgerec
