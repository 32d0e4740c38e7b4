#pragma once

// Checkpoint layout ("bridgerec-ckpt-v1"):
//
//   bridgerec-ckpt-v1
//   meta <key> <value>                                  (any number)
//   tensor <name> <rows> <cols> float64 <offset> <bytes> (one per array)
//   end
//   <raw little-endian float64 arrays, offsets relative to the byte after "end\n">

#include <map>
#include <optional>
#include <string>

#include "bridgerec/cluster.hpp"
#include "bridgerec/model.hpp"

namespace bridgerec {

inline constexpr const char* kCheckpointVersion = "bridgerec-ckpt-v1";

struct Checkpoint {
  Model model;
  std::optional<ClusterModel> clusters;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::string& path, const Model& model,
                     const ClusterModel* clusters = nullptr,
                     const std::map<std::string, std::string>& meta = {});

Checkpoint load_checkpoint(const std::string& path);

}  // namespace bridgerec
