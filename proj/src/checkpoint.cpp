#include "bridgerec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "bridgerec/errors.hpp"

namespace bridgerec {

namespace {

struct Entry {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  std::size_t offset = 0;
  std::size_t bytes = 0;
};

void append_le(std::string& blob, const double* data, std::size_t n) {
  const std::size_t at = blob.size();
  blob.resize(at + n * sizeof(double));
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[i], sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::memcpy(&blob[at + i * sizeof bits], &bits, sizeof bits);
  }
}

void read_le(const std::string& blob, std::size_t offset, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &blob[offset + i * sizeof bits], sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::memcpy(&out[i], &bits, sizeof bits);
  }
}

// Model hyperparameters that must be known before the tensors can be bound.
std::map<std::string, std::string> model_meta(const ModelConfig& c) {
  auto s = [](auto v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
  };
  return {{"model.num_items", s(c.num_items)}, {"model.dim", s(c.dim)},
          {"model.blocks", s(c.blocks)},       {"model.heads", s(c.heads)},
          {"model.max_len", s(c.max_len)},     {"model.dropout", s(c.dropout)},
          {"model.num_conditions", s(c.num_conditions)},
          {"model.mlp_hidden", s(c.mlp_hidden)}, {"model.lambda", s(c.lambda)}};
}

ModelConfig model_config_from(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw IngestError("checkpoint is missing meta key '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.num_items = std::stoll(get("model.num_items"));
  c.dim = std::stoll(get("model.dim"));
  c.blocks = std::stoll(get("model.blocks"));
  c.heads = std::stoll(get("model.heads"));
  c.max_len = std::stoll(get("model.max_len"));
  c.dropout = std::stod(get("model.dropout"));
  c.num_conditions = std::stoll(get("model.num_conditions"));
  c.mlp_hidden = std::stoll(get("model.mlp_hidden"));
  c.lambda = std::stod(get("model.lambda"));
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const ClusterModel* clusters,
                     const std::map<std::string, std::string>& meta) {
  std::vector<Entry> entries;
  std::string blob;
  auto add = [&](const std::string& name, Index rows, Index cols, const double* data) {
    Entry e{name, rows, cols, blob.size(), static_cast<std::size_t>(rows * cols) * sizeof(double)};
    append_le(blob, data, static_cast<std::size_t>(rows * cols));
    entries.push_back(e);
  };
  for (const auto& p : model.parameters()) {
    add(p.name, p.tensor.rows(), p.tensor.cols(), p.tensor.value().data());
  }
  if (clusters) {
    // Stored row-major like the parameters.
    ad::Matrix<double> centers = clusters->centers;
    add("cluster.centers", centers.rows(), centers.cols(), centers.data());
    std::vector<double> assign(clusters->assignments.begin(), clusters->assignments.end());
    add("cluster.assignments", static_cast<Index>(assign.size()), 1, assign.data());
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << kCheckpointVersion << '\n';
  auto all_meta = meta;
  for (const auto& [k, v] : model_meta(model.config())) all_meta[k] = v;
  for (const auto& [k, v] : all_meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint meta key/value must not contain whitespace/newlines: " + k);
    }
    out << "meta " << k << ' ' << v << '\n';
  }
  for (const auto& e : entries) {
    out << "tensor " << e.name << ' ' << e.rows << ' ' << e.cols << " float64 " << e.offset << ' '
        << e.bytes << '\n';
  }
  out << "end\n";
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("failed while writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointVersion) {
    throw IngestError("'" + path + "' is not a " + std::string(kCheckpointVersion) + " checkpoint");
  }
  std::map<std::string, std::string> meta;
  std::vector<Entry> entries;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream f(line);
    std::string kind;
    f >> kind;
    if (kind == "meta") {
      std::string key, value;
      f >> key;
      std::getline(f >> std::ws, value);
      meta[key] = value;
    } else if (kind == "tensor") {
      Entry e;
      std::string dtype;
      if (!(f >> e.name >> e.rows >> e.cols >> dtype >> e.offset >> e.bytes) || dtype != "float64") {
        throw IngestError("bad tensor line in checkpoint: " + line);
      }
      entries.push_back(e);
    } else {
      throw IngestError("unexpected checkpoint manifest line: " + line);
    }
  }
  if (!ended) throw IngestError("checkpoint manifest is not terminated by 'end'");
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto read_entry = [&](const Entry& e) {
    if (e.bytes != static_cast<std::size_t>(e.rows * e.cols) * sizeof(double) ||
        e.offset + e.bytes > blob.size()) {
      throw IngestError("checkpoint array '" + e.name + "' is truncated or inconsistent");
    }
    ad::Matrix<double> m(e.rows, e.cols);
    read_le(blob, e.offset, m.data(), static_cast<std::size_t>(e.rows * e.cols));
    return m;
  };

  Checkpoint ckpt{Model(model_config_from(meta), 0), std::nullopt, meta};
  std::map<std::string, const Entry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (const auto& p : ckpt.model.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IngestError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->rows != p.tensor.rows() || it->second->cols != p.tensor.cols()) {
      throw IngestError("checkpoint parameter '" + p.name + "' has the wrong shape");
    }
    ckpt.model.parameter(p.name).mutable_value() = read_entry(*it->second);
  }
  auto centers = by_name.find("cluster.centers");
  auto assign = by_name.find("cluster.assignments");
  if (centers != by_name.end() && assign != by_name.end()) {
    ClusterModel cm;
    cm.centers = read_entry(*centers->second);
    const auto a = read_entry(*assign->second);
    for (Index i = 0; i < a.rows(); ++i) cm.assignments.push_back(static_cast<Index>(a(i, 0)));
    ckpt.clusters = std::move(cm);
  }
  return ckpt;
}

}  // namespace bridgerec
