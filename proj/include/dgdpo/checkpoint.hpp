#pragma once

// Checkpoint format: <prefix>.json holds {model_kind, config, names, shapes,
// seed, step}; <prefix>.bin holds the flattened parameter vector as
// little-endian 64-bit floats. Round trips are bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgdpo/common.hpp"
#include "dgdpo/tensor.hpp"

namespace dgdpo {

inline void write_f64_le(std::ofstream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline double read_f64_le(std::ifstream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated binary file");
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(buf[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

struct Checkpoint {
  std::string model_kind;
  nlohmann::json config;
  ParamStore params;
  uint64_t seed = 0;
  long step = 0;
};

inline void save_checkpoint(const ParamStore& params, const std::string& model_kind,
                            const nlohmann::json& config, uint64_t seed, long step,
                            const std::string& prefix) {
  nlohmann::json header;
  header["model_kind"] = model_kind;
  header["config"] = config;
  header["seed"] = seed;
  header["step"] = step;
  nlohmann::json names = nlohmann::json::array();
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& t : params.tensors()) {
    names.push_back(t.name);
    shapes.push_back(t.shape);
  }
  header["names"] = names;
  header["shapes"] = shapes;

  std::ofstream jf(prefix + ".json");
  if (!jf) throw std::runtime_error("checkpoint: cannot write " + prefix + ".json");
  jf << header.dump(2) << "\n";

  std::ofstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot write " + prefix + ".bin");
  for (const auto& t : params.tensors())
    for (double v : t.data) write_f64_le(bf, v);
}

inline Checkpoint load_checkpoint(const std::string& prefix) {
  std::ifstream jf(prefix + ".json");
  if (!jf) throw std::runtime_error("checkpoint: cannot read " + prefix + ".json");
  nlohmann::json header = nlohmann::json::parse(jf);

  Checkpoint ck;
  ck.model_kind = header.at("model_kind").get<std::string>();
  ck.config = header.at("config");
  ck.seed = header.at("seed").get<uint64_t>();
  ck.step = header.at("step").get<long>();

  const auto& names = header.at("names");
  const auto& shapes = header.at("shapes");
  require(names.size() == shapes.size(), "checkpoint: names/shapes length mismatch");
  for (size_t i = 0; i < names.size(); ++i)
    ck.params.add(names[i].get<std::string>(), shapes[i].get<std::vector<size_t>>());

  std::ifstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot read " + prefix + ".bin");
  for (auto& t : ck.params.tensors())
    for (auto& v : t.data) v = read_f64_le(bf);
  return ck;
}

}  // namespace dgdpo
