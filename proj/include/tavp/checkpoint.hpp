/* Copyright 2026 The TAVP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef TAVP_CHECKPOINT_HPP_
#define TAVP_CHECKPOINT_HPP_

// Binary checkpoint format, version 1:
//
//   bytes 0-7    magic "TAVPCKPT"
//   bytes 8-11   uint32 little-endian format version
//   bytes 12-19  uint64 little-endian header length N
//   next N bytes UTF-8 JSON header
//   remainder    float64 little-endian payload
//
// The header lists every tensor as {"name", "kind", "shape", "offset"} where
// kind is "param", "adam_m" or "adam_v" and offset counts float64 values from
// the start of the payload. It also carries "config" (run configuration
// snapshot), "metrics_history" (per-epoch records), "optimizer" (step count
// and hyper-parameters) and "state" (global step).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tavp/model.hpp"
#include "tavp/trainer.hpp"

namespace tavp {

inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'V', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct CheckpointData {
  nlohmann::json header;
  std::vector<double> payload;
};

namespace detail {

inline void append_tensor(CheckpointData& ck, const std::string& name, const std::string& kind, const Tensor& t) {
  ck.header["tensors"].push_back(
      {{"name", name}, {"kind", kind}, {"shape", t.shape()}, {"offset", ck.payload.size()}});
  ck.payload.insert(ck.payload.end(), t.values().begin(), t.values().end());
}

inline Tensor read_tensor(const CheckpointData& ck, const nlohmann::json& entry) {
  const Shape shape = entry.at("shape").get<Shape>();
  const std::size_t offset = entry.at("offset").get<std::size_t>();
  const std::size_t n = numel(shape);
  if (offset + n > ck.payload.size()) throw IoError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' exceeds payload");
  return Tensor(shape, std::vector<double>(ck.payload.begin() + offset, ck.payload.begin() + offset + n));
}

}  // namespace detail

inline CheckpointData make_checkpoint(TavpModel& model, const Trainer* trainer, const nlohmann::json& config) {
  CheckpointData ck;
  ck.header["format"] = "tavp-checkpoint";
  ck.header["config"] = config;
  ck.header["tensors"] = nlohmann::json::array();
  ck.header["metrics_history"] = nlohmann::json::array();
  for (Parameter* p : model.parameters()) detail::append_tensor(ck, p->name, "param", p->value);
  if (trainer) {
    const Adam& adam = trainer->optimizer();
    ck.header["optimizer"] = {{"type", "adam"},
                              {"step", adam.step_count()},
                              {"learning_rate", adam.config().learning_rate},
                              {"beta1", adam.config().beta1},
                              {"beta2", adam.config().beta2},
                              {"eps", adam.config().eps}};
    for (const auto& [name, st] : adam.moments()) {
      detail::append_tensor(ck, name, "adam_m", st.m);
      detail::append_tensor(ck, name, "adam_v", st.v);
    }
    for (const EpochMetrics& m : trainer->history()) ck.header["metrics_history"].push_back(to_json(m));
    ck.header["state"] = {{"global_step", trainer->global_step()}};
  }
  return ck;
}

inline void write_checkpoint(const CheckpointData& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  const std::string header = ck.header.dump();
  const std::uint64_t len = header.size();
  f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  f.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(ck.payload.data()),
          static_cast<std::streamsize>(ck.payload.size() * sizeof(double)));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError(path.string() + " is not a checkpoint (bad magic)");
  }
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header(len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(len));
  if (!f) throw IoError("truncated checkpoint header in " + path.string());
  CheckpointData ck;
  try {
    ck.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  const auto start = f.tellg();
  f.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(f.tellg() - start);
  f.seekg(start);
  if (bytes % sizeof(double) != 0) throw IoError("checkpoint payload is not a whole number of float64 values");
  ck.payload.resize(bytes / sizeof(double));
  f.read(reinterpret_cast<char*>(ck.payload.data()), static_cast<std::streamsize>(bytes));
  if (!f) throw IoError("truncated checkpoint payload in " + path.string());
  return ck;
}

// Restores parameters (and optimizer state and history when a trainer is
// given). Every model parameter must be present with a matching shape.
inline void restore_checkpoint(const CheckpointData& ck, TavpModel& model, Trainer* trainer = nullptr) {
  std::map<std::string, const nlohmann::json*> params;
  for (const nlohmann::json& e : ck.header.at("tensors")) {
    if (e.at("kind") == "param") params[e.at("name").get<std::string>()] = &e;
  }
  for (Parameter* p : model.parameters()) {
    const auto it = params.find(p->name);
    if (it == params.end()) throw IoError("checkpoint lacks parameter '" + p->name + "'");
    Tensor t = detail::read_tensor(ck, *it->second);
    if (t.shape() != p->value.shape()) {
      throw IoError("checkpoint parameter '" + p->name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                    shape_str(p->value.shape()));
    }
    p->value = std::move(t);
  }
  if (!trainer) return;
  Adam& adam = trainer->optimizer();
  adam.moments().clear();
  for (const nlohmann::json& e : ck.header.at("tensors")) {
    const std::string kind = e.at("kind");
    if (kind == "adam_m") adam.moments()[e.at("name")].m = detail::read_tensor(ck, e);
    if (kind == "adam_v") adam.moments()[e.at("name")].v = detail::read_tensor(ck, e);
  }
  if (ck.header.contains("optimizer")) adam.set_step_count(ck.header["optimizer"].at("step").get<long>());
  std::vector<EpochMetrics> history;
  for (const nlohmann::json& m : ck.header.at("metrics_history")) history.push_back(epoch_from_json(m));
  trainer->set_history(std::move(history));
  if (ck.header.contains("state")) trainer->set_global_step(ck.header["state"].at("global_step").get<long>());
}

inline void save_checkpoint(const std::filesystem::path& path, TavpModel& model, const Trainer* trainer,
                            const nlohmann::json& config) {
  write_checkpoint(make_checkpoint(model, trainer, config), path);
}

}  // namespace tavp

#endif  // TAVP_CHECKPOINT_HPP_
