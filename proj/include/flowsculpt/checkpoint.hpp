#pragma once

// Self-describing text checkpoints: architecture, grid, run metadata and every
// tensor (row-major float64) plus the RMSProp second moments.
//
// Layout (JSON):
//   format            "flowsculpt-checkpoint"
//   version           1
//   architecture      {input:{h,w}, output_units, layers:[{type, ...}]}
//   precision         "f64" | "f32"   (arithmetic used while training)
//   metadata          {grid:{h,w}, seed, global_step, episodes, library_provenance,
//                      inlet:ShapeDocument, target:ShapeDocument|null, lineage:[...], extra:{}}
//   tensors           [{name, shape, trainable, values}]
//   optimizer         {kind:"rmsprop", second_moments:[{name, shape, trainable, values}]}

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowsculpt/agent.hpp"

namespace flowsculpt {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMetadata {
  GridSpec grid;
  std::uint64_t seed = 0;
  std::int64_t global_step = 0;
  std::int64_t episodes = 0;
  LibraryProvenance library_provenance = LibraryProvenance::kSurrogate;
  FlowShape inlet;
  std::optional<FlowShape> target;
  std::vector<std::string> lineage;  // ids of the checkpoints this one was warm-started from, oldest first
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct Checkpoint {
  NetworkArchitecture architecture;
  Precision precision = Precision::kF64;
  ParamSet<double> params;
  ParamSet<double> second_moments;
  CheckpointMetadata metadata;
};

template <typename T>
Checkpoint make_checkpoint(const DqnAgent<T>& agent, CheckpointMetadata metadata);

nlohmann::ordered_json architecture_to_json(const NetworkArchitecture& arch);
NetworkArchitecture architecture_from_json(const nlohmann::json& j);

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on a malformed document, a version mismatch, or when
/// `expected` is given and differs from the stored architecture.
Checkpoint parse_checkpoint(const std::string& text, const std::optional<NetworkArchitecture>& expected = std::nullopt);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<NetworkArchitecture>& expected = std::nullopt);

/// Content digest of all tensors (FNV-1a over the raw float64 bytes); used to
/// show that evaluation leaves a checkpoint untouched.
std::uint64_t params_digest(const ParamSet<double>& params);

}  // namespace flowsculpt
