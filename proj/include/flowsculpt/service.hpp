#pragma once

// HTTP design service. Every handler is a pure function of its request and the
// immutable snapshot loaded at startup, so requests may run concurrently.
//
//   GET  /api/library       {format, version, grid:{h,w}, actions, provenance}
//   POST /api/simulate      {sequence, inlet?, target?}   -> simulation document
//   POST /api/pmr           {a, b}                        -> {pmr}   (b is the target)
//   POST /api/suggest       {target, k?, max_steps?, pmr_threshold?, checkpoint, seed?, inlet?}
//                                                         -> {candidates:[...]}
//   GET  /api/checkpoints   {checkpoints:[{id, grid, precision, episodes, global_step, seed, lineage}]}
//
// Errors: {"error": message, "field": name-or-null}; 400 for malformed payloads,
// 404 for unknown checkpoints.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "flowsculpt/errors.hpp"
#include "flowsculpt/sculpt_env.hpp"
#include "flowsculpt/solver.hpp"
#include "flowsculpt/trainer.hpp"

namespace httplib {
class Server;
}

namespace flowsculpt {

inline constexpr const char* kCheckpointDirEnv = "FLOWSCULPT_CHECKPOINT_DIR";

/// Replays `seq` from `inlet`: {"inlet", "steps":[{"action", "shape", "pmr"?}], "final"}.
/// `pmr` entries appear only when a target is given.
nlohmann::ordered_json simulate_document(const PillarLibrary& lib, const FlowShape& inlet, const PillarSequence& seq,
                                         const std::optional<FlowShape>& target);

/// Error raised by request handlers, carrying the HTTP status and offending field.
class RequestError : public Error {
 public:
  RequestError(int status, std::string field, const std::string& message)
      : Error(message), status_(status), field_(std::move(field)) {}
  int status() const { return status_; }
  const std::string& field() const { return field_; }

 private:
  int status_;
  std::string field_;
};

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  std::shared_ptr<const FrozenPolicy> policy;
};

/// Checkpoints (*.json with format "flowsculpt-checkpoint") found under `dir`,
/// keyed by path relative to `dir` without the extension.
std::map<std::string, LoadedCheckpoint> scan_checkpoints(const std::filesystem::path& dir, const GridSpec& grid);

class DesignService {
 public:
  DesignService(EnvConfig env, std::map<std::string, LoadedCheckpoint> checkpoints);

  nlohmann::ordered_json library_info() const;
  nlohmann::ordered_json simulate(const nlohmann::json& request) const;
  nlohmann::ordered_json pmr(const nlohmann::json& request) const;
  nlohmann::ordered_json suggest(const nlohmann::json& request) const;
  nlohmann::ordered_json checkpoints() const;

  const EnvConfig& env() const { return env_; }

  /// Registers the /api routes on `server`.
  void bind(httplib::Server& server) const;

 private:
  EnvConfig env_;
  std::map<std::string, LoadedCheckpoint> checkpoints_;
};

/// Body text exactly as the service sends it.
std::string response_text(const nlohmann::ordered_json& j);

}  // namespace flowsculpt
