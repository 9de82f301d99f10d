#include "flowsculpt/service.hpp"

#include <algorithm>

#include "httplib.h"

#include "flowsculpt/checkpoint.hpp"
#include "flowsculpt/documents.hpp"
#include "flowsculpt/errors.hpp"

namespace flowsculpt {

namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

RequestError bad(const std::string& field, const std::string& message) { return RequestError(400, field, field + ": " + message); }

const nlohmann::json& require(const nlohmann::json& request, const std::string& field) {
  if (!request.is_object()) throw RequestError(400, "", "request body must be a JSON object");
  if (!request.contains(field)) throw bad(field, "missing");
  return request.at(field);
}

FlowShape shape_field(const nlohmann::json& value, const std::string& field, const GridSpec& grid) {
  FlowShape s;
  try {
    s = shape_from_json(value);
  } catch (const Error& e) {
    throw bad(field, e.what());
  }
  if (s.grid() != grid) throw bad(field, "grid " + s.grid().to_string() + " does not match library grid " + grid.to_string());
  return s;
}

PillarSequence sequence_field(const nlohmann::json& value, int action_count) {
  try {
    if (value.is_string()) return parse_sequence(value.get<std::string>(), action_count);
    if (!value.is_array()) throw bad("sequence", "expected an array of action ids or a string");
    PillarSequence seq;
    for (const auto& v : value) {
      if (!v.is_number_integer()) throw bad("sequence", "action ids must be integers, got " + v.dump());
      const auto id = v.get<std::int64_t>();
      if (id < 0 || id >= action_count) {
        throw bad("sequence", "action id " + std::to_string(id) + " outside [0, " + std::to_string(action_count) + ")");
      }
      seq.push_back(static_cast<int>(id));
    }
    return seq;
  } catch (const RequestError&) {
    throw;
  } catch (const Error& e) {
    throw bad("sequence", e.what());
  }
}

template <typename V>
V number_field(const nlohmann::json& request, const std::string& field, V fallback) {
  if (!request.contains(field)) return fallback;
  const auto& v = request.at(field);
  if constexpr (std::is_integral_v<V>) {
    if (!v.is_number_integer()) throw bad(field, "expected an integer");
  } else {
    if (!v.is_number()) throw bad(field, "expected a number");
  }
  return v.get<V>();
}

ojson error_body(const std::string& message, const std::string& field) {
  ojson j;
  j["error"] = message;
  j["field"] = field.empty() ? ojson(nullptr) : ojson(field);
  return j;
}

}  // namespace

std::string response_text(const ojson& j) { return to_document_text(j); }

ojson simulate_document(const PillarLibrary& lib, const FlowShape& inlet, const PillarSequence& seq,
                        const std::optional<FlowShape>& target) {
  const auto shapes = apply_sequence(inlet, seq, lib);
  ojson steps = ojson::array();
  for (std::size_t k = 0; k < seq.size(); ++k) {
    ojson s;
    s["action"] = seq[k];
    s["shape"] = shape_to_json(shapes[k]);
    if (target) s["pmr"] = pmr(shapes[k], *target);
    steps.push_back(std::move(s));
  }
  const FlowShape& last = shapes.empty() ? inlet : shapes.back();
  ojson doc;
  doc["sequence"] = seq;
  doc["inlet"] = shape_to_json(inlet);
  doc["steps"] = std::move(steps);
  doc["final"] = shape_to_json(last);
  if (target) doc["final_pmr"] = pmr(last, *target);
  return doc;
}

std::map<std::string, LoadedCheckpoint> scan_checkpoints(const fs::path& dir, const GridSpec& grid) {
  std::map<std::string, LoadedCheckpoint> out;
  if (dir.empty() || !fs::is_directory(dir)) return out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    std::string text;
    try {
      text = read_text_file(entry.path());
    } catch (const Error&) {
      continue;
    }
    if (text.find("\"flowsculpt-checkpoint\"") == std::string::npos) continue;
    Checkpoint ckpt = parse_checkpoint(text);
    if (ckpt.architecture.input != grid) continue;
    auto rel = fs::relative(entry.path(), dir);
    rel.replace_extension();
    auto policy = std::make_shared<const FrozenPolicy>(ckpt);
    out.emplace(rel.generic_string(), LoadedCheckpoint{std::move(ckpt), std::move(policy)});
  }
  return out;
}

DesignService::DesignService(EnvConfig env, std::map<std::string, LoadedCheckpoint> checkpoints)
    : env_(std::move(env)), checkpoints_(std::move(checkpoints)) {
  env_.validate();
}

ojson DesignService::library_info() const {
  ojson j;
  j["format"] = "flowsculpt-library";
  j["version"] = 1;
  j["grid"] = {{"h", env_.grid().height}, {"w", env_.grid().width}};
  j["actions"] = env_.action_count();
  j["provenance"] = to_string(env_.library->provenance);
  j["inlet"] = shape_to_json(env_.inlet);
  j["max_steps"] = env_.max_steps;
  j["pmr_threshold"] = env_.pmr_threshold;
  return j;
}

ojson DesignService::simulate(const nlohmann::json& request) const {
  const PillarSequence seq = sequence_field(require(request, "sequence"), env_.action_count());
  const FlowShape inlet = request.contains("inlet") ? shape_field(request.at("inlet"), "inlet", env_.grid()) : env_.inlet;
  std::optional<FlowShape> target;
  if (request.contains("target") && !request.at("target").is_null()) {
    target = shape_field(request.at("target"), "target", env_.grid());
    if (target->empty()) throw bad("target", "target has no on-pixels, pmr is undefined");
  }
  return simulate_document(*env_.library, inlet, seq, target);
}

ojson DesignService::pmr(const nlohmann::json& request) const {
  const FlowShape a = shape_field(require(request, "a"), "a", env_.grid());
  const FlowShape b = shape_field(require(request, "b"), "b", env_.grid());
  if (b.empty()) throw bad("b", "target has no on-pixels, pmr is undefined");
  return {{"pmr", flowsculpt::pmr(a, b)}};
}

ojson DesignService::suggest(const nlohmann::json& request) const {
  const FlowShape target = shape_field(require(request, "target"), "target", env_.grid());
  if (target.empty()) throw bad("target", "target has no on-pixels");
  const auto& id_value = require(request, "checkpoint");
  if (!id_value.is_string()) throw bad("checkpoint", "expected a checkpoint id string");
  const auto it = checkpoints_.find(id_value.get<std::string>());
  if (it == checkpoints_.end()) {
    throw RequestError(404, "checkpoint", "checkpoint: unknown id '" + id_value.get<std::string>() + "'");
  }
  EnvConfig env = env_;
  env.inlet = request.contains("inlet") ? shape_field(request.at("inlet"), "inlet", env_.grid())
                                        : it->second.checkpoint.metadata.inlet;
  env.max_steps = number_field(request, "max_steps", env.max_steps);
  if (env.max_steps < 1) throw bad("max_steps", "must be at least 1");
  env.pmr_threshold = number_field(request, "pmr_threshold", env.pmr_threshold);
  if (!(env.pmr_threshold > 0.0 && env.pmr_threshold <= 1.0)) throw bad("pmr_threshold", "must lie in (0, 1]");
  SolveOptions opts;
  opts.k = number_field(request, "k", 1);
  if (opts.k < 1 || opts.k > 100) throw bad("k", "must lie in [1, 100]");
  opts.seed = number_field<std::uint64_t>(request, "seed", 0);
  return suggestions_to_json(flowsculpt::suggest(*it->second.policy, env, target, opts));
}

ojson DesignService::checkpoints() const {
  ojson list = ojson::array();
  for (const auto& [id, loaded] : checkpoints_) {
    const auto& m = loaded.checkpoint.metadata;
    ojson c;
    c["id"] = id;
    c["grid"] = {{"h", m.grid.height}, {"w", m.grid.width}};
    c["actions"] = loaded.checkpoint.architecture.output_units;
    c["precision"] = to_string(loaded.checkpoint.precision);
    c["episodes"] = m.episodes;
    c["global_step"] = m.global_step;
    c["seed"] = m.seed;
    c["lineage"] = m.lineage;
    list.push_back(std::move(c));
  }
  return {{"checkpoints", std::move(list)}};
}

void DesignService::bind(httplib::Server& server) const {
  auto respond = [](httplib::Response& res, const std::function<ojson()>& handler) {
    try {
      res.set_content(response_text(handler()), "application/json");
      res.status = 200;
    } catch (const RequestError& e) {
      res.status = e.status();
      res.set_content(response_text(error_body(e.what(), e.field())), "application/json");
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(response_text(error_body(e.what(), "")), "application/json");
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(response_text(error_body(std::string("malformed request: ") + e.what(), "")), "application/json");
    }
  };
  auto post = [this, respond](ojson (DesignService::*method)(const nlohmann::json&) const) {
    return [this, respond, method](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] {
        const auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded()) throw RequestError(400, "", "request body is not valid JSON");
        return (this->*method)(body);
      });
    };
  };
  server.Get("/api/library", [this, respond](const httplib::Request&, httplib::Response& res) {
    respond(res, [&] { return library_info(); });
  });
  server.Get("/api/checkpoints", [this, respond](const httplib::Request&, httplib::Response& res) {
    respond(res, [&] { return checkpoints(); });
  });
  server.Post("/api/simulate", post(&DesignService::simulate));
  server.Post("/api/pmr", post(&DesignService::pmr));
  server.Post("/api/suggest", post(&DesignService::suggest));
}

}  // namespace flowsculpt
