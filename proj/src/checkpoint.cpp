#include "flowsculpt/checkpoint.hpp"

#include <cstring>

#include "flowsculpt/documents.hpp"
#include "flowsculpt/errors.hpp"

namespace flowsculpt {

namespace {

using ojson = nlohmann::ordered_json;

ojson tensors_to_json(const ParamSet<double>& params) {
  ojson out = ojson::array();
  for (const auto& t : params.tensors) {
    ojson e;
    e["name"] = t.name;
    e["shape"] = t.shape;
    e["trainable"] = t.trainable;
    e["values"] = std::vector<double>(t.values.data(), t.values.data() + t.values.size());
    out.push_back(std::move(e));
  }
  return out;
}

ParamSet<double> tensors_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw CheckpointError("tensor list must be an array");
  ParamSet<double> out;
  for (const auto& e : j) {
    Tensor<double> t;
    t.name = e.at("name").get<std::string>();
    t.shape = e.at("shape").get<std::vector<int>>();
    t.trainable = e.at("trainable").get<bool>();
    const auto& values = e.at("values");
    std::size_t expected = 1;
    for (int d : t.shape) {
      if (d < 1) throw CheckpointError("tensor " + t.name + " has a non-positive dimension");
      expected *= static_cast<std::size_t>(d);
    }
    if (!values.is_array() || values.size() != expected) {
      throw CheckpointError("tensor " + t.name + " holds " + std::to_string(values.size()) + " values, shape needs " +
                            std::to_string(expected));
    }
    t.values.resize(static_cast<Eigen::Index>(expected));
    for (std::size_t k = 0; k < expected; ++k) t.values(static_cast<Eigen::Index>(k)) = values[k].get<double>();
    out.tensors.push_back(std::move(t));
  }
  return out;
}

ojson layer_to_json(const LayerSpec& layer) {
  ojson j;
  j["type"] = layer_name(layer);
  if (const auto* c = std::get_if<Convolution>(&layer)) {
    j["filters"] = c->filters;
    j["kernel"] = c->kernel;
    j["stride"] = c->stride;
    j["padding"] = c->padding;
  } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
    j["momentum"] = b->momentum;
    j["epsilon"] = b->epsilon;
  } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
    j["window"] = p->window;
  } else if (const auto* f = std::get_if<FullyConnected>(&layer)) {
    j["units"] = f->units;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "conv") {
    return Convolution{j.at("filters").get<int>(), j.at("kernel").get<int>(), j.at("stride").get<int>(),
                       j.at("padding").get<int>()};
  }
  if (type == "batchnorm") return BatchNorm{j.at("momentum").get<double>(), j.at("epsilon").get<double>()};
  if (type == "maxpool") return MaxPool{j.at("window").get<int>()};
  if (type == "flatten") return Flatten{};
  if (type == "dense") return FullyConnected{j.at("units").get<int>()};
  if (type == "relu") return ReLU{};
  throw ConfigError("unknown layer type '" + type + "'");
}

}  // namespace

ojson architecture_to_json(const NetworkArchitecture& arch) {
  ojson j;
  j["input"] = {{"h", arch.input.height}, {"w", arch.input.width}};
  j["output_units"] = arch.output_units;
  ojson layers = ojson::array();
  for (const auto& l : arch.layers) layers.push_back(layer_to_json(l));
  j["layers"] = std::move(layers);
  return j;
}

NetworkArchitecture architecture_from_json(const nlohmann::json& j) {
  NetworkArchitecture arch;
  arch.input = GridSpec{j.at("input").at("h").get<int>(), j.at("input").at("w").get<int>()};
  arch.output_units = j.at("output_units").get<int>();
  for (const auto& l : j.at("layers")) arch.layers.push_back(layer_from_json(l));
  arch.validate();
  return arch;
}

template <typename T>
Checkpoint make_checkpoint(const DqnAgent<T>& agent, CheckpointMetadata metadata) {
  Checkpoint ckpt;
  ckpt.architecture = agent.online().architecture();
  ckpt.precision = std::is_same_v<T, double> ? Precision::kF64 : Precision::kF32;
  ckpt.params = cast_params<double>(agent.online().params());
  ckpt.second_moments = cast_params<double>(agent.optimizer_state().second_moments);
  ckpt.metadata = std::move(metadata);
  ckpt.metadata.grid = ckpt.architecture.input;
  return ckpt;
}

template Checkpoint make_checkpoint<float>(const DqnAgent<float>&, CheckpointMetadata);
template Checkpoint make_checkpoint<double>(const DqnAgent<double>&, CheckpointMetadata);

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.params.all_finite() || !ckpt.second_moments.all_finite()) {
    throw NumericError("refusing to checkpoint non-finite parameters");
  }
  const auto& m = ckpt.metadata;
  ojson j;
  j["format"] = "flowsculpt-checkpoint";
  j["version"] = kCheckpointVersion;
  j["architecture"] = architecture_to_json(ckpt.architecture);
  j["precision"] = to_string(ckpt.precision);
  ojson meta;
  meta["grid"] = {{"h", m.grid.height}, {"w", m.grid.width}};
  meta["seed"] = m.seed;
  meta["global_step"] = m.global_step;
  meta["episodes"] = m.episodes;
  meta["library_provenance"] = to_string(m.library_provenance);
  meta["inlet"] = shape_to_json(m.inlet);
  meta["target"] = m.target ? shape_to_json(*m.target) : ojson(nullptr);
  meta["lineage"] = m.lineage;
  meta["extra"] = m.extra;
  j["metadata"] = std::move(meta);
  j["tensors"] = tensors_to_json(ckpt.params);
  j["optimizer"] = {{"kind", "rmsprop"}, {"second_moments", tensors_to_json(ckpt.second_moments)}};
  return to_document_text(j);
}

Checkpoint parse_checkpoint(const std::string& text, const std::optional<NetworkArchitecture>& expected) {
  Checkpoint ckpt;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != "flowsculpt-checkpoint") throw CheckpointError("not a checkpoint document");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    ckpt.architecture = architecture_from_json(j.at("architecture"));
    ckpt.precision = precision_from_string(j.at("precision").get<std::string>());
    const auto& meta = j.at("metadata");
    auto& m = ckpt.metadata;
    m.grid = GridSpec{meta.at("grid").at("h").get<int>(), meta.at("grid").at("w").get<int>()};
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.global_step = meta.at("global_step").get<std::int64_t>();
    m.episodes = meta.at("episodes").get<std::int64_t>();
    m.library_provenance = provenance_from_string(meta.at("library_provenance").get<std::string>());
    m.inlet = shape_from_json(meta.at("inlet"));
    if (!meta.at("target").is_null()) m.target = shape_from_json(meta.at("target"));
    m.lineage = meta.at("lineage").get<std::vector<std::string>>();
    m.extra = nlohmann::ordered_json::parse(meta.at("extra").dump());
    ckpt.params = tensors_from_json(j.at("tensors"));
    ckpt.second_moments = tensors_from_json(j.at("optimizer").at("second_moments"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }

  if (expected && !(*expected == ckpt.architecture)) {
    throw CheckpointError("checkpoint architecture does not match the requested network");
  }
  if (ckpt.metadata.grid != ckpt.architecture.input) throw CheckpointError("checkpoint grid disagrees with architecture");
  // Rebuilding a network validates every tensor name and shape against the architecture.
  try {
    QNetwork<double> probe(ckpt.architecture, ckpt.params);
    if (!ckpt.params.same_layout(ckpt.second_moments)) throw CheckpointError("optimizer state layout mismatch");
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("checkpoint tensors do not fit the architecture: ") + e.what());
  }
  if (!ckpt.params.all_finite() || !ckpt.second_moments.all_finite()) {
    throw CheckpointError("checkpoint holds non-finite values");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_text_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<NetworkArchitecture>& expected) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const FormatError& e) {
    throw CheckpointError(e.what());
  }
  return parse_checkpoint(text, expected);
}

std::uint64_t params_digest(const ParamSet<double>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : params.tensors) {
    for (Eigen::Index k = 0; k < t.values.size(); ++k) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &t.values(k), sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace flowsculpt
