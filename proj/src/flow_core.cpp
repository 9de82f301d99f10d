#include "flowsculpt/flow_core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "flowsculpt/errors.hpp"

namespace flowsculpt {

void GridSpec::validate() const {
  if (height < 2 || width < 2) {
    throw ParameterError("grid must be at least 2x2, got " + to_string());
  }
  if (size() > (std::size_t{1} << 20)) {
    throw ParameterError("grid " + to_string() + " exceeds 2^20 pixels");
  }
}

std::string GridSpec::to_string() const { return std::to_string(height) + "x" + std::to_string(width); }

GridSpec GridSpec::parse(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos || x == 0 || x + 1 == text.size()) {
    throw ParameterError("grid must look like HxW, got '" + text + "'");
  }
  auto parse_int = [&](const std::string& part) {
    if (part.empty() || !std::all_of(part.begin(), part.end(), [](unsigned char c) { return std::isdigit(c); }) ||
        part.size() > 7) {
      throw ParameterError("grid must look like HxW, got '" + text + "'");
    }
    return std::stoi(part);
  };
  GridSpec grid{parse_int(text.substr(0, x)), parse_int(text.substr(x + 1))};
  grid.validate();
  return grid;
}

FlowShape::FlowShape(GridSpec grid) : grid_(grid), pixels_(grid.size(), 0) {}

FlowShape::FlowShape(GridSpec grid, std::vector<std::uint8_t> pixels) : grid_(grid), pixels_(std::move(pixels)) {
  if (pixels_.size() != grid_.size()) {
    throw ShapeError("pixel count " + std::to_string(pixels_.size()) + " does not match grid " + grid_.to_string());
  }
  for (auto p : pixels_) {
    if (p > 1) throw ShapeError("flow shape pixels must be 0 or 1");
  }
}

std::size_t FlowShape::on_count() const {
  return static_cast<std::size_t>(std::count(pixels_.begin(), pixels_.end(), std::uint8_t{1}));
}

void AdvectionMap::validate() const {
  grid.validate();
  if (src_index.size() != grid.size()) {
    throw ShapeError("advection map for action " + std::to_string(action_id) + " has " +
                     std::to_string(src_index.size()) + " entries, grid needs " + std::to_string(grid.size()));
  }
  for (auto s : src_index) {
    if (s >= grid.size()) {
      throw ParameterError("advection map for action " + std::to_string(action_id) + " has source index " +
                           std::to_string(s) + " outside the grid");
    }
  }
}

std::string to_string(LibraryProvenance provenance) {
  return provenance == LibraryProvenance::kSurrogate ? "surrogate" : "file";
}

LibraryProvenance provenance_from_string(const std::string& text) {
  if (text == "surrogate") return LibraryProvenance::kSurrogate;
  if (text == "file") return LibraryProvenance::kFile;
  throw FormatError("unknown library provenance '" + text + "'");
}

const AdvectionMap& PillarLibrary::map(int action) const {
  if (action < 0 || action >= action_count()) {
    throw ParameterError("action " + std::to_string(action) + " outside [0, " + std::to_string(action_count()) + ")");
  }
  return maps[static_cast<std::size_t>(action)];
}

void PillarLibrary::validate() const {
  grid.validate();
  if (maps.empty()) throw ConfigError("pillar library has no maps");
  for (std::size_t k = 0; k < maps.size(); ++k) {
    if (maps[k].action_id != static_cast<int>(k)) {
      throw ConfigError("library map " + std::to_string(k) + " carries action id " +
                        std::to_string(maps[k].action_id));
    }
    if (maps[k].grid != grid) throw ShapeError("library map " + std::to_string(k) + " is on a different grid");
    maps[k].validate();
  }
}

PillarSequence parse_sequence(const std::string& text, int action_count) {
  PillarSequence seq;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    const bool digits = std::all_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c); });
    if (!digits || token.size() > 9) throw ParameterError("invalid pillar token '" + token + "'");
    const int id = std::stoi(token);
    if (id >= action_count) {
      throw ParameterError("invalid pillar token '" + token + "': action ids are in [0, " +
                           std::to_string(action_count) + ")");
    }
    seq.push_back(id);
    token.clear();
  };
  for (char c : text) {
    if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      token.push_back(c);
    }
  }
  flush();
  return seq;
}

std::string format_sequence(const PillarSequence& seq, const char* separator) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i > 0) out += separator;
    out += std::to_string(seq[i]);
  }
  return out;
}

FlowShape make_inlet(GridSpec grid, double lo_frac, double hi_frac) {
  grid.validate();
  if (!(lo_frac >= 0.0 && lo_frac < hi_frac && hi_frac <= 1.0)) {
    throw ParameterError("inlet fractions must satisfy 0 <= lo < hi <= 1");
  }
  const int lo = static_cast<int>(std::floor(lo_frac * grid.width));
  const int hi = static_cast<int>(std::floor(hi_frac * grid.width));
  FlowShape shape(grid);
  for (int i = 0; i < grid.height; ++i) {
    for (int j = lo; j < hi; ++j) shape.set(i, j, true);
  }
  return shape;
}

AdvectionMap build_surrogate_map(int action, GridSpec grid, const SurrogateParams& params) {
  grid.validate();
  if (action < 0 || action >= kDefaultActionCount) {
    throw ParameterError("surrogate action " + std::to_string(action) + " outside [0, 32)");
  }
  const int position = action % 4;
  const int strength = action / 4;
  const double center = 0.125 + 0.25 * position;
  const double amplitude = params.amplitude_step * (strength + 1);
  const double two_sigma_sq = 2.0 * params.width * params.width;
  const double y_max = 1.0 - params.edge_epsilon;

  AdvectionMap map{grid, action, std::vector<std::uint32_t>(grid.size())};
  for (int i = 0; i < grid.height; ++i) {
    const double z = (i + 0.5) / grid.height;
    const double shear = std::sin(2.0 * std::numbers::pi * z);
    for (int j = 0; j < grid.width; ++j) {
      const double y = (j + 0.5) / grid.width;
      const double dy = y - center;
      const double y_src = std::clamp(y - amplitude * shear * std::exp(-(dy * dy) / two_sigma_sq), 0.0, y_max);
      // Nearest cell center: round half away from zero (std::lround), then clamp.
      const long col = std::clamp(std::lround(y_src * grid.width - 0.5), 0L, static_cast<long>(grid.width - 1));
      map.src_index[static_cast<std::size_t>(i) * grid.width + static_cast<std::size_t>(j)] =
          static_cast<std::uint32_t>(static_cast<long>(i) * grid.width + col);
    }
  }
  return map;
}

PillarLibrary build_surrogate_library(GridSpec grid, int action_count, const SurrogateParams& params) {
  if (action_count < 1 || action_count > kDefaultActionCount) {
    throw ParameterError("surrogate library supports 1..32 actions");
  }
  PillarLibrary lib{grid, {}, LibraryProvenance::kSurrogate};
  lib.maps.reserve(static_cast<std::size_t>(action_count));
  for (int a = 0; a < action_count; ++a) lib.maps.push_back(build_surrogate_map(a, grid, params));
  return lib;
}

AdvectionMap identity_map(GridSpec grid, int action_id) {
  AdvectionMap map{grid, action_id, std::vector<std::uint32_t>(grid.size())};
  for (std::size_t d = 0; d < map.src_index.size(); ++d) map.src_index[d] = static_cast<std::uint32_t>(d);
  return map;
}

FlowShape apply_pillar(const FlowShape& shape, const AdvectionMap& map) {
  if (shape.grid() != map.grid || map.src_index.size() != shape.size()) {
    throw ShapeError("shape grid " + shape.grid().to_string() + " does not match map grid " + map.grid.to_string());
  }
  std::vector<std::uint8_t> out(shape.size());
  const auto in = shape.pixels();
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = in[map.src_index[d]];
  return FlowShape(shape.grid(), std::move(out));
}

std::vector<FlowShape> apply_sequence(const FlowShape& shape, const PillarSequence& seq, const PillarLibrary& lib) {
  for (int a : seq) lib.map(a);  // reject invalid ids before doing any work
  std::vector<FlowShape> out;
  out.reserve(seq.size());
  const FlowShape* current = &shape;
  for (int a : seq) {
    out.push_back(apply_pillar(*current, lib.map(a)));
    current = &out.back();
  }
  return out;
}

double pmr(const FlowShape& generated, const FlowShape& target) {
  if (generated.grid() != target.grid()) {
    throw ShapeError("pmr needs equal grids, got " + generated.grid().to_string() + " and " +
                     target.grid().to_string());
  }
  const std::size_t target_mass = target.on_count();
  if (target_mass == 0) throw UndefinedMetricError("pmr is undefined for a target without on-pixels");
  const auto g = generated.pixels();
  const auto t = target.pixels();
  std::size_t mismatches = 0;
  for (std::size_t k = 0; k < g.size(); ++k) mismatches += (g[k] != t[k]);
  return std::max(0.0, 1.0 - static_cast<double>(mismatches) / static_cast<double>(target_mass));
}

std::uint64_t shape_hash(const FlowShape& shape) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (auto dim : {static_cast<std::uint32_t>(shape.grid().height), static_cast<std::uint32_t>(shape.grid().width)}) {
    for (int b = 0; b < 4; ++b) mix(static_cast<std::uint8_t>(dim >> (8 * b)));
  }
  for (auto p : shape.pixels()) mix(p);
  return h;
}

std::string hash_to_hex(std::uint64_t digest) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

}  // namespace flowsculpt
