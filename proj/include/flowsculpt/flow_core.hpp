#pragma once

// Flow cross-sections, pillar advection maps and the pixel match rate.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace flowsculpt {

inline constexpr int kDefaultActionCount = 32;
inline constexpr double kDefaultInletLo = 0.375;
inline constexpr double kDefaultInletHi = 0.625;

struct GridSpec {
  int height = 12;  // channel depth axis (rows)
  int width = 32;   // lateral axis (columns)

  std::size_t size() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  void validate() const;
  std::string to_string() const;  // "HxW"
  static GridSpec parse(const std::string& text);

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Binary occupancy image of the sculpted stream, row-major, 1 = fluid present.
class FlowShape {
 public:
  FlowShape() = default;
  explicit FlowShape(GridSpec grid);
  FlowShape(GridSpec grid, std::vector<std::uint8_t> pixels);

  const GridSpec& grid() const { return grid_; }
  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::size_t size() const { return pixels_.size(); }

  std::uint8_t at(int row, int col) const { return pixels_[index(row, col)]; }
  void set(int row, int col, bool on) { pixels_[index(row, col)] = on ? 1 : 0; }
  std::uint8_t operator[](std::size_t flat) const { return pixels_[flat]; }
  void set_flat(std::size_t flat, bool on) { pixels_[flat] = on ? 1 : 0; }

  std::size_t on_count() const;
  bool empty() const { return on_count() == 0; }

  friend bool operator==(const FlowShape&, const FlowShape&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(grid_.width) + static_cast<std::size_t>(col);
  }

  GridSpec grid_{};
  std::vector<std::uint8_t> pixels_;
};

/// One pillar's deformation as a pixel gather: out[d] = in[src_index[d]].
struct AdvectionMap {
  GridSpec grid;
  int action_id = 0;
  std::vector<std::uint32_t> src_index;

  void validate() const;
  friend bool operator==(const AdvectionMap&, const AdvectionMap&) = default;
};

enum class LibraryProvenance { kSurrogate, kFile };

std::string to_string(LibraryProvenance provenance);
LibraryProvenance provenance_from_string(const std::string& text);

struct PillarLibrary {
  GridSpec grid;
  std::vector<AdvectionMap> maps;
  LibraryProvenance provenance = LibraryProvenance::kSurrogate;

  int action_count() const { return static_cast<int>(maps.size()); }
  const AdvectionMap& map(int action) const;
  void validate() const;
};

using PillarSequence = std::vector<int>;

/// Parses "22, 11, 31" (commas and/or whitespace). Tokens must be integers in [0, action_count).
PillarSequence parse_sequence(const std::string& text, int action_count);
std::string format_sequence(const PillarSequence& seq, const char* separator = ", ");

/// Vertical stripe of on-pixels over columns [floor(lo*W), floor(hi*W)) in every row.
FlowShape make_inlet(GridSpec grid, double lo_frac = kDefaultInletLo, double hi_frac = kDefaultInletHi);

/// Tunables of the closed-form surrogate pillar model.
struct SurrogateParams {
  double amplitude_step = 0.05;  // amplitude = amplitude_step * (strength + 1)
  double width = 0.15;           // gaussian half-width around the pillar center
  double edge_epsilon = 1e-9;    // keeps the clamped source coordinate inside [0, 1)
};

/// Backward-displacement surrogate for pillar `action` (position = action % 4, strength = action / 4).
AdvectionMap build_surrogate_map(int action, GridSpec grid, const SurrogateParams& params = {});
PillarLibrary build_surrogate_library(GridSpec grid, int action_count = kDefaultActionCount,
                                      const SurrogateParams& params = {});
AdvectionMap identity_map(GridSpec grid, int action_id = 0);

FlowShape apply_pillar(const FlowShape& shape, const AdvectionMap& map);

/// Intermediate shapes s1..sL; the first listed pillar is applied first.
std::vector<FlowShape> apply_sequence(const FlowShape& shape, const PillarSequence& seq, const PillarLibrary& lib);

/// max(0, 1 - mismatches / target_on_pixels). Throws UndefinedMetricError for an empty target.
double pmr(const FlowShape& generated, const FlowShape& target);

/// FNV-1a (64-bit, standard offset basis) over H and W as little-endian uint32 followed by one byte per pixel.
std::uint64_t shape_hash(const FlowShape& shape);
std::string hash_to_hex(std::uint64_t digest);

}  // namespace flowsculpt
