#include "flowsculpt/documents.hpp"

#include <fstream>
#include <sstream>

#include "flowsculpt/errors.hpp"

namespace flowsculpt {

namespace {

using ojson = nlohmann::ordered_json;

bool is_inline_array(const ojson& j) {
  for (const auto& e : j) {
    if (!(e.is_number() || e.is_boolean() || e.is_null())) return false;
  }
  return true;
}

void write_value(std::string& out, const ojson& j, int depth) {
  const std::string pad(static_cast<std::size_t>(2 * (depth + 1)), ' ');
  const std::string close_pad(static_cast<std::size_t>(2 * depth), ' ');
  if (j.is_object()) {
    if (j.empty()) {
      out += "{}";
      return;
    }
    out += "{\n";
    bool first = true;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!first) out += ",\n";
      first = false;
      out += pad + ojson(it.key()).dump() + ": ";
      write_value(out, it.value(), depth + 1);
    }
    out += "\n" + close_pad + "}";
  } else if (j.is_array() && !j.empty() && !is_inline_array(j)) {
    out += "[\n";
    for (std::size_t k = 0; k < j.size(); ++k) {
      if (k > 0) out += ",\n";
      out += pad;
      write_value(out, j[k], depth + 1);
    }
    out += "\n" + close_pad + "]";
  } else {
    out += j.dump();
  }
}

template <typename J>
const J& require(const J& j, const char* field, const char* where) {
  if (!j.is_object()) throw FormatError(std::string(where) + ": expected a JSON object");
  if (!j.contains(field)) {
    throw FormatError(std::string(where) + ": missing field '" + field + "'");
  }
  return j.at(field);
}

template <typename J>
int require_int(const J& j, const char* field, const char* where) {
  const auto& v = require(j, field, where);
  if (!v.is_number_integer()) throw FormatError(std::string(where) + ": field '" + field + "' must be an integer");
  return v.template get<int>();
}

}  // namespace

std::string to_document_text(const nlohmann::ordered_json& j) {
  std::string out;
  write_value(out, j, 0);
  out += "\n";
  return out;
}

nlohmann::ordered_json shape_to_json(const FlowShape& shape) {
  ojson j;
  j["h"] = shape.grid().height;
  j["w"] = shape.grid().width;
  ojson rows = ojson::array();
  for (int i = 0; i < shape.grid().height; ++i) {
    std::string row(static_cast<std::size_t>(shape.grid().width), '0');
    for (int c = 0; c < shape.grid().width; ++c) {
      if (shape.at(i, c)) row[static_cast<std::size_t>(c)] = '1';
    }
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  return j;
}

FlowShape shape_from_json(const nlohmann::json& j) {
  constexpr const char* where = "shape document";
  GridSpec grid{require_int(j, "h", where), require_int(j, "w", where)};
  try {
    grid.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string(where) + ": " + e.what());
  }
  const auto& rows = require(j, "rows", where);
  if (!rows.is_array() || static_cast<int>(rows.size()) != grid.height) {
    throw FormatError(std::string(where) + ": field 'rows' must hold h = " + std::to_string(grid.height) + " strings");
  }
  std::vector<std::uint8_t> pixels;
  pixels.reserve(grid.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].is_string()) throw FormatError(std::string(where) + ": rows[" + std::to_string(i) + "] is not a string");
    const auto& row = rows[i].get_ref<const std::string&>();
    if (static_cast<int>(row.size()) != grid.width) {
      throw FormatError(std::string(where) + ": rows[" + std::to_string(i) + "] has length " +
                        std::to_string(row.size()) + ", expected w = " + std::to_string(grid.width));
    }
    for (char c : row) {
      if (c != '0' && c != '1') {
        throw FormatError(std::string(where) + ": rows[" + std::to_string(i) + "] contains '" + std::string(1, c) +
                          "', only 0 and 1 are allowed");
      }
      pixels.push_back(c == '1' ? 1 : 0);
    }
  }
  return FlowShape(grid, std::move(pixels));
}

std::string serialize_shape(const FlowShape& shape) { return to_document_text(shape_to_json(shape)); }

FlowShape parse_shape(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("shape document is not valid JSON: ") + e.what());
  }
  return shape_from_json(j);
}

nlohmann::ordered_json library_to_json(const PillarLibrary& lib) {
  ojson j;
  j["format"] = "flowsculpt-library";
  j["version"] = kLibraryFormatVersion;
  j["grid"] = {{"h", lib.grid.height}, {"w", lib.grid.width}};
  j["provenance"] = to_string(lib.provenance);
  ojson actions = ojson::array();
  for (const auto& m : lib.maps) {
    ojson a;
    a["id"] = m.action_id;
    a["src_index"] = m.src_index;
    actions.push_back(std::move(a));
  }
  j["actions"] = std::move(actions);
  return j;
}

PillarLibrary library_from_json(const nlohmann::json& j) {
  constexpr const char* where = "library document";
  const auto& format = require(j, "format", where);
  if (!format.is_string() || format.get<std::string>() != "flowsculpt-library") {
    throw FormatError(std::string(where) + ": field 'format' must be \"flowsculpt-library\"");
  }
  if (require_int(j, "version", where) != kLibraryFormatVersion) {
    throw FormatError(std::string(where) + ": unsupported version");
  }
  const auto& g = require(j, "grid", where);
  PillarLibrary lib;
  lib.grid = GridSpec{require_int(g, "h", where), require_int(g, "w", where)};
  const auto& prov = require(j, "provenance", where);
  if (!prov.is_string()) throw FormatError(std::string(where) + ": field 'provenance' must be a string");
  lib.provenance = provenance_from_string(prov.get<std::string>());
  const auto& actions = require(j, "actions", where);
  if (!actions.is_array() || actions.empty()) throw FormatError(std::string(where) + ": field 'actions' must be a nonempty array");
  for (std::size_t k = 0; k < actions.size(); ++k) {
    AdvectionMap m;
    m.grid = lib.grid;
    m.action_id = require_int(actions[k], "id", where);
    if (m.action_id != static_cast<int>(k)) {
      throw FormatError(std::string(where) + ": action ids must be contiguous from 0, got " +
                        std::to_string(m.action_id) + " at position " + std::to_string(k));
    }
    const auto& src = require(actions[k], "src_index", where);
    if (!src.is_array()) throw FormatError(std::string(where) + ": src_index must be an array");
    m.src_index.reserve(src.size());
    for (const auto& v : src) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw FormatError(std::string(where) + ": src_index entries must be non-negative integers");
      }
      m.src_index.push_back(v.get<std::uint32_t>());
    }
    lib.maps.push_back(std::move(m));
  }
  try {
    lib.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string(where) + ": " + e.what());
  }
  return lib;
}

std::string serialize_library(const PillarLibrary& lib) { return to_document_text(library_to_json(lib)); }

PillarLibrary parse_library(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("library document is not valid JSON: ") + e.what());
  }
  return library_from_json(j);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw FormatError("write failed for '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace flowsculpt
