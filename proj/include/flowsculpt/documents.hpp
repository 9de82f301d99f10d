#pragma once

// Text documents for shapes and pillar libraries.
//
// ShapeDocument:   {"h": H, "w": W, "rows": ["0110...", ...]}      row 0 = top
// LibraryDocument: {"format": "flowsculpt-library", "version": 1,
//                   "grid": {"h": H, "w": W}, "provenance": "surrogate"|"file",
//                   "actions": [{"id": 0, "src_index": [...]}, ...]}

#include <filesystem>
#include <string>

#include "json.hpp"

#include "flowsculpt/flow_core.hpp"

namespace flowsculpt {

inline constexpr int kLibraryFormatVersion = 1;

/// Pretty JSON: objects and non-numeric arrays one entry per line, numeric arrays inline.
std::string to_document_text(const nlohmann::ordered_json& j);

nlohmann::ordered_json shape_to_json(const FlowShape& shape);
/// Throws FormatError naming the offending field.
FlowShape shape_from_json(const nlohmann::json& j);
std::string serialize_shape(const FlowShape& shape);
FlowShape parse_shape(const std::string& text);

nlohmann::ordered_json library_to_json(const PillarLibrary& lib);
PillarLibrary library_from_json(const nlohmann::json& j);
std::string serialize_library(const PillarLibrary& lib);
/// Maps loaded from a document are tagged with the provenance stored in it.
PillarLibrary parse_library(const std::string& text);

std::string read_text_file(const std::filesystem::path& path);
/// Writes atomically (temp file + rename).
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace flowsculpt
