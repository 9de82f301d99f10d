#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "flowsculpt/flow_core.hpp"
#include "flowsculpt/random.hpp"

namespace testing {

inline std::filesystem::path golden_dir() { return FLOWSCULPT_GOLDEN_DIR; }
inline std::string cli_path() { return FLOWSCULPT_CLI_PATH; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("flowsculpt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout only
};

inline CommandResult run_command(const std::string& cmd) {
  CommandResult r;
  FILE* pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string quote(const std::string& s) { return "'" + s + "'"; }

inline flowsculpt::FlowShape shape_from_rows(const std::vector<std::string>& rows) {
  flowsculpt::GridSpec g{static_cast<int>(rows.size()), static_cast<int>(rows.front().size())};
  flowsculpt::FlowShape s(g);
  for (int i = 0; i < g.height; ++i)
    for (int j = 0; j < g.width; ++j) s.set(i, j, rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] == '1');
  return s;
}

inline flowsculpt::FlowShape random_shape(flowsculpt::GridSpec g, flowsculpt::Rng& rng) {
  flowsculpt::FlowShape s(g);
  for (std::size_t k = 0; k < s.size(); ++k) s.set_flat(k, rng.uniform01() < 0.4);
  return s;
}

}  // namespace testing
