#ifndef POLYROM_CLI_HPP
#define POLYROM_CLI_HPP

#include <map>
#include <string>
#include <vector>

namespace polyrom {

// Provenance record written beside every command's outputs. The duration
// field tracks wall-clock time and is the one field that varies between
// otherwise identical runs.
struct RunManifest {
  std::string command;
  std::string version;
  unsigned seed = 0;
  double duration_seconds = 0.0;
  std::map<std::string, std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, std::string> config;
};

void write_manifest(const RunManifest& m, const std::string& path);

// Entry point shared by the binary and the tests. `args` excludes the
// program name. Returns the process exit code: 0 only when every output was
// written and validated.
int run_cli(const std::vector<std::string>& args);

}  // namespace polyrom

#endif
