// SPDX-License-Identifier: Apache-2.0
//
// "key = value" config files for the vala command line. Each entry becomes a
// "--key=value" argument placed before the user's own flags, so flags given
// on the command line win.
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "vala/error.hpp"

namespace vala::cli {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

/// Blank lines and lines starting with '#' are skipped.
inline std::vector<std::string> read_config_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::vector<std::string> args;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(number) + ": empty key");
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

/// Splices config entries in after the subcommand name; argv[0] is kept.
inline std::vector<std::string> expand_config(const std::vector<std::string>& argv) {
  std::string path;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    if (argv[i] == "--config" && i + 1 < argv.size()) path = argv[i + 1];
    if (argv[i].rfind("--config=", 0) == 0) path = argv[i].substr(9);
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (argv[i] == "--config") {
      ++i;
      continue;
    }
    if (argv[i].rfind("--config=", 0) == 0) continue;
    out.push_back(argv[i]);
  }
  if (path.empty() || out.size() < 2) return out;
  auto extra = read_config_args(path);
  out.insert(out.begin() + 2, extra.begin(), extra.end());
  return out;
}

}  // namespace vala::cli
