// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// The `reco_kd` command surface. Everything lives in the library so tests can
// drive commands in-process.
//
// Exit codes: 0 success, 1 validation error (config, flags), 2 runtime error
// (I/O, divergence, failed gradient check).

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "recokd/config.hpp"
#include "recokd/trainer.hpp"

namespace recokd::cli {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct RunManifest {
  std::string command;
  std::string config_path;
  nlohmann::json config;  // resolved snapshot
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string tool_version;
  std::map<std::string, std::string> input_hashes;  // path -> sha256
  std::string created;                              // UTC, informational

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// Entry point used by the binary. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Dataset directory layout written by `gen`: index.json plus NIfTI pairs.
void write_dataset(const train::Dataset& data, const config::DataConfig& spec, const std::filesystem::path& dir);
train::Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace recokd::cli
