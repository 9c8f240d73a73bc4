#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spnet/config.hpp"

namespace spnet {

inline constexpr const char* kVersion = "1.0.0";

/// One output directory per run, holding every artifact the run produces plus
/// exactly one append-only manifest (manifest.jsonl). Each manifest line is a
/// self-contained JSON event: a start line records the command, the fully
/// resolved config, the effective seed, and the tool version; a finish line
/// records status, the produced output paths, and for failures the error.
/// Artifact writes elsewhere are atomic, so a crash mid-run leaves either no
/// checkpoint or a complete one - and the manifest without a finish line (or
/// with a failed one) marks the run as not completed.
class RunDir {
 public:
  /// Creates the directory (parents included). Refuses a directory that
  /// already contains a manifest, so each run gets a fresh directory.
  explicit RunDir(std::string path);

  const std::string& path() const { return path_; }

  /// Joins a run-relative path, rejecting absolute paths and ".." segments:
  /// all outputs stay confined to the run directory.
  std::string file(const std::string& relative) const;

  void begin(const std::string& command, const json& resolved_config,
             std::uint64_t seed);
  /// Registers a produced artifact (run-relative path) for the finish line.
  void note_output(const std::string& relative);
  void finish_ok();
  void finish_failed(const std::string& error);

  static const char* manifest_name() { return "manifest.jsonl"; }

 private:
  void append(json line);

  std::string path_;
  std::vector<std::string> outputs_;
};

/// ISO-8601 UTC wall-clock timestamp (manifest lines only; nothing
/// deterministic depends on it).
std::string utc_timestamp();

}  // namespace spnet
