#include "spnet/rundir.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "spnet/tensor.hpp"

namespace spnet {

namespace fs = std::filesystem;

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[80];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

RunDir::RunDir(std::string path) : path_(std::move(path)) {
  if (path_.empty()) throw ConfigError("run_dir: must not be empty");
  std::error_code ec;
  fs::create_directories(path_, ec);
  if (ec) throw IoError("cannot create run directory " + path_ + ": " + ec.message());
  if (fs::exists(fs::path(path_) / manifest_name()))
    throw IoError("run directory already holds a manifest: " + path_);
}

std::string RunDir::file(const std::string& relative) const {
  if (relative.empty()) throw ConfigError("run_dir: empty output path");
  fs::path rel(relative);
  if (rel.is_absolute())
    throw ConfigError("run_dir: output path must be relative: " + relative);
  for (const auto& part : rel) {
    if (part == "..")
      throw ConfigError("run_dir: output path escapes the run directory: " + relative);
  }
  fs::path full = fs::path(path_) / rel;
  if (rel.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(full.parent_path(), ec);
    if (ec)
      throw IoError("cannot create output directory " + full.parent_path().string() +
                    ": " + ec.message());
  }
  return full.string();
}

void RunDir::append(json line) {
  line["timestamp"] = utc_timestamp();
  std::ofstream out(fs::path(path_) / manifest_name(), std::ios::app);
  if (!out) throw IoError("cannot append to run manifest in " + path_);
  out << line.dump() << "\n";
  if (!out) throw IoError("failed writing run manifest in " + path_);
}

void RunDir::begin(const std::string& command, const json& resolved_config,
                   std::uint64_t seed) {
  append(json{{"event", "start"},
              {"command", command},
              {"config", resolved_config},
              {"seed", seed},
              {"version", kVersion}});
}

void RunDir::note_output(const std::string& relative) { outputs_.push_back(relative); }

void RunDir::finish_ok() {
  append(json{{"event", "finish"}, {"status", "ok"}, {"outputs", outputs_}});
}

void RunDir::finish_failed(const std::string& error) {
  append(json{{"event", "finish"},
              {"status", "failed"},
              {"error", error},
              {"outputs", outputs_}});
}

}  // namespace spnet
