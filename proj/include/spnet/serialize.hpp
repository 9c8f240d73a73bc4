#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>

#include "spnet/net.hpp"
#include "spnet/tensor.hpp"

namespace spnet {

// ---- SPT1: single-tensor binary records ------------------------------------
// Layout: magic "SPT1" | u8 rank | rank x u32 little-endian extents |
// float32 little-endian payload, row-major with the last extent fastest.
// Malformed input (bad magic, zero/overflowing extents, truncation) raises
// IoError.

void write_spt1(std::ostream& out, const Tensor& t);
Tensor read_spt1(std::istream& in);

/// File-level wrappers; writes go through a temp file + rename so a failed
/// write never leaves a partial file at the target path.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// ---- Checkpoints -----------------------------------------------------------
// Layout: magic "SPCK" | u32 little-endian manifest byte length | JSON
// manifest | packed SPT1 records. The manifest embeds the three network spec
// documents plus the construction seed, and a tensor directory of
// (name, shape, offset) entries with offsets relative to the start of the
// tensor section. Loading rebuilds the network from the embedded specs and
// verifies every tensor by name and shape; the first mismatch is reported by
// tensor name.

void save_checkpoint(const std::string& path, Network& net);
std::unique_ptr<Network> load_checkpoint(const std::string& path);

// ---- PGM -------------------------------------------------------------------
// Binary PGM (P5, maxval 255). Label values are written raw, so class ids map
// to gray levels directly and the ignore label renders as white.

void write_pgm(const std::string& path, const LabelMap& labels, int batch_index = 0);
/// Reads a P5 file back into a single-image label map (test round-trips).
LabelMap read_pgm(const std::string& path);

/// Runs `body(stream)` against a temporary file next to `path`, then renames
/// it into place. Any failure removes the temp file before propagating, so
/// the target path never holds a partial file.
void atomic_write_file(const std::string& path,
                       const std::function<void(std::ostream&)>& body);

}  // namespace spnet
