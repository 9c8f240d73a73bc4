#include "spnet/serialize.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "spnet/config.hpp"

namespace spnet {
namespace {

// ---- little-endian primitives ---------------------------------------------

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xffu),
                        static_cast<unsigned char>((v >> 8) & 0xffu),
                        static_cast<unsigned char>((v >> 16) & 0xffu),
                        static_cast<unsigned char>((v >> 24) & 0xffu)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t take_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw IoError(std::string("truncated ") + what);
  return take_u32(b);
}

/// Bytes a single SPT1 record occupies on disk.
std::int64_t spt1_record_size(const Tensor& t) {
  return 4 + 1 + 4 * static_cast<std::int64_t>(t.rank()) + 4 * t.numel();
}

}  // namespace

// ---- SPT1 ------------------------------------------------------------------

void write_spt1(std::ostream& out, const Tensor& t) {
  check_shape(t.shape, "tensor");
  out.write("SPT1", 4);
  unsigned char rank = static_cast<unsigned char>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), 1);
  for (int e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
  std::vector<unsigned char> payload(static_cast<std::size_t>(t.numel()) * 4);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(t.data[static_cast<std::size_t>(i)]);
    payload[static_cast<std::size_t>(i) * 4 + 0] = static_cast<unsigned char>(bits & 0xffu);
    payload[static_cast<std::size_t>(i) * 4 + 1] =
        static_cast<unsigned char>((bits >> 8) & 0xffu);
    payload[static_cast<std::size_t>(i) * 4 + 2] =
        static_cast<unsigned char>((bits >> 16) & 0xffu);
    payload[static_cast<std::size_t>(i) * 4 + 3] =
        static_cast<unsigned char>((bits >> 24) & 0xffu);
  }
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing tensor record");
}

Tensor read_spt1(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "SPT1")
    throw IoError("bad tensor magic (expected SPT1)");
  unsigned char rank = 0;
  in.read(reinterpret_cast<char*>(&rank), 1);
  if (in.gcount() != 1) throw IoError("truncated tensor header");
  if (rank < 1 || rank > 4)
    throw IoError("tensor rank out of range: " + std::to_string(int(rank)));
  std::vector<int> shape(rank);
  std::int64_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    std::uint32_t e = get_u32(in, "tensor extents");
    if (e == 0 || e > (1u << 24)) throw IoError("tensor extent out of range");
    shape[static_cast<std::size_t>(i)] = static_cast<int>(e);
    numel *= e;
  }
  if (numel > (std::int64_t{1} << 31)) throw IoError("tensor payload too large");
  Tensor t(shape);
  std::vector<unsigned char> payload(static_cast<std::size_t>(numel) * 4);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
  if (in.gcount() != static_cast<std::streamsize>(payload.size()))
    throw IoError("truncated tensor payload");
  for (std::int64_t i = 0; i < numel; ++i) {
    t.data[static_cast<std::size_t>(i)] =
        std::bit_cast<float>(take_u32(payload.data() + static_cast<std::size_t>(i) * 4));
  }
  return t;
}

// ---- atomic file writes ----------------------------------------------------

void atomic_write_file(const std::string& path,
                       const std::function<void(std::ostream&)>& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open file for writing: " + tmp);
    try {
      body(out);
    } catch (...) {
      out.close();
      std::remove(tmp.c_str());
      throw;
    }
    out.flush();
    if (!out) {
      out.close();
      std::remove(tmp.c_str());
      throw IoError("failed writing file: " + tmp);
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw IoError("cannot move " + tmp + " into place: " + ec.message());
  }
}

void save_tensor(const std::string& path, const Tensor& t) {
  atomic_write_file(path, [&](std::ostream& out) { write_spt1(out, t); });
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file: " + path);
  return read_spt1(in);
}

// ---- checkpoints -----------------------------------------------------------

namespace {

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

std::vector<NamedTensor> checkpoint_tensors(ParamMap& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.trainable.size() + params.buffers.size());
  for (auto& [name, var] : params.trainable) out.push_back({name, &var->value});
  for (auto& [name, buf] : params.buffers) out.push_back({name, buf});
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, Network& net) {
  ParamMap params = net.params();
  std::vector<NamedTensor> tensors = checkpoint_tensors(params);

  json directory = json::array();
  std::int64_t offset = 0;
  for (const NamedTensor& nt : tensors) {
    directory.push_back(
        {{"name", nt.name}, {"shape", nt.tensor->shape}, {"offset", offset}});
    offset += spt1_record_size(*nt.tensor);
  }
  json manifest{{"format", 1},
                {"backbone", backbone_to_json(net.backbone_spec())},
                {"placement", placement_to_json(net.placement_spec())},
                {"head", head_to_json(net.head_spec())},
                {"seed", net.seed()},
                {"tensors", std::move(directory)}};
  const std::string manifest_text = manifest.dump();

  atomic_write_file(path, [&](std::ostream& out) {
    out.write("SPCK", 4);
    put_u32(out, static_cast<std::uint32_t>(manifest_text.size()));
    out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
    for (const NamedTensor& nt : tensors) write_spt1(out, *nt.tensor);
  });
}

std::unique_ptr<Network> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);

  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "SPCK")
    throw IoError("bad checkpoint magic (expected SPCK): " + path);
  std::uint32_t manifest_len = get_u32(in, "checkpoint manifest length");
  if (manifest_len == 0 || manifest_len > (1u << 26))
    throw IoError("checkpoint manifest length out of range");
  std::string manifest_text(manifest_len, '\0');
  in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
  if (in.gcount() != static_cast<std::streamsize>(manifest_len))
    throw IoError("truncated checkpoint manifest");

  json manifest = json::parse(manifest_text, nullptr, false);
  if (manifest.is_discarded()) throw IoError("checkpoint manifest is not valid JSON");
  for (const char* key : {"format", "backbone", "placement", "head", "seed", "tensors"}) {
    if (!manifest.contains(key))
      throw IoError(std::string("checkpoint manifest missing field: ") + key);
  }
  if (manifest.at("format").get<int>() != 1)
    throw IoError("unsupported checkpoint format version");

  BackboneSpec backbone = backbone_from_json(manifest.at("backbone"));
  SpmPlacement placement = placement_from_json(manifest.at("placement"));
  HeadSpec head = head_from_json(manifest.at("head"));
  std::uint64_t seed = manifest.at("seed").get<std::uint64_t>();
  auto net = build_spnet(backbone, placement, head, seed);

  // Read the packed tensor section in directory order, keyed by name.
  const json& directory = manifest.at("tensors");
  if (!directory.is_array()) throw IoError("checkpoint tensor directory is not an array");
  std::unordered_map<std::string, Tensor> loaded;
  std::vector<std::string> file_order;
  for (const json& entry : directory) {
    if (!entry.contains("name") || !entry.contains("shape") || !entry.contains("offset"))
      throw IoError("checkpoint tensor entry missing name/shape/offset");
    std::string name = entry.at("name").get<std::string>();
    Tensor t = read_spt1(in);
    if (t.shape != entry.at("shape").get<std::vector<int>>())
      throw IoError("checkpoint tensor '" + name +
                    "': directory shape disagrees with stored record");
    if (!loaded.emplace(name, std::move(t)).second)
      throw IoError("checkpoint tensor '" + name + "' appears twice");
    file_order.push_back(std::move(name));
  }

  // Install by name; the first mismatch in the network's own parameter order
  // is reported by tensor name.
  ParamMap params = net->params();
  std::vector<NamedTensor> expected = checkpoint_tensors(params);
  for (const NamedTensor& nt : expected) {
    auto it = loaded.find(nt.name);
    if (it == loaded.end())
      throw IoError("checkpoint tensor '" + nt.name + "' is missing");
    if (it->second.shape != nt.tensor->shape)
      throw IoError("checkpoint tensor '" + nt.name + "': shape mismatch (expected " +
                    shape_str(nt.tensor->shape) + ", found " +
                    shape_str(it->second.shape) + ")");
  }
  if (loaded.size() != expected.size()) {
    std::unordered_map<std::string, bool> known;
    for (const NamedTensor& nt : expected) known[nt.name] = true;
    for (const std::string& name : file_order) {
      if (!known.count(name))
        throw IoError("checkpoint tensor '" + name + "' is not part of this network");
    }
  }
  for (auto& [name, var] : params.trainable) var->value = loaded.at(name);
  for (auto& [name, buf] : params.buffers) *buf = loaded.at(name);
  return net;
}

// ---- PGM -------------------------------------------------------------------

void write_pgm(const std::string& path, const LabelMap& labels, int batch_index) {
  if (labels.h <= 0 || labels.w <= 0) throw ConfigError("pgm: empty label map");
  if (batch_index < 0 || batch_index >= labels.n)
    throw ConfigError("pgm: batch index out of range");
  atomic_write_file(path, [&](std::ostream& out) {
    out << "P5\n" << labels.w << " " << labels.h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(labels.w));
    for (int i = 0; i < labels.h; ++i) {
      for (int j = 0; j < labels.w; ++j) {
        std::int32_t v = labels.at(batch_index, i, j);
        if (v < 0 || v > 255)
          throw ConfigError("pgm: label value out of byte range at (" +
                            std::to_string(i) + "," + std::to_string(j) + ")");
        row[static_cast<std::size_t>(j)] = static_cast<unsigned char>(v);
      }
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
    }
  });
}

LabelMap read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  std::string tag;
  in >> tag;
  if (tag != "P5") throw IoError("bad image magic (expected P5): " + path);
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0) throw IoError("bad image header: " + path);
  if (maxval != 255) throw IoError("unsupported image maxval (expected 255): " + path);
  in.get();  // the single whitespace byte after the header
  LabelMap labels(1, h, w);
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw IoError("truncated image payload: " + path);
  for (std::size_t i = 0; i < raw.size(); ++i)
    labels.data[i] = static_cast<std::int32_t>(raw[i]);
  return labels;
}

}  // namespace spnet
