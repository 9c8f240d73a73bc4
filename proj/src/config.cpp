#include "spnet/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {
namespace {

// ---- strict-schema helpers -------------------------------------------------
// Every object is parsed against a closed field list: unknown fields and
// missing fields are both hard errors, and the message names the field with
// its dotted path. Keeping all fields mandatory is what makes
// parse -> serialize -> parse a fixed point.

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw ConfigError(path + ": " + why);
}

void check_object(const json& j, const std::string& path,
                  std::initializer_list<const char*> keys) {
  if (!j.is_object()) fail(path, "expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) fail(path + "." + it.key(), "unknown field");
  }
  for (const char* k : keys) {
    if (!j.contains(k)) fail(path + "." + k, "missing required field");
  }
}

int get_int(const json& j, const std::string& path, const char* key) {
  const json& v = j.at(key);
  if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
  return v.get<int>();
}

double get_double(const json& j, const std::string& path, const char* key) {
  const json& v = j.at(key);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  return v.get<double>();
}

bool get_bool(const json& j, const std::string& path, const char* key) {
  const json& v = j.at(key);
  if (!v.is_boolean()) fail(path + "." + key, "expected a boolean");
  return v.get<bool>();
}

std::string get_string(const json& j, const std::string& path, const char* key) {
  const json& v = j.at(key);
  if (!v.is_string()) fail(path + "." + key, "expected a string");
  return v.get<std::string>();
}

std::uint64_t get_u64(const json& j, const std::string& path, const char* key) {
  const json& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    fail(path + "." + key, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

std::vector<int> get_int_array(const json& j, const std::string& path, const char* key) {
  const json& v = j.at(key);
  if (!v.is_array()) fail(path + "." + key, "expected an array of integers");
  std::vector<int> out;
  out.reserve(v.size());
  for (const json& e : v) {
    if (!e.is_number_integer()) fail(path + "." + key, "expected an array of integers");
    out.push_back(e.get<int>());
  }
  return out;
}

// ---- enum <-> string -------------------------------------------------------

const char* gate_name(GateKind g) {
  return g == GateKind::Strip ? "strip" : "global";
}

GateKind gate_from_name(const std::string& s, const std::string& path) {
  if (s == "strip") return GateKind::Strip;
  if (s == "global") return GateKind::Global;
  fail(path, "unknown gate kind '" + s + "' (expected strip|global)");
}

const char* branches_name(MpmBranches b) {
  switch (b) {
    case MpmBranches::SrdOnly: return "srd-only";
    case MpmBranches::LrdOnly: return "lrd-only";
    default: return "both";
  }
}

MpmBranches branches_from_name(const std::string& s, const std::string& path) {
  if (s == "both") return MpmBranches::Both;
  if (s == "srd-only") return MpmBranches::SrdOnly;
  if (s == "lrd-only") return MpmBranches::LrdOnly;
  fail(path, "unknown branch selection '" + s + "' (expected both|srd-only|lrd-only)");
}

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::Background: return "background";
    case ShapeFamily::HorizontalBand: return "horizontal-band";
    case ShapeFamily::VerticalBand: return "vertical-band";
    case ShapeFamily::BlobsAligned: return "blobs-aligned";
    case ShapeFamily::SquareBlob: return "square-blob";
  }
  return "background";
}

ShapeFamily family_from_name(const std::string& s, const std::string& path) {
  if (s == "background") return ShapeFamily::Background;
  if (s == "horizontal-band") return ShapeFamily::HorizontalBand;
  if (s == "vertical-band") return ShapeFamily::VerticalBand;
  if (s == "blobs-aligned") return ShapeFamily::BlobsAligned;
  if (s == "square-blob") return ShapeFamily::SquareBlob;
  fail(path, "unknown shape family '" + s + "'");
}

}  // namespace

// ---- per-struct converters -------------------------------------------------

json backbone_to_json(const BackboneSpec& spec) {
  return json{{"stage_widths", spec.stage_widths},
              {"blocks_per_stage", spec.blocks_per_stage},
              {"dilation_per_stage", spec.dilation_per_stage},
              {"stem_width", spec.stem_width}};
}

BackboneSpec backbone_from_json(const json& j) {
  const std::string path = "backbone";
  check_object(j, path,
               {"stage_widths", "blocks_per_stage", "dilation_per_stage", "stem_width"});
  BackboneSpec spec;
  spec.stage_widths = get_int_array(j, path, "stage_widths");
  spec.blocks_per_stage = get_int_array(j, path, "blocks_per_stage");
  spec.dilation_per_stage = get_int_array(j, path, "dilation_per_stage");
  spec.stem_width = get_int(j, path, "stem_width");
  return spec;
}

json placement_to_json(const SpmPlacement& spec) {
  return json{{"last_block_per_stage", spec.last_block_per_stage},
              {"all_blocks_last_stage", spec.all_blocks_last_stage},
              {"gate", gate_name(spec.gate)}};
}

SpmPlacement placement_from_json(const json& j) {
  const std::string path = "placement";
  check_object(j, path, {"last_block_per_stage", "all_blocks_last_stage", "gate"});
  SpmPlacement spec;
  spec.last_block_per_stage = get_bool(j, path, "last_block_per_stage");
  spec.all_blocks_last_stage = get_bool(j, path, "all_blocks_last_stage");
  spec.gate = gate_from_name(get_string(j, path, "gate"), path + ".gate");
  return spec;
}

json head_to_json(const HeadSpec& spec) {
  return json{{"neck_width", spec.neck_width},
              {"mpm_count", spec.mpm_count},
              {"num_classes", spec.num_classes},
              {"mpm_branches", branches_name(spec.mpm_branches)},
              {"aux_attach_stage", spec.aux_attach_stage},
              {"aux_width", spec.aux_width}};
}

HeadSpec head_from_json(const json& j) {
  const std::string path = "head";
  check_object(j, path,
               {"neck_width", "mpm_count", "num_classes", "mpm_branches",
                "aux_attach_stage", "aux_width"});
  HeadSpec spec;
  spec.neck_width = get_int(j, path, "neck_width");
  spec.mpm_count = get_int(j, path, "mpm_count");
  spec.num_classes = get_int(j, path, "num_classes");
  spec.mpm_branches =
      branches_from_name(get_string(j, path, "mpm_branches"), path + ".mpm_branches");
  spec.aux_attach_stage = get_int(j, path, "aux_attach_stage");
  spec.aux_width = get_int(j, path, "aux_width");
  return spec;
}

json train_to_json(const TrainConfig& cfg) {
  return json{{"base_lr", cfg.base_lr},
              {"power", cfg.power},
              {"max_iter", cfg.max_iter},
              {"momentum", cfg.momentum},
              {"weight_decay", cfg.weight_decay},
              {"aux_weight", cfg.aux_weight},
              {"batch_size", cfg.batch_size},
              {"crop", cfg.crop},
              {"scale_min", cfg.scale_min},
              {"scale_max", cfg.scale_max},
              {"flip_prob", cfg.flip_prob},
              {"seed", cfg.seed}};
}

TrainConfig train_from_json(const json& j) {
  const std::string path = "train";
  check_object(j, path,
               {"base_lr", "power", "max_iter", "momentum", "weight_decay", "aux_weight",
                "batch_size", "crop", "scale_min", "scale_max", "flip_prob", "seed"});
  TrainConfig cfg;
  cfg.base_lr = get_double(j, path, "base_lr");
  cfg.power = get_double(j, path, "power");
  cfg.max_iter = get_int(j, path, "max_iter");
  cfg.momentum = get_double(j, path, "momentum");
  cfg.weight_decay = get_double(j, path, "weight_decay");
  cfg.aux_weight = get_double(j, path, "aux_weight");
  cfg.batch_size = get_int(j, path, "batch_size");
  cfg.crop = get_int(j, path, "crop");
  cfg.scale_min = get_double(j, path, "scale_min");
  cfg.scale_max = get_double(j, path, "scale_max");
  cfg.flip_prob = get_double(j, path, "flip_prob");
  cfg.seed = get_u64(j, path, "seed");
  return cfg;
}

json scene_to_json(const SyntheticSceneSpec& spec) {
  json families = json::array();
  for (ShapeFamily f : spec.families) families.push_back(family_name(f));
  return json{{"canvas", spec.canvas},
              {"num_classes", spec.num_classes},
              {"families", std::move(families)},
              {"noise", spec.noise},
              {"inclusion_prob", spec.inclusion_prob},
              {"seed", spec.seed}};
}

SyntheticSceneSpec scene_from_json(const json& j) {
  const std::string path = "scene";
  check_object(j, path,
               {"canvas", "num_classes", "families", "noise", "inclusion_prob", "seed"});
  SyntheticSceneSpec spec;
  spec.canvas = get_int(j, path, "canvas");
  spec.num_classes = get_int(j, path, "num_classes");
  const json& fams = j.at("families");
  if (!fams.is_array()) fail(path + ".families", "expected an array of strings");
  spec.families.clear();
  for (std::size_t i = 0; i < fams.size(); ++i) {
    const json& e = fams[i];
    if (!e.is_string()) fail(path + ".families", "expected an array of strings");
    spec.families.push_back(family_from_name(
        e.get<std::string>(), path + ".families[" + std::to_string(i) + "]"));
  }
  spec.noise = static_cast<float>(get_double(j, path, "noise"));
  spec.inclusion_prob = static_cast<float>(get_double(j, path, "inclusion_prob"));
  spec.seed = get_u64(j, path, "seed");
  return spec;
}

void RunConfig::validate() const {
  backbone.validate();
  placement.validate();
  head.validate();
  train.validate();
  scene.validate();
  if (head.num_classes != scene.num_classes)
    throw ConfigError("head.num_classes: must match scene.num_classes");
  if (train_samples < 1) throw ConfigError("train_samples: must be >= 1");
  if (eval_samples < 1) throw ConfigError("eval_samples: must be >= 1");
  if (train.crop > scene.canvas * 2)
    throw ConfigError("train.crop: larger than twice the scene canvas");
}

json run_config_to_json(const RunConfig& cfg) {
  return json{{"backbone", backbone_to_json(cfg.backbone)},
              {"placement", placement_to_json(cfg.placement)},
              {"head", head_to_json(cfg.head)},
              {"train", train_to_json(cfg.train)},
              {"scene", scene_to_json(cfg.scene)},
              {"train_samples", cfg.train_samples},
              {"eval_samples", cfg.eval_samples}};
}

RunConfig run_config_from_json(const json& j) {
  const std::string path = "config";
  check_object(j, path,
               {"backbone", "placement", "head", "train", "scene", "train_samples",
                "eval_samples"});
  RunConfig cfg;
  cfg.backbone = backbone_from_json(j.at("backbone"));
  cfg.placement = placement_from_json(j.at("placement"));
  cfg.head = head_from_json(j.at("head"));
  cfg.train = train_from_json(j.at("train"));
  cfg.scene = scene_from_json(j.at("scene"));
  cfg.train_samples = get_int(j, path, "train_samples");
  cfg.eval_samples = get_int(j, path, "eval_samples");
  cfg.validate();
  return cfg;
}

json parse_json_text(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError(what + ": invalid JSON");
  return j;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return run_config_from_json(parse_json_text(buf.str(), path));
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open config file for writing: " + path);
  out << run_config_to_json(cfg).dump(2) << "\n";
  if (!out) throw IoError("failed to write config file: " + path);
}

// ---- presets ---------------------------------------------------------------

const char* const kPresetNames[7] = {"base-fcn", "1mpm",     "2mpm",       "2mpm+spm",
                                     "srd-only", "lrd-only", "se-baseline"};

namespace {

/// Shared miniature scaffold for every preset: all presets see the same
/// corpus recipe and schedule so that the only varying factor is the module
/// configuration under study.
RunConfig preset_base() {
  RunConfig cfg;
  cfg.backbone.stage_widths = {8, 16, 24, 32};
  cfg.backbone.blocks_per_stage = {1, 1, 1, 1};
  cfg.backbone.dilation_per_stage = {1, 2, 2, 1};
  cfg.backbone.stem_width = 8;

  cfg.placement.last_block_per_stage = false;
  cfg.placement.all_blocks_last_stage = false;
  cfg.placement.gate = GateKind::Strip;

  cfg.head.neck_width = 16;
  cfg.head.mpm_count = 0;
  cfg.head.num_classes = 6;
  cfg.head.mpm_branches = MpmBranches::Both;
  cfg.head.aux_attach_stage = 3;
  cfg.head.aux_width = 0;

  cfg.train = TrainConfig{};
  cfg.train.base_lr = 0.02;
  cfg.train.max_iter = 1200;
  cfg.train.batch_size = 4;
  cfg.train.crop = 80;
  cfg.train.scale_min = 1.0;
  cfg.train.scale_max = 1.0;
  cfg.train.seed = 7;

  cfg.scene = default_scene_spec();
  cfg.scene.canvas = 80;
  cfg.scene.seed = 11;
  cfg.train_samples = 48;
  cfg.eval_samples = 24;
  return cfg;
}

}  // namespace

RunConfig preset_run_config(const std::string& preset) {
  RunConfig cfg = preset_base();
  if (preset == "base-fcn") {
    // plain FCN: no SPM, no MPM
  } else if (preset == "1mpm") {
    cfg.head.mpm_count = 1;
  } else if (preset == "2mpm") {
    cfg.head.mpm_count = 2;
  } else if (preset == "2mpm+spm") {
    cfg.head.mpm_count = 2;
    cfg.placement.last_block_per_stage = true;
    cfg.placement.all_blocks_last_stage = true;
  } else if (preset == "srd-only") {
    cfg.head.mpm_count = 2;
    cfg.head.mpm_branches = MpmBranches::SrdOnly;
  } else if (preset == "lrd-only") {
    cfg.head.mpm_count = 2;
    cfg.head.mpm_branches = MpmBranches::LrdOnly;
  } else if (preset == "se-baseline") {
    cfg.head.mpm_count = 2;
    cfg.placement.last_block_per_stage = true;
    cfg.placement.all_blocks_last_stage = true;
    cfg.placement.gate = GateKind::Global;
  } else {
    throw ConfigError("preset: unknown preset '" + preset + "'");
  }
  cfg.validate();
  return cfg;
}

RunConfig full_width_audit_config() {
  RunConfig cfg = preset_base();
  cfg.backbone.stage_widths = {256, 512, 1024, 2048};
  cfg.backbone.blocks_per_stage = {3, 4, 6, 3};
  cfg.backbone.stem_width = 64;
  cfg.placement.last_block_per_stage = true;
  cfg.placement.all_blocks_last_stage = true;
  cfg.head.neck_width = 1024;
  cfg.head.mpm_count = 2;
  cfg.validate();
  return cfg;
}

}  // namespace spnet
