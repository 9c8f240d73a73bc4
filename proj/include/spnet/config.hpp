#pragma once

#include <string>

#include <json.hpp>

#include "spnet/data.hpp"
#include "spnet/net.hpp"
#include "spnet/train.hpp"

namespace spnet {

using json = nlohmann::json;

/// Everything one run needs: network specs, schedule, and the synthetic
/// corpus recipe. Serialized as a single strict JSON document — unknown or
/// missing fields are rejected with the offending field named.
struct RunConfig {
  BackboneSpec backbone;
  SpmPlacement placement;
  HeadSpec head;
  TrainConfig train;
  SyntheticSceneSpec scene;
  int train_samples = 24;
  int eval_samples = 12;

  void validate() const;
};

json backbone_to_json(const BackboneSpec& spec);
BackboneSpec backbone_from_json(const json& j);
json placement_to_json(const SpmPlacement& spec);
SpmPlacement placement_from_json(const json& j);
json head_to_json(const HeadSpec& spec);
HeadSpec head_from_json(const json& j);
json train_to_json(const TrainConfig& cfg);
TrainConfig train_from_json(const json& j);
json scene_to_json(const SyntheticSceneSpec& spec);
SyntheticSceneSpec scene_from_json(const json& j);
json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const json& j);

/// Parses a JSON document from text; parse failures raise ConfigError.
json parse_json_text(const std::string& text, const std::string& what);

/// Reads and parses a config file (I/O failures raise IoError).
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);

/// The seven ablation presets, mapped one-to-one onto the reference
/// configurations: base-fcn, 1mpm, 2mpm, 2mpm+spm, srd-only, lrd-only,
/// se-baseline. Unknown names are rejected.
extern const char* const kPresetNames[7];
RunConfig preset_run_config(const std::string& preset);

/// The full-width parameter-audit spec (never trained): stage widths
/// 256..2048, neck 1024, two mixed pooling modules.
RunConfig full_width_audit_config();

}  // namespace spnet
