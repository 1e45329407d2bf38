#pragma once

#include "dwtk/model.hpp"

#include <json.hpp>

#include <string>

namespace dwtk {

/// Layout: the 5 magic bytes "DWTK1", a little-endian u64 header length, a
/// JSON header {"version", "config", "tensors": [{"name", "shape", "offset"}]},
/// then every tensor as little-endian float64 in row-major order. Offsets are
/// bytes from the start of the data section.
inline constexpr char kCheckpointMagic[] = "DWTK1";
inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::string& path, const ModelParams& params);
/// Throws ValidationError on a bad magic string, version, or tensor table.
ModelParams load_checkpoint(const std::string& path);

/// Writes `contents` to path via temp file + rename.
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

}  // namespace dwtk
