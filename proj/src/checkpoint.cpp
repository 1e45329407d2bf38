#include "dwtk/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dwtk {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

nlohmann::json to_json(const ModelConfig& c) {
  return {{"enc_layers", c.enc_layers},
          {"dec_layers", c.dec_layers},
          {"width", c.width},
          {"heads", c.heads},
          {"vocab", c.vocab},
          {"max_positions", c.max_positions},
          {"input_dim", c.input_dim},
          {"max_source_positions", c.max_source_positions},
          {"ffn_width", c.ffn_width},
          {"downsample", ModelConfig::downsample}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.width = j.at("width").get<int>();
    c.heads = j.at("heads").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.input_dim = j.at("input_dim").get<int>();
    c.max_source_positions = j.at("max_source_positions").get<int>();
    c.ffn_width = j.at("ffn_width").get<int>();
    if (j.contains("downsample") && j.at("downsample").get<int>() != ModelConfig::downsample) {
      throw ValidationError("unsupported downsample factor");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write " + tmp);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw RuntimeError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw RuntimeError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["config"] = to_json(params.config);
  header["tensors"] = nlohmann::json::array();
  std::string data;
  for (const auto& t : tensors(params)) {
    header["tensors"].push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", data.size()}});
    data.append(reinterpret_cast<const char*>(t.values.data()), t.values.size_bytes());
  }
  const std::string header_text = header.dump();
  const auto header_size = static_cast<std::uint64_t>(header_text.size());

  std::string blob(kCheckpointMagic, 5);
  blob.append(reinterpret_cast<const char*>(&header_size), sizeof(header_size));
  blob += header_text;
  blob += data;
  write_file_atomic(path, blob);
}

ModelParams load_checkpoint(const std::string& path) {
  const std::string blob = read_file(path);
  if (blob.size() < 13 || std::memcmp(blob.data(), kCheckpointMagic, 5) != 0) {
    throw ValidationError(path + ": not a DWTK1 checkpoint");
  }
  std::uint64_t header_size = 0;
  std::memcpy(&header_size, blob.data() + 5, sizeof(header_size));
  if (13 + header_size > blob.size()) throw ValidationError(path + ": truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(13, header_size));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": malformed checkpoint header: " + e.what());
  }
  if (header.value("version", -1) != kCheckpointVersion) {
    throw ValidationError(path + ": checkpoint version mismatch");
  }
  ModelParams params = zero_params(model_config_from_json(header.at("config")));
  const std::size_t data_start = 13 + header_size;

  auto expected = tensors(params);
  const auto& table = header.at("tensors");
  if (table.size() != expected.size()) throw ValidationError(path + ": tensor table does not match config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& entry = table[i];
    auto& t = expected[i];
    if (entry.at("name").get<std::string>() != t.name || entry.at("shape")[0].get<Eigen::Index>() != t.rows ||
        entry.at("shape")[1].get<Eigen::Index>() != t.cols) {
      throw ValidationError(path + ": unexpected tensor " + entry.at("name").get<std::string>());
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    if (data_start + offset + t.values.size_bytes() > blob.size()) {
      throw ValidationError(path + ": tensor data out of bounds");
    }
    std::memcpy(t.values.data(), blob.data() + data_start + offset, t.values.size_bytes());
  }
  return params;
}

}  // namespace dwtk
