#include "decaps/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"

namespace decaps {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

using nlohmann::json;

constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic) - 1;

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open checkpoint");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct Parsed {
  json manifest;
  std::size_t payload_offset = 0;
};

Parsed parse_header(const std::string& data, const std::filesystem::path& path) {
  if (data.size() < kMagicSize || data.compare(0, kMagicSize, kCheckpointMagic) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint or unknown version (bad magic)");
  }
  if (data.size() < kMagicSize + 8) throw CheckpointError(path.string() + ": truncated manifest length");
  std::uint64_t len = 0;
  std::memcpy(&len, data.data() + kMagicSize, 8);
  const std::size_t start = kMagicSize + 8;
  if (len > data.size() - start) throw CheckpointError(path.string() + ": truncated manifest");
  Parsed p;
  try {
    p.manifest = json::parse(data.begin() + static_cast<long>(start),
                             data.begin() + static_cast<long>(start + len));
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed manifest: " + e.what());
  }
  p.payload_offset = start + len;
  return p;
}

ModelConfig config_from(const json& manifest, const std::filesystem::path& path) {
  ModelConfig cfg;
  try {
    for (const auto& [key, value] : manifest.at("config").items()) {
      if (!cfg.set(key, value.get<std::string>())) {
        throw CheckpointError(path.string() + ": unknown config key '" + key + "' in manifest");
      }
    }
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed manifest config: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, DecapsModel& model, const CheckpointInfo& info) {
  json manifest;
  manifest["format"] = "decaps-checkpoint";
  manifest["version"] = 1;
  json cfg = json::object();
  for (const auto& [k, v] : model.config().to_key_values()) cfg[k] = v;
  manifest["config"] = cfg;
  manifest["epoch"] = info.epoch;
  manifest["rng"] = json::array();
  for (auto s : info.rng) manifest["rng"].push_back(std::to_string(s));

  const auto entries = model.state();
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& e : entries) {
    tensors.push_back({{"name", e.name}, {"dtype", "f64"}, {"shape", e.shape}, {"offset", offset}});
    offset += e.data.size() * sizeof(double);
  }
  manifest["tensors"] = tensors;
  manifest["payload_bytes"] = offset;

  const std::string text = manifest.dump();
  const std::uint64_t len = text.size();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(tmp.string() + ": cannot open for writing");
    out.write(kCheckpointMagic, kMagicSize);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : entries) {
      out.write(reinterpret_cast<const char*>(e.data.data()), static_cast<std::streamsize>(e.data.size_bytes()));
    }
    if (!out) throw CheckpointError(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  const std::string data = read_all(path);
  return config_from(parse_header(data, path).manifest, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  const std::string data = read_all(path);
  const Parsed parsed = parse_header(data, path);
  const json& m = parsed.manifest;
  ModelConfig cfg = config_from(m, path);
  if (expected && !expected->same_architecture(cfg)) {
    throw CheckpointError(path.string() + ": checkpoint config does not match the run config");
  }

  CheckpointInfo info;
  std::vector<json> tensors;
  std::size_t payload_bytes = 0;
  try {
    if (m.at("version").get<int>() != 1) throw CheckpointError(path.string() + ": unsupported checkpoint version");
    info.epoch = m.at("epoch").get<std::size_t>();
    const auto& rng = m.at("rng");
    if (!rng.is_array() || rng.size() != info.rng.size()) throw CheckpointError(path.string() + ": bad rng state");
    for (std::size_t i = 0; i < info.rng.size(); ++i) info.rng[i] = std::stoull(rng[i].get<std::string>());
    tensors = m.at("tensors").get<std::vector<json>>();
    payload_bytes = m.at("payload_bytes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed manifest: " + e.what());
  } catch (const std::logic_error& e) {
    throw CheckpointError(path.string() + ": malformed manifest: " + e.what());
  }

  const std::size_t available = data.size() - parsed.payload_offset;
  if (available != payload_bytes) {
    throw CheckpointError(path.string() + ": payload is " + std::to_string(available) + " bytes, manifest says " +
                          std::to_string(payload_bytes));
  }

  DecapsModel model(cfg);
  auto entries = model.state();
  if (entries.size() != tensors.size()) {
    throw CheckpointError(path.string() + ": manifest lists " + std::to_string(tensors.size()) +
                          " tensors, model has " + std::to_string(entries.size()));
  }
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& t = tensors[i];
    auto& e = entries[i];
    try {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      if (name != e.name) throw CheckpointError(path.string() + ": tensor " + name + " where " + e.name + " expected");
      if (t.at("dtype").get<std::string>() != "f64") throw CheckpointError(path.string() + ": " + name + " is not f64");
      if (shape != e.shape) {
        throw CheckpointError(path.string() + ": tensor " + name + " has shape " + to_string(shape) + ", expected " +
                              to_string(e.shape));
      }
      if (offset != expected_offset) throw CheckpointError(path.string() + ": tensor " + name + " has a bad offset");
    } catch (const json::exception& ex) {
      throw CheckpointError(path.string() + ": malformed tensor entry: " + ex.what());
    }
    if (expected_offset + e.data.size_bytes() > payload_bytes) {
      throw CheckpointError(path.string() + ": tensor " + e.name + " runs past the payload");
    }
    std::memcpy(e.data.data(), data.data() + parsed.payload_offset + expected_offset, e.data.size_bytes());
    expected_offset += e.data.size_bytes();
  }
  if (expected_offset != payload_bytes) throw CheckpointError(path.string() + ": payload has trailing bytes");
  return {std::move(model), info};
}

}  // namespace decaps
