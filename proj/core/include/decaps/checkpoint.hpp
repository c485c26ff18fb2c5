#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>

#include "decaps/model.hpp"
#include "decaps/rng.hpp"

namespace decaps {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[] = "DCAPS1\n";

struct CheckpointInfo {
  std::size_t epoch = 0;
  Rng::State rng{};
};

/// Layout: the magic line, a little-endian u64 manifest length, a JSON
/// manifest (config, epoch, rng state, and name/dtype/shape/offset for every
/// tensor), then the little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path, DecapsModel& model, const CheckpointInfo& info);

struct LoadedCheckpoint {
  DecapsModel model;
  CheckpointInfo info;
};

/// Rejects files with a wrong magic, malformed manifest, tensors that do not
/// match the stored config, or a payload of the wrong length. When `expected`
/// is given, its architecture must equal the stored one.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<ModelConfig>& expected = std::nullopt);

/// Stored config only, without materializing weights.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace decaps
