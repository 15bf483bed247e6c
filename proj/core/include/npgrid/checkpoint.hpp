#pragma once

// Versioned model snapshots stored in the GBCN container.

#include <cstdint>
#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "npgrid/container.hpp"
#include "npgrid/models.hpp"

namespace npgrid {

inline constexpr int kCheckpointFormatVersion = 1;

/// Adam moments keyed like the parameters, plus the step counter.
struct AdamState {
  ParamMap m;
  ParamMap v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamMap& params);
};

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  ModelConfig model;
  nlohmann::json config = nlohmann::json::object();  // full run configuration snapshot
  ParamMap params;
  AdamState optimizer;
  std::uint64_t epoch = 0;
  std::optional<double> best_val_ll;
};

Container to_container(const Checkpoint& checkpoint);
/// Throws FormatError if the container is not a checkpoint of a supported version.
Checkpoint from_container(const Container& container);

/// Writes through a temporary file and a rename, so an interrupted write
/// never clobbers an existing checkpoint.
void persist_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint restore_checkpoint(const std::filesystem::path& path);

}  // namespace npgrid
