#include "npgrid/checkpoint.hpp"

#include <string_view>

#include "npgrid/errors.hpp"

namespace npgrid {

namespace {

constexpr std::string_view kParamPrefix = "param/";
constexpr std::string_view kAdamMPrefix = "adam_m/";
constexpr std::string_view kAdamVPrefix = "adam_v/";

bool strip_prefix(std::string_view name, std::string_view prefix, std::string& rest) {
  if (name.substr(0, prefix.size()) != prefix) return false;
  rest = std::string(name.substr(prefix.size()));
  return true;
}

}  // namespace

AdamState AdamState::zeros_like(const ParamMap& params) {
  AdamState s;
  for (const auto& [name, value] : params) {
    s.m[name] = NdArray(value.shape(), 0.0);
    s.v[name] = NdArray(value.shape(), 0.0);
  }
  return s;
}

Container to_container(const Checkpoint& ck) {
  Container c;
  c.metadata = {{"kind", "checkpoint"},
                {"format_version", ck.format_version},
                {"model", ck.model.to_json()},
                {"config", ck.config},
                {"epoch", ck.epoch},
                {"adam_step", ck.optimizer.step},
                {"best_val_ll", ck.best_val_ll ? nlohmann::json(*ck.best_val_ll) : nlohmann::json()}};
  for (const auto& [name, value] : ck.params) c.arrays.emplace_back(std::string(kParamPrefix) + name, value);
  for (const auto& [name, value] : ck.optimizer.m) c.arrays.emplace_back(std::string(kAdamMPrefix) + name, value);
  for (const auto& [name, value] : ck.optimizer.v) c.arrays.emplace_back(std::string(kAdamVPrefix) + name, value);
  return c;
}

Checkpoint from_container(const Container& c) {
  const auto& meta = c.metadata;
  if (!meta.is_object() || meta.value("kind", "") != "checkpoint") {
    throw FormatError("container does not hold a checkpoint");
  }
  Checkpoint ck;
  try {
    ck.format_version = meta.at("format_version").get<int>();
    if (ck.format_version != kCheckpointFormatVersion) {
      throw FormatError("unsupported checkpoint format version " +
                        std::to_string(ck.format_version) + " (this build reads version " +
                        std::to_string(kCheckpointFormatVersion) + ")");
    }
    ck.model = ModelConfig::from_json(meta.at("model"));
    ck.config = meta.at("config");
    ck.epoch = meta.at("epoch").get<std::uint64_t>();
    ck.optimizer.step = meta.at("adam_step").get<std::uint64_t>();
    if (!meta.at("best_val_ll").is_null()) ck.best_val_ll = meta.at("best_val_ll").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  for (const auto& [name, value] : c.arrays) {
    std::string rest;
    if (strip_prefix(name, kParamPrefix, rest)) {
      ck.params[rest] = value;
    } else if (strip_prefix(name, kAdamMPrefix, rest)) {
      ck.optimizer.m[rest] = value;
    } else if (strip_prefix(name, kAdamVPrefix, rest)) {
      ck.optimizer.v[rest] = value;
    } else {
      throw FormatError("unexpected checkpoint array '" + name + "'");
    }
  }
  return ck;
}

void persist_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_container(tmp, to_container(checkpoint));
  std::filesystem::rename(tmp, path);
}

Checkpoint restore_checkpoint(const std::filesystem::path& path) {
  return from_container(read_container(path));
}

}  // namespace npgrid
