#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "iris/optim.hpp"
#include "iris/params.hpp"

namespace iris {

struct Checkpoint {
  ParamSet params;
  std::optional<OptState> state;
  std::map<std::string, std::string> meta;
};

// Layout: one line "iris-checkpoint <version> <header bytes>", a JSON header listing every
// tensor name and shape in order, then the raw little-endian float32 data of those tensors.
// Optimizer moments are stored as tensors named "opt.m/<param>", "opt.v/<param>", "opt.v_hat/<param>".
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const OptState* state = nullptr,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace iris
