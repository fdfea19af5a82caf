#pragma once

#include <filesystem>

#include "btr/nn/param_store.hpp"
#include "json.hpp"

namespace btr::nn {

// Container layout: one line of JSON manifest (names, shapes, byte offsets
// into the payload, plus caller metadata) terminated by '\n', followed by
// the concatenated little-endian IEEE-754 float64 payload.

struct Checkpoint {
  ParamStore params;
  nlohmann::json meta;
};

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace btr::nn
