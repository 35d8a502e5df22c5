#pragma once

#include <string>

#include "oadis/config.hpp"
#include "oadis/data.hpp"
#include "oadis/model.hpp"

namespace oadis {

struct Checkpoint {
  ModelParams params;
  RunConfig config;
  Vocab vocab;
};

// Checkpoint container: the tensor framing of the feature container plus an
// embedded JSON block carrying the run config and vocabulary.
// Layout: magic "OADC", u32 version=1, u32 json length, json bytes,
// u32 tensor count, then per tensor: u32 name length, name, u32 rank,
// u32 dims[rank], little-endian f32 values.
void save_checkpoint(const std::string& path, ModelParams& params,
                     const RunConfig& config, const Vocab& vocab);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace oadis
