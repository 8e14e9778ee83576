#pragma once

#include <map>
#include <string>

#include "grt/attention.hpp"

namespace grt {

// Weight checkpoint: magic "GRTCKPT1", a little-endian u64 header length, a
// JSON header listing named arrays with shapes and offsets, then the flat
// payload of little-endian 64-bit doubles in header order.
inline constexpr char kCheckpointMagic[8] = {'G', 'R', 'T', 'C',
                                             'K', 'P', 'T', '1'};

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const std::map<std::string, std::string>& meta);

// Reads only the meta map from the header.
std::map<std::string, std::string> checkpoint_meta(const std::string& path);

// Loads values into an existing store. Missing parameters or shape
// mismatches raise a checkpoint error.
void load_checkpoint(const std::string& path, ParameterStore& store);

}  // namespace grt
