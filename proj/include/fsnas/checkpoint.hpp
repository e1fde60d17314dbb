#pragma once

#include <cstdint>
#include <string>

#include "fsnas/supernet.hpp"

namespace fsnas::net {

// Checkpoint = <prefix>.json manifest (space, plan, tensor index with shapes
// and byte offsets) + <prefix>.bin blob of little-endian f32 tensors in
// manifest order. Bit-exact across save/load.
void save_checkpoint(const std::string& prefix, SuperNet& net);
SuperNet load_checkpoint(const std::string& prefix);

std::uint64_t checkpoint_content_hash(const std::string& prefix);

}  // namespace fsnas::net
