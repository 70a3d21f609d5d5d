#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ctx/tensor.hpp"

namespace ctx {

/// One named tensor in checkpoint order.
struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Writes a .ctckpt file: an 8-byte little-endian JSON header length, the JSON
/// header listing (name, shape, byte offset) per tensor plus an optional
/// config block, then the concatenated little-endian float32 payloads.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const std::string& config_json = "");

struct Checkpoint {
    std::vector<NamedTensor> tensors;
    std::string config_json;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ctx
