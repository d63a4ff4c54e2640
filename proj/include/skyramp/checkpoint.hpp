#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skyramp/tensor.hpp"

namespace skyramp::io {

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

// Binary checkpoint: magic "SKYR", u32 version, u32 entry count; per entry
// u16 name length + UTF-8 name, u8 ndim, u32 dims, then f32 little-endian
// data. Bit-exact across platforms.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries,
                     std::uint32_t version = 1);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

void save_params(const std::string& path, const num::ParamStore<float>& store);
// Requires every checkpoint entry to match a registered parameter by name and
// shape; every parameter must be present exactly once.
void load_params(const std::string& path, num::ParamStore<float>& store);

} // namespace skyramp::io
