// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "drat/tensor.hpp"

namespace drat {

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

// TNSR layout (little-endian): "TNSR", u32 version = 1, u32 ndim,
// ndim x u64 dims, u8 dtype code, row-major payload.
std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype = DType::F64);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::F64);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace drat
