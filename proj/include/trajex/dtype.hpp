// SPDX-License-Identifier: Apache-2.0
//
// Storage dtypes for checkpoint blobs and the conversions between them and the
// float64 working precision. All narrowing is round-to-nearest-even, computed
// directly from the double (no intermediate float rounding).

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace trajex {

enum class DType { F32, F16, BF16 };

std::size_t dtype_size(DType dtype);

/// On-disk spelling: "f32", "f16", "bf16".
std::string_view dtype_name(DType dtype);
DType parse_dtype(std::string_view name);

std::uint16_t double_to_half_bits(double value);
double half_bits_to_double(std::uint16_t bits);

std::uint16_t double_to_bfloat16_bits(double value);
double bfloat16_bits_to_double(std::uint16_t bits);

/// Rounds `value` to the nearest `dtype` value and widens it back.
double narrow(double value, DType dtype);

/// Serialises `values` as little-endian `dtype` elements into `out`, which must
/// hold exactly values.size() * dtype_size(dtype) bytes.
void encode(std::span<const double> values, DType dtype, std::span<std::byte> out);

/// Inverse of encode(); float32 widens losslessly.
void decode(std::span<const std::byte> bytes, DType dtype, std::span<double> out);

}  // namespace trajex
