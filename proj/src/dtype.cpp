// SPDX-License-Identifier: Apache-2.0

#include "trajex/dtype.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "trajex/error.hpp"

static_assert(std::endian::native == std::endian::little, "blob encoding assumes a little-endian host");

namespace trajex {

namespace {

struct FormatTraits {
    int precision;  // significand bits including the implicit one
    int min_exp;    // exponent of the smallest normal
    int max_exp;    // exponent of the largest finite
};

constexpr FormatTraits kHalf{11, -14, 15};
constexpr FormatTraits kBfloat{8, -126, 127};

// Slow but general: rounds to the format's grid including subnormals and overflow.
double round_to_format(double x, const FormatTraits& f) {
    if (!std::isfinite(x) || x == 0.0) return x;
    int e = 0;
    std::frexp(x, &e);
    const int exponent = e - 1;
    const int quantum = std::max(exponent, f.min_exp) - (f.precision - 1);
    const double scaled = std::nearbyint(std::ldexp(x, -quantum));
    const double rounded = std::ldexp(scaled, quantum);
    const double max_finite = std::ldexp(2.0 - std::ldexp(1.0, 1 - f.precision), f.max_exp);
    if (std::fabs(rounded) > max_finite) return std::copysign(std::numeric_limits<double>::infinity(), x);
    return rounded;
}

std::uint64_t bits_of(double x) { return std::bit_cast<std::uint64_t>(x); }

// Rounds the 52-bit double mantissa down to `keep` bits with ties to even.
// Returns the adjusted raw bits; the exponent field may have carried.
std::uint64_t round_mantissa(std::uint64_t u, int keep) {
    const int drop = 52 - keep;
    const std::uint64_t lsb = (u >> drop) & 1u;
    const std::uint64_t half_minus_one = (std::uint64_t{1} << (drop - 1)) - 1;
    return u + half_minus_one + lsb;
}

}  // namespace

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::F32: return 4;
        case DType::F16: return 2;
        case DType::BF16: return 2;
    }
    return 0;
}

std::string_view dtype_name(DType dtype) {
    switch (dtype) {
        case DType::F32: return "f32";
        case DType::F16: return "f16";
        case DType::BF16: return "bf16";
    }
    return "?";
}

DType parse_dtype(std::string_view name) {
    if (name == "f32") return DType::F32;
    if (name == "f16") return DType::F16;
    if (name == "bf16") return DType::BF16;
    fail(ErrorKind::InvalidArgument, "unknown dtype '" + std::string(name) + "'");
}

std::uint16_t double_to_half_bits(double value) {
    const std::uint64_t u = bits_of(value);
    const std::uint16_t sign = static_cast<std::uint16_t>((u >> 48) & 0x8000u);
    if (std::isnan(value)) return sign | 0x7E00u;
    const int exponent = static_cast<int>((u >> 52) & 0x7FF) - 1023;
    if (exponent >= kHalf.min_exp && exponent <= kHalf.max_exp) {
        const std::uint64_t r = round_mantissa(u, 10);
        const int e = static_cast<int>((r >> 52) & 0x7FF) - 1023;
        if (e > kHalf.max_exp) return sign | 0x7C00u;
        const auto mant = static_cast<std::uint16_t>((r >> 42) & 0x3FF);
        return sign | static_cast<std::uint16_t>((e + 15) << 10) | mant;
    }
    const double rounded = round_to_format(value, kHalf);
    if (std::isinf(rounded)) return sign | 0x7C00u;
    const double mag = std::fabs(rounded);
    if (mag == 0.0) return sign;
    if (mag < std::ldexp(1.0, kHalf.min_exp)) {
        return sign | static_cast<std::uint16_t>(std::ldexp(mag, 24));
    }
    int e = 0;
    const double m = std::frexp(mag, &e);  // mag = m * 2^e, m in [0.5, 1)
    const auto mant = static_cast<std::uint16_t>(std::ldexp(m, 11) - 1024.0);
    return sign | static_cast<std::uint16_t>((e - 1 + 15) << 10) | mant;
}

double half_bits_to_double(std::uint16_t bits) {
    const double sign = (bits & 0x8000u) ? -1.0 : 1.0;
    const int exp = (bits >> 10) & 0x1F;
    const int mant = bits & 0x3FF;
    if (exp == 0) return sign * std::ldexp(static_cast<double>(mant), -24);
    if (exp == 31) {
        return mant == 0 ? sign * std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
    }
    return sign * std::ldexp(static_cast<double>(1024 + mant), exp - 25);
}

std::uint16_t double_to_bfloat16_bits(double value) {
    const std::uint64_t u = bits_of(value);
    const std::uint16_t sign = static_cast<std::uint16_t>((u >> 48) & 0x8000u);
    if (std::isnan(value)) return sign | 0x7FC0u;
    const int exponent = static_cast<int>((u >> 52) & 0x7FF) - 1023;
    if (exponent >= kBfloat.min_exp && exponent <= kBfloat.max_exp) {
        const std::uint64_t r = round_mantissa(u, 7);
        const int e = static_cast<int>((r >> 52) & 0x7FF) - 1023;
        if (e > kBfloat.max_exp) return sign | 0x7F80u;
        const auto mant = static_cast<std::uint16_t>((r >> 45) & 0x7F);
        return sign | static_cast<std::uint16_t>((e + 127) << 7) | mant;
    }
    // Subnormal, zero, or infinite: the rounded value is exact in float32.
    const double rounded = round_to_format(value, kBfloat);
    const auto f = std::bit_cast<std::uint32_t>(static_cast<float>(rounded));
    return static_cast<std::uint16_t>(f >> 16);
}

double bfloat16_bits_to_double(std::uint16_t bits) {
    return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16));
}

double narrow(double value, DType dtype) {
    switch (dtype) {
        case DType::F32: return static_cast<double>(static_cast<float>(value));
        case DType::F16: return half_bits_to_double(double_to_half_bits(value));
        case DType::BF16: return bfloat16_bits_to_double(double_to_bfloat16_bits(value));
    }
    return value;
}

void encode(std::span<const double> values, DType dtype, std::span<std::byte> out) {
    if (out.size() != values.size() * dtype_size(dtype)) {
        fail(ErrorKind::ShapeMismatch, "encode buffer size does not match element count");
    }
    std::byte* dst = out.data();
    switch (dtype) {
        case DType::F32:
            for (double v : values) {
                const float f = static_cast<float>(v);
                std::memcpy(dst, &f, 4);
                dst += 4;
            }
            break;
        case DType::F16:
            for (double v : values) {
                const std::uint16_t h = double_to_half_bits(v);
                std::memcpy(dst, &h, 2);
                dst += 2;
            }
            break;
        case DType::BF16:
            for (double v : values) {
                const std::uint16_t h = double_to_bfloat16_bits(v);
                std::memcpy(dst, &h, 2);
                dst += 2;
            }
            break;
    }
}

void decode(std::span<const std::byte> bytes, DType dtype, std::span<double> out) {
    if (bytes.size() != out.size() * dtype_size(dtype)) {
        fail(ErrorKind::ShapeMismatch, "decode buffer size does not match element count");
    }
    const std::byte* src = bytes.data();
    switch (dtype) {
        case DType::F32:
            for (double& v : out) {
                float f;
                std::memcpy(&f, src, 4);
                v = f;
                src += 4;
            }
            break;
        case DType::F16:
            for (double& v : out) {
                std::uint16_t h;
                std::memcpy(&h, src, 2);
                v = half_bits_to_double(h);
                src += 2;
            }
            break;
        case DType::BF16:
            for (double& v : out) {
                std::uint16_t h;
                std::memcpy(&h, src, 2);
                v = bfloat16_bits_to_double(h);
                src += 2;
            }
            break;
    }
}

}  // namespace trajex
