// Copyright 2026 The finetap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "float_format.hpp"

#include <bit>
#include <cfloat>
#include <cmath>
#include <string>

#include "error.hpp"

namespace finetap {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::io: return "io";
    case Errc::bad_magic: return "bad_magic";
    case Errc::truncated: return "truncated";
    case Errc::checksum: return "checksum";
    case Errc::duplicate_name: return "duplicate_name";
    case Errc::missing_metadata: return "missing_metadata";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::unsupported_format: return "unsupported_format";
    case Errc::field_overflow: return "field_overflow";
    case Errc::unknown_label: return "unknown_label";
    case Errc::zero_variance: return "zero_variance";
    case Errc::insufficient_data: return "insufficient_data";
    case Errc::parse: return "parse";
  }
  return "unknown";
}

FloatFormat format_of(Dtype dtype) {
  switch (dtype) {
    case Dtype::f32: return kF32;
    case Dtype::f16: return kF16;
    case Dtype::bf16: return kBF16;
  }
  fail(Errc::unsupported_format, "unknown dtype code");
}

std::string_view format_name(Dtype dtype) {
  switch (dtype) {
    case Dtype::f32: return "f32";
    case Dtype::f16: return "f16";
    case Dtype::bf16: return "bf16";
  }
  return "?";
}

std::optional<Dtype> parse_dtype(std::string_view name) {
  if (name == "f32" || name == "float32") return Dtype::f32;
  if (name == "f16" || name == "float16") return Dtype::f16;
  if (name == "bf16" || name == "bfloat16") return Dtype::bf16;
  return std::nullopt;
}

FloatFields decompose_bits(std::uint32_t pattern, FloatFormat format) {
  pattern &= format.pattern_mask();
  FloatFields f;
  f.format = format;
  f.sign = pattern >> (format.width() - 1);
  f.exponent = (pattern >> format.fraction_bits) & format.exponent_max();
  f.fraction = pattern & format.fraction_mask();
  return f;
}

std::uint32_t compose_bits(const FloatFields& fields) {
  const FloatFormat& fmt = fields.format;
  if (fields.sign > 1u || fields.exponent > fmt.exponent_max() ||
      fields.fraction > fmt.fraction_mask()) {
    fail(Errc::field_overflow, "float field exceeds its width");
  }
  return (fields.sign << (fmt.width() - 1)) | (fields.exponent << fmt.fraction_bits) |
         fields.fraction;
}

float bits_to_float(std::uint32_t pattern, FloatFormat format) {
  switch (format.dtype) {
    case Dtype::f32:
      return std::bit_cast<float>(pattern);
    case Dtype::bf16:
      return std::bit_cast<float>((pattern & 0xFFFFu) << 16);
    case Dtype::f16: {
      const std::uint32_t s = (pattern >> 15) & 1u;
      const std::uint32_t e = (pattern >> 10) & 0x1Fu;
      const std::uint32_t m = pattern & 0x3FFu;
      std::uint32_t out;
      if (e == 0) {
        if (m == 0) {
          out = s << 31;
        } else {
          // Subnormal: m * 2^-24, a normal f32.
          const float v = std::ldexp(static_cast<float>(m), -24);
          out = (s << 31) | std::bit_cast<std::uint32_t>(v);
        }
      } else if (e == 0x1F) {
        out = (s << 31) | (0xFFu << 23) | (m << 13);
      } else {
        out = (s << 31) | ((e - 15 + 127) << 23) | (m << 13);
      }
      return std::bit_cast<float>(out);
    }
  }
  fail(Errc::unsupported_format, "unknown dtype");
}

std::uint32_t float_to_bits(float value, FloatFormat format) {
  const std::uint32_t b = std::bit_cast<std::uint32_t>(value);
  switch (format.dtype) {
    case Dtype::f32:
      return b;
    case Dtype::bf16:
      if ((b & 0xFFFFu) != 0) fail(Errc::invalid_argument, "value not representable in bf16");
      return b >> 16;
    case Dtype::f16: {
      const std::uint32_t s = b >> 31;
      const std::uint32_t E = (b >> 23) & 0xFFu;
      const std::uint32_t F = b & 0x7FFFFFu;
      if (E == 0xFF) {
        if ((F & 0x1FFFu) != 0) fail(Errc::invalid_argument, "NaN payload not representable in f16");
        return (s << 15) | (0x1Fu << 10) | (F >> 13);
      }
      if (E == 0 && F == 0) return s << 15;
      if (E == 0) fail(Errc::invalid_argument, "value not representable in f16");
      const int e = static_cast<int>(E) - 127;
      if (e > 15) fail(Errc::invalid_argument, "value not representable in f16");
      if (e >= -14) {
        if ((F & 0x1FFFu) != 0) fail(Errc::invalid_argument, "value not representable in f16");
        return (s << 15) | (static_cast<std::uint32_t>(e + 15) << 10) | (F >> 13);
      }
      // f16 subnormal: mant * 2^(e-23) = m * 2^-24  =>  m = mant >> -(e+1)
      if (e < -24) fail(Errc::invalid_argument, "value not representable in f16");
      const std::uint32_t mant = F | (1u << 23);
      const int shift = -(e + 1);
      if ((mant & ((1u << shift) - 1u)) != 0) {
        fail(Errc::invalid_argument, "value not representable in f16");
      }
      return (s << 15) | (mant >> shift);
    }
  }
  fail(Errc::unsupported_format, "unknown dtype");
}

FloatFields decompose(float value, FloatFormat format) {
  return decompose_bits(float_to_bits(value, format), format);
}

float compose(const FloatFields& fields) {
  return bits_to_float(compose_bits(fields), fields.format);
}

bool is_normal(const FloatFields& fields) {
  return fields.exponent != 0 && fields.exponent != fields.format.exponent_max();
}

std::optional<int> fraction_msb(const FloatFields& fields) {
  if (fields.fraction == 0) return std::nullopt;
  const int top = std::bit_width(fields.fraction) - 1;  // 0-based from lsb
  return fields.format.fraction_bits - top;
}

double place_value(int biased_exponent, int k, FloatFormat format) {
  return std::ldexp(1.0, biased_exponent - format.bias - k);
}

bool fraction_bit(const FloatFields& fields, int k) {
  const int fb = fields.format.fraction_bits;
  if (k < 1 || k > fb) fail(Errc::invalid_argument, "fraction bit index out of range");
  return ((fields.fraction >> (fb - k)) & 1u) != 0;
}

FloatFields with_fraction_bit(FloatFields fields, int k, bool value) {
  const int fb = fields.format.fraction_bits;
  if (k < 1 || k > fb) fail(Errc::invalid_argument, "fraction bit index out of range");
  const std::uint32_t mask = 1u << (fb - k);
  fields.fraction = value ? (fields.fraction | mask) : (fields.fraction & ~mask);
  return fields;
}

float format_max(FloatFormat format) {
  switch (format.dtype) {
    case Dtype::f32: return FLT_MAX;
    case Dtype::f16: return 65504.0f;
    case Dtype::bf16: return std::bit_cast<float>(0x7F7F0000u);
  }
  return FLT_MAX;
}

namespace {

float round_bf16(float value, bool* saturated) {
  const std::uint32_t b = std::bit_cast<std::uint32_t>(value);
  if (std::isnan(value)) {
    return std::bit_cast<float>((b & 0xFFFF0000u) | 0x00400000u);
  }
  if (std::isinf(value)) return value;
  const std::uint32_t rounded = (b + 0x7FFFu + ((b >> 16) & 1u)) & 0xFFFF0000u;
  const float out = std::bit_cast<float>(rounded);
  if (std::isinf(out)) {
    if (saturated) *saturated = true;
    return std::copysign(format_max(kBF16), value);
  }
  return out;
}

float round_f16(float value, bool* saturated) {
  if (std::isnan(value)) {
    const std::uint32_t b = std::bit_cast<std::uint32_t>(value);
    // keep sign and top payload bits, force quiet
    return std::bit_cast<float>((b & 0xFFFFE000u) | 0x00400000u);
  }
  if (std::isinf(value)) return value;
  const double a = std::abs(static_cast<double>(value));
  const double sign = std::signbit(value) ? -1.0 : 1.0;
  if (a >= 65520.0) {
    if (saturated) *saturated = true;
    return static_cast<float>(sign * 65504.0);
  }
  if (a < 0x1.0p-14) {
    // subnormal grid of 2^-24; nearbyint rounds half to even
    const double m = std::nearbyint(a * 0x1.0p24);
    return static_cast<float>(sign * std::ldexp(m, -24));
  }
  int e;
  std::frexp(a, &e);  // a = f * 2^e, f in [0.5, 1)
  const double scaled = std::ldexp(a, 11 - e);  // 11 significant bits before the point
  const double m = std::nearbyint(scaled);
  return static_cast<float>(sign * std::ldexp(m, e - 11));
}

}  // namespace

float round_to_format(float value, FloatFormat target, bool* saturated) {
  switch (target.dtype) {
    case Dtype::f32: return value;
    case Dtype::bf16: return round_bf16(value, saturated);
    case Dtype::f16: return round_f16(value, saturated);
  }
  fail(Errc::unsupported_format, "unknown dtype");
}

}  // namespace finetap
