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

// Bit-level view of the three IEEE-754 style formats weights may be stored
// in. All values are carried in memory as `float`; f16 and bf16 values are
// exactly representable there, so every pattern survives the trip.

#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace finetap {

enum class Dtype : std::uint8_t { f32 = 0, f16 = 1, bf16 = 2 };

struct FloatFormat {
  Dtype dtype;
  int exponent_bits;
  int fraction_bits;
  int bias;

  constexpr int width() const { return 1 + exponent_bits + fraction_bits; }
  constexpr std::uint32_t exponent_max() const { return (1u << exponent_bits) - 1u; }
  constexpr std::uint32_t fraction_mask() const { return (1u << fraction_bits) - 1u; }
  constexpr std::uint32_t pattern_mask() const {
    return width() == 32 ? 0xFFFFFFFFu : (1u << width()) - 1u;
  }
  friend constexpr bool operator==(const FloatFormat&, const FloatFormat&) = default;
};

inline constexpr FloatFormat kF32{Dtype::f32, 8, 23, 127};
inline constexpr FloatFormat kF16{Dtype::f16, 5, 10, 15};
inline constexpr FloatFormat kBF16{Dtype::bf16, 8, 7, 127};

FloatFormat format_of(Dtype dtype);
std::string_view format_name(Dtype dtype);
// Accepts "f32"/"float32", "f16"/"float16", "bf16"/"bfloat16".
std::optional<Dtype> parse_dtype(std::string_view name);

struct FloatFields {
  std::uint32_t sign = 0;
  std::uint32_t exponent = 0;  // biased, as stored
  std::uint32_t fraction = 0;  // fraction_bits wide
  FloatFormat format = kF32;

  friend bool operator==(const FloatFields&, const FloatFields&) = default;
};

// Raw patterns (low `width()` bits significant).
FloatFields decompose_bits(std::uint32_t pattern, FloatFormat format);
// Throws Errc::field_overflow when a field exceeds its width.
std::uint32_t compose_bits(const FloatFields& fields);

// Exact conversions between a format's bit pattern and the in-memory float.
float bits_to_float(std::uint32_t pattern, FloatFormat format);
// `value` must be exactly representable in `format` (NaN payloads that fit
// are preserved); throws Errc::invalid_argument otherwise.
std::uint32_t float_to_bits(float value, FloatFormat format);

FloatFields decompose(float value, FloatFormat format);
float compose(const FloatFields& fields);

bool is_normal(const FloatFields& fields);

// 1-based index of the most significant set fraction bit, or nullopt when
// the fraction is zero.
std::optional<int> fraction_msb(const FloatFields& fields);

// 2^(exponent - bias - k), exact. k = 0 is the implicit leading bit.
double place_value(int biased_exponent, int k, FloatFormat format);

// Value of fraction bit k (1-based from the top) of a pattern.
bool fraction_bit(const FloatFields& fields, int k);
FloatFields with_fraction_bit(FloatFields fields, int k, bool value);

// Round-to-nearest-even narrowing of an f32 value. Finite values beyond the
// target's range saturate to +-max; `saturated` is set when that happens.
float round_to_format(float value, FloatFormat target, bool* saturated = nullptr);

float format_max(FloatFormat format);

}  // namespace finetap
