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

#pragma once

#include <stdexcept>
#include <string>

namespace finetap {

// Every failure the core can report. The C API maps these one-to-one onto
// finetap_status values, so keep the two lists in the same order.
enum class Errc {
  invalid_argument = 1,
  io,
  bad_magic,
  truncated,
  checksum,
  duplicate_name,
  missing_metadata,
  shape_mismatch,
  unsupported_format,
  field_overflow,
  unknown_label,
  zero_variance,
  insufficient_data,
  parse,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace finetap
