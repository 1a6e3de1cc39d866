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

#include "checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "error.hpp"

namespace finetap {

std::size_t WeightTensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Checkpoint::Checkpoint() {
  for (auto key : kRequiredMetaKeys) metadata_.emplace_back(std::string(key), "unknown");
}

Checkpoint::Checkpoint(Metadata metadata) : metadata_(std::move(metadata)) {
  for (auto key : kRequiredMetaKeys) {
    if (!meta(key)) fail(Errc::missing_metadata, "checkpoint lacks metadata key '" + std::string(key) + "'");
  }
}

void Checkpoint::add(WeightTensor tensor) {
  if (find(tensor.name)) fail(Errc::duplicate_name, "duplicate tensor name '" + tensor.name + "'");
  if (tensor.data.size() != tensor.element_count()) {
    fail(Errc::shape_mismatch, "tensor '" + tensor.name + "' data size does not match dims");
  }
  tensors_.push_back(std::move(tensor));
}

const WeightTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const WeightTensor& Checkpoint::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  fail(Errc::invalid_argument, "no tensor named '" + std::string(name) + "'");
}

std::optional<std::string> Checkpoint::meta(std::string_view key) const {
  for (const auto& [k, v] : metadata_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string Checkpoint::meta_or(std::string_view key, std::string fallback) const {
  auto v = meta(key);
  return v ? *v : std::move(fallback);
}

void Checkpoint::set_meta(std::string key, std::string value) {
  for (auto& [k, v] : metadata_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  metadata_.emplace_back(std::move(key), std::move(value));
}

std::size_t Checkpoint::weight_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.data.size();
  return n;
}

namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str16(const std::string& s) {
    if (s.size() > 0xFFFF) fail(Errc::invalid_argument, "string longer than 65535 bytes");
    u16(static_cast<std::uint16_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::size_t size() const { return out_.size(); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail(Errc::truncated, "WBIN stream truncated");
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str16() {
    const std::uint16_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  const std::uint8_t* take(std::size_t n) {
    need(n);
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'W', 'B', 'N', '1'};

std::size_t element_bytes(Dtype d) { return d == Dtype::f32 ? 4 : 2; }

}  // namespace

std::vector<std::uint8_t> encode_wbin(const Checkpoint& ckpt) {
  ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(static_cast<std::uint32_t>(ckpt.tensors().size()));
  w.u32(static_cast<std::uint32_t>(ckpt.metadata().size()));
  for (const auto& [k, v] : ckpt.metadata()) {
    w.str16(k);
    w.str16(v);
  }
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& t : ckpt.tensors()) {
    w.str16(t.name);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    if (t.dims.size() > 255) fail(Errc::invalid_argument, "tensor rank above 255");
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    const FloatFormat fmt = t.format();
    const std::size_t start = w.size();
    const std::size_t eb = element_bytes(t.dtype);
    w.bytes().resize(start + eb * t.data.size());
    std::uint8_t* p = w.bytes().data() + start;
    for (float v : t.data) {
      const std::uint32_t bits = float_to_bits(v, fmt);
      for (std::size_t i = 0; i < eb; ++i) *p++ = static_cast<std::uint8_t>(bits >> (8 * i));
    }
    crc = crc32(crc, w.bytes().data() + start, static_cast<uInt>(w.size() - start));
  }
  w.u32(static_cast<std::uint32_t>(crc));
  return std::move(w.bytes());
}

Checkpoint decode_wbin(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(Errc::bad_magic, "not a WBIN file (bad magic)");
  }
  ByteReader r(bytes);
  r.take(4);
  const std::uint32_t tensor_count = r.u32();
  const std::uint32_t meta_count = r.u32();
  Checkpoint::Metadata meta;
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string k = r.str16();
    std::string v = r.str16();
    meta.emplace_back(std::move(k), std::move(v));
  }
  std::vector<WeightTensor> tensors;
  std::unordered_set<std::string> names;
  uLong crc = crc32(0L, Z_NULL, 0);
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    WeightTensor t;
    t.name = r.str16();
    const std::uint8_t dt = r.u8();
    if (dt > 2) fail(Errc::unsupported_format, "unknown dtype code " + std::to_string(dt));
    t.dtype = static_cast<Dtype>(dt);
    const std::uint8_t rank = r.u8();
    for (std::uint8_t d = 0; d < rank; ++d) t.dims.push_back(r.u32());
    if (!names.insert(t.name).second) fail(Errc::duplicate_name, "duplicate tensor name '" + t.name + "'");
    const std::size_t n = t.element_count();
    const std::size_t eb = element_bytes(t.dtype);
    if (n > r.remaining() / eb) fail(Errc::truncated, "WBIN payload truncated");
    const std::uint8_t* p = r.take(n * eb);
    crc = crc32(crc, p, static_cast<uInt>(n * eb));
    const FloatFormat fmt = t.format();
    t.data.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      std::uint32_t bits = 0;
      for (std::size_t b = 0; b < eb; ++b) bits |= static_cast<std::uint32_t>(p[j * eb + b]) << (8 * b);
      t.data[j] = bits_to_float(bits, fmt);
    }
    tensors.push_back(std::move(t));
  }
  const std::uint32_t stored = r.u32();
  if (stored != static_cast<std::uint32_t>(crc)) fail(Errc::checksum, "WBIN payload checksum mismatch");
  if (r.remaining() != 0) fail(Errc::parse, "trailing bytes after WBIN checksum");
  Checkpoint ckpt(std::move(meta));
  for (auto& t : tensors) ckpt.add(std::move(t));
  return ckpt;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::io, "cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(Errc::io, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(Errc::io, "cannot rename onto '" + path.string() + "': " + ec.message());
}

void write_wbin(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_wbin(ckpt);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Checkpoint read_wbin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wbin(bytes);
}

Checkpoint quantize_checkpoint(const Checkpoint& ckpt, FloatFormat target) {
  Checkpoint out(ckpt.metadata());
  std::size_t saturated = 0;
  for (const auto& t : ckpt.tensors()) {
    WeightTensor q;
    q.name = t.name;
    q.dtype = target.dtype;
    q.dims = t.dims;
    q.data.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      bool sat = false;
      q.data[i] = round_to_format(t.data[i], target, &sat);
      if (sat) ++saturated;
    }
    out.add(std::move(q));
  }
  out.set_meta("format", std::string(format_name(target.dtype)));
  out.set_meta("quantize_saturated", std::to_string(saturated));
  return out;
}

}  // namespace finetap
