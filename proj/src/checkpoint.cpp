// Copyright 2026 The lnseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lnseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace lnseg::nn {

namespace {

constexpr char kMagic[8] = {'L', 'N', 'S', 'G', 'C', 'K', 'P', '1'};

std::uint64_t fnv1a(const std::vector<unsigned char>& bytes, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<unsigned char> bytes;

 private:
  template <typename T>
  static T byteswap(T v) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    std::reverse(p, p + sizeof(T));
    return v;
  }
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::size_t end, const std::string& path)
      : bytes_(b), end_(end), path_(path) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      auto* p = reinterpret_cast<unsigned char*>(&v);
      std::reverse(p, p + sizeof(T));
    }
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw Error(Errc::MalformedFile, "truncated checkpoint " + path_);
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = sizeof(kMagic);
  std::string path_;
};

}  // namespace

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, EncoderDecoder<Scalar>& model, int epoch) {
  Writer w;
  w.bytes.assign(kMagic, kMagic + sizeof(kMagic));
  const ModelSpec& spec = model.spec();
  w.put(static_cast<std::uint32_t>(spec.depth));
  for (int f : spec.filters) w.put(static_cast<std::uint32_t>(f));
  w.put(static_cast<std::uint32_t>(spec.norm_mode == NormMode::Batch));
  w.put(static_cast<std::uint32_t>(spec.input_dim));
  w.put(static_cast<std::uint32_t>(epoch));
  auto params = model.parameters();
  auto bufs = model.buffers();
  w.put(static_cast<std::uint32_t>(params.size() + bufs.size()));
  auto put_array = [&](const std::string& name, const auto& values) {
    w.put_string(name);
    w.put(static_cast<std::uint64_t>(values.size()));
    for (Eigen::Index i = 0; i < values.size(); ++i) w.put(static_cast<float>(values[i]));
  };
  for (auto* p : params) put_array(p->name, p->value);
  for (auto* b : bufs) put_array(b->name, b->value);
  w.put(fnv1a(w.bytes, w.bytes.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(Errc::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw Error(Errc::IoError, "short write on " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename Scalar>
int load_checkpoint(const std::filesystem::path& path, EncoderDecoder<Scalar>& model) {
  if (!std::filesystem::exists(path)) throw Error(Errc::MissingCheckpoint, path.string());
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(Errc::MalformedFile, "not a checkpoint: " + where);
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if constexpr (std::endian::native == std::endian::big) {
    auto* p = reinterpret_cast<unsigned char*>(&stored);
    std::reverse(p, p + 8);
  }
  if (stored != fnv1a(bytes, body)) throw Error(Errc::MalformedFile, "checksum mismatch in " + where);

  Reader r(bytes, body, where);
  const ModelSpec& spec = model.spec();
  bool ok = r.get<std::uint32_t>() == static_cast<std::uint32_t>(spec.depth);
  for (int f : spec.filters) ok = ok && r.get<std::uint32_t>() == static_cast<std::uint32_t>(f);
  ok = ok && r.get<std::uint32_t>() == static_cast<std::uint32_t>(spec.norm_mode == NormMode::Batch);
  if (!ok) throw Error(Errc::MalformedFile, where + " was written for a different architecture");
  r.get<std::uint32_t>();  // input_dim: weights are resolution independent
  const int epoch = static_cast<int>(r.get<std::uint32_t>());
  auto params = model.parameters();
  auto bufs = model.buffers();
  const auto entries = r.get<std::uint32_t>();
  if (entries != params.size() + bufs.size()) {
    throw Error(Errc::MalformedFile, where + ": entry count mismatch");
  }
  auto get_array = [&](const std::string& name, auto& values) {
    if (r.get_string() != name) throw Error(Errc::MalformedFile, where + ": expected " + name);
    if (r.get<std::uint64_t>() != static_cast<std::uint64_t>(values.size())) {
      throw Error(Errc::MalformedFile, where + ": size mismatch for " + name);
    }
    for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = static_cast<Scalar>(r.get<float>());
  };
  for (auto* p : params) get_array(p->name, p->value);
  for (auto* b : bufs) get_array(b->name, b->value);
  if (!r.done()) throw Error(Errc::MalformedFile, where + ": trailing bytes");
  return epoch;
}

template void save_checkpoint<float>(const std::filesystem::path&, EncoderDecoder<float>&, int);
template void save_checkpoint<double>(const std::filesystem::path&, EncoderDecoder<double>&, int);
template int load_checkpoint<float>(const std::filesystem::path&, EncoderDecoder<float>&);
template int load_checkpoint<double>(const std::filesystem::path&, EncoderDecoder<double>&);

}  // namespace lnseg::nn
