/* Copyright 2026 The DDB Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "ddb/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "ddb/errors.hpp"

namespace ddb {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  os.write(buf, 8);
}

std::uint64_t read_u64(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  std::uint64_t v = 0;
  std::memcpy(&v, buf, 8);
  return v;
}

nlohmann::json read_header(std::istream& in, const fs::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kContainerMagic, 8) != 0) {
    throw ArtifactError(path.string() + ": not a tensor container (bad magic)");
  }
  const std::uint64_t header_len = read_u64(in);
  if (!in || header_len > (1ULL << 32)) throw ArtifactError(path.string() + ": truncated header");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ArtifactError(path.string() + ": truncated header");
  try {
    return nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(path.string() + ": header is not valid JSON: " + e.what());
  }
}

}  // namespace

const Tensor& Container::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw ArtifactError("container has no tensor named '" + name + "'");
}

void write_container(const fs::path& path, const nlohmann::json& meta, const std::vector<NamedTensor>& tensors) {
  nlohmann::json header;
  header["format"] = "ddb-container";
  header["version"] = 1;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    const std::uint64_t nbytes = t.tensor.numel() * sizeof(float);
    header["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot open " + tmp.string() + " for writing");
    out.write(kContainerMagic, 8);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : tensors) {
      out.write(reinterpret_cast<const char*>(t.tensor.data()),
                static_cast<std::streamsize>(t.tensor.numel() * sizeof(float)));
    }
    if (!out) throw ArtifactError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Container read_container(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  const nlohmann::json header = read_header(in, path);
  const std::streampos base = in.tellg();

  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != shape_numel(shape) * sizeof(float)) {
      throw ArtifactError(path.string() + ": tensor '" + entry.at("name").get<std::string>() +
                          "' byte length disagrees with its shape");
    }
    Tensor t(shape);
    in.seekg(base + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw ArtifactError(path.string() + ": truncated tensor blob");
    c.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
  }
  return c;
}

nlohmann::json read_container_meta(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  return read_header(in, path).value("meta", nlohmann::json::object());
}

}  // namespace ddb
