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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ddb/tensor.hpp"
#include "json.hpp"

namespace ddb {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Single-file artifact: an 8-byte magic, a little-endian u64 header length,
// a UTF-8 JSON header, then the tensor blobs back to back as little-endian
// float32. The header carries caller metadata under "meta" and one entry per
// tensor under "tensors" with {name, shape, offset, nbytes}; offsets are
// relative to the first byte after the header.
struct Container {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const Tensor& at(const std::string& name) const;
};

inline constexpr char kContainerMagic[8] = {'D', 'D', 'B', 'C', 'K', 'P', 'T', '1'};

void write_container(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<NamedTensor>& tensors);
Container read_container(const std::filesystem::path& path);
// Only the JSON header; skips the blobs.
nlohmann::json read_container_meta(const std::filesystem::path& path);

}  // namespace ddb
