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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddb/tensor.hpp"
#include "json.hpp"

// Biased image datasets: a parametric shape/background-colour generator with
// an exact bias oracle, CSV-manifest ingestion of external image folders, and
// per-channel normalisation.
namespace ddb::corpus {

enum class Split { kTrain, kVal, kTest };
enum class Alignment { kAligned, kConflicting, kUnknown };

std::string to_string(Split s);
Split split_from_string(const std::string& s);
std::string to_string(Alignment a);

inline constexpr int kUnknownBias = -1;

// Names of the generator's background colours; a dataset's bias attributes
// are a subset of these.
const std::vector<std::string>& palette_names();
std::array<float, 3> palette_rgb(const std::string& name);
// Class glyphs available to the generator, indexed by class.
const std::vector<std::string>& shape_names();

struct BiasedDatasetSpec {
  int num_classes = 2;
  // Attribute identifiers; bias_attributes[y] is the attribute aligned with
  // class y. Defaults to the first max(num_classes, 2) palette colours.
  std::vector<std::string> bias_attributes;
  double rho = 0.95;
  int samples_per_class = 500;
  int val_per_group = 10;
  int test_per_group = 50;
  int height = 16;
  int width = 16;
  int channels = 3;
  std::uint64_t seed = 0;
  std::string conflict_policy = "uniform";

  // Copy with an empty attribute list replaced by the default.
  BiasedDatasetSpec resolved() const;
  void validate() const;
  nlohmann::json to_json() const;
  static BiasedDatasetSpec from_json(const nlohmann::json& j);
};

struct LabeledSample {
  std::string id;
  std::vector<float> image;  // [channels, height, width]
  int y = 0;
  int b = kUnknownBias;
  Alignment c = Alignment::kUnknown;
  Split split = Split::kTrain;
  bool synthetic = false;
};

struct Normalization {
  std::vector<float> mean;
  std::vector<float> std;
};

class Dataset {
 public:
  int num_classes = 0;
  int channels = 3;
  int height = 16;
  int width = 16;
  std::vector<std::string> bias_attributes;
  nlohmann::json source;  // generating spec or ingest description
  std::vector<LabeledSample> samples;
  std::optional<Normalization> normalization;

  int num_bias_attributes() const { return static_cast<int>(bias_attributes.size()); }
  std::size_t image_numel() const { return static_cast<std::size_t>(channels) * height * width; }
  // Attribute index aligned with class y.
  static int aligned_attribute(int y) { return y; }
  Alignment alignment_of(int y, int b) const;

  Dataset subset(Split split) const;
  std::vector<std::size_t> indices(Split split) const;
  // Copies the listed samples into an NCHW batch.
  Tensor batch(const std::vector<std::size_t>& indices) const;
  Dataset empty_like() const;

  // Number of (y, b) groups = num_classes * num_bias_attributes; id = y*|B|+b.
  int num_oracle_groups() const { return num_classes * num_bias_attributes(); }
  void validate() const;
};

Dataset generate_biased_dataset(const BiasedDatasetSpec& spec);

struct IngestOptions {
  int num_classes = 2;
  std::vector<std::string> bias_attributes;
  int height = 16;
  int width = 16;
  int channels = 3;
};

// Manifest: CSV with header `id,path,y,b,split`; paths relative to root.
// An empty b marks the bias attribute as unknown.
Dataset ingest_image_folder(const std::filesystem::path& root, const std::filesystem::path& manifest,
                            const IngestOptions& options);

Normalization estimate_normalization(const Dataset& dataset, Split split);
Dataset normalize(const Dataset& dataset, const std::vector<float>& mean, const std::vector<float>& std);

// Writes images as PNG plus manifest.csv (id,path,y,b,split), undoing any
// recorded normalisation.
void export_png_folder(const Dataset& dataset, const std::filesystem::path& dir);

void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

// Background-colour oracle: median of the border pixels, nearest palette
// colour among the dataset's bias attributes. nullopt when nothing is within
// the acceptance radius. Expects un-normalised [0,1] images.
std::optional<int> color_oracle(std::span<const float> image, int channels, int height, int width,
                                const std::vector<std::string>& bias_attributes);

}  // namespace ddb::corpus
