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

#include "ddb/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "ddb/container.hpp"
#include "ddb/errors.hpp"
#include "ddb/image_io.hpp"
#include "ddb/rng.hpp"

namespace ddb::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw UsageError("unknown split '" + s + "'");
}

std::string to_string(Alignment a) {
  switch (a) {
    case Alignment::kAligned: return "aligned";
    case Alignment::kConflicting: return "conflicting";
    case Alignment::kUnknown: return "unknown";
  }
  return "unknown";
}

namespace {

Alignment alignment_from_string(const std::string& s) {
  if (s == "aligned") return Alignment::kAligned;
  if (s == "conflicting") return Alignment::kConflicting;
  return Alignment::kUnknown;
}

struct PaletteEntry {
  const char* name;
  std::array<float, 3> rgb;
};

constexpr PaletteEntry kPalette[] = {
    {"red", {0.85F, 0.15F, 0.15F}},     {"green", {0.15F, 0.70F, 0.20F}},  {"blue", {0.15F, 0.25F, 0.85F}},
    {"yellow", {0.85F, 0.80F, 0.10F}},  {"magenta", {0.80F, 0.15F, 0.75F}}, {"cyan", {0.10F, 0.75F, 0.80F}},
    {"orange", {0.90F, 0.50F, 0.10F}},  {"purple", {0.45F, 0.15F, 0.70F}},
};

float luminance(const std::array<float, 3>& rgb) { return 0.299F * rgb[0] + 0.587F * rgb[1] + 0.114F * rgb[2]; }

// Shape membership in glyph-local coordinates (unit circumradius).
bool inside_shape(int shape, double u, double v) {
  switch (shape) {
    case 0:  // square
      return std::max(std::abs(u), std::abs(v)) <= 0.8;
    case 1:  // circle
      return u * u + v * v <= 1.0;
    case 2: {  // triangle, apex up
      for (int k = 0; k < 3; ++k) {
        const double a = std::numbers::pi / 2 + k * 2 * std::numbers::pi / 3;
        // Edge midpoint normal points away from the centre at angle a + pi.
        const double nx = std::cos(a + std::numbers::pi), ny = std::sin(a + std::numbers::pi);
        if (u * nx + v * ny > 0.55) return false;
      }
      return true;
    }
    case 3:  // plus sign
      return (std::abs(u) <= 0.33 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.33 && std::abs(u) <= 1.0);
    case 4: {  // ring
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.36;
    }
    default:
      return false;
  }
}

std::vector<float> render(int shape, const std::array<float, 3>& background, int channels, int height, int width,
                          Rng& rng) {
  constexpr int kSuper = 4;
  const double size = std::min(height, width);
  const double cx = rng.uniform(0.3, 0.7) * width;
  const double cy = rng.uniform(0.3, 0.7) * height;
  const double radius = rng.uniform(0.24, 0.38) * size;
  const double theta = rng.uniform(0.0, 2 * std::numbers::pi);
  const double ct = std::cos(theta), st = std::sin(theta);
  const auto fg = static_cast<float>(rng.uniform(0.85, 1.0));
  std::array<float, 3> bg{};
  for (int c = 0; c < 3; ++c) bg[c] = std::clamp(background[c] + static_cast<float>(rng.uniform(-0.04, 0.04)), 0.0F, 1.0F);
  const float bg_gray = luminance(bg);

  std::vector<float> img(static_cast<std::size_t>(channels) * height * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper - cx;
          const double py = y + (sy + 0.5) / kSuper - cy;
          const double u = (ct * px + st * py) / radius;
          const double v = (-st * px + ct * py) / radius;
          hits += inside_shape(shape, u, -v) ? 1 : 0;
        }
      }
      const float cov = static_cast<float>(hits) / (kSuper * kSuper);
      for (int c = 0; c < channels; ++c) {
        const float base = channels == 1 ? bg_gray : bg[c];
        const float v = base * (1.0F - cov) + fg * cov + 0.03F * rng.normal();
        img[(static_cast<std::size_t>(c) * height + y) * width + x] = std::clamp(v, 0.0F, 1.0F);
      }
    }
  }
  return img;
}

std::string sample_id(Split split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%06zu", to_string(split).c_str(), index);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  for (auto& f : fields) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
    while (!f.empty() && f.front() == ' ') f.erase(f.begin());
  }
  return fields;
}

std::optional<int> parse_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t pos = 0;
  try {
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

const std::vector<std::string>& palette_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& e : kPalette) n.emplace_back(e.name);
    return n;
  }();
  return names;
}

std::array<float, 3> palette_rgb(const std::string& name) {
  for (const auto& e : kPalette) {
    if (name == e.name) return e.rgb;
  }
  throw ConfigError("unknown bias attribute colour '" + name + "'");
}

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names{"square", "circle", "triangle", "plus", "ring"};
  return names;
}

// ---------------------------------------------------------------------------

void BiasedDatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("dataset: num_classes must be at least 2");
  if (num_classes > static_cast<int>(shape_names().size())) {
    throw ConfigError("dataset: the generator supports at most " + std::to_string(shape_names().size()) + " classes");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("dataset: rho must lie in [0,1]");
  if (static_cast<int>(bias_attributes.size()) < num_classes) {
    throw ConfigError("dataset: need at least as many bias attributes as classes");
  }
  std::set<std::string> seen;
  for (const auto& a : bias_attributes) {
    palette_rgb(a);
    if (!seen.insert(a).second) throw ConfigError("dataset: duplicate bias attribute '" + a + "'");
  }
  if (samples_per_class <= 0) throw ConfigError("dataset: samples_per_class must be positive");
  if (val_per_group < 0 || test_per_group < 0) throw ConfigError("dataset: split sizes must be non-negative");
  if (height <= 0 || width <= 0) throw ConfigError("dataset: image size must be positive");
  if (channels != 1 && channels != 3) throw ConfigError("dataset: channels must be 1 or 3");
  if (conflict_policy != "uniform") throw ConfigError("dataset: only the 'uniform' conflict policy is supported");
}

json BiasedDatasetSpec::to_json() const {
  return {{"num_classes", num_classes},
          {"bias_attributes", bias_attributes},
          {"rho", rho},
          {"samples_per_class", samples_per_class},
          {"val_per_group", val_per_group},
          {"test_per_group", test_per_group},
          {"image_size", {height, width}},
          {"channels", channels},
          {"seed", seed},
          {"conflict_policy", conflict_policy}};
}

BiasedDatasetSpec BiasedDatasetSpec::from_json(const json& j) {
  BiasedDatasetSpec s;
  s.num_classes = j.value("num_classes", s.num_classes);
  if (j.contains("bias_attributes") && !j.at("bias_attributes").is_null()) {
    s.bias_attributes = j.at("bias_attributes").get<std::vector<std::string>>();
  } else {
    const int n = j.value("num_bias_attributes", std::max(2, s.num_classes));
    if (n > static_cast<int>(palette_names().size()) || n < 0) {
      throw ConfigError("dataset: num_bias_attributes exceeds the palette size");
    }
    s.bias_attributes.assign(palette_names().begin(), palette_names().begin() + n);
  }
  s.rho = j.value("rho", s.rho);
  s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
  s.val_per_group = j.value("val_per_group", s.val_per_group);
  s.test_per_group = j.value("test_per_group", s.test_per_group);
  if (j.contains("image_size")) {
    const auto hw = j.at("image_size").get<std::vector<int>>();
    if (hw.size() != 2) throw ConfigError("dataset: image_size must be [height, width]");
    s.height = hw[0];
    s.width = hw[1];
  }
  s.channels = j.value("channels", s.channels);
  s.seed = j.value("seed", s.seed);
  s.conflict_policy = j.value("conflict_policy", s.conflict_policy);
  return s;
}

// ---------------------------------------------------------------------------

Alignment Dataset::alignment_of(int y, int b) const {
  if (b == kUnknownBias) return Alignment::kUnknown;
  return b == aligned_attribute(y) ? Alignment::kAligned : Alignment::kConflicting;
}

Dataset Dataset::empty_like() const {
  Dataset d;
  d.num_classes = num_classes;
  d.channels = channels;
  d.height = height;
  d.width = width;
  d.bias_attributes = bias_attributes;
  d.source = source;
  d.normalization = normalization;
  return d;
}

Dataset Dataset::subset(Split split) const {
  Dataset d = empty_like();
  for (const auto& s : samples) {
    if (s.split == split) d.samples.push_back(s);
  }
  return d;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

Tensor Dataset::batch(const std::vector<std::size_t>& idx) const {
  Tensor t({static_cast<int>(idx.size()), channels, height, width});
  const std::size_t n = image_numel();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& img = samples.at(idx[i]).image;
    std::copy(img.begin(), img.end(), t.data() + i * n);
  }
  return t;
}

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) throw UsageError("dataset: duplicate sample id '" + s.id + "'");
    if (s.image.size() != image_numel()) throw UsageError("dataset: sample '" + s.id + "' has wrong image size");
    if (s.y < 0 || s.y >= num_classes) throw UsageError("dataset: sample '" + s.id + "' label out of range");
    if (s.b != kUnknownBias && s.c != alignment_of(s.y, s.b)) {
      throw UsageError("dataset: sample '" + s.id + "' alignment flag disagrees with (y, b)");
    }
    for (float v : s.image) {
      if (!std::isfinite(v)) throw UsageError("dataset: sample '" + s.id + "' has non-finite pixels");
    }
  }
}

BiasedDatasetSpec BiasedDatasetSpec::resolved() const {
  BiasedDatasetSpec s = *this;
  if (s.bias_attributes.empty() && s.num_classes >= 0) {
    const auto n = std::min<std::size_t>(palette_names().size(), static_cast<std::size_t>(std::max(2, num_classes)));
    s.bias_attributes.assign(palette_names().begin(), palette_names().begin() + static_cast<std::ptrdiff_t>(n));
  }
  return s;
}

Dataset generate_biased_dataset(const BiasedDatasetSpec& requested) {
  const BiasedDatasetSpec spec = requested.resolved();
  spec.validate();
  Dataset d;
  d.num_classes = spec.num_classes;
  d.channels = spec.channels;
  d.height = spec.height;
  d.width = spec.width;
  d.bias_attributes = spec.bias_attributes;
  d.source = {{"kind", "generated"}, {"spec", spec.to_json()}};

  const int nb = static_cast<int>(spec.bias_attributes.size());
  struct Plan {
    Split split;
    int y;
    int b;
  };
  std::vector<Plan> plan;
  Rng assign(derive_seed(spec.seed, {0xA55167ULL}));
  for (int y = 0; y < spec.num_classes; ++y) {
    const auto aligned = static_cast<int>(std::lround(spec.rho * spec.samples_per_class));
    for (int i = 0; i < spec.samples_per_class; ++i) {
      int b = y;
      if (i >= aligned) {
        // Uniform over the non-aligned attributes.
        b = assign.uniform_int(0, nb - 2);
        if (b >= y) ++b;
      }
      plan.push_back({Split::kTrain, y, b});
    }
  }
  for (Split split : {Split::kVal, Split::kTest}) {
    const int per_group = split == Split::kVal ? spec.val_per_group : spec.test_per_group;
    for (int y = 0; y < spec.num_classes; ++y) {
      for (int b = 0; b < nb; ++b) {
        for (int i = 0; i < per_group; ++i) plan.push_back({split, y, b});
      }
    }
  }

  std::size_t counters[3] = {0, 0, 0};
  d.samples.reserve(plan.size());
  for (const Plan& p : plan) {
    const auto split_code = static_cast<std::size_t>(p.split);
    const std::size_t index = counters[split_code]++;
    // Per-sample stream keyed by (seed, split, index).
    Rng rng(derive_seed(spec.seed, {split_code + 1, index}));
    LabeledSample s;
    s.id = sample_id(p.split, index);
    s.y = p.y;
    s.b = p.b;
    s.c = d.alignment_of(p.y, p.b);
    s.split = p.split;
    s.image = render(p.y, palette_rgb(spec.bias_attributes[p.b]), spec.channels, spec.height, spec.width, rng);
    d.samples.push_back(std::move(s));
  }
  return d;
}

// ---------------------------------------------------------------------------

Dataset ingest_image_folder(const fs::path& root, const fs::path& manifest, const IngestOptions& options) {
  if (options.num_classes < 2) throw ConfigError("ingest: num_classes must be at least 2");
  std::ifstream in(manifest);
  if (!in) throw IngestError("cannot open manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestError("manifest " + manifest.string() + " is empty");
  const auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"id", "path", "y", "b", "split"}) {
    throw IngestError("manifest header must be 'id,path,y,b,split', got '" + line + "'");
  }

  Dataset d;
  d.num_classes = options.num_classes;
  d.channels = options.channels;
  d.height = options.height;
  d.width = options.width;
  d.bias_attributes = options.bias_attributes;
  if (d.bias_attributes.empty()) {
    for (int i = 0; i < options.num_classes; ++i) d.bias_attributes.push_back("attr" + std::to_string(i));
  }
  d.source = {{"kind", "ingested"}, {"root", root.string()}, {"manifest", manifest.string()}};

  std::set<std::string> ids;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string where = "manifest row " + std::to_string(row) + (f.empty() ? "" : " (id '" + f[0] + "')");
    if (f.size() != 5) throw IngestError(where + ": expected 5 fields, got " + std::to_string(f.size()));
    if (f[0].empty()) throw IngestError(where + ": empty id");
    if (!ids.insert(f[0]).second) throw IngestError(where + ": duplicate id");
    const auto y = parse_int(f[2]);
    if (!y) throw IngestError(where + ": label y is not an integer");
    if (*y < 0 || *y >= options.num_classes) throw IngestError(where + ": label y out of range");
    int b = kUnknownBias;
    if (!f[3].empty()) {
      const auto pb = parse_int(f[3]);
      if (!pb) throw IngestError(where + ": bias attribute b is not an integer");
      if (*pb < 0 || *pb >= d.num_bias_attributes()) throw IngestError(where + ": bias attribute b out of range");
      b = *pb;
    }
    Split split{};
    try {
      split = split_from_string(f[4]);
    } catch (const UsageError&) {
      throw IngestError(where + ": unknown split '" + f[4] + "'");
    }
    const fs::path image_path = root / f[1];
    if (!fs::exists(image_path)) throw IngestError(where + ": missing file " + image_path.string());
    Image img;
    try {
      img = read_png(image_path);
    } catch (const IngestError& e) {
      throw IngestError(where + ": " + e.what());
    }
    LabeledSample s;
    s.id = f[0];
    s.y = *y;
    s.b = b;
    s.c = d.alignment_of(s.y, b);
    s.split = split;
    s.image = convert_image(img, d.channels, d.height, d.width).pixels;
    for (float& v : s.image) v = std::clamp(v, 0.0F, 1.0F);
    d.samples.push_back(std::move(s));
  }
  return d;
}

// ---------------------------------------------------------------------------

Normalization estimate_normalization(const Dataset& dataset, Split split) {
  const int C = dataset.channels;
  const std::size_t hw = static_cast<std::size_t>(dataset.height) * dataset.width;
  std::vector<double> sum(C, 0.0), sq(C, 0.0);
  std::size_t count = 0;
  for (const auto& s : dataset.samples) {
    if (s.split != split) continue;
    ++count;
    for (int c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < hw; ++k) {
        const double v = s.image[c * hw + k];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
  }
  if (count == 0) throw UsageError("estimate_normalization: split '" + to_string(split) + "' is empty");
  Normalization n;
  const double total = static_cast<double>(count * hw);
  for (int c = 0; c < C; ++c) {
    const double mean = sum[c] / total;
    const double var = std::max(0.0, sq[c] / total - mean * mean);
    n.mean.push_back(static_cast<float>(mean));
    n.std.push_back(static_cast<float>(std::max(std::sqrt(var), 1e-6)));
  }
  return n;
}

Dataset normalize(const Dataset& dataset, const std::vector<float>& mean, const std::vector<float>& std) {
  const auto C = static_cast<std::size_t>(dataset.channels);
  if (mean.size() != C || std.size() != C) throw ConfigError("normalize: need one mean/std per channel");
  for (float s : std) {
    if (!(s > 0.0F)) throw ConfigError("normalize: std components must be positive");
  }
  Dataset out = dataset;
  const std::size_t hw = static_cast<std::size_t>(dataset.height) * dataset.width;
  for (auto& s : out.samples) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < hw; ++k) {
        float& v = s.image[c * hw + k];
        v = (v - mean[c]) / std[c];
      }
    }
  }
  out.normalization = Normalization{mean, std};
  return out;
}

// ---------------------------------------------------------------------------

void export_png_folder(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw ArtifactError("cannot write " + (dir / "manifest.csv").string());
  manifest << "id,path,y,b,split\n";
  for (const auto& s : dataset.samples) {
    Image img{dataset.channels, dataset.height, dataset.width, s.image};
    if (dataset.normalization) {
      const std::size_t hw = static_cast<std::size_t>(dataset.height) * dataset.width;
      for (int c = 0; c < dataset.channels; ++c) {
        for (std::size_t k = 0; k < hw; ++k) {
          float& v = img.pixels[c * hw + k];
          v = v * dataset.normalization->std[c] + dataset.normalization->mean[c];
        }
      }
    }
    const std::string rel = "images/" + s.id + ".png";
    write_png(dir / rel, img);
    manifest << s.id << ',' << rel << ',' << s.y << ',' << (s.b == kUnknownBias ? "" : std::to_string(s.b)) << ','
             << to_string(s.split) << '\n';
  }
}

void save_dataset(const fs::path& path, const Dataset& dataset) {
  json meta;
  meta["kind"] = "dataset";
  meta["num_classes"] = dataset.num_classes;
  meta["channels"] = dataset.channels;
  meta["height"] = dataset.height;
  meta["width"] = dataset.width;
  meta["bias_attributes"] = dataset.bias_attributes;
  meta["source"] = dataset.source;
  if (dataset.normalization) {
    meta["normalization"] = {{"mean", dataset.normalization->mean}, {"std", dataset.normalization->std}};
  }
  json samples = json::array();
  for (const auto& s : dataset.samples) {
    samples.push_back({{"id", s.id},
                       {"y", s.y},
                       {"b", s.b},
                       {"c", to_string(s.c)},
                       {"split", to_string(s.split)},
                       {"synthetic", s.synthetic}});
  }
  meta["samples"] = std::move(samples);
  std::vector<std::size_t> all(dataset.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  write_container(path, meta, {{"images", dataset.batch(all)}});
}

Dataset load_dataset(const fs::path& path) {
  const Container c = read_container(path);
  if (c.meta.value("kind", "") != "dataset") throw ArtifactError(path.string() + " is not a dataset artifact");
  Dataset d;
  d.num_classes = c.meta.at("num_classes");
  d.channels = c.meta.at("channels");
  d.height = c.meta.at("height");
  d.width = c.meta.at("width");
  d.bias_attributes = c.meta.at("bias_attributes").get<std::vector<std::string>>();
  d.source = c.meta.value("source", json::object());
  if (c.meta.contains("normalization")) {
    d.normalization = Normalization{c.meta["normalization"]["mean"].get<std::vector<float>>(),
                                    c.meta["normalization"]["std"].get<std::vector<float>>()};
  }
  const Tensor& images = c.at("images");
  const std::size_t n = d.image_numel();
  const auto& samples = c.meta.at("samples");
  if (images.numel() != samples.size() * n) throw ArtifactError(path.string() + ": image blob size mismatch");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& m = samples[i];
    LabeledSample s;
    s.id = m.at("id");
    s.y = m.at("y");
    s.b = m.at("b");
    s.c = alignment_from_string(m.at("c"));
    s.split = split_from_string(m.at("split"));
    s.synthetic = m.value("synthetic", false);
    s.image.assign(images.data() + i * n, images.data() + (i + 1) * n);
    d.samples.push_back(std::move(s));
  }
  return d;
}

// ---------------------------------------------------------------------------

std::optional<int> color_oracle(std::span<const float> image, int channels, int height, int width,
                                const std::vector<std::string>& bias_attributes) {
  constexpr float kAcceptRadius = 0.3F;
  std::vector<std::vector<float>> border(channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (y != 0 && y != height - 1 && x != 0 && x != width - 1) continue;
      for (int c = 0; c < channels; ++c) {
        border[c].push_back(image[(static_cast<std::size_t>(c) * height + y) * width + x]);
      }
    }
  }
  std::array<float, 3> median{};
  for (int c = 0; c < channels; ++c) {
    auto& v = border[c];
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    median[c] = v[v.size() / 2];
  }
  int best = -1;
  float best_dist = std::numeric_limits<float>::max();
  for (std::size_t a = 0; a < bias_attributes.size(); ++a) {
    const auto rgb = palette_rgb(bias_attributes[a]);
    float dist = 0.0F;
    if (channels == 1) {
      dist = std::abs(median[0] - luminance(rgb));
    } else {
      for (int c = 0; c < 3; ++c) dist += (median[c] - rgb[c]) * (median[c] - rgb[c]);
      dist = std::sqrt(dist);
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<int>(a);
    }
  }
  if (best < 0 || best_dist > kAcceptRadius) return std::nullopt;
  return best;
}

}  // namespace ddb::corpus
