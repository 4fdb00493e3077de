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

#include "ddb/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "ddb/errors.hpp"
#include "ddb/harness/hash.hpp"

namespace ddb::harness {

using nlohmann::json;

namespace {

json build_defaults() {
  corpus::BiasedDatasetSpec spec;
  json dataset = spec.to_json();
  dataset["kind"] = "generated";
  dataset["root"] = "";
  dataset["manifest"] = "";

  // Desk-scale diffusion: 100 steps with the endpoints scaled so that the
  // total noise injected matches the 1000-step schedule.
  diffusion::CDPMConfig cdpm;
  cdpm.T = 100;
  cdpm.beta_1 = 1e-3;
  cdpm.beta_T = 0.28;
  cdpm.train_iterations = 3000;
  cdpm.lr = 1e-3;

  training::ClassifierTrainConfig cls;
  cls.lr = 1e-3;
  cls.epochs = 2;
  json amp = cls.to_json();
  amp["synthetic_per_class"] = 500;
  amp["gamma"] = 3.0;
  amp["labeling_mode"] = "filtered";
  amp["per_class_stats"] = false;
  amp["allow_real"] = false;

  debias::RecipeConfig recipe;
  recipe.train = cls;
  recipe.train.epochs = 100;

  return {{"dataset", dataset},
          {"diffusion", cdpm.to_json()},
          {"guidance", {{"w", 1.0}}},
          {"amplifier", amp},
          {"recipe", recipe.to_json()},
          {"seeds", {0}},
          {"output_dir", "runs"}};
}

std::string type_name(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

void overlay(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + " must be a JSON object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
      continue;
    }
    if (type_name(slot) != type_name(value)) {
      throw ConfigError("config key '" + path + "' expects a " + type_name(slot) + ", got " + type_name(value));
    }
    if (slot.is_number_integer() && value.is_number_float()) {
      const double d = value.get<double>();
      if (d != std::floor(d)) throw ConfigError("config key '" + path + "' expects an integer");
      slot = static_cast<long long>(d);
      continue;
    }
    slot = value;
  }
}

std::vector<std::string> split_dotted(const std::string& key) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty config key");
  return parts;
}

template <typename Fn>
auto as_config_error(const std::string& section, Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError& e) {
    throw ConfigError(section + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

std::filesystem::path resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

const json& default_config() {
  static const json doc = build_defaults();
  return doc;
}

ExperimentConfig resolve_config(const json& user, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  c.base_dir = base_dir;
  c.doc = default_config();
  overlay(c.doc, user, "");
  const json& d = c.doc;

  const json& ds = d.at("dataset");
  c.dataset.kind = ds.at("kind").get<std::string>();
  if (c.dataset.kind == "generated") {
    c.dataset.spec = as_config_error("dataset", [&] { return corpus::BiasedDatasetSpec::from_json(ds).resolved(); });
    as_config_error("dataset", [&] {
      c.dataset.spec.validate();
      return 0;
    });
  } else if (c.dataset.kind == "ingest") {
    c.dataset.root = resolve_path(ds.at("root").get<std::string>(), base_dir);
    c.dataset.manifest = resolve_path(ds.at("manifest").get<std::string>(), base_dir);
    if (c.dataset.root.empty() || c.dataset.manifest.empty()) {
      throw ConfigError("dataset: ingest requires root and manifest");
    }
    auto& io = c.dataset.ingest;
    io.num_classes = ds.at("num_classes").get<int>();
    io.bias_attributes = ds.at("bias_attributes").get<std::vector<std::string>>();
    const auto hw = ds.at("image_size").get<std::vector<int>>();
    if (hw.size() != 2) throw ConfigError("dataset: image_size must be [height, width]");
    io.height = hw[0];
    io.width = hw[1];
    io.channels = ds.at("channels").get<int>();
    if (io.bias_attributes.empty()) throw ConfigError("dataset: ingest requires bias_attributes");
  } else {
    throw ConfigError("dataset: kind must be 'generated' or 'ingest', got '" + c.dataset.kind + "'");
  }

  c.diffusion = as_config_error("diffusion", [&] { return diffusion::CDPMConfig::from_json(d.at("diffusion")); });
  as_config_error("diffusion", [&] {
    c.diffusion.validate();
    return 0;
  });

  c.guidance_w = d.at("guidance").at("w").get<double>();
  if (!std::isfinite(c.guidance_w)) throw ConfigError("guidance: w must be finite");

  const json& a = d.at("amplifier");
  c.amplifier.train = training::ClassifierTrainConfig::from_json(a);
  c.amplifier.train.validate("amplifier");
  c.amplifier.synthetic_per_class = a.at("synthetic_per_class").get<int>();
  if (c.amplifier.synthetic_per_class < 1) throw ConfigError("amplifier: synthetic_per_class must be positive");
  c.amplifier.gamma = a.at("gamma").get<double>();
  if (!std::isfinite(c.amplifier.gamma) || c.amplifier.gamma < 0.0) {
    throw ConfigError("amplifier: gamma must be a finite non-negative number");
  }
  c.amplifier.labeling_mode = amplifier::labeling_mode_from_string(a.at("labeling_mode").get<std::string>());
  c.amplifier.per_class_stats = a.at("per_class_stats").get<bool>();
  c.amplifier.allow_real = a.at("allow_real").get<bool>();

  c.recipe = debias::RecipeConfig::from_json(d.at("recipe"));

  for (const auto& s : d.at("seeds")) {
    if (!s.is_number_integer() || s.get<long long>() < 0) throw ConfigError("seeds must be non-negative integers");
    c.seeds.push_back(s.get<std::uint64_t>());
  }
  if (c.seeds.empty()) throw ConfigError("seeds must be non-empty");
  c.output_dir = d.at("output_dir").get<std::string>();
  if (c.output_dir.empty()) throw ConfigError("output_dir must be non-empty");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json user;
  try {
    user = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return resolve_config(user, path.parent_path());
}

std::string ExperimentConfig::hash() const {
  json j = doc;
  j.erase("seeds");
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

std::string ExperimentConfig::comparison_hash() const {
  json j = doc;
  j.erase("seeds");
  j.erase("output_dir");
  j["recipe"].erase("id");
  return sha256_hex(j.dump());
}

void set_override(json& doc, const std::string& dotted_key, const std::string& value) {
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  json patch = parsed;
  const auto parts = split_dotted(dotted_key);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  // Validate the key against the schema before touching the document.
  json probe = default_config();
  overlay(probe, patch, "");
  json* slot = &doc;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!slot->contains(parts[i])) (*slot)[parts[i]] = json::object();
    slot = &(*slot)[parts[i]];
  }
  (*slot)[parts.back()] = parsed;
}

json get_dotted(const json& doc, const std::string& dotted_key) {
  const json* slot = &doc;
  for (const auto& part : split_dotted(dotted_key)) {
    if (!slot->is_object() || !slot->contains(part)) throw ConfigError("unknown config key '" + dotted_key + "'");
    slot = &slot->at(part);
  }
  return *slot;
}

GridAxis parse_grid_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw ConfigError("--vary expects key=v1,v2,... got '" + text + "'");
  }
  GridAxis axis;
  axis.key = text.substr(0, eq);
  std::stringstream ss(text.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ',')) {
    if (v.empty()) throw ConfigError("--vary " + axis.key + ": empty value");
    axis.values.push_back(v);
  }
  get_dotted(default_config(), axis.key);
  return axis;
}

}  // namespace ddb::harness
