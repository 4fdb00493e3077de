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

#include "ddb/harness/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "ddb/amplifier.hpp"
#include "ddb/corpus.hpp"
#include "ddb/debias.hpp"
#include "ddb/diffusion.hpp"
#include "ddb/errors.hpp"
#include "ddb/eval.hpp"
#include "ddb/harness/hash.hpp"
#include "ddb/rng.hpp"
#include "ddb/training.hpp"

namespace ddb::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kData = "data.ddb";
constexpr const char* kCdpm = "cdpm.ckpt";
constexpr const char* kSynthetic = "synthetic.ddb";
constexpr const char* kGenBias = "generation_bias.json";
constexpr const char* kAmplifier = "amplifier.ckpt";
constexpr const char* kAmplifierInfo = "amplifier.json";
constexpr const char* kScores = "scores.csv";
constexpr const char* kScoreStats = "scores.json";
constexpr const char* kPseudo = "pseudo_labels.csv";
constexpr const char* kPseudoInfo = "pseudo_labels.json";
constexpr const char* kHistogram = "loss_histogram.svg";

void write_json(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ArtifactError("cannot write " + path.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ArtifactError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out << text;
}

// JSON numbers cannot be NaN.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

bool oracle_available(const corpus::Dataset& d) {
  const auto& names = corpus::palette_names();
  return std::all_of(d.bias_attributes.begin(), d.bias_attributes.end(),
                     [&](const std::string& a) { return std::find(names.begin(), names.end(), a) != names.end(); });
}

corpus::Dataset normalized_real(const corpus::Dataset& raw) {
  const auto n = corpus::estimate_normalization(raw, corpus::Split::kTrain);
  return corpus::normalize(raw, n.mean, n.std);
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"gen-data", "train-cdpm",   "sample", "train-ba",
                                              "score",    "pseudo-label", "train",  "eval"};
  return names;
}

std::string to_string(StageOutcome o) {
  switch (o) {
    case StageOutcome::kRan: return "ran";
    case StageOutcome::kUpToDate: return "up-to-date";
    case StageOutcome::kRestored: return "restored";
  }
  return "?";
}

fs::path run_dir_for(const ExperimentConfig& config, std::uint64_t seed) {
  return config.output_dir / ("seed-" + std::to_string(seed));
}

fs::path cache_dir_for(const ExperimentConfig& config) { return config.output_dir / ".cache"; }

Run::Run(ExperimentConfig config, std::uint64_t seed, fs::path dir, RunOptions options)
    : config_(std::move(config)), seed_(seed), dir_(std::move(dir)), options_(std::move(options)) {
  fs::create_directories(dir_);
  const fs::path mpath = dir_ / "manifest.json";
  if (fs::exists(mpath)) {
    manifest_ = read_json(mpath);
    if (manifest_.value("seed", seed_) != seed_) {
      throw ConfigError(dir_.string() + " holds a run for seed " + std::to_string(manifest_.value("seed", 0ULL)));
    }
  }
  if (!manifest_.is_object()) manifest_ = json::object();
  if (!manifest_.contains("stages")) manifest_["stages"] = json::object();
  if (!manifest_.contains("artifacts")) manifest_["artifacts"] = json::object();
  manifest_["seed"] = seed_;
  manifest_["config_hash"] = config_.hash();
  manifest_["config"] = config_.doc;
  if (!manifest_.contains("status")) manifest_["status"] = "partial";
}

void Run::log(const std::string& msg) const {
  if (options_.log) {
    options_.log(msg);
  } else {
    std::cerr << "[ddb] " << msg << std::endl;
  }
}

void Run::save_manifest() const { write_json(dir_ / "manifest.json", manifest_); }

std::string Run::recipe_tag() const { return debias::to_string(config_.recipe.id); }

fs::path Run::artifact(const std::string& name) const {
  const json& arts = manifest_.at("artifacts");
  if (!arts.contains(name)) {
    throw ConfigError("artifact '" + name + "' is missing from " + dir_.string() + "; run the stage that produces it first");
  }
  const fs::path path = dir_ / name;
  if (!fs::exists(path)) throw ArtifactError("artifact '" + name + "' is recorded but " + path.string() + " is gone");
  const std::string expected = arts.at(name).at("sha256").get<std::string>();
  const std::string actual = sha256_file(path);
  if (actual != expected) {
    throw ArtifactError("artifact '" + name + "' hash mismatch: manifest " + expected.substr(0, 12) + ", file " +
                        actual.substr(0, 12));
  }
  return path;
}

bool Run::outputs_intact(const json& entry) const {
  if (!entry.contains("artifacts")) return false;
  for (const auto& [name, sha] : entry.at("artifacts").items()) {
    const fs::path p = dir_ / name;
    if (!fs::exists(p) || sha256_file(p) != sha.get<std::string>()) return false;
  }
  return true;
}

bool Run::restore_from_cache(const std::string& key, json& entry) {
  if (options_.cache_dir.empty()) return false;
  const fs::path slot = options_.cache_dir / key;
  if (!fs::exists(slot / "entry.json")) return false;
  const json cached = read_json(slot / "entry.json");
  for (const auto& [name, sha] : cached.at("artifacts").items()) {
    const fs::path p = slot / name;
    if (!fs::exists(p) || sha256_file(p) != sha.get<std::string>()) {
      log("cache entry " + key.substr(0, 12) + " is damaged; recomputing");
      return false;
    }
  }
  for (const auto& [name, sha] : cached.at("artifacts").items()) {
    fs::copy_file(slot / name, dir_ / name, fs::copy_options::overwrite_existing);
  }
  entry = cached;
  return true;
}

void Run::store_in_cache(const std::string& key, const json& entry) {
  if (options_.cache_dir.empty()) return;
  const fs::path slot = options_.cache_dir / key;
  if (fs::exists(slot / "entry.json")) return;
  const fs::path tmp = options_.cache_dir / (key + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  for (const auto& [name, sha] : entry.at("artifacts").items()) fs::copy_file(dir_ / name, tmp / name);
  write_json(tmp / "entry.json", entry);
  fs::remove_all(slot);
  fs::rename(tmp, slot);
}

StageReport Run::execute(const std::string& stage, const json& key_material, const std::vector<std::string>& inputs,
                         const std::vector<std::string>& optional_inputs,
                         const std::function<std::vector<std::string>()>& body) {
  json upstream = json::object();
  for (const auto& name : inputs) {
    artifact(name);
    upstream[name] = manifest_["artifacts"][name]["sha256"];
  }
  for (const auto& name : optional_inputs) {
    if (!manifest_["artifacts"].contains(name)) continue;
    artifact(name);
    upstream[name] = manifest_["artifacts"][name]["sha256"];
  }
  const std::string key = sha256_hex(json{{"stage", stage}, {"config", key_material}, {"inputs", upstream}}.dump());

  StageReport report{stage, StageOutcome::kRan, 0.0};
  json& stages = manifest_["stages"];
  json entry;
  if (!options_.force && stages.contains(stage) && stages[stage].value("key", "") == key &&
      outputs_intact(stages[stage])) {
    report.outcome = StageOutcome::kUpToDate;
    log(stage + ": up to date");
    return report;
  }
  if (!options_.force && restore_from_cache(key, entry)) {
    report.outcome = StageOutcome::kRestored;
    log(stage + ": restored from cache");
  } else {
    log(stage + ": running");
    if (stages.contains(stage)) {
      const json old_artifacts = stages[stage].value("artifacts", json::object());
      for (const auto& [name, sha] : old_artifacts.items()) manifest_["artifacts"].erase(name);
      stages.erase(stage);
      save_manifest();
    }
    stage_key_ = key;
    const auto start = std::chrono::steady_clock::now();
    const std::vector<std::string> outputs = body();
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    entry = {{"key", key}, {"duration_s", report.seconds}, {"artifacts", json::object()}};
    for (const auto& name : outputs) entry["artifacts"][name] = sha256_file(dir_ / name);
    store_in_cache(key, entry);
    log(stage + ": done in " + fmt(report.seconds) + " s");
  }
  for (const auto& [name, sha] : entry.at("artifacts").items()) {
    manifest_["artifacts"][name] = {{"stage", stage}, {"sha256", sha}};
  }
  stages[stage] = entry;
  save_manifest();
  return report;
}

StageReport Run::run_stage(const std::string& stage) {
  if (stage == "gen-data") return gen_data();
  if (stage == "train-cdpm") return train_cdpm();
  if (stage == "sample") return sample();
  if (stage == "train-ba") return train_ba();
  if (stage == "score") return score();
  if (stage == "pseudo-label") return pseudo_label();
  if (stage == "train") return train();
  if (stage == "eval") return eval();
  throw UsageError("unknown stage '" + stage + "'");
}

std::vector<StageReport> Run::run_pipeline() {
  std::vector<StageReport> reports;
  manifest_["status"] = "running";
  save_manifest();
  try {
    for (const auto& s : stage_names()) reports.push_back(run_stage(s));
  } catch (const std::exception& e) {
    manifest_["status"] = "failed";
    manifest_["error"] = e.what();
    save_manifest();
    throw;
  }
  manifest_["status"] = "complete";
  manifest_.erase("error");
  save_manifest();
  return reports;
}

// ---------------------------------------------------------------------------

StageReport Run::gen_data() {
  json material = config_.doc.at("dataset");
  if (config_.dataset.kind == "ingest") material["manifest_sha256"] = sha256_file(config_.dataset.manifest);
  return execute("gen-data", material, {}, {}, [&] {
    corpus::Dataset d = config_.dataset.kind == "ingest"
                            ? corpus::ingest_image_folder(config_.dataset.root, config_.dataset.manifest,
                                                          config_.dataset.ingest)
                            : corpus::generate_biased_dataset(config_.dataset.spec);
    d.source["stage_key"] = stage_key_;
    corpus::save_dataset(dir_ / kData, d);
    log("gen-data: " + std::to_string(d.samples.size()) + " samples");
    return std::vector<std::string>{kData};
  });
}

StageReport Run::train_cdpm() {
  const json material = {{"diffusion", config_.doc.at("diffusion")}, {"seed", seed_}};
  return execute("train-cdpm", material, {kData}, {}, [&] {
    const corpus::Dataset raw = corpus::load_dataset(artifact(kData));
    nn::UNetDenoiser unet(diffusion::denoiser_shape(raw, config_.diffusion), derive_seed(seed_, {0xCD}));
    const long every = std::max<long>(1, config_.diffusion.train_iterations / 10);
    const auto result = diffusion::train_cdpm(unet, raw, config_.diffusion, derive_seed(seed_, {0xCD, 1}),
                                              [&](long it, double loss) {
                                                if ((it + 1) % every == 0) {
                                                  log("train-cdpm: iteration " + std::to_string(it + 1) +
                                                      " loss " + fmt(loss));
                                                }
                                              });
    diffusion::save_cdpm(dir_ / kCdpm, unet, config_.diffusion,
                         {{"stage_key", stage_key_}, {"seed", seed_}, {"final_loss", num(result.final_loss)}});
    return std::vector<std::string>{kCdpm};
  });
}

StageReport Run::sample() {
  const json material = {{"guidance", config_.doc.at("guidance")},
                         {"synthetic_per_class", config_.amplifier.synthetic_per_class},
                         {"seed", seed_}};
  return execute("sample", material, {kData, kCdpm}, {}, [&] {
    const corpus::Dataset raw = corpus::load_dataset(artifact(kData));
    auto loaded = diffusion::load_cdpm(artifact(kCdpm));
    const auto& cc = loaded.config;
    const auto schedule = diffusion::build_linear_schedule(cc.T, cc.beta_1, cc.beta_T);
    const diffusion::GuidanceConfig g{config_.guidance_w, config_.amplifier.synthetic_per_class,
                                      derive_seed(seed_, {0x5A})};
    corpus::Dataset synth = diffusion::generate_synthetic_dataset(*loaded.model, schedule, g, raw);
    synth.source["stage_key"] = stage_key_;
    corpus::save_dataset(dir_ / kSynthetic, synth);

    json bias = {{"stage_key", stage_key_}, {"w", config_.guidance_w}, {"samples_per_class", g.samples_per_class}};
    bias["rho_synth"] = nullptr;
    bias["rho_train"] = nullptr;
    if (oracle_available(raw)) {
      const auto gr = eval::measure_generation_bias(raw, eval::color_oracle_for(raw), corpus::Split::kTrain);
      bias["rho_train"] = gr.rho;
      try {
        const auto gs = eval::measure_generation_bias(synth, eval::color_oracle_for(synth));
        bias["rho_synth"] = gs.rho;
        bias["rho_synth_per_class"] = gs.per_class;
        bias["oracle_failures"] = gs.oracle_failures;
        log("sample: rho_train " + fmt(gr.rho) + " -> rho_synth " + fmt(gs.rho));
      } catch (const OracleError& e) {
        // The measurement is diagnostic; unrecognisable generations do not
        // stop the pipeline.
        bias["oracle_error"] = e.what();
        log(std::string("sample: WARNING generation bias not measured: ") + e.what());
      }
    }
    write_json(dir_ / kGenBias, bias);
    return std::vector<std::string>{kSynthetic, kGenBias};
  });
}

StageReport Run::train_ba() {
  const bool real = config_.amplifier.allow_real;
  json material = config_.amplifier.train.to_json();
  material["allow_real"] = real;
  material["seed"] = seed_;
  std::vector<std::string> inputs{kData};
  if (!real) inputs.push_back(kSynthetic);
  return execute("train-ba", material, inputs, {}, [&] {
    const corpus::Dataset raw = corpus::load_dataset(artifact(kData));
    const auto norm = corpus::estimate_normalization(raw, corpus::Split::kTrain);
    corpus::Dataset source;
    if (real) {
      log("train-ba: WARNING training the bias amplifier on real data (--allow-real-ba)");
      source = corpus::normalize(raw, norm.mean, norm.std).subset(corpus::Split::kTrain);
    } else {
      source = corpus::normalize(corpus::load_dataset(artifact(kSynthetic)), norm.mean, norm.std);
    }
    auto model = amplifier::train_amplifier(source, config_.amplifier.train, seed_, real);
    amplifier::save_amplifier(dir_ / kAmplifier, model, {{"stage_key", stage_key_}, {"seed", seed_}});
    write_json(dir_ / kAmplifierInfo, {{"stage_key", stage_key_},
                                       {"provenance", model.provenance},
                                       {"final_train_accuracy", num(model.final_train_accuracy)}});
    log("train-ba: train accuracy " + fmt(model.final_train_accuracy));
    return std::vector<std::string>{kAmplifier, kAmplifierInfo};
  });
}

StageReport Run::score() {
  const json material = {{"allow_real", config_.amplifier.allow_real}};
  return execute("score", material, {kData, kAmplifier}, {}, [&] {
    const corpus::Dataset real = normalized_real(corpus::load_dataset(artifact(kData)));
    auto model = amplifier::load_amplifier(artifact(kAmplifier));
    const auto result = amplifier::score_dataset(model, real, config_.amplifier.allow_real);
    const fs::path side = dir_ / kScoreStats;
    amplifier::write_pseudo_labels(dir_ / kScores, side, result.records, result.stats, {});
    write_json(side, {{"stage_key", stage_key_},
                      {"mu", result.stats.mu},
                      {"sigma", result.stats.sigma},
                      {"n", result.stats.n},
                      {"provenance", model.provenance}});
    return std::vector<std::string>{kScores, kScoreStats};
  });
}

StageReport Run::pseudo_label() {
  const json material = {{"gamma", config_.amplifier.gamma},
                         {"labeling_mode", amplifier::to_string(config_.amplifier.labeling_mode)},
                         {"per_class_stats", config_.amplifier.per_class_stats}};
  return execute("pseudo-label", material, {kData, kScores}, {}, [&] {
    const corpus::Dataset raw = corpus::load_dataset(artifact(kData));
    const auto records = amplifier::read_pseudo_labels(artifact(kScores));
    const auto stats = amplifier::compute_loss_stats(records);
    const amplifier::PseudoLabelOptions opts{config_.amplifier.labeling_mode, config_.amplifier.gamma,
                                             config_.amplifier.per_class_stats};
    const auto labeled = amplifier::pseudo_label(records, stats, opts);
    const fs::path side = dir_ / kPseudoInfo;
    amplifier::write_pseudo_labels(dir_ / kPseudo, side, labeled, stats, opts);
    json info = read_json(side);
    info["stage_key"] = stage_key_;
    try {
      const auto q = amplifier::pseudo_label_precision(labeled, raw);
      info["precision"] = num(q.precision);
      info["recall"] = num(q.recall);
      info["flagged"] = q.flagged;
      log("pseudo-label: flagged " + std::to_string(q.flagged) + ", precision " +
          (std::isnan(q.precision) ? "n/a" : fmt(q.precision)) + ", recall " +
          (std::isnan(q.recall) ? "n/a" : fmt(q.recall)));
    } catch (const UsageError&) {
      info["precision"] = nullptr;
      info["recall"] = nullptr;
    }
    write_json(side, info);
    if (amplifier::count_conflicting(labeled) == 0) {
      log("pseudo-label: WARNING no sample was flagged bias-conflicting");
    }
    write_text(dir_ / kHistogram, eval::loss_histogram_svg(labeled, stats, config_.amplifier.gamma));
    return std::vector<std::string>{kPseudo, kPseudoInfo, kHistogram};
  });
}

StageReport Run::train() {
  const std::string tag = recipe_tag();
  const json material = {{"recipe", config_.doc.at("recipe")}, {"seed", seed_}};
  std::vector<std::string> inputs{kData};
  if (config_.recipe.id == debias::RecipeId::kRecipe1) inputs.push_back(kPseudo);
  if (config_.recipe.id == debias::RecipeId::kRecipe2) inputs.push_back(kAmplifier);
  return execute("train-" + tag, material, inputs, {}, [&] {
    const corpus::Dataset real = normalized_real(corpus::load_dataset(artifact(kData)));
    std::optional<debias::GroupAssignment> groups;
    std::optional<amplifier::AmplifierModel> amp;
    debias::RecipeInputs in{&real, nullptr, nullptr};
    if (config_.recipe.id == debias::RecipeId::kRecipe1) {
      groups = debias::make_groups(real, amplifier::read_pseudo_labels(artifact(kPseudo)));
      in.groups = &*groups;
    }
    if (config_.recipe.id == debias::RecipeId::kRecipe2) {
      amp = amplifier::load_amplifier(artifact(kAmplifier));
      in.amplifier = &amp->net;
    }
    auto result = debias::train_recipe(config_.recipe, in, seed_, [&](const std::string& w) {
      log("train-" + tag + ": WARNING " + w);
    });
    const std::string ckpt = "target-" + tag + ".ckpt", logname = "train_log-" + tag + ".jsonl";
    training::save_classifier(dir_ / ckpt, result.model,
                              {{"stage_key", stage_key_}, {"recipe", tag}, {"seed", seed_}});
    debias::write_training_log(dir_ / logname, result.log);
    if (!result.log.empty()) log("train-" + tag + ": final train accuracy " + fmt(result.log.back().train_acc));
    return std::vector<std::string>{ckpt, logname};
  });
}

StageReport Run::eval() {
  const std::string tag = recipe_tag();
  const std::string ckpt = "target-" + tag + ".ckpt";
  const json material = {{"config_hash", config_.hash()}, {"seed", seed_}};
  return execute("eval-" + tag, material, {kData, ckpt}, {kGenBias, kPseudoInfo, kAmplifierInfo}, [&] {
    const corpus::Dataset real = normalized_real(corpus::load_dataset(artifact(kData)));
    auto loaded = training::load_classifier(artifact(ckpt));
    const auto test = eval::evaluate_groups(loaded.model, real, corpus::Split::kTest);

    json doc = config_.doc;
    doc.erase("output_dir");
    json m = {{"config_hash", config_.hash()},
              {"comparison_hash", config_.comparison_hash()},
              {"config", doc},
              {"seed", seed_},
              {"recipe", tag},
              {"test", test.to_json()}};
    if (!real.indices(corpus::Split::kVal).empty()) {
      m["val"] = eval::evaluate_groups(loaded.model, real, corpus::Split::kVal).to_json();
    }
    const auto props = eval::train_group_proportions(real);
    const auto minority = eval::minority_groups(real);
    try {
      m["gaps"] = eval::evaluate_gaps(test, props, minority).to_json();
    } catch (const UsageError& e) {
      m["gaps"] = nullptr;
      log("eval-" + tag + ": gap metrics skipped: " + e.what());
    }
    m["train_group_proportions"] = props;
    const auto& arts = manifest_["artifacts"];
    if (arts.contains(kGenBias)) m["generation_bias"] = read_json(artifact(kGenBias));
    if (arts.contains(kPseudoInfo)) m["pseudo_labels"] = read_json(artifact(kPseudoInfo));
    if (arts.contains(kAmplifierInfo)) m["amplifier"] = read_json(artifact(kAmplifierInfo));
    const std::string mname = "metrics-" + tag + ".json";
    write_json(dir_ / mname, m);

    const std::string svg = "group_acc-" + tag + ".svg";
    write_text(dir_ / svg, eval::group_accuracy_svg(test, real.bias_attributes,
                                                    tag + " seed " + std::to_string(seed_)));

    const auto opt = [&](const char* art, const char* field) -> std::string {
      if (!m.contains(art) || !m[art].contains(field) || m[art][field].is_null()) return "";
      return fmt(m[art][field].get<double>());
    };
    const std::string csv = "summary-" + tag + ".csv";
    std::ofstream out(dir_ / csv);
    out << "config_hash,comparison_hash,seed,recipe,average_acc,worst_group_acc,conflicting_acc,id_acc,rho_synth,"
           "pl_precision,pl_recall\n";
    out << config_.hash().substr(0, 12) << "," << config_.comparison_hash().substr(0, 12) << "," << seed_ << ","
        << tag << "," << fmt(test.average_acc) << "," << fmt(test.worst_group_acc) << ","
        << fmt(test.conflicting_acc) << "," << (m["gaps"].is_null() ? "" : fmt(m["gaps"]["id_acc"].get<double>()))
        << "," << opt("generation_bias", "rho_synth") << "," << opt("pseudo_labels", "precision") << ","
        << opt("pseudo_labels", "recall") << "\n";
    out.close();
    log("eval-" + tag + ": avg " + fmt(test.average_acc) + " wga " + fmt(test.worst_group_acc) + " conflicting " +
        fmt(test.conflicting_acc));
    return std::vector<std::string>{mname, svg, csv};
  });
}

}  // namespace ddb::harness
