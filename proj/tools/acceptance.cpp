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

// Acceptance suite: one PASS/FAIL line per criterion. Criteria 4-8 run the
// toy pipeline through the harness; reruns reuse the content-addressed cache
// under --out.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ddb/amplifier.hpp"
#include "ddb/corpus.hpp"
#include "ddb/debias.hpp"
#include "ddb/diffusion.hpp"
#include "ddb/errors.hpp"
#include "ddb/harness/config.hpp"
#include "ddb/harness/experiments.hpp"
#include "ddb/harness/pipeline.hpp"
#include "ddb/nn/models.hpp"

using namespace ddb;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

std::string num(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pm(const harness::MeanStd& s) { return num(s.mean) + " +/- " + num(s.std) + " (n=" + std::to_string(s.n) + ")"; }

// Collects failed sub-checks; the criterion passes when none failed.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failed_.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    if (failed_.empty()) return {true, summary};
    std::string d = "failed: ";
    for (std::size_t i = 0; i < failed_.size(); ++i) d += (i ? "; " : "") + failed_[i];
    return {false, d};
  }

 private:
  std::vector<std::string> failed_;
};

Tensor scalar(float v) { return Tensor({1, 1, 1, 1}, std::vector<float>{v}); }

class ConstantPredictor : public nn::NoisePredictor {
 public:
  ConstantPredictor(float cond, float uncond) : cond_(cond), uncond_(uncond) {}
  Tensor predict(const Tensor& x, std::span<const int>, std::span<const int> c) override {
    Tensor out(x.shape());
    const std::size_t per = x.numel() / static_cast<std::size_t>(x.dim(0));
    for (int i = 0; i < x.dim(0); ++i) {
      for (std::size_t k = 0; k < per; ++k) out[i * per + k] = c[i] == 2 ? uncond_ : cond_;
    }
    return out;
  }
  int null_condition() const override { return 2; }

 private:
  float cond_, uncond_;
};

// ---------------------------------------------------------------------------

Outcome hand_computed_oracles() {
  Checks c;
  const auto quarter = diffusion::NoiseSchedule({0.75});
  const double xt = diffusion::forward_diffuse(scalar(1.0F), 1, scalar(2.0F), quarter)[0];
  c.expect(rel(xt, 0.5 + std::sqrt(0.75) * 2.0) < 1e-6 && std::abs(xt - 2.2321) < 5e-5, "forward_diffuse " + num(xt, 6));

  const auto two = diffusion::NoiseSchedule({1.0 - 0.5 / 0.99, 0.01});
  const double xr = diffusion::reverse_step(scalar(1.0F), 2, scalar(0.3F), two, nullptr)[0];
  const double want_r = (1.0 / std::sqrt(0.99)) * (1.0 - (0.01 / std::sqrt(0.5)) * 0.3);
  c.expect(rel(xr, want_r) < 1e-6, "reverse_step " + num(xr, 7));

  const double g = diffusion::guided_combination(scalar(0.5F), scalar(0.2F), 2.0)[0];
  c.expect(rel(g, 1.1) < 1e-6, "cfg " + num(g, 6));

  const std::vector<amplifier::PseudoLabelRecord> recs = {
      {"a", 0, 0, 0.1}, {"b", 1, 1, 0.2}, {"c", 0, 1, 0.3}, {"d", 1, 0, 2.4}};
  const auto stats = amplifier::compute_loss_stats(recs);
  c.expect(rel(stats.mu, 0.75) < 1e-6 && rel(stats.sigma, std::sqrt(0.9125)) < 1e-6, "loss stats");
  const auto f = amplifier::pseudo_label_filtered(recs, stats, 1.0);
  c.expect(f[0].c_hat == 0 && f[1].c_hat == 0 && f[2].c_hat == 0 && f[3].c_hat == 1, "filtered rule");
  const auto e = amplifier::pseudo_label_error_set(recs);
  c.expect(e[0].c_hat == 0 && e[1].c_hat == 0 && e[2].c_hat == 1 && e[3].c_hat == 1, "error set");

  const double r = debias::reweight_factor(2.0, 0.5);
  c.expect(rel(r, 0.8) < 1e-6 && rel(r * 0.5, 0.4) < 1e-6, "r " + num(r, 6));

  auto q = debias::GDROState::uniform({true, true}, 1.0, false);
  debias::gdro_update(q, std::vector<double>{1.0, 0.0});
  const double q0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  c.expect(rel(q.q[0], q0) < 1e-6 && rel(q.q[1], 1.0 - q0) < 1e-6 && std::abs(q.q[0] - 0.7311) < 5e-5,
           "G-DRO q " + num(q.q[0], 6));
  return c.outcome("x_t " + num(xt) + ", reverse " + num(xr, 7) + ", cfg " + num(g) + ", c_hat {0,0,0,1}, r " +
                   num(r) + ", q " + num(q.q[0]) + "/" + num(q.q[1]));
}

Outcome schedule_and_statistics() {
  Checks c;
  const auto s = diffusion::build_linear_schedule(1000, 1e-4, 0.028);
  c.expect(s.beta(1) == 1e-4 && s.beta(1000) == 0.028, "endpoints");
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) prod *= 1.0 - s.beta(t);
  c.expect(rel(s.alpha_bar(1000), prod) < 1e-12, "alpha_bar_1000");

  const int n = 10000;
  for (int t : {1, 250, 600, 1000}) {
    const float x0v = 0.8F;
    Rng rng(100 + t);
    Tensor eps({n, 1, 1, 1});
    for (float& v : eps.values()) v = rng.normal();
    const Tensor xt = diffusion::forward_diffuse(Tensor({n, 1, 1, 1}, x0v), t, eps, s);
    double sum = 0, sq = 0;
    for (float v : xt.values()) sum += v;
    const double mean = sum / n;
    for (float v : xt.values()) sq += (v - mean) * (v - mean);
    const double var = sq / (n - 1);
    const double want_mean = std::sqrt(s.alpha_bar(t)) * x0v;
    const double want_var = 1.0 - s.alpha_bar(t);
    const bool ok = std::abs(mean - want_mean) < 3.0 * std::sqrt(want_var / n) &&
                    std::abs(var - want_var) < 3.0 * std::sqrt(2.0 * want_var * want_var / (n - 1));
    c.expect(ok, "moments at t=" + std::to_string(t));
  }
  char ab[32];
  std::snprintf(ab, sizeof ab, "%.6e", s.alpha_bar(1000));
  return c.outcome("beta (1e-4, 0.028) exact, alpha_bar_1000 " + std::string(ab) +
                   ", moments within 3 SE at t in {1,250,600,1000}");
}

Outcome cfg_degeneracies() {
  Checks c;
  nn::UNetDenoiser unet(nn::DenoiserShape{}, 3);
  Rng rng(2);
  Tensor x({3, 3, 16, 16});
  for (float& v : x.values()) v = rng.normal();
  const std::vector<int> t{10, 500, 999}, y{0, 1, 1};
  const Tensor cond = unet.predict(x, t, y);
  const Tensor guided = diffusion::cfg_noise(unet, x, t, y, 0.0);
  c.expect(guided.numel() == cond.numel() && std::memcmp(guided.data(), cond.data(), cond.numel() * 4) == 0,
           "w=0 not bitwise conditional");
  ConstantPredictor stub(0.37F, 0.37F);
  const Tensor xs({2, 1, 2, 2}, 0.0F);
  const std::vector<int> ts{1, 2}, ys{0, 1};
  for (double w : {-1.5, 0.0, 0.5, 1.0, 3.0, 7.0}) {
    const Tensor gw = diffusion::cfg_noise(stub, xs, ts, ys, w);
    bool same = true;
    for (float v : gw.values()) same = same && v == 0.37F;
    c.expect(same, "w-dependence at w=" + num(w, 1));
  }
  return c.outcome("w=0 bitwise equal to conditional; equal stubs invariant for w in {-1.5,0,0.5,1,3,7}");
}

// ---------------------------------------------------------------------------

struct Pipelines {
  fs::path out;
  std::vector<std::uint64_t> seeds;
  harness::RunOptions options;
  json base;
  std::map<std::string, harness::SweepResult> sweeps;

  const harness::SweepResult& sweep(const std::string& name, const json& overrides, const std::vector<harness::GridAxis>& axes) {
    auto it = sweeps.find(name);
    if (it != sweeps.end()) return it->second;
    json doc = base;
    doc.merge_patch(overrides);
    const auto cfg = harness::resolve_config(doc);
    std::cerr << "[acceptance] " << name << ": " << axes.size() << " axis/axes x " << seeds.size() << " seeds\n";
    const auto start = std::chrono::steady_clock::now();
    auto res = harness::run_sweep(cfg, axes, seeds, out / name, options);
    std::cerr << "[acceptance] " << name << ": "
              << num(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 1) << " s, "
              << res.failures << " failed\n";
    return sweeps.emplace(name, std::move(res)).first->second;
  }
};

std::vector<const harness::SweepRun*> runs_of(const harness::SweepResult& r, const std::string& recipe) {
  std::vector<const harness::SweepRun*> out;
  for (const auto& run : r.runs) {
    auto it = run.values.find("recipe.id");
    if (it == run.values.end() || it->second == recipe) out.push_back(&run);
  }
  return out;
}

double metric(const harness::SweepRun& r, const std::string& section, const std::string& field) {
  if (r.metrics.is_null() || !r.metrics.contains(section) || !r.metrics[section].contains(field) ||
      r.metrics[section][field].is_null()) {
    return std::nan("");
  }
  return r.metrics[section][field].get<double>();
}

std::vector<double> metric_over(const std::vector<const harness::SweepRun*>& runs, const std::string& section,
                                const std::string& field) {
  std::vector<double> v;
  for (const auto* r : runs) v.push_back(metric(*r, section, field));
  return v;
}

std::string failures_of(const harness::SweepResult& r) {
  std::string s;
  for (const auto& run : r.runs) {
    if (run.status != "complete") s += " [" + run.point + " seed " + std::to_string(run.seed) + ": " + run.error + "]";
  }
  return s;
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
  return s + "]";
}

const std::vector<harness::GridAxis> kRecipeAxes = {{"recipe.id", {"erm", "recipe1", "recipe2"}}};

const harness::SweepResult& biased(Pipelines& p) { return p.sweep("rho-0.95", json::object(), kRecipeAxes); }

Outcome bias_amplification(Pipelines& p) {
  const auto& s = biased(p);
  const auto runs = runs_of(s, "erm");
  if (runs.empty() || s.failures) return {false, "pipeline failures:" + failures_of(s)};
  Checks c;
  std::vector<double> synth, train;
  for (const auto* r : runs) {
    const double rs = metric(*r, "generation_bias", "rho_synth");
    const double rt = metric(*r, "generation_bias", "rho_train");
    synth.push_back(rs);
    train.push_back(rt);
    c.expect(rs > rt, "seed " + std::to_string(r->seed) + " rho_synth " + num(rs) + " <= rho_train " + num(rt));
  }
  return c.outcome("rho_train " + num(train[0]) + " -> rho_synth per seed " + list(synth) + " (500 images/class, w=1)");
}

Outcome pseudo_label_quality(Pipelines& p) {
  const auto& s = biased(p);
  const auto runs = runs_of(s, "recipe1");
  if (runs.empty() || s.failures) return {false, "pipeline failures:" + failures_of(s)};
  Checks c;
  std::vector<double> prec, recall;
  for (const auto* r : runs) {
    const double pr = metric(*r, "pseudo_labels", "precision");
    prec.push_back(pr);
    recall.push_back(metric(*r, "pseudo_labels", "recall"));
    c.expect(pr >= 0.80, "seed " + std::to_string(r->seed) + " precision " + num(pr));

    const auto recs = amplifier::read_pseudo_labels(r->dir / "scores.csv");
    const auto stats = amplifier::compute_loss_stats(recs);
    const auto err = amplifier::pseudo_label_error_set(recs);
    std::vector<int> prev(recs.size(), 1);
    bool laws = true;
    for (double gamma : {0.0, 1.0, 2.0, 3.0, 5.0}) {
      const auto f = amplifier::pseudo_label_filtered(recs, stats, gamma);
      for (std::size_t i = 0; i < recs.size(); ++i) {
        if (f[i].c_hat == 1 && (err[i].c_hat != 1 || f[i].y_hat == f[i].y)) laws = false;
        if (f[i].c_hat > prev[i]) laws = false;
        prev[i] = f[i].c_hat;
      }
    }
    c.expect(laws, "seed " + std::to_string(r->seed) + " subset/monotonicity");
  }
  return c.outcome("gamma=3 precision per seed " + list(prec) + ", recall " + list(recall) +
                   "; flagged sets nested over gamma in {0,1,2,3,5} and inside the error set");
}

Outcome debiasing_gain(Pipelines& p) {
  const auto& s = biased(p);
  if (s.failures) return {false, "pipeline failures:" + failures_of(s)};
  const auto erm = harness::mean_std(metric_over(runs_of(s, "erm"), "test", "worst_group_acc"));
  const auto r1 = harness::mean_std(metric_over(runs_of(s, "recipe1"), "test", "worst_group_acc"));
  const auto r2 = harness::mean_std(metric_over(runs_of(s, "recipe2"), "test", "worst_group_acc"));
  Checks c;
  c.expect(erm.n == 3 && r1.n == 3 && r2.n == 3, "expected 3 seeds per recipe");
  c.expect(r1.mean - erm.mean >= 0.10, "recipe1 gain " + num(r1.mean - erm.mean));
  c.expect(r2.mean - erm.mean >= 0.10, "recipe2 gain " + num(r2.mean - erm.mean));
  const std::string summary = "WGA erm " + pm(erm) + ", recipe1 " + pm(r1) + ", recipe2 " + pm(r2);
  auto o = c.outcome(summary);
  if (!o.pass) o.detail += " | " + summary;
  return o;
}

Outcome unbiased_non_degradation(Pipelines& p) {
  const auto& s = p.sweep("rho-0.5", {{"dataset", {{"rho", 0.5}}}, {"amplifier", {{"synthetic_per_class", 200}}}},
                          {{"recipe.id", {"erm", "recipe1"}}});
  if (s.failures) return {false, "pipeline failures:" + failures_of(s)};
  const auto erm = harness::mean_std(metric_over(runs_of(s, "erm"), "test", "average_acc"));
  const auto r1 = harness::mean_std(metric_over(runs_of(s, "recipe1"), "test", "average_acc"));
  Checks c;
  c.expect(erm.n == 3 && r1.n == 3, "expected 3 seeds per recipe");
  c.expect(r1.mean >= erm.mean - 0.01, "recipe1 below erm - 1 point");
  const std::string summary = "accuracy erm " + pm(erm) + ", recipe1 " + pm(r1);
  auto o = c.outcome(summary);
  if (!o.pass) o.detail += " | " + summary;
  return o;
}

Outcome negative_control(Pipelines& p) {
  const auto& s = biased(p);
  const auto& real = p.sweep("rho-0.95-real-ba", {{"amplifier", {{"allow_real", true}}}}, {});
  if (s.failures || real.failures) return {false, "pipeline failures:" + failures_of(s) + failures_of(real)};
  const auto syn_v = metric_over(runs_of(s, "recipe1"), "test", "worst_group_acc");
  const auto real_v = metric_over(runs_of(real, "recipe1"), "test", "worst_group_acc");
  const auto syn = harness::mean_std(syn_v);
  const auto rl = harness::mean_std(real_v);
  Checks c;
  c.expect(syn.n == 3 && rl.n == 3, "expected 3 seeds");
  for (const auto& run : real.runs) {
    c.expect(run.metrics.value("amplifier", json::object()).value("provenance", "") == "real-override",
             "provenance not recorded");
  }
  c.expect(rl.mean < syn.mean, "real-data amplifier not worse");
  const std::string summary = "recipe1 WGA synthetic-only " + list(syn_v) + " mean " + num(syn.mean) +
                              ", real-data amplifier " + list(real_v) + " mean " + num(rl.mean);
  auto o = c.outcome(summary);
  if (!o.pass) o.detail += " | " + summary;
  return o;
}

// ---------------------------------------------------------------------------

corpus::Dataset small_toy(double rho, int per_class, std::uint64_t seed) {
  corpus::BiasedDatasetSpec spec;
  spec.rho = rho;
  spec.samples_per_class = per_class;
  spec.val_per_group = 0;
  spec.test_per_group = 2;
  spec.seed = seed;
  auto d = corpus::generate_biased_dataset(spec);
  const auto n = corpus::estimate_normalization(d, corpus::Split::kTrain);
  return corpus::normalize(d, n.mean, n.std);
}

training::ClassifierTrainConfig small_train(int epochs) {
  training::ClassifierTrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.lr = 2e-3;
  c.widths = {8, 8};
  return c;
}

bool bit_identical(const std::vector<NamedTensor>& a, const std::vector<NamedTensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].tensor.numel() != b[i].tensor.numel() ||
        std::memcmp(a[i].tensor.data(), b[i].tensor.data(), a[i].tensor.numel() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome invariant_suites(const fs::path& out) {
  Checks c;
  Rng rng(4);
  auto s = debias::GDROState::uniform({true, false, true, true, true, true}, 0.3, true);
  bool simplex = true;
  for (int step = 0; step < 2000 && simplex; ++step) {
    std::vector<double> l(6);
    for (double& v : l) v = rng.uniform(0.0, 5.0);
    debias::gdro_update(s, l);
    double sum = 0.0;
    for (double q : s.q) {
      simplex = simplex && q >= 0.0;
      sum += q;
    }
    simplex = simplex && std::abs(sum - 1.0) < 1e-9 && s.q[1] == 0.0;
  }
  c.expect(simplex, "q left the simplex");

  bool bounded = true;
  for (int i = 0; i < 20000; ++i) {
    const double r = debias::reweight_factor(rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0));
    bounded = bounded && r >= 0.0 && r <= 1.0;
  }
  bounded = bounded && debias::reweight_factor(0.0, 0.0) == 0.0;
  c.expect(bounded, "r outside [0,1]");

  const auto d = small_toy(0.9, 30, 2);
  nn::ConvClassifier amp(training::classifier_shape(d, small_train(1)), 11);
  amp.freeze();
  const auto before = amp.state();
  debias::RecipeConfig rc;
  rc.id = debias::RecipeId::kRecipe2;
  rc.train = small_train(3);
  debias::train_recipe(rc, debias::RecipeInputs{&d, nullptr, &amp}, 5);
  c.expect(bit_identical(before, amp.state()), "amplifier changed during recipe2");

  auto synth = small_toy(0.9, 12, 3);
  synth.samples[5].synthetic = false;
  bool rejected = false;
  try {
    amplifier::train_amplifier(synth, small_train(1), 1);
  } catch (const ContractViolation&) {
    rejected = true;
  }
  c.expect(rejected, "real sample accepted by amplifier training");
  auto overridden = amplifier::train_amplifier(synth, small_train(1), 1, true);
  bool refused = false;
  try {
    amplifier::score_dataset(overridden, d);
  } catch (const ContractViolation&) {
    refused = true;
  }
  c.expect(refused && overridden.provenance == std::string(amplifier::kRealOverride), "real-override model scored");

  const json tiny = {
      {"dataset", {{"samples_per_class", 40}, {"val_per_group", 2}, {"test_per_group", 5}, {"rho", 0.9}}},
      {"diffusion",
       {{"T", 8}, {"beta_1", 0.01}, {"beta_T", 0.2}, {"train_iterations", 6}, {"batch_size", 8},
        {"base_channels", 8}, {"embed_dim", 16}}},
      {"amplifier", {{"epochs", 2}, {"synthetic_per_class", 6}, {"widths", {8, 8}}, {"batch_size", 16}}},
      {"recipe", {{"id", "recipe2"}, {"epochs", 2}, {"widths", {8, 8}}, {"batch_size", 16}}}};
  std::vector<std::string> docs;
  for (const char* tag : {"a", "b"}) {
    const fs::path dir = out / "determinism" / tag;
    fs::remove_all(dir);
    harness::RunOptions quiet;
    quiet.log = [](const std::string&) {};
    json doc = tiny;
    doc["output_dir"] = dir.string();
    harness::Run run(harness::resolve_config(doc), 3, dir, quiet);
    run.run_pipeline();
    docs.push_back(slurp(dir / "metrics-recipe2.json") + slurp(dir / "cdpm.ckpt") + slurp(dir / "target-recipe2.ckpt"));
  }
  c.expect(!docs[0].empty() && docs[0] == docs[1], "pipeline not bitwise deterministic");
  return c.outcome("q on simplex over 2000 updates, r in [0,1] over 20000 draws, frozen amplifier bit-identical, "
                   "provenance guard rejects real data, two pipeline runs bitwise identical");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string out = "acceptance-runs";
  std::vector<int> only;
  app.add_option("--out", out, "Directory for pipeline runs and the shared cache");
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(out);
  std::ofstream log_file(fs::path(out) / "acceptance.log", std::ios::app);
  Pipelines p;
  p.out = out;
  p.seeds = {0, 1, 2};
  p.options.cache_dir = fs::path(out) / ".cache";
  p.options.log = [&](const std::string& m) { log_file << m << std::endl; };
  p.base = harness::default_config();
  p.base["output_dir"] = out;

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, hand_computed_oracles},
      {2, schedule_and_statistics},
      {3, cfg_degeneracies},
      {4, [&] { return bias_amplification(p); }},
      {5, [&] { return pseudo_label_quality(p); }},
      {6, [&] { return debiasing_gain(p); }},
      {7, [&] { return unbiased_non_degradation(p); }},
      {8, [&] { return negative_control(p); }},
      {9, [&] { return invariant_suites(out); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " " << o.detail << " ["
              << num(secs, 1) << " s]" << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed ? 1 : 0;
}
