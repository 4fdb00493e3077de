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

#include "ddb/harness/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "ddb/errors.hpp"

namespace ddb::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kMetricNames{"average_acc", "worst_group_acc", "conflicting_acc", "id_acc",
                                            "rho_synth",   "pl_precision",    "pl_recall"};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string fmt(double v, const char* spec = "%.6f") {
  if (!std::isfinite(v)) return "";
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string pm(const MeanStd& s) {
  if (s.n == 0) return "n/a";
  return fmt(s.mean, "%.4f") + " ± " + fmt(s.std, "%.4f");
}

double field(const json& m, const char* section, const char* key) {
  if (!m.contains(section) || !m[section].is_object() || !m[section].contains(key)) return std::nan("");
  const json& v = m[section][key];
  return v.is_number() ? v.get<double>() : std::nan("");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot read " + path.string());
  return json::parse(in);
}

std::vector<std::map<std::string, std::string>> grid_points(const std::vector<GridAxis>& axes) {
  std::vector<std::map<std::string, std::string>> points{{}};
  for (const auto& axis : axes) {
    std::vector<std::map<std::string, std::string>> next;
    for (const auto& p : points) {
      for (const auto& v : axis.values) {
        auto q = p;
        q[axis.key] = v;
        next.push_back(q);
      }
    }
    points = std::move(next);
  }
  return points;
}

std::string point_label(const std::vector<GridAxis>& axes, const std::map<std::string, std::string>& values) {
  if (axes.empty()) return "baseline";
  std::string label;
  for (const auto& axis : axes) {
    if (!label.empty()) label += ",";
    label += axis.key + "=" + values.at(axis.key);
  }
  return label;
}

std::string dir_name(std::string label) {
  for (char& ch : label) {
    if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
  }
  return label;
}

std::string sweep_svg(const std::vector<std::string>& labels, const std::vector<MeanStd>& wga) {
  const double w = 520, h = 300, left = 56, right = 16, top = 28, bottom = 70;
  const double pw = w - left - right, ph = h - top - bottom;
  const std::size_t n = labels.size();
  const auto x_at = [&](std::size_t i) { return left + (n == 1 ? pw / 2 : pw * static_cast<double>(i) / (n - 1)); };
  const auto y_at = [&](double v) { return top + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" "
    << "font-size=\"11\">\n";
  s << "<text x=\"" << w / 2 << "\" y=\"16\" text-anchor=\"middle\">worst-group accuracy (mean ± std)</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << y_at(v) + 4 << "\" text-anchor=\"end\">" << fmt(v, "%.2f")
      << "</text>\n";
  }
  std::string path;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = x_at(i);
    s << "<text x=\"" << x << "\" y=\"" << top + ph + 14 << "\" text-anchor=\"end\" transform=\"rotate(-30 " << x
      << " " << top + ph + 14 << ")\">" << labels[i] << "</text>\n";
    if (wga[i].n == 0) continue;
    const double y = y_at(wga[i].mean);
    path += (path.empty() ? "M" : " L") + fmt(x, "%.1f") + " " + fmt(y, "%.1f");
    s << "<line x1=\"" << x << "\" y1=\"" << y_at(wga[i].mean - wga[i].std) << "\" x2=\"" << x << "\" y2=\""
      << y_at(wga[i].mean + wga[i].std) << "\" stroke=\"#1f77b4\"/>\n";
    s << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
  }
  if (!path.empty()) s << "<path d=\"" << path << "\" fill=\"none\" stroke=\"#1f77b4\"/>\n";
  s << "</svg>\n";
  return s.str();
}

// Flattened leaf values of a JSON document keyed by dotted path.
void flatten(const json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = j.dump();
  }
}

}  // namespace

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd s;
  std::vector<double> v;
  for (double x : values) {
    if (std::isfinite(x)) v.push_back(x);
  }
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::map<std::string, double> headline_metrics(const json& m) {
  return {{"average_acc", field(m, "test", "average_acc")},
          {"worst_group_acc", field(m, "test", "worst_group_acc")},
          {"conflicting_acc", field(m, "test", "conflicting_acc")},
          {"id_acc", field(m, "gaps", "id_acc")},
          {"rho_synth", field(m, "generation_bias", "rho_synth")},
          {"pl_precision", field(m, "pseudo_labels", "precision")},
          {"pl_recall", field(m, "pseudo_labels", "recall")}};
}

SweepResult run_sweep(const ExperimentConfig& base, const std::vector<GridAxis>& axes,
                      const std::vector<std::uint64_t>& seeds, const fs::path& sweep_dir, const RunOptions& options) {
  if (seeds.empty()) throw ConfigError("sweep: no seeds");
  std::set<std::string> seen;
  for (const auto& a : axes) {
    if (!seen.insert(a.key).second) throw ConfigError("sweep: axis '" + a.key + "' given twice");
  }
  SweepResult result;
  const auto points = grid_points(axes);
  std::vector<std::string> labels;
  for (const auto& values : points) {
    const std::string label = point_label(axes, values);
    labels.push_back(label);
    std::optional<ExperimentConfig> cfg;
    std::string config_error;
    try {
      json doc = base.doc;
      for (const auto& [k, v] : values) set_override(doc, k, v);
      cfg = resolve_config(doc, base.base_dir);
    } catch (const ConfigError& e) {
      config_error = e.what();
    }
    for (auto seed : seeds) {
      SweepRun r;
      r.point = label;
      r.values = values;
      r.seed = seed;
      r.dir = sweep_dir / dir_name(label) / ("seed-" + std::to_string(seed));
      if (!cfg) {
        r.status = "failed";
        r.error = config_error;
      } else {
        try {
          Run run(*cfg, seed, r.dir, options);
          run.run_pipeline();
          r.metrics = read_json(r.dir / ("metrics-" + run.recipe_tag() + ".json"));
          r.status = "complete";
        } catch (const std::exception& e) {
          r.status = "failed";
          r.error = e.what();
        }
      }
      if (r.status != "complete") {
        ++result.failures;
        if (options.log) options.log("sweep: " + label + " seed " + std::to_string(seed) + " failed: " + r.error);
      }
      result.runs.push_back(std::move(r));
    }
  }

  fs::create_directories(sweep_dir);
  result.runs_csv = sweep_dir / "sweep_runs.csv";
  {
    std::ofstream out(result.runs_csv);
    out << "point";
    for (const auto& a : axes) out << "," << csv_field(a.key);
    out << ",seed,status";
    for (const auto& m : kMetricNames) out << "," << m;
    out << ",run_dir,error\n";
    for (const auto& r : result.runs) {
      out << csv_field(r.point);
      for (const auto& a : axes) out << "," << csv_field(r.values.at(a.key));
      out << "," << r.seed << "," << r.status;
      const auto h = r.metrics.is_null() ? std::map<std::string, double>{} : headline_metrics(r.metrics);
      for (const auto& m : kMetricNames) out << "," << (h.count(m) ? fmt(h.at(m)) : "");
      out << "," << csv_field(fs::relative(r.dir, sweep_dir).string()) << "," << csv_field(r.error) << "\n";
    }
  }

  result.summary_csv = sweep_dir / "sweep_summary.csv";
  std::vector<MeanStd> wga;
  {
    std::ofstream out(result.summary_csv);
    out << "point";
    for (const auto& a : axes) out << "," << csv_field(a.key);
    out << ",completed,failed";
    for (const auto& m : kMetricNames) out << "," << m << "_mean," << m << "_std";
    out << "\n";
    for (std::size_t p = 0; p < points.size(); ++p) {
      std::map<std::string, std::vector<double>> acc;
      std::size_t ok = 0, bad = 0;
      for (const auto& r : result.runs) {
        if (r.point != labels[p]) continue;
        if (r.status != "complete") {
          ++bad;
          continue;
        }
        ++ok;
        for (const auto& [k, v] : headline_metrics(r.metrics)) acc[k].push_back(v);
      }
      out << csv_field(labels[p]);
      for (const auto& a : axes) out << "," << csv_field(points[p].at(a.key));
      out << "," << ok << "," << bad;
      for (const auto& m : kMetricNames) {
        const auto s = mean_std(acc[m]);
        out << "," << (s.n ? fmt(s.mean) : "") << "," << (s.n ? fmt(s.std) : "");
      }
      out << "\n";
      wga.push_back(mean_std(acc["worst_group_acc"]));
    }
  }

  result.plot_svg = sweep_dir / "sweep_wga.svg";
  std::ofstream(result.plot_svg) << sweep_svg(labels, wga);
  return result;
}

std::vector<fs::path> find_run_dirs(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (!fs::exists(root)) return dirs;
  if (fs::exists(root / "manifest.json")) dirs.push_back(root);
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_directory()) continue;
    if (it->path().filename() == ".cache") {
      it.disable_recursion_pending();
      continue;
    }
    if (fs::exists(it->path() / "manifest.json")) dirs.push_back(it->path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

ReportSummary write_report(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  struct Entry {
    fs::path dir;
    json metrics;
    std::vector<fs::path> plots;
  };
  ReportSummary summary;
  std::vector<Entry> entries;
  for (const auto& dir : run_dirs) {
    std::vector<fs::path> metric_files;
    if (fs::is_directory(dir)) {
      for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("metrics-", 0) == 0 && e.path().extension() == ".json") metric_files.push_back(e.path());
      }
    }
    std::sort(metric_files.begin(), metric_files.end());
    if (metric_files.empty()) {
      summary.incomplete.push_back(dir.string() + ": no metrics file");
      continue;
    }
    for (const auto& f : metric_files) {
      Entry e{dir, nullptr, {}};
      try {
        e.metrics = read_json(f);
      } catch (const std::exception& ex) {
        summary.incomplete.push_back(f.string() + ": " + ex.what());
        continue;
      }
      const std::string tag = e.metrics.value("recipe", "");
      for (const auto& svg : {"group_acc-" + tag + ".svg", std::string("loss_histogram.svg")}) {
        if (fs::exists(dir / svg)) e.plots.push_back(dir / svg);
      }
      entries.push_back(std::move(e));
    }
  }
  summary.complete = entries.size();

  // comparison hash -> recipe -> seed -> metrics
  std::map<std::string, std::map<std::string, std::map<std::uint64_t, std::map<std::string, double>>>> groups;
  std::map<std::string, json> group_config;
  std::vector<std::string> group_order;
  for (const auto& e : entries) {
    const std::string g = e.metrics.value("comparison_hash", "unknown").substr(0, 12);
    if (!group_config.count(g)) {
      group_order.push_back(g);
      json c = e.metrics.value("config", json::object());
      if (c.contains("recipe")) c["recipe"].erase("id");
      c.erase("seeds");
      c.erase("output_dir");
      group_config[g] = c;
    }
    groups[g][e.metrics.value("recipe", "?")][e.metrics.value("seed", 0ULL)] = headline_metrics(e.metrics);
  }

  std::ostringstream md;
  md << "# Experiment report\n\n";
  md << entries.size() << " completed run(s), " << summary.incomplete.size() << " incomplete.\n\n";
  md << "## Metrics (test split, mean ± std over seeds)\n\n";
  md << "| config | recipe | seeds | average acc | worst-group acc | conflicting acc | rho_synth | pseudo-label "
        "precision |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& g : group_order) {
    for (const auto& [recipe, seeds] : groups[g]) {
      std::map<std::string, std::vector<double>> acc;
      std::string seed_list;
      for (const auto& [seed, h] : seeds) {
        seed_list += (seed_list.empty() ? "" : " ") + std::to_string(seed);
        for (const auto& [k, v] : h) acc[k].push_back(v);
      }
      md << "| `" << g << "` | " << recipe << " | " << seed_list << " | " << pm(mean_std(acc["average_acc"]))
         << " | " << pm(mean_std(acc["worst_group_acc"])) << " | " << pm(mean_std(acc["conflicting_acc"])) << " | "
         << pm(mean_std(acc["rho_synth"])) << " | " << pm(mean_std(acc["pl_precision"])) << " |\n";
    }
  }

  md << "\n## Paired comparisons against ERM\n\n";
  bool any_pair = false;
  std::ostringstream pairs;
  pairs << "| config | recipe | paired seeds | ΔWGA | Δaverage acc |\n|---|---|---|---|---|\n";
  for (const auto& g : group_order) {
    const auto& by_recipe = groups[g];
    if (!by_recipe.count("erm")) continue;
    const auto& erm = by_recipe.at("erm");
    for (const auto& [recipe, seeds] : by_recipe) {
      if (recipe == "erm") continue;
      std::vector<double> dw, da;
      for (const auto& [seed, h] : seeds) {
        if (!erm.count(seed)) continue;
        dw.push_back(h.at("worst_group_acc") - erm.at(seed).at("worst_group_acc"));
        da.push_back(h.at("average_acc") - erm.at(seed).at("average_acc"));
      }
      if (dw.empty()) continue;
      any_pair = true;
      pairs << "| `" << g << "` | " << recipe << " − erm | " << dw.size() << " | " << pm(mean_std(dw)) << " | "
            << pm(mean_std(da)) << " |\n";
    }
  }
  md << (any_pair ? pairs.str() : std::string("No recipe shares seeds with an ERM run of the same config.\n"));

  md << "\n## Config differences\n\n";
  if (group_order.size() <= 1) {
    md << "All runs share one configuration (recipe aside).\n";
  } else {
    std::map<std::string, std::string> ref;
    flatten(group_config[group_order[0]], "", ref);
    md << "Relative to `" << group_order[0] << "`:\n\n";
    for (std::size_t i = 1; i < group_order.size(); ++i) {
      std::map<std::string, std::string> cur;
      flatten(group_config[group_order[i]], "", cur);
      md << "- `" << group_order[i] << "`:";
      bool first = true;
      for (const auto& [k, v] : cur) {
        const auto it = ref.find(k);
        if (it != ref.end() && it->second == v) continue;
        md << (first ? " " : "; ") << "`" << k << "` " << (it == ref.end() ? "(absent)" : it->second) << " → " << v;
        first = false;
      }
      md << "\n";
    }
  }

  md << "\n## Plots\n\n";
  const fs::path base = out.parent_path().empty() ? fs::current_path() : fs::absolute(out.parent_path());
  for (const auto& e : entries) {
    for (const auto& p : e.plots) {
      const std::string rel = fs::relative(fs::absolute(p), base).generic_string();
      md << "![" << rel << "](" << rel << ")\n";
    }
  }

  if (!summary.incomplete.empty()) {
    md << "\n## Incomplete runs\n\n";
    for (const auto& s : summary.incomplete) md << "- " << s << "\n";
  }
  summary.markdown = md.str();
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) throw ArtifactError("cannot write " + out.string());
  f << summary.markdown;
  return summary;
}

}  // namespace ddb::harness
