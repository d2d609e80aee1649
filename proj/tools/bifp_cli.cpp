// SPDX-License-Identifier: Apache-2.0
//
// bifp: run pruning sweeps, trade-off curves, iteration counts, loss
// interpolation and ablations from a JSON config plus command-line flags.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bifp/error.hpp"
#include "bifp/harness.hpp"

using namespace bifp;
using harness::Variant;
using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::string dataset;
  std::string csv_path, label_col, sensitive_col, positive_label, positive_group;
  std::string out = "-";
  std::string format = "csv";
  std::vector<std::uint64_t> seeds;
  std::vector<double> sparsities;
  std::vector<std::string> methods;
  std::vector<double> lambdas;
  double min_acc = 0.8, max_gap = 0.05;
  std::size_t every = 10, steps = 21;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON sweep config; flags override its values")->check(CLI::ExistingFile);
  app->add_option("--dataset", f.dataset, "Data source")->check(CLI::IsMember({"csv", "synthetic"}));
  app->add_option("--csv-path", f.csv_path, "CSV file for --dataset csv");
  app->add_option("--label-col", f.label_col, "CSV label column");
  app->add_option("--sensitive-col", f.sensitive_col, "CSV sensitive-attribute column");
  app->add_option("--positive-label", f.positive_label, "Label cell value mapped to +1");
  app->add_option("--positive-group", f.positive_group, "Sensitive cell value mapped to the favorable group");
  app->add_option("--out", f.out, "Output file, '-' for stdout")->capture_default_str();
  app->add_option("--format", f.format, "Output format")
      ->check(CLI::IsMember({"csv", "jsonl"}))
      ->capture_default_str();
  app->add_option("--seeds", f.seeds, "Trial seeds")->delimiter(',');
  app->add_option("--sparsities", f.sparsities, "Target sparsities")->delimiter(',');
  app->add_option("--method", f.methods, "Methods, optionally with an ablation suffix (bifp-uns/no-wm)")
      ->delimiter(',');
  app->add_option("--lambda", f.lambdas, "Fairness weight (a grid for tradeoff)")->delimiter(',');
}

harness::SweepSpec resolve(const Flags& f) {
  auto spec = f.config.empty() ? harness::SweepSpec{} : harness::load_sweep(f.config);
  if (f.config.empty()) spec.methods = {Variant::of(pruners::Method::bifp_uns)};
  auto& ds = spec.experiment.dataset;
  if (!f.dataset.empty()) ds.source = f.dataset;
  if (!f.csv_path.empty()) ds.csv_path = f.csv_path;
  if (!f.label_col.empty()) ds.schema.label_col = f.label_col;
  if (!f.sensitive_col.empty()) ds.schema.sensitive_col = f.sensitive_col;
  if (!f.positive_label.empty()) ds.schema.positive_label = f.positive_label;
  if (!f.positive_group.empty()) ds.schema.positive_group = f.positive_group;
  if (!f.seeds.empty()) spec.seeds = f.seeds;
  if (!f.sparsities.empty()) spec.sparsities = f.sparsities;
  if (!f.methods.empty()) {
    spec.methods.clear();
    for (const auto& m : f.methods) spec.methods.push_back(Variant::parse(m));
  }
  return spec;
}

// Tabular output for the non-sweep subcommands.
class Table {
 public:
  Table(std::vector<std::string> columns, const std::string& path, harness::Format format)
      : columns_(std::move(columns)), format_(format) {
    if (path != "-") {
      file_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
      if (!*file_) throw std::runtime_error("cannot write " + path);
    }
    if (format_ == harness::Format::csv) {
      std::string h;
      for (const auto& c : columns_) h += (h.empty() ? "" : ",") + c;
      out() << h << '\n';
    }
  }

  void row(const std::vector<json>& values) {
    if (format_ == harness::Format::csv) {
      std::string line;
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) line += ',';
        line += cell(values[i]);
      }
      out() << line << '\n';
    } else {
      std::string line = "{";
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) line += ',';
        line += json(columns_[i]).dump() + ":" + (values[i].is_number_float() ? cell(values[i]) : values[i].dump());
      }
      out() << line << "}\n";
    }
    out().flush();
  }

 private:
  static std::string cell(const json& v) {
    if (v.is_number_float()) return harness::format_number(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return "";
    return v.dump();
  }
  std::ostream& out() { return file_ ? *file_ : std::cout; }

  std::vector<std::string> columns_;
  harness::Format format_;
  std::unique_ptr<std::ofstream> file_;
};

harness::RecordSink record_sink(const Flags& f, std::optional<harness::AppendSink>& file) {
  const auto format = harness::format_from_string(f.format);
  if (f.out != "-") {
    file.emplace(f.out, format);
    return std::ref(*file);
  }
  if (format == harness::Format::csv) std::cout << harness::csv_header() << '\n';
  return [format](const harness::RunRecord& r) {
    std::cout << (format == harness::Format::csv ? harness::csv_row(r) : harness::json_line(r)) << std::endl;
  };
}

int run_sweep(const Flags& f, bool ablate) {
  auto spec = resolve(f);
  if (ablate) {
    const auto method = f.methods.empty() ? pruners::Method::bifp_uns : Variant::parse(f.methods.front()).method;
    spec.methods = harness::ablation_variants(method);
  }
  if (!f.lambdas.empty()) spec.experiment.base.lambda_fair = f.lambdas.front();
  std::optional<harness::AppendSink> file;
  const auto records = harness::run_sweep(spec, record_sink(f, file));
  std::size_t failed = 0;
  for (const auto& r : records) failed += !r.error.empty();
  if (failed) std::cerr << failed << " of " << records.size() << " cells failed; see the error column\n";
  return failed ? 2 : 0;
}

int run_tradeoff(const Flags& f) {
  const auto spec = resolve(f);
  const std::vector<double> lambdas = f.lambdas.empty() ? std::vector<double>{0.0, 1.0, 5.0, 10.0, 20.0, 40.0}
                                                        : f.lambdas;
  Table t({"method", "sparsity", "seed", "lambda", "acc", "perf_gap"}, f.out, harness::format_from_string(f.format));
  for (auto seed : spec.seeds) {
    const auto trial = harness::prepare_trial(spec.experiment, seed);
    for (const auto& v : spec.methods)
      for (double s : spec.sparsities)
        for (const auto& p : harness::tradeoff_curve(spec.experiment, trial, v, s, lambdas))
          t.row({v.label, s, seed, p.lambda, p.acc, p.perf_gap});
  }
  return 0;
}

int run_iterations(const Flags& f) {
  auto spec = resolve(f);
  if (!f.lambdas.empty()) spec.experiment.base.lambda_fair = f.lambdas.front();
  Table t({"method", "sparsity", "seed", "reached", "iterations", "budget"}, f.out,
          harness::format_from_string(f.format));
  for (auto seed : spec.seeds) {
    const auto trial = harness::prepare_trial(spec.experiment, seed);
    for (const auto& v : spec.methods)
      for (double s : spec.sparsities) {
        const auto r = harness::iterations_to_target(spec.experiment, trial, v, s, {f.min_acc, f.max_gap}, f.every);
        t.row({v.label, s, seed, r.iterations.has_value(), r.iterations ? json(*r.iterations) : json(nullptr),
               r.budget});
      }
  }
  return 0;
}

int run_interpolate(const Flags& f) {
  auto spec = resolve(f);
  if (spec.methods.size() != 2) throw ConfigError("interpolate needs exactly two --method values");
  if (!f.lambdas.empty()) spec.experiment.base.lambda_fair = f.lambdas.front();
  Table t({"from", "to", "sparsity", "seed", "t", "loss", "fairness"}, f.out, harness::format_from_string(f.format));
  for (auto seed : spec.seeds) {
    const auto trial = harness::prepare_trial(spec.experiment, seed);
    for (double s : spec.sparsities) {
      const auto a = harness::run_cell(spec.experiment, trial, spec.methods[0], s);
      const auto b = harness::run_cell(spec.experiment, trial, spec.methods[1], s);
      for (const auto* c : {&a, &b})
        if (!c->record.error.empty()) throw std::runtime_error(c->record.method + ": " + c->record.error);
      for (const auto& p : pruners::loss_interpolation(a.pruned.model, b.pruned.model, trial.splits.test, f.steps,
                                                       trial.priors, spec.experiment.base.surrogate))
        t.row({spec.methods[0].label, spec.methods[1].label, s, seed, p.t, p.loss, p.fairness});
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-level fair pruning experiments"};
  app.require_subcommand(1);
  Flags f;

  auto* sweep = app.add_subcommand("sweep", "Run the method x sparsity x seed grid and emit one record per cell");
  auto* tradeoff = app.add_subcommand("tradeoff", "Accuracy and gap across a --lambda grid at fixed sparsity");
  auto* iterations = app.add_subcommand("iterations", "Training iterations until validation targets are met");
  auto* interpolate = app.add_subcommand("interpolate", "Loss and surrogate along the line between two pruned models");
  auto* ablate = app.add_subcommand("ablate", "Sweep the four fairness-term ablations of a BiFP method");
  for (auto* sub : {sweep, tradeoff, iterations, interpolate, ablate}) add_common(sub, f);
  iterations->add_option("--min-acc", f.min_acc, "Validation accuracy target")->capture_default_str();
  iterations->add_option("--max-gap", f.max_gap, "Validation perf_gap target")->capture_default_str();
  iterations->add_option("--every", f.every, "Validation cadence in iterations")->capture_default_str();
  interpolate->add_option("--steps", f.steps, "Points along the line, endpoints included")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (sweep->parsed()) return run_sweep(f, false);
    if (ablate->parsed()) return run_sweep(f, true);
    if (tradeoff->parsed()) return run_tradeoff(f);
    if (iterations->parsed()) return run_iterations(f);
    if (interpolate->parsed()) return run_interpolate(f);
  } catch (const std::exception& e) {
    std::cerr << "bifp: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
