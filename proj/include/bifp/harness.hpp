// SPDX-License-Identifier: Apache-2.0
//
// Experiment protocol and sweeps.
//
// A trial for one seed: draw (or load) the data, split it 50/25/25 with
// stratification, pretrain a dense MLP on the train split with plain
// cross-entropy, then hand the pretrained network to a pruner that prunes
// and fine-tunes on the validation split. Group priors for the fairness
// surrogate come from the train split. Metrics are measured on the test
// split; degradation is relative to a dense reference obtained by
// fine-tuning the pretrained network on the validation split with the same
// step budget as baseline retraining.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bifp/data.hpp"
#include "bifp/model.hpp"
#include "bifp/pruners.hpp"

namespace bifp::harness {

// Sparsities 1 - 0.8^r for r = 1..7.
std::vector<double> lottery_ladder();

struct DatasetSpec {
  std::string source = "synthetic";  // "synthetic" or "csv"
  data::SyntheticSpec synthetic;
  std::filesystem::path csv_path;
  data::CsvSchema schema;
  data::SplitRatios ratios;
  // Evaluate on noise-free labels when the source provides them.
  bool clean_eval_labels = true;
};

struct ModelSpec {
  std::vector<std::size_t> hidden = {64, 32};
  std::size_t pretrain_steps = 150;
};

struct Experiment {
  DatasetSpec dataset;
  ModelSpec model;
  pruners::PruneConfig base;
  // Per-method config fields, keyed by method name, applied over `base`.
  std::map<std::string, nlohmann::json> overrides;
};

// A method plus the ablation switches; `label` names it in outputs.
struct Variant {
  pruners::Method method = pruners::Method::bifp_uns;
  bool fair_mask_on = true;
  bool fair_weight_on = true;
  std::string label;

  static Variant of(pruners::Method m);
  // A method name, optionally with an ablation suffix: "bifp-uns/no-wm".
  static Variant parse(const std::string& label);
};

// The four BiFP ablation variants: full, without the mask-level term,
// without the weight-level term, and without both.
std::vector<Variant> ablation_variants(pruners::Method bifp_method);

struct SweepSpec {
  std::vector<Variant> methods;
  std::vector<double> sparsities = lottery_ladder();
  std::vector<std::uint64_t> seeds = {0};
  Experiment experiment;

  void validate() const;
};

struct RunRecord {
  std::string method;
  double sparsity = 0.0;
  std::uint64_t seed = 0;
  double achieved_sparsity = 0.0;
  double acc_overall = 0.0;
  double acc_pos = 0.0;
  double acc_neg = 0.0;
  double perf_gap = 0.0;
  double degradation_gap = 0.0;
  std::size_t total_iterations = 0;
  double wall_time_seconds = 0.0;
  std::string error;  // empty on success; metrics are NaN otherwise
};

// Everything a seed's cells share.
struct Trial {
  std::uint64_t seed = 0;
  data::Splits splits;
  data::GroupStats priors;
  model::MaskedModel pretrained;
  model::MaskedModel dense_reference;
};

Trial prepare_trial(const Experiment& exp, std::uint64_t seed);

pruners::PruneConfig config_for(const Experiment& exp, const Variant& v, double sparsity, std::uint64_t seed);

struct CellResult {
  RunRecord record;
  pruners::PruneResult pruned;
};

CellResult run_cell(const Experiment& exp, const Trial& trial, const Variant& v, double sparsity,
                    const pruners::Options& opts = {});

using RecordSink = std::function<void(const RunRecord&)>;

// Worker count from BIFP_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_count();

// Runs the (method x sparsity x seed) grid. `sink` sees each record as soon
// as it completes (serialized). The returned list is in grid order.
std::vector<RunRecord> run_sweep(const SweepSpec& spec, const RecordSink& sink = {});

struct TradeoffPoint {
  double lambda = 0.0;
  double acc = 0.0;
  double perf_gap = 0.0;
};

std::vector<TradeoffPoint> tradeoff_curve(const Experiment& exp, const Trial& trial, const Variant& v,
                                          double sparsity, std::span<const double> lambdas);

struct Targets {
  double min_acc = 0.8;
  double max_gap = 0.05;
};

struct IterationsResult {
  std::optional<std::size_t> iterations;  // empty: not reached within the budget
  std::size_t budget = 0;                 // iterations actually run
};

// First iteration count, checked every `every` iterations, at which the
// model is at the target sparsity (within one granularity unit) and its
// validation accuracy and gap meet `targets`.
IterationsResult iterations_to_target(const Experiment& exp, const Trial& trial, const Variant& v, double sparsity,
                                      Targets targets, std::size_t every = 10);

enum class Format { csv, jsonl };
Format format_from_string(const std::string& s);

void emit(std::span<const RunRecord> records, const std::filesystem::path& path, Format format);
std::vector<RunRecord> read_records(const std::filesystem::path& path, Format format);
std::string csv_header();
std::string csv_row(const RunRecord& r);
std::string json_line(const RunRecord& r);
// %.9g formatting shared by every numeric output.
std::string format_number(double v);

// Appends records to a file as they arrive, flushing each one.
class AppendSink {
 public:
  AppendSink(const std::filesystem::path& path, Format format);
  void operator()(const RunRecord& r);

 private:
  std::filesystem::path path_;
  Format format_;
};

// JSON config document mirroring SweepSpec. Unknown keys are errors.
SweepSpec sweep_from_json(const nlohmann::json& doc);
SweepSpec load_sweep(const std::filesystem::path& path);
void apply_config_fields(pruners::PruneConfig& cfg, const nlohmann::json& fields);

}  // namespace bifp::harness
