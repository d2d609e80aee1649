// SPDX-License-Identifier: Apache-2.0

#include "bifp/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "bifp/error.hpp"
#include "bifp/fairness.hpp"

namespace bifp::harness {

using nlohmann::json;
using pruners::Method;
using pruners::PruneConfig;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), 0x62696670u};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::size_t steps_for(std::size_t epochs, std::size_t n, std::size_t batch_size) {
  return epochs * ((n + batch_size - 1) / batch_size);
}

}  // namespace

std::vector<double> lottery_ladder() {
  std::vector<double> s;
  for (int r = 1; r <= 7; ++r) s.push_back(std::round((1.0 - std::pow(0.8, r)) * 1e6) / 1e6);
  return s;
}

Variant Variant::of(Method m) { return {m, true, true, pruners::to_string(m)}; }

std::vector<Variant> ablation_variants(Method bifp_method) {
  if (!pruners::is_bifp(bifp_method)) throw ConfigError("ablations apply to bifp-str and bifp-uns");
  const auto base = pruners::to_string(bifp_method);
  return {{bifp_method, true, true, base},
          {bifp_method, false, true, base + "/no-m"},
          {bifp_method, true, false, base + "/no-w"},
          {bifp_method, false, false, base + "/no-wm"}};
}

Variant Variant::parse(const std::string& label) {
  const auto slash = label.find('/');
  const auto method = pruners::method_from_string(label.substr(0, slash));
  if (slash == std::string::npos) return of(method);
  for (const auto& v : ablation_variants(method))
    if (v.label == label) return v;
  throw ConfigError("unknown variant '" + label + "' (suffixes: /no-m, /no-w, /no-wm)");
}

void SweepSpec::validate() const {
  if (methods.empty()) throw ConfigError("sweep needs at least one method");
  if (sparsities.empty()) throw ConfigError("sweep needs at least one sparsity");
  if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
  for (std::size_t i = 0; i < sparsities.size(); ++i) {
    if (!(sparsities[i] >= 0.0 && sparsities[i] < 1.0)) throw ConfigError("sparsities must lie in [0, 1)");
    if (i > 0 && !(sparsities[i] > sparsities[i - 1])) throw ConfigError("sparsities must be strictly increasing");
  }
  std::set<std::string> labels;
  for (const auto& v : methods)
    if (!labels.insert(v.label).second) throw ConfigError("duplicate method '" + v.label + "'");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("duplicate seeds");
  experiment.base.validate();
}

// ---- trials -----------------------------------------------------------------

Trial prepare_trial(const Experiment& exp, std::uint64_t seed) {
  data::GroupedDataset full;
  if (exp.dataset.source == "synthetic") {
    auto spec = exp.dataset.synthetic;
    spec.seed += seed;
    full = data::generate_synthetic(spec);
  } else if (exp.dataset.source == "csv") {
    full = data::load_csv(exp.dataset.csv_path, exp.dataset.schema);
  } else {
    throw ConfigError("unknown dataset source '" + exp.dataset.source + "'");
  }

  Trial t;
  t.seed = seed;
  t.splits = data::split(full, exp.dataset.ratios, mix(seed, 1));
  if (exp.dataset.clean_eval_labels) {
    t.splits.val = t.splits.val.with_clean_labels();
    t.splits.test = t.splits.test.with_clean_labels();
  }
  t.priors = data::GroupStats::of(t.splits.train);

  std::vector<std::size_t> widths{full.dim()};
  widths.insert(widths.end(), exp.model.hidden.begin(), exp.model.hidden.end());
  widths.push_back(1);
  t.pretrained = model::MaskedModel::mlp(widths, model::MaskMode::unstructured, mix(seed, 2));

  pruners::Options opts;
  opts.priors = t.priors;
  pruners::TrainLog log;
  pruners::train(t.pretrained, t.splits.train, exp.base, exp.model.pretrain_steps, 0.0, mix(seed, 3), opts, log);
  t.pretrained.init_scores_from_magnitude();

  t.dense_reference = t.pretrained;
  pruners::train(t.dense_reference, t.splits.val, exp.base,
                 steps_for(exp.base.finetune_epochs, t.splits.val.size(), exp.base.batch_size), 0.0, mix(seed, 4),
                 opts, log);
  return t;
}

PruneConfig config_for(const Experiment& exp, const Variant& v, double sparsity, std::uint64_t seed) {
  auto cfg = exp.base;
  const auto name = pruners::to_string(v.method);
  if (auto it = exp.overrides.find(name); it != exp.overrides.end()) apply_config_fields(cfg, it->second);
  if (v.label != name)
    if (auto it = exp.overrides.find(v.label); it != exp.overrides.end()) apply_config_fields(cfg, it->second);
  cfg.method = v.method;
  cfg.target_sparsity = sparsity;
  cfg.seed = seed;
  cfg.fair_mask_on = v.fair_mask_on;
  cfg.fair_weight_on = v.fair_weight_on;
  return cfg;
}

namespace {

CellResult run_config(const Trial& trial, const PruneConfig& cfg, const std::string& label,
                      const pruners::Options& extra) {
  CellResult out;
  auto& r = out.record;
  r.method = label;
  r.sparsity = cfg.target_sparsity;
  r.seed = trial.seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto opts = extra;
    opts.priors = trial.priors;
    out.pruned = pruners::prune(trial.pretrained, trial.splits.val, cfg, opts);
    const auto rep = fairness::degradation_fairness(trial.dense_reference, out.pruned.model, trial.splits.test);
    r.achieved_sparsity = model::sparsity(out.pruned.model);
    r.acc_overall = rep.acc_overall;
    r.acc_pos = rep.acc_pos;
    r.acc_neg = rep.acc_neg;
    r.perf_gap = rep.perf_gap;
    r.degradation_gap = rep.degradation_gap;
    r.total_iterations = out.pruned.log.total_iterations;
  } catch (const std::exception& e) {
    r.achieved_sparsity = r.acc_overall = r.acc_pos = r.acc_neg = r.perf_gap = r.degradation_gap = kNaN;
    r.error = e.what();
    if (r.error.empty()) r.error = "unknown error";
  }
  r.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

RunRecord error_record(const Variant& v, double sparsity, std::uint64_t seed, const std::string& what) {
  RunRecord r;
  r.method = v.label;
  r.sparsity = sparsity;
  r.seed = seed;
  r.achieved_sparsity = r.acc_overall = r.acc_pos = r.acc_neg = r.perf_gap = r.degradation_gap = kNaN;
  r.error = what.empty() ? "unknown error" : what;
  return r;
}

template <class F>
void parallel_for(std::size_t n, F&& body) {
  const auto workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) body(i);
    });
}

}  // namespace

CellResult run_cell(const Experiment& exp, const Trial& trial, const Variant& v, double sparsity,
                    const pruners::Options& opts) {
  return run_config(trial, config_for(exp, v, sparsity, trial.seed), v.label, opts);
}

std::size_t worker_count() {
  const auto hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BIFP_THREADS")) {
    try {
      const auto n = std::stoul(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("BIFP_THREADS must be a positive integer, got '") + env + "'");
  }
  return hw;
}

std::vector<RunRecord> run_sweep(const SweepSpec& spec, const RecordSink& sink) {
  spec.validate();
  std::vector<std::optional<Trial>> trials(spec.seeds.size());
  std::vector<std::string> trial_errors(spec.seeds.size());
  parallel_for(spec.seeds.size(), [&](std::size_t i) {
    try {
      trials[i] = prepare_trial(spec.experiment, spec.seeds[i]);
    } catch (const std::exception& e) {
      trial_errors[i] = e.what();
    }
  });

  struct Cell {
    std::size_t method, sparsity, seed;
  };
  std::vector<Cell> cells;
  for (std::size_t m = 0; m < spec.methods.size(); ++m)
    for (std::size_t s = 0; s < spec.sparsities.size(); ++s)
      for (std::size_t k = 0; k < spec.seeds.size(); ++k) cells.push_back({m, s, k});

  std::vector<RunRecord> records(cells.size());
  std::mutex sink_mutex;
  parallel_for(cells.size(), [&](std::size_t i) {
    const auto& c = cells[i];
    const auto& v = spec.methods[c.method];
    const double sparsity = spec.sparsities[c.sparsity];
    records[i] = trials[c.seed] ? run_cell(spec.experiment, *trials[c.seed], v, sparsity).record
                                : error_record(v, sparsity, spec.seeds[c.seed], trial_errors[c.seed]);
    if (sink) {
      std::lock_guard lock(sink_mutex);
      sink(records[i]);
    }
  });
  return records;
}

std::vector<TradeoffPoint> tradeoff_curve(const Experiment& exp, const Trial& trial, const Variant& v,
                                          double sparsity, std::span<const double> lambdas) {
  if (lambdas.empty()) throw ConfigError("tradeoff needs at least one lambda");
  std::vector<TradeoffPoint> curve;
  for (double lambda : lambdas) {
    auto cfg = config_for(exp, v, sparsity, trial.seed);
    cfg.lambda_fair = lambda;
    const auto cell = run_config(trial, cfg, v.label, {});
    if (!cell.record.error.empty()) throw std::runtime_error(cell.record.error);
    curve.push_back({lambda, cell.record.acc_overall, cell.record.perf_gap});
  }
  return curve;
}

IterationsResult iterations_to_target(const Experiment& exp, const Trial& trial, const Variant& v, double sparsity,
                                      Targets targets, std::size_t every) {
  if (every == 0) throw ConfigError("validation cadence must be positive");
  IterationsResult out;
  pruners::Options opts;
  opts.priors = trial.priors;
  opts.on_step = [&](const model::MaskedModel& m, const pruners::TrainLog& log) {
    if (log.total_iterations % every != 0) return true;
    if (std::abs(model::sparsity(m) - sparsity) > model::sparsity_granularity(m) + 1e-12) return true;
    const auto acc = fairness::group_accuracy(m, trial.splits.val);
    if (acc.overall >= targets.min_acc && std::abs(acc.pos - acc.neg) <= targets.max_gap) {
      out.iterations = log.total_iterations;
      return false;
    }
    return true;
  };
  const auto cfg = config_for(exp, v, sparsity, trial.seed);
  const auto res = pruners::prune(trial.pretrained, trial.splits.val, cfg, opts);
  out.budget = res.log.total_iterations;
  return out;
}

// ---- output -----------------------------------------------------------------

Format format_from_string(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "jsonl" || s == "json-lines") return Format::jsonl;
  throw ConfigError("unknown output format '" + s + "' (expected csv or jsonl)");
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

namespace {

const char* const kColumns[] = {"method",        "sparsity", "seed",     "achieved_sparsity", "acc_overall",
                                "acc_pos",       "acc_neg",  "perf_gap", "degradation_gap",   "total_iterations",
                                "wall_time_seconds", "error"};

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  return cells;
}

// Round-trips through the 9-significant-digit text form.
double rounded(double v) { return std::isnan(v) ? v : std::stod(format_number(v)); }

json number(double v) { return std::isnan(v) ? json(nullptr) : json(rounded(v)); }

double from_json_number(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

void open_error(const std::filesystem::path& path, const char* what) {
  throw std::runtime_error(std::string("cannot ") + what + " " + path.string());
}

}  // namespace

std::string csv_header() {
  std::string h;
  for (const char* c : kColumns) h += (h.empty() ? "" : ",") + std::string(c);
  return h;
}

std::string csv_row(const RunRecord& r) {
  std::ostringstream os;
  os << csv_quote(r.method) << ',' << format_number(r.sparsity) << ',' << r.seed << ','
     << format_number(r.achieved_sparsity) << ',' << format_number(r.acc_overall) << ','
     << format_number(r.acc_pos) << ',' << format_number(r.acc_neg) << ',' << format_number(r.perf_gap) << ','
     << format_number(r.degradation_gap) << ',' << r.total_iterations << ',' << format_number(r.wall_time_seconds)
     << ',' << csv_quote(r.error);
  return os.str();
}

std::string json_line(const RunRecord& r) {
  json j = json::object();
  j["method"] = r.method;
  j["sparsity"] = number(r.sparsity);
  j["seed"] = r.seed;
  j["achieved_sparsity"] = number(r.achieved_sparsity);
  j["acc_overall"] = number(r.acc_overall);
  j["acc_pos"] = number(r.acc_pos);
  j["acc_neg"] = number(r.acc_neg);
  j["perf_gap"] = number(r.perf_gap);
  j["degradation_gap"] = number(r.degradation_gap);
  j["total_iterations"] = r.total_iterations;
  j["wall_time_seconds"] = number(r.wall_time_seconds);
  j["error"] = r.error;
  // nlohmann::json sorts keys; emit in column order instead.
  std::string out = "{";
  for (const char* c : kColumns) {
    if (out.size() > 1) out += ',';
    out += json(c).dump() + ":" + j[c].dump();
  }
  return out + "}";
}

void emit(std::span<const RunRecord> records, const std::filesystem::path& path, Format format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) open_error(path, "write");
  if (format == Format::csv) out << csv_header() << '\n';
  for (const auto& r : records) out << (format == Format::csv ? csv_row(r) : json_line(r)) << '\n';
  out.flush();
  if (!out) open_error(path, "finish writing");
}

std::vector<RunRecord> read_records(const std::filesystem::path& path, Format format) {
  std::ifstream in(path);
  if (!in) open_error(path, "read");
  std::vector<RunRecord> records;
  std::string line;
  std::size_t line_no = 0;
  auto bad = [&](const std::string& why) {
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  if (format == Format::csv) {
    if (!std::getline(in, line)) return records;
    ++line_no;
    if (line != csv_header()) bad("unexpected header");
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    RunRecord r;
    try {
      if (format == Format::csv) {
        const auto c = csv_split(line);
        if (c.size() != std::size(kColumns)) bad("expected " + std::to_string(std::size(kColumns)) + " fields");
        r.method = c[0];
        r.sparsity = std::stod(c[1]);
        r.seed = std::stoull(c[2]);
        r.achieved_sparsity = std::stod(c[3]);
        r.acc_overall = std::stod(c[4]);
        r.acc_pos = std::stod(c[5]);
        r.acc_neg = std::stod(c[6]);
        r.perf_gap = std::stod(c[7]);
        r.degradation_gap = std::stod(c[8]);
        r.total_iterations = std::stoull(c[9]);
        r.wall_time_seconds = std::stod(c[10]);
        r.error = c[11];
      } else {
        const auto j = json::parse(line);
        r.method = j.at("method").get<std::string>();
        r.sparsity = from_json_number(j.at("sparsity"));
        r.seed = j.at("seed").get<std::uint64_t>();
        r.achieved_sparsity = from_json_number(j.at("achieved_sparsity"));
        r.acc_overall = from_json_number(j.at("acc_overall"));
        r.acc_pos = from_json_number(j.at("acc_pos"));
        r.acc_neg = from_json_number(j.at("acc_neg"));
        r.perf_gap = from_json_number(j.at("perf_gap"));
        r.degradation_gap = from_json_number(j.at("degradation_gap"));
        r.total_iterations = j.at("total_iterations").get<std::size_t>();
        r.wall_time_seconds = from_json_number(j.at("wall_time_seconds"));
        r.error = j.at("error").get<std::string>();
      }
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      bad(e.what());
    }
    records.push_back(std::move(r));
  }
  return records;
}

AppendSink::AppendSink(const std::filesystem::path& path, Format format) : path_(path), format_(format) {
  std::ofstream out(path_, std::ios::trunc);
  if (!out) open_error(path_, "write");
  if (format_ == Format::csv) out << csv_header() << '\n';
  out.flush();
  if (!out) open_error(path_, "write");
}

void AppendSink::operator()(const RunRecord& r) {
  std::ofstream out(path_, std::ios::app);
  if (!out) open_error(path_, "append to");
  out << (format_ == Format::csv ? csv_row(r) : json_line(r)) << '\n';
  out.flush();
  if (!out) open_error(path_, "append to");
}

// ---- config -----------------------------------------------------------------

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) into = obj.at(key).get<T>();
}

}  // namespace

void apply_config_fields(PruneConfig& cfg, const json& f) {
  check_keys(f,
             {"method", "target_sparsity", "alpha", "beta", "lambda_fair", "inner_steps_T", "outer_steps",
              "hypergrad", "surrogate", "seed", "fair_mask_on", "fair_weight_on", "batch_size", "epochs_per_round",
              "finetune_epochs", "dense_epochs", "scope", "hvp_epsilon", "divergence_threshold"},
             "config");
  try {
    if (f.contains("method")) cfg.method = pruners::method_from_string(f.at("method").get<std::string>());
    read(f, "target_sparsity", cfg.target_sparsity);
    read(f, "alpha", cfg.alpha);
    read(f, "beta", cfg.beta);
    read(f, "lambda_fair", cfg.lambda_fair);
    read(f, "inner_steps_T", cfg.inner_steps_T);
    read(f, "outer_steps", cfg.outer_steps);
    if (f.contains("hypergrad")) cfg.hypergrad = pruners::hypergrad_from_string(f.at("hypergrad").get<std::string>());
    if (f.contains("surrogate")) {
      const auto& s = f.at("surrogate");
      check_keys(s, {"kind", "sharpness"}, "surrogate");
      if (s.contains("kind")) {
        const auto kind = s.at("kind").get<std::string>();
        if (kind == "sigmoid") {
          cfg.surrogate.kind = fairness::SurrogateSpec::Kind::sigmoid;
        } else if (kind == "indicator") {
          cfg.surrogate.kind = fairness::SurrogateSpec::Kind::indicator;
        } else {
          throw ConfigError("unknown surrogate kind '" + kind + "'");
        }
      }
      read(s, "sharpness", cfg.surrogate.sharpness);
    }
    read(f, "seed", cfg.seed);
    read(f, "fair_mask_on", cfg.fair_mask_on);
    read(f, "fair_weight_on", cfg.fair_weight_on);
    read(f, "batch_size", cfg.batch_size);
    read(f, "epochs_per_round", cfg.epochs_per_round);
    read(f, "finetune_epochs", cfg.finetune_epochs);
    read(f, "dense_epochs", cfg.dense_epochs);
    if (f.contains("scope")) {
      const auto scope = f.at("scope").get<std::string>();
      if (scope == "global") {
        cfg.scope = model::Scope::global;
      } else if (scope == "per-layer") {
        cfg.scope = model::Scope::per_layer;
      } else {
        throw ConfigError("unknown scope '" + scope + "'");
      }
    }
    read(f, "hvp_epsilon", cfg.hvp_epsilon);
    read(f, "divergence_threshold", cfg.divergence_threshold);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

SweepSpec sweep_from_json(const json& doc) {
  check_keys(doc, {"methods", "sparsities", "seeds", "dataset", "model", "config", "overrides"}, "sweep config");
  SweepSpec spec;
  try {
    if (doc.contains("methods")) {
      spec.methods.clear();
      for (const auto& m : doc.at("methods")) spec.methods.push_back(Variant::parse(m.get<std::string>()));
    }
    read(doc, "sparsities", spec.sparsities);
    read(doc, "seeds", spec.seeds);
    if (doc.contains("dataset")) {
      const auto& d = doc.at("dataset");
      check_keys(d, {"source", "synthetic", "csv", "split", "clean_eval_labels"}, "dataset");
      auto& ds = spec.experiment.dataset;
      read(d, "source", ds.source);
      read(d, "clean_eval_labels", ds.clean_eval_labels);
      if (d.contains("synthetic")) {
        const auto& s = d.at("synthetic");
        check_keys(s,
                   {"n", "d", "group_ratio", "label_noise_pos", "label_noise_neg", "class_sep", "seed",
                    "minority_tilt", "cov_inflation", "group_offset", "minority_features"},
                   "dataset.synthetic");
        auto& g = ds.synthetic;
        read(s, "n", g.n);
        read(s, "d", g.d);
        read(s, "group_ratio", g.group_ratio);
        read(s, "label_noise_pos", g.label_noise_pos);
        read(s, "label_noise_neg", g.label_noise_neg);
        read(s, "class_sep", g.class_sep);
        read(s, "seed", g.seed);
        read(s, "minority_tilt", g.minority_tilt);
        read(s, "cov_inflation", g.cov_inflation);
        read(s, "group_offset", g.group_offset);
        read(s, "minority_features", g.minority_features);
      }
      if (d.contains("csv")) {
        const auto& c = d.at("csv");
        check_keys(c, {"path", "label_col", "sensitive_col", "positive_label", "positive_group"}, "dataset.csv");
        std::string path;
        read(c, "path", path);
        ds.csv_path = path;
        read(c, "label_col", ds.schema.label_col);
        read(c, "sensitive_col", ds.schema.sensitive_col);
        read(c, "positive_label", ds.schema.positive_label);
        read(c, "positive_group", ds.schema.positive_group);
      }
      if (d.contains("split")) {
        const auto& s = d.at("split");
        check_keys(s, {"train", "val", "test"}, "dataset.split");
        read(s, "train", ds.ratios.train);
        read(s, "val", ds.ratios.val);
        read(s, "test", ds.ratios.test);
      }
    }
    if (doc.contains("model")) {
      const auto& m = doc.at("model");
      check_keys(m, {"hidden", "pretrain_steps"}, "model");
      read(m, "hidden", spec.experiment.model.hidden);
      read(m, "pretrain_steps", spec.experiment.model.pretrain_steps);
    }
    if (doc.contains("config")) apply_config_fields(spec.experiment.base, doc.at("config"));
    if (doc.contains("overrides")) {
      const auto& o = doc.at("overrides");
      if (!o.is_object()) throw ConfigError("overrides must be an object keyed by method");
      for (const auto& [name, fields] : o.items()) {
        PruneConfig probe;
        apply_config_fields(probe, fields);
        spec.experiment.overrides[name] = fields;
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad sweep config: ") + e.what());
  }
  return spec;
}

SweepSpec load_sweep(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return sweep_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace bifp::harness
