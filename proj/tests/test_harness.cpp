// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <tuple>

#include "bifp/error.hpp"
#include "bifp/harness.hpp"

using namespace bifp;
using harness::RunRecord;
using harness::Variant;
using pruners::Method;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;
using nlohmann::json;

namespace {

const std::filesystem::path kSource = BIFP_SOURCE_DIR;

// Small enough that a cell takes milliseconds.
harness::Experiment tiny_experiment() {
  harness::Experiment e;
  e.dataset.synthetic.n = 400;
  e.dataset.synthetic.d = 6;
  e.model.hidden = {8};
  e.model.pretrain_steps = 40;
  auto& c = e.base;
  c.batch_size = 32;
  c.outer_steps = 4;
  c.inner_steps_T = 2;
  c.epochs_per_round = 1;
  c.finetune_epochs = 3;
  c.dense_epochs = 1;
  c.lambda_fair = 2.0;
  c.beta = 0.1;
  return e;
}

harness::SweepSpec tiny_sweep(std::vector<Method> methods, std::vector<double> sparsities,
                              std::vector<std::uint64_t> seeds) {
  harness::SweepSpec s;
  for (auto m : methods) s.methods.push_back(Variant::of(m));
  s.sparsities = std::move(sparsities);
  s.seeds = std::move(seeds);
  s.experiment = tiny_experiment();
  return s;
}

// All numeric fields except wall time, bitwise.
bool same_metrics(const RunRecord& a, const RunRecord& b) {
  auto same = [](double x, double y) { return std::memcmp(&x, &y, sizeof x) == 0; };
  return a.method == b.method && same(a.sparsity, b.sparsity) && a.seed == b.seed &&
         same(a.achieved_sparsity, b.achieved_sparsity) && same(a.acc_overall, b.acc_overall) &&
         same(a.acc_pos, b.acc_pos) && same(a.acc_neg, b.acc_neg) && same(a.perf_gap, b.perf_gap) &&
         same(a.degradation_gap, b.degradation_gap) && a.total_iterations == b.total_iterations &&
         a.error == b.error;
}

std::size_t line_count(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "bifp_test_harness";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Sets an environment variable for the lifetime of the object.
class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value, 1);
  }
  ~ScopedEnv() {
    if (old_) {
      ::setenv(name_, old_->c_str(), 1);
    } else {
      ::unsetenv(name_);
    }
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

RunRecord sample_record(int i) {
  RunRecord r;
  r.method = i % 2 ? "lottery" : "bifp-uns/no-wm";
  r.sparsity = 0.2 + 0.1 * i;
  r.seed = static_cast<std::uint64_t>(i);
  r.achieved_sparsity = 1.0 / 3.0 + i;
  r.acc_overall = 0.912345678912;
  r.acc_pos = 0.95;
  r.acc_neg = 0.8;
  r.perf_gap = 0.15;
  r.degradation_gap = 1e-12 * i;
  r.total_iterations = 100u * static_cast<std::size_t>(i);
  r.wall_time_seconds = 0.125;
  if (i == 3) {
    r.error = "bad, \"quoted\" value";
    r.acc_overall = r.acc_pos = r.acc_neg = r.perf_gap = r.degradation_gap = r.achieved_sparsity =
        std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

double rounded(double v) { return std::isnan(v) ? v : std::stod(harness::format_number(v)); }

void check_round_trip(const RunRecord& want, const RunRecord& got) {
  CHECK(got.method == want.method);
  CHECK(got.seed == want.seed);
  CHECK(got.total_iterations == want.total_iterations);
  CHECK(got.error == want.error);
  for (auto [a, b] : {std::pair{want.sparsity, got.sparsity}, {want.achieved_sparsity, got.achieved_sparsity},
                      {want.acc_overall, got.acc_overall}, {want.acc_pos, got.acc_pos}, {want.acc_neg, got.acc_neg},
                      {want.perf_gap, got.perf_gap}, {want.degradation_gap, got.degradation_gap},
                      {want.wall_time_seconds, got.wall_time_seconds}}) {
    if (std::isnan(a)) {
      CHECK(std::isnan(b));
    } else {
      CHECK(rounded(a) == b);
    }
  }
}

}  // namespace

TEST_CASE("sparsity ladder", "[harness]") {
  const auto l = harness::lottery_ladder();
  REQUIRE(l.size() == 7);
  for (std::size_t r = 0; r < l.size(); ++r) CHECK(std::abs(l[r] - (1.0 - std::pow(0.8, r + 1.0))) <= 1e-6);
  CHECK(std::ranges::is_sorted(l));
}

TEST_CASE("variants", "[harness]") {
  const auto v = Variant::parse("bifp-uns/no-wm");
  CHECK(v.method == Method::bifp_uns);
  CHECK_FALSE(v.fair_mask_on);
  CHECK_FALSE(v.fair_weight_on);
  CHECK(v.label == "bifp-uns/no-wm");
  const auto m = Variant::parse("bifp-str/no-m");
  CHECK_FALSE(m.fair_mask_on);
  CHECK(m.fair_weight_on);
  CHECK(Variant::parse("snip").label == "snip");
  CHECK_THROWS_AS(Variant::parse("bifp-uns/no-x"), ConfigError);
  CHECK_THROWS_AS(Variant::parse("snip/no-m"), ConfigError);
  CHECK_THROWS_AS(harness::ablation_variants(Method::lottery), ConfigError);
  CHECK(harness::ablation_variants(Method::bifp_str).size() == 4);
}

TEST_CASE("config documents", "[harness]") {
  SECTION("the shipped experiment parses") {
    const auto s = harness::load_sweep(kSource / "configs" / "synthetic.json");
    CHECK(s.methods.size() == 7);
    CHECK(s.seeds.size() == 5);
    CHECK(s.sparsities.size() == 7);
    CHECK(s.experiment.base.lambda_fair == 40.0);
    CHECK(s.experiment.dataset.synthetic.group_ratio == 0.85);
    CHECK_NOTHROW(s.validate());
    const auto str = harness::config_for(s.experiment, Variant::of(Method::bifp_str), 0.5, 3);
    CHECK(str.lambda_fair == 20.0);
    CHECK(str.seed == 3);
    CHECK(str.target_sparsity == 0.5);
    CHECK(harness::config_for(s.experiment, Variant::of(Method::bifp_uns), 0.5, 3).lambda_fair == 40.0);
  }
  SECTION("the CSV example parses") {
    const auto s = harness::load_sweep(kSource / "configs" / "adult_like.json");
    CHECK(s.experiment.dataset.source == "csv");
    CHECK_FALSE(s.experiment.dataset.schema.label_col.empty());
  }
  SECTION("unknown keys are errors at every level") {
    CHECK_THROWS_MATCHES(harness::sweep_from_json(json{{"methds", json::array()}}), ConfigError,
                         MessageMatches(ContainsSubstring("methds")));
    CHECK_THROWS_AS(harness::sweep_from_json(json{{"config", {{"lamda", 1.0}}}}), ConfigError);
    CHECK_THROWS_AS(harness::sweep_from_json(json{{"dataset", {{"synthetic", {{"nn", 5}}}}}}), ConfigError);
    CHECK_THROWS_AS(harness::sweep_from_json(json{{"overrides", {{"snip", {{"bogus", 1}}}}}}), ConfigError);
  }
  SECTION("bad values") {
    CHECK_THROWS_AS(harness::sweep_from_json(json{{"config", {{"alpha", "fast"}}}}), ConfigError);
    CHECK_THROWS_AS(harness::sweep_from_json(json{{"methods", {"magic"}}}), ConfigError);
    CHECK_THROWS_AS(harness::load_sweep(kSource / "no_such.json"), ConfigError);
  }
  SECTION("variant-label overrides apply on top of method overrides") {
    auto e = tiny_experiment();
    e.overrides["bifp-uns"] = json{{"lambda_fair", 3.0}, {"beta", 0.5}};
    e.overrides["bifp-uns/no-w"] = json{{"lambda_fair", 7.0}};
    const auto c = harness::config_for(e, Variant::parse("bifp-uns/no-w"), 0.3, 1);
    CHECK(c.lambda_fair == 7.0);
    CHECK(c.beta == 0.5);
    CHECK_FALSE(c.fair_weight_on);
    CHECK(c.fair_mask_on);
  }
  SECTION("sweep validation") {
    auto s = tiny_sweep({Method::snip}, {0.5, 0.4}, {0});
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = tiny_sweep({Method::snip}, {0.5}, {0, 0});
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = tiny_sweep({}, {0.5}, {0});
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = tiny_sweep({Method::snip}, {1.0}, {0});
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }
}

TEST_CASE("worker count", "[harness]") {
  {
    ScopedEnv env("BIFP_THREADS", "3");
    CHECK(harness::worker_count() == 3);
  }
  {
    ScopedEnv env("BIFP_THREADS", "zero");
    CHECK_THROWS_AS(harness::worker_count(), ConfigError);
  }
  CHECK(harness::worker_count() >= 1);
}

TEST_CASE("sweep grid", "[harness]") {
  SECTION("1 x 1 x 1 gives one record") {
    const auto r = harness::run_sweep(tiny_sweep({Method::lottery}, {0.36}, {0}));
    REQUIRE(r.size() == 1);
    CHECK(r[0].error.empty());
    CHECK(r[0].method == "lottery");
    CHECK(std::abs(r[0].achieved_sparsity - 0.36) < 0.01);
  }
  SECTION("2 x 3 x 2 gives twelve distinct records in grid order, reproducibly") {
    const auto spec = tiny_sweep({Method::bifp_uns, Method::fpgm}, {0.2, 0.36, 0.488}, {0, 1});
    std::size_t sunk = 0;
    const auto a = harness::run_sweep(spec, [&](const RunRecord&) { ++sunk; });
    CHECK(sunk == 12);
    REQUIRE(a.size() == 12);
    std::set<std::tuple<std::string, double, std::uint64_t>> keys;
    for (const auto& r : a) {
      CHECK(r.error.empty());
      keys.insert({r.method, r.sparsity, r.seed});
    }
    CHECK(keys.size() == 12);
    CHECK(a[0].method == "bifp-uns");
    CHECK(a[1].seed == 1);
    CHECK(a[2].sparsity == 0.36);
    CHECK(a[11].method == "fpgm");

    ScopedEnv serial("BIFP_THREADS", "1");
    const auto b = harness::run_sweep(spec);
    REQUIRE(b.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_metrics(a[i], b[i]));
  }
  SECTION("failing cells become error records and the grid continues") {
    auto spec = tiny_sweep({Method::lottery, Method::snip}, {0.36}, {0, 1});
    spec.experiment.overrides["lottery"] = json{{"alpha", 1e4}, {"divergence_threshold", 20.0}};
    const auto r = harness::run_sweep(spec);
    REQUIRE(r.size() == 4);
    for (const auto& rec : r) {
      if (rec.method == "lottery") {
        CHECK_FALSE(rec.error.empty());
        CHECK(std::isnan(rec.perf_gap));
      } else {
        CHECK(rec.error.empty());
        CHECK(std::isfinite(rec.perf_gap));
      }
    }
  }
  SECTION("an unloadable dataset fails every cell of the grid") {
    auto spec = tiny_sweep({Method::snip}, {0.2, 0.36}, {0, 1});
    spec.experiment.dataset.source = "csv";
    spec.experiment.dataset.csv_path = kSource / "missing.csv";
    const auto r = harness::run_sweep(spec);
    REQUIRE(r.size() == 4);
    for (const auto& rec : r) CHECK_THAT(rec.error, ContainsSubstring("missing.csv"));
  }
  SECTION("records stream to an append sink") {
    const auto path = scratch("stream.jsonl");
    harness::AppendSink sink(path, harness::Format::jsonl);
    const auto r = harness::run_sweep(tiny_sweep({Method::snip}, {0.2, 0.36}, {0}), std::ref(sink));
    const auto back = harness::read_records(path, harness::Format::jsonl);
    REQUIRE(back.size() == 2);
    std::set<double> s{back[0].sparsity, back[1].sparsity};
    CHECK(s == std::set<double>{0.2, 0.36});
  }
}

TEST_CASE("emit", "[harness]") {
  SECTION("no records gives a header-only CSV") {
    const auto path = scratch("empty.csv");
    harness::emit({}, path, harness::Format::csv);
    CHECK(line_count(path) == 1);
    CHECK(harness::read_records(path, harness::Format::csv).empty());
  }
  SECTION("twelve records give thirteen lines and round-trip") {
    std::vector<RunRecord> records;
    for (int i = 0; i < 12; ++i) records.push_back(sample_record(i));
    for (auto fmt : {harness::Format::csv, harness::Format::jsonl}) {
      const auto path = scratch(fmt == harness::Format::csv ? "twelve.csv" : "twelve.jsonl");
      harness::emit(records, path, fmt);
      CHECK(line_count(path) == (fmt == harness::Format::csv ? 13u : 12u));
      const auto back = harness::read_records(path, fmt);
      REQUIRE(back.size() == records.size());
      for (std::size_t i = 0; i < records.size(); ++i) check_round_trip(records[i], back[i]);
    }
  }
  SECTION("column order is fixed") {
    CHECK(harness::csv_header() ==
          "method,sparsity,seed,achieved_sparsity,acc_overall,acc_pos,acc_neg,perf_gap,degradation_gap,"
          "total_iterations,wall_time_seconds,error");
    const auto line = harness::json_line(sample_record(1));
    CHECK(line.find("\"method\"") < line.find("\"sparsity\""));
    CHECK(line.find("\"wall_time_seconds\"") < line.find("\"error\""));
  }
  SECTION("nine significant digits") {
    CHECK(harness::format_number(1.0 / 3.0) == "0.333333333");
    CHECK(harness::format_number(0.1) == "0.1");
    CHECK(harness::format_number(123456789012.0) == "1.23456789e+11");
  }
  SECTION("I/O errors carry the path") {
    const auto bad = std::filesystem::path("/nonexistent_dir_for_bifp/out.csv");
    CHECK_THROWS_MATCHES(harness::emit({}, bad, harness::Format::csv), std::runtime_error,
                         MessageMatches(ContainsSubstring(bad.string())));
    CHECK_THROWS_MATCHES(harness::read_records(bad, harness::Format::jsonl), std::runtime_error,
                         MessageMatches(ContainsSubstring(bad.string())));
  }
  SECTION("malformed input names the line") {
    const auto path = scratch("broken.jsonl");
    std::ofstream(path) << harness::json_line(sample_record(0)) << "\n{\"method\": 3}\n";
    CHECK_THROWS_MATCHES(harness::read_records(path, harness::Format::jsonl), DataError,
                         MessageMatches(ContainsSubstring(":2:")));
  }
  CHECK(harness::format_from_string("json-lines") == harness::Format::jsonl);
  CHECK_THROWS_AS(harness::format_from_string("xml"), ConfigError);
}

TEST_CASE("tradeoff curve", "[harness]") {
  const auto exp = tiny_experiment();
  const auto trial = harness::prepare_trial(exp, 0);
  const auto bifp = Variant::of(Method::bifp_uns);
  SECTION("one lambda gives one point") {
    const std::vector<double> grid{1.0};
    CHECK(harness::tradeoff_curve(exp, trial, bifp, 0.36, grid).size() == 1);
    CHECK_THROWS_AS(harness::tradeoff_curve(exp, trial, bifp, 0.36, std::vector<double>{}), ConfigError);
  }
  SECTION("the lambda = 0 point is the plain run") {
    for (auto m : {Method::bifp_uns, Method::prune_then_fair, Method::fair_then_prune}) {
      const std::vector<double> grid{0.0};
      const auto curve = harness::tradeoff_curve(exp, trial, Variant::of(m), 0.36, grid);
      auto plain = exp;
      plain.base.lambda_fair = 0.0;
      const auto r = harness::run_cell(plain, trial, Variant::of(m), 0.36).record;
      CHECK(curve[0].acc == r.acc_overall);
      CHECK(curve[0].perf_gap == r.perf_gap);
    }
  }
}

TEST_CASE("iterations to target", "[harness]") {
  const auto exp = tiny_experiment();
  const auto trial = harness::prepare_trial(exp, 0);
  for (auto m : {Method::bifp_uns, Method::prune_then_fair, Method::snip}) {
    CAPTURE(pruners::to_string(m));
    const auto v = Variant::of(m);
    const auto easy = harness::iterations_to_target(exp, trial, v, 0.36, {0.0, 1.0});
    REQUIRE(easy.iterations);
    // The first check at which the mask is at the target.
    CHECK(*easy.iterations % 10 == 0);
    CHECK(easy.budget == *easy.iterations);
    const auto full = harness::run_cell(exp, trial, v, 0.36).record.total_iterations;
    CHECK(*easy.iterations <= full);
    const auto never = harness::iterations_to_target(exp, trial, v, 0.36, {1.01, -1.0});
    CHECK_FALSE(never.iterations);
    CHECK(never.budget == full);
  }
  // BiFP holds the target mask from the first step, so its first check is
  // at iteration 10.
  CHECK(harness::iterations_to_target(exp, trial, Variant::of(Method::bifp_uns), 0.36, {0.0, 1.0}).iterations == 10u);
  CHECK_THROWS_AS(harness::iterations_to_target(exp, trial, Variant::of(Method::snip), 0.36, {}, 0), ConfigError);
}

TEST_CASE("BiFP trade-off curve is not dominated by prune-then-fair", "[harness][slow]") {
  auto spec = harness::load_sweep(kSource / "configs" / "synthetic.json");
  const auto& exp = spec.experiment;
  const std::vector<double> lambdas{0.0, 10.0, 40.0};
  const double sparsity = 0.672;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto trial = harness::prepare_trial(exp, seed);
    const auto ours = harness::tradeoff_curve(exp, trial, Variant::of(Method::bifp_uns), sparsity, lambdas);
    const auto theirs = harness::tradeoff_curve(exp, trial, Variant::of(Method::prune_then_fair), sparsity, lambdas);
    for (const auto& q : theirs) {
      bool beaten_by_all = true;
      for (const auto& p : ours) beaten_by_all = beaten_by_all && q.acc > p.acc && q.perf_gap < p.perf_gap;
      CAPTURE(seed, q.lambda, q.acc, q.perf_gap);
      CHECK_FALSE(beaten_by_all);
    }
  }
}
