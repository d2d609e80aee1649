// SPDX-License-Identifier: Apache-2.0

#include "bifp/pruners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bifp/error.hpp"

namespace bifp::pruners {

using data::GroupStats;
using model::MaskedModel;
using model::Track;

// ---- names ----------------------------------------------------------------

namespace {
constexpr std::pair<Method, const char*> kMethods[] = {
    {Method::bifp_str, "bifp-str"},       {Method::bifp_uns, "bifp-uns"},
    {Method::lottery, "lottery"},         {Method::snip, "snip"},
    {Method::fpgm, "fpgm"},               {Method::fair_then_prune, "fair-then-prune"},
    {Method::prune_then_fair, "prune-then-fair"},
};
}  // namespace

std::string to_string(Method m) {
  for (const auto& [k, name] : kMethods)
    if (k == m) return name;
  return "unknown";
}

Method method_from_string(const std::string& s) {
  for (const auto& [k, name] : kMethods)
    if (s == name) return k;
  throw ConfigError("unknown method '" + s + "'");
}

std::string to_string(Hypergrad h) { return h == Hypergrad::unrolled ? "unrolled" : "first-order"; }

Hypergrad hypergrad_from_string(const std::string& s) {
  if (s == "first-order") return Hypergrad::first_order;
  if (s == "unrolled") return Hypergrad::unrolled;
  throw ConfigError("unknown hypergradient '" + s + "'");
}

bool is_bifp(Method m) { return m == Method::bifp_str || m == Method::bifp_uns; }

void PruneConfig::validate() const {
  if (!(target_sparsity >= 0.0 && target_sparsity < 1.0)) throw ConfigError("target_sparsity must lie in [0, 1)");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(lambda_fair >= 0.0 && std::isfinite(lambda_fair))) throw ConfigError("lambda_fair must be non-negative");
  if (inner_steps_T < 1) throw ConfigError("inner_steps_T must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(hvp_epsilon > 0.0)) throw ConfigError("hvp_epsilon must be positive");
  if (!(divergence_threshold > 0.0)) throw ConfigError("divergence_threshold must be positive");
  surrogate.validate();
}

void TrainLog::append(const TrainLog& other) {
  for (auto r : other.steps) {
    r.step += total_iterations;
    steps.push_back(r);
  }
  total_iterations += other.total_iterations;
}

// ---- helpers ----------------------------------------------------------------

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// Raw weights then biases, the effective-weight layout without masking.
std::vector<double> get_params(const MaskedModel& m) {
  std::vector<double> out;
  out.reserve(m.parameter_count());
  for (const auto& L : m.layers()) out.insert(out.end(), L.weight.values().begin(), L.weight.values().end());
  for (const auto& L : m.layers()) out.insert(out.end(), L.bias.values().begin(), L.bias.values().end());
  return out;
}

void set_params(MaskedModel& m, std::span<const double> p) {
  std::size_t at = 0;
  for (auto& L : m.layers())
    for (auto& w : L.weight.values()) w = p[at++];
  for (auto& L : m.layers())
    for (auto& b : L.bias.values()) b = p[at++];
}

std::vector<double> param_grads(const MaskedModel& m) {
  std::vector<double> out;
  out.reserve(m.parameter_count());
  auto put = [&](const ad::Tensor& t) {
    if (t.grad()) {
      out.insert(out.end(), t.grad()->begin(), t.grad()->end());
    } else {
      out.insert(out.end(), t.size(), 0.0);
    }
  };
  for (const auto& L : m.layers()) put(L.weight);
  for (const auto& L : m.layers()) put(L.bias);
  return out;
}

std::vector<std::vector<double>> score_grads(const MaskedModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& L : m.layers())
    out.push_back(L.mask_scores.grad() ? *L.mask_scores.grad() : std::vector<double>(L.weight.size(), 0.0));
  return out;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::size_t steps_for(std::size_t epochs, const data::GroupedDataset& d, std::size_t batch_size) {
  const std::size_t per_epoch = (d.size() + batch_size - 1) / batch_size;
  return epochs * per_epoch;
}

// Appends steps to a log, enforces the divergence guard and runs the hook.
class Recorder {
 public:
  Recorder(const PruneConfig& cfg, const Options& opts, TrainLog& log) : cfg_(cfg), opts_(opts), log_(log) {}

  bool record(Level level, const Evaluation& ev, const MaskedModel& m) {
    if (!std::isfinite(ev.loss) || ev.loss > cfg_.divergence_threshold) {
      throw DivergenceError("loss diverged at step " + std::to_string(log_.total_iterations) + " (" +
                                std::to_string(ev.loss) + ")",
                            log_);
    }
    log_.steps.push_back({log_.total_iterations, level, ev.loss, ev.fairness, model::sparsity(m)});
    ++log_.total_iterations;
    return !opts_.on_step || opts_.on_step(m, log_);
  }

  TrainLog& log() { return log_; }

 private:
  const PruneConfig& cfg_;
  const Options& opts_;
  TrainLog& log_;
};

// Runs `body`, turning non-finite gradients into DivergenceError with the log.
template <class F>
void guarded(TrainLog& log, F&& body) {
  try {
    body();
  } catch (const NonFiniteError& e) {
    throw DivergenceError(std::string("non-finite value at step ") + std::to_string(log.total_iterations) + ": " +
                              e.what(),
                          log);
  }
}

GroupStats priors_for(const data::GroupedDataset& d, const Options& opts) {
  auto p = opts.priors.value_or(GroupStats::of(d));
  if (!(p.p_pos > 0.0 && p.p_neg > 0.0)) throw DataError("training data needs samples from both groups");
  return p;
}

ad::Tensor label_tensor(const data::GroupedBatch& batch) {
  std::vector<double> y(batch.labels().begin(), batch.labels().end());
  return ad::Tensor::vector(std::move(y));
}

}  // namespace

// ---- sampler ----------------------------------------------------------------

BatchSampler::BatchSampler(const data::GroupedDataset& data, std::size_t batch_size, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), rng_(seed) {
  if (data.size() == 0) throw DataError("cannot sample batches from an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  batches_ = (data.size() + batch_size - 1) / batch_size;
}

void BatchSampler::refill() {
  std::vector<std::size_t> by_group[2];
  for (std::size_t i = 0; i < data_->size(); ++i)
    by_group[data_->groups()[i] == data::Group::favorable ? 0 : 1].push_back(i);
  epoch_.assign(batches_, {});
  for (auto& rows : by_group) {
    std::shuffle(rows.begin(), rows.end(), rng_);
    for (std::size_t j = 0; j < rows.size(); ++j) epoch_[j * batches_ / rows.size()].push_back(rows[j]);
  }
  std::erase_if(epoch_, [](const auto& b) { return b.empty(); });
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next_rows() {
  if (cursor_ >= epoch_.size()) refill();
  return epoch_[cursor_++];
}

data::GroupedBatch BatchSampler::next() { return data_->subset(next_rows()); }

// ---- steps ------------------------------------------------------------------

Evaluation evaluate(MaskedModel& model, const data::GroupedBatch& batch, const GroupStats& priors,
                    const PruneConfig& cfg, bool fair, Track track) {
  ad::Tape tape;
  auto logits = model.forward(tape, tape.constant(batch.features()), track);
  auto loss = ad::logistic_loss(logits, tape.constant(label_tensor(batch)));
  auto f = fairness::fairness_surrogate(logits, batch, priors, cfg.surrogate);
  if (fair && cfg.lambda_fair != 0.0) loss = ad::add(loss, ad::scale(ad::multiply(f, f), cfg.lambda_fair));
  if (track.weights || track.scores) tape.backward(loss);
  return {loss.item(), f.item()};
}

Evaluation inner_update(MaskedModel& model, const data::GroupedBatch& batch, const GroupStats& priors,
                        const PruneConfig& cfg) {
  const auto ev = evaluate(model, batch, priors, cfg, cfg.fair_weight_on, Track{.weights = true});
  for (auto& L : model.layers()) {
    for (auto* t : {&L.weight, &L.bias}) {
      const auto& g = *t->grad();
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] -= cfg.alpha * g[i];
    }
  }
  model.clear_grads();
  return ev;
}

namespace {

struct Hypergradient {
  Evaluation eval;
  std::vector<std::vector<double>> grads;
};

Hypergradient compute_hypergradient(MaskedModel& model, const data::GroupedBatch& batch, const GroupStats& priors,
                                    const PruneConfig& cfg, const std::vector<InnerStep>& history) {
  const bool unroll = cfg.hypergrad == Hypergrad::unrolled && !history.empty();
  Hypergradient h;
  h.eval = evaluate(model, batch, priors, cfg, cfg.fair_mask_on, Track{.weights = unroll, .scores = true});
  h.grads = score_grads(model);
  if (!unroll) {
    model.clear_grads();
    return h;
  }

  // Reverse pass through theta_{k+1} = theta_k - alpha * grad_theta L_in(theta_k, m).
  // v is the adjoint of theta; mixed and theta-theta second derivatives are
  // central differences of first derivatives along v.
  auto v = param_grads(model);
  const auto theta_final = get_params(model);
  for (auto k = history.size(); k-- > 0;) {
    const double nv = norm(v);
    if (nv == 0.0) break;
    const double eps = cfg.hvp_epsilon / nv;
    const auto& step = history[k];
    std::vector<double> shifted(step.weights.size());
    auto gradients_at = [&](double sign) {
      for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] = step.weights[i] + sign * eps * v[i];
      set_params(model, shifted);
      evaluate(model, step.batch, priors, cfg, cfg.fair_weight_on, Track{.weights = true, .scores = true});
      return std::pair{param_grads(model), score_grads(model)};
    };
    const auto [gt_plus, gm_plus] = gradients_at(1.0);
    const auto [gt_minus, gm_minus] = gradients_at(-1.0);
    const double c = cfg.alpha / (2.0 * eps);
    for (std::size_t l = 0; l < h.grads.size(); ++l)
      for (std::size_t i = 0; i < h.grads[l].size(); ++i) h.grads[l][i] -= c * (gm_plus[l][i] - gm_minus[l][i]);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * (gt_plus[i] - gt_minus[i]);
  }
  set_params(model, theta_final);
  model.clear_grads();
  return h;
}

}  // namespace

std::vector<std::vector<double>> score_hypergradient(MaskedModel& model, const data::GroupedBatch& batch,
                                                     const GroupStats& priors, const PruneConfig& cfg,
                                                     const std::vector<InnerStep>& history) {
  return compute_hypergradient(model, batch, priors, cfg, history).grads;
}

Evaluation outer_update(MaskedModel& model, const data::GroupedBatch& batch, const GroupStats& priors,
                        const PruneConfig& cfg, const std::vector<InnerStep>& history) {
  const auto h = compute_hypergradient(model, batch, priors, cfg, history);
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    auto& s = model.layers()[l].mask_scores;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::clamp(s[i] - cfg.beta * h.grads[l][i], 0.0, 1.0);
  }
  model::binarize_masks(model, cfg.target_sparsity, cfg.scope);
  return h.eval;
}

// ---- training loops -------------------------------------------------------

namespace {

bool train_into(MaskedModel& model, const data::GroupedDataset& data, const PruneConfig& cfg, std::size_t steps,
                double lambda, std::uint64_t seed, const GroupStats& priors, Recorder& rec) {
  if (steps == 0) return true;
  auto step_cfg = cfg;
  step_cfg.lambda_fair = lambda;
  step_cfg.fair_weight_on = lambda != 0.0;
  BatchSampler sampler(data, cfg.batch_size, seed);
  for (std::size_t t = 0; t < steps; ++t) {
    const auto ev = inner_update(model, sampler.next(), priors, step_cfg);
    if (!rec.record(Level::inner, ev, model)) return false;
  }
  return true;
}

void keep_top_magnitudes(MaskedModel& model, std::size_t kept, model::Scope scope) {
  std::vector<ad::Tensor> saved;
  for (auto& L : model.layers()) {
    saved.push_back(L.mask_scores);
    for (std::size_t i = 0; i < L.weight.size(); ++i)
      L.mask_scores[i] = L.binary_mask[i] != 0.0 ? std::abs(L.weight[i]) : -1.0;
  }
  const double target = 1.0 - static_cast<double>(kept) / static_cast<double>(model.maskable_count());
  model::binarize_masks(model, std::max(0.0, target), scope);
  for (std::size_t l = 0; l < saved.size(); ++l) model.layers()[l].mask_scores = std::move(saved[l]);
}

// Iterative magnitude pruning with rewinding to the starting weights, then
// retraining with `final_lambda`. Returns false if the hook stopped it.
bool lottery_into(MaskedModel& model, const data::GroupedDataset& data, const PruneConfig& cfg, double final_lambda,
                  std::uint64_t salt, const GroupStats& priors, Recorder& rec) {
  model.set_mode(model::MaskMode::unstructured);
  if (cfg.target_sparsity == 0.0) return true;
  const auto rewind = get_params(model);
  const auto schedule = lottery_schedule(model.maskable_count(), cfg.target_sparsity);
  const auto round_steps = steps_for(cfg.epochs_per_round, data, cfg.batch_size);
  for (std::size_t r = 0; r < schedule.size(); ++r) {
    if (!train_into(model, data, cfg, round_steps, 0.0, derive_seed(cfg.seed, salt + r), priors, rec)) return false;
    keep_top_magnitudes(model, schedule[r], cfg.scope);
    set_params(model, rewind);
  }
  return train_into(model, data, cfg, steps_for(cfg.finetune_epochs, data, cfg.batch_size), final_lambda,
                    derive_seed(cfg.seed, salt + 1000), priors, rec);
}

double fair_lambda(const PruneConfig& cfg) { return cfg.fair_weight_on ? cfg.lambda_fair : 0.0; }

}  // namespace

void train(MaskedModel& model, const data::GroupedDataset& data, const PruneConfig& cfg, std::size_t steps,
           double lambda, std::uint64_t seed, const Options& opts, TrainLog& log) {
  const auto priors = priors_for(data, opts);
  Recorder rec(cfg, opts, log);
  guarded(log, [&] { train_into(model, data, cfg, steps, lambda, seed, priors, rec); });
}

// ---- pruners ----------------------------------------------------------------

PruneResult bifp_prune(const MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                       const Options& opts) {
  cfg.validate();
  if (!is_bifp(cfg.method)) throw ConfigError("bifp_prune needs method bifp-str or bifp-uns");
  const auto priors = priors_for(data, opts);
  PruneResult out{start, {}};
  auto& model = out.model;
  Recorder rec(cfg, opts, out.log);
  guarded(out.log, [&] {
    model.set_mode(cfg.method == Method::bifp_str ? model::MaskMode::structured : model::MaskMode::unstructured);
    model.init_scores_from_magnitude();
    model::binarize_masks(model, cfg.target_sparsity, cfg.scope);
    BatchSampler sampler(data, cfg.batch_size, derive_seed(cfg.seed, 1));
    const bool unroll = cfg.hypergrad == Hypergrad::unrolled;
    std::vector<InnerStep> history;
    for (std::size_t o = 0; o < cfg.outer_steps; ++o) {
      history.clear();
      for (std::size_t t = 0; t < cfg.inner_steps_T; ++t) {
        auto batch = sampler.next();
        if (unroll) history.push_back({get_params(model), batch});
        const auto ev = inner_update(model, batch, priors, cfg);
        if (!rec.record(Level::inner, ev, model)) return;
      }
      const auto ev = outer_update(model, data, priors, cfg, history);
      if (!rec.record(Level::outer, ev, model)) return;
    }
  });
  return out;
}

std::size_t lottery_rounds(double target) {
  if (!(target >= 0.0 && target < 1.0)) throw ConfigError("sparsity must lie in [0, 1)");
  if (target == 0.0) return 0;
  // Targets a hair past a ladder value (e.g. 0.790285 printed from
  // 1 - 0.8^7) still take the ladder's round count; the last round is
  // clipped to the exact target anyway.
  const double r = std::log(1.0 - target) / std::log(0.8);
  return static_cast<std::size_t>(std::ceil(r - 1e-4));
}

std::vector<std::size_t> lottery_schedule(std::size_t maskable, double target) {
  const auto rounds = lottery_rounds(target);
  const auto final_kept =
      static_cast<std::size_t>(std::llround((1.0 - target) * static_cast<double>(maskable)));
  std::vector<std::size_t> kept;
  for (std::size_t r = 1; r <= rounds; ++r) {
    const auto k = static_cast<std::size_t>(
        std::llround(static_cast<double>(maskable) * std::pow(0.8, static_cast<double>(r))));
    kept.push_back(r == rounds ? final_kept : std::max(k, final_kept));
  }
  return kept;
}

PruneResult lottery(const MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                    const Options& opts) {
  cfg.validate();
  const auto priors = priors_for(data, opts);
  PruneResult out{start, {}};
  Recorder rec(cfg, opts, out.log);
  guarded(out.log, [&] { lottery_into(out.model, data, cfg, 0.0, 100, priors, rec); });
  return out;
}

std::vector<double> snip_sensitivity(const MaskedModel& model, const data::GroupedBatch& batch) {
  auto copy = model;
  ad::Tape tape;
  auto logits = copy.forward(tape, tape.constant(batch.features()), Track{.scores = true});
  tape.backward(ad::logistic_loss(logits, tape.constant(label_tensor(batch))));
  // With the straight-through rule the score gradient is dL/d(w * m) * w,
  // already the product g * theta.
  std::vector<double> gw;
  for (const auto& L : copy.layers()) gw.insert(gw.end(), L.mask_scores.grad()->begin(), L.mask_scores.grad()->end());
  return snip_scores(gw, std::vector<double>(gw.size(), 1.0));
}

std::vector<double> snip_scores(std::span<const double> grads, std::span<const double> weights) {
  if (grads.size() != weights.size()) throw ShapeError("snip_scores: gradients and weights differ in length");
  std::vector<double> s(grads.size());
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::abs(grads[i] * weights[i]);
    total += s[i];
  }
  if (total > 0.0)
    for (auto& v : s) v /= total;
  return s;
}

PruneResult snip_prune(const MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                       const Options& opts) {
  cfg.validate();
  const auto priors = priors_for(data, opts);
  PruneResult out{start, {}};
  auto& model = out.model;
  Recorder rec(cfg, opts, out.log);
  guarded(out.log, [&] {
    model.set_mode(model::MaskMode::unstructured);
    BatchSampler sampler(data, cfg.batch_size, derive_seed(cfg.seed, 2));
    auto sens = snip_sensitivity(model, sampler.next());
    auto zero = [](const std::vector<double>& s) { return std::all_of(s.begin(), s.end(), [](double v) { return v == 0.0; }); };
    if (zero(sens)) sens = snip_sensitivity(model, sampler.next());
    if (zero(sens)) throw DataError("SNIP: zero gradient on two consecutive batches");
    std::size_t at = 0;
    for (auto& L : model.layers())
      for (auto& v : L.mask_scores.values()) v = sens[at++];
    model::binarize_masks(model, cfg.target_sparsity, cfg.scope);
    train_into(model, data, cfg, steps_for(cfg.finetune_epochs, data, cfg.batch_size), 0.0,
               derive_seed(cfg.seed, 3), priors, rec);
  });
  return out;
}

std::vector<double> row_distance_sums(const ad::Tensor& weight) {
  const std::size_t rows = weight.rows(), cols = weight.cols();
  std::vector<double> sums(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = i + 1; j < rows; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double diff = weight.at(i, c) - weight.at(j, c);
        d2 += diff * diff;
      }
      const double d = std::sqrt(d2);
      sums[i] += d;
      sums[j] += d;
    }
  return sums;
}

std::vector<std::size_t> fpgm_select(const ad::Tensor& weight, std::size_t count) {
  const std::size_t rows = weight.rows();
  if (rows <= 1) return {};
  count = std::min(count, rows - 1);
  const auto sums = row_distance_sums(weight);
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sums[a] < sums[b]; });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

PruneResult fpgm_prune(const MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                       const Options& opts) {
  cfg.validate();
  const auto priors = priors_for(data, opts);
  PruneResult out{start, {}};
  auto& model = out.model;
  Recorder rec(cfg, opts, out.log);
  guarded(out.log, [&] {
    model.set_mode(model::MaskMode::structured);
    std::vector<std::size_t> rows, sizes;
    for (const auto& L : model.layers()) {
      rows.push_back(L.out());
      sizes.push_back(L.in());
    }
    const auto keep = model::allocate_rows(rows, sizes,
                                           (1.0 - cfg.target_sparsity) * static_cast<double>(model.maskable_count()));
    for (std::size_t l = 0; l < rows.size(); ++l) {
      auto& L = model.layers()[l];
      std::fill(L.binary_mask.values().begin(), L.binary_mask.values().end(), 1.0);
      for (auto r : fpgm_select(L.weight, rows[l] - keep[l]))
        for (std::size_t c = 0; c < L.in(); ++c) L.binary_mask.at(r, c) = 0.0;
      L.mask_scores = L.binary_mask;
    }
    train_into(model, data, cfg, steps_for(cfg.finetune_epochs, data, cfg.batch_size), 0.0,
               derive_seed(cfg.seed, 4), priors, rec);
  });
  return out;
}

PruneResult two_stage(const MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                      const Options& opts) {
  cfg.validate();
  if (cfg.method != Method::fair_then_prune && cfg.method != Method::prune_then_fair) {
    throw ConfigError("two_stage needs method fair-then-prune or prune-then-fair");
  }
  const auto priors = priors_for(data, opts);
  PruneResult out{start, {}};
  auto& model = out.model;
  Recorder rec(cfg, opts, out.log);
  guarded(out.log, [&] {
    if (cfg.method == Method::prune_then_fair) {
      lottery_into(model, data, cfg, fair_lambda(cfg), 100, priors, rec);
      return;
    }
    if (!train_into(model, data, cfg, steps_for(cfg.dense_epochs, data, cfg.batch_size), fair_lambda(cfg),
                    cfg.seed, priors, rec)) {
      return;
    }
    lottery_into(model, data, cfg, 0.0, 100, priors, rec);
  });
  return out;
}

PruneResult prune(const MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                  const Options& opts) {
  switch (cfg.method) {
    case Method::bifp_str:
    case Method::bifp_uns:
      return bifp_prune(start, data, cfg, opts);
    case Method::lottery:
      return lottery(start, data, cfg, opts);
    case Method::snip:
      return snip_prune(start, data, cfg, opts);
    case Method::fpgm:
      return fpgm_prune(start, data, cfg, opts);
    case Method::fair_then_prune:
    case Method::prune_then_fair:
      return two_stage(start, data, cfg, opts);
  }
  throw ConfigError("unknown method");
}

// ---- interpolation ----------------------------------------------------------

std::vector<InterpolationPoint> loss_interpolation(const MaskedModel& a, const MaskedModel& b,
                                                   const data::GroupedDataset& data, std::size_t steps,
                                                   const GroupStats& priors, const fairness::SurrogateSpec& surrogate) {
  if (!a.same_architecture(b)) throw ShapeError("loss_interpolation: models differ in architecture");
  if (steps == 0) throw ConfigError("loss_interpolation needs at least one step");
  const auto wa = model::effective_weights(a);
  const auto wb = model::effective_weights(b);
  PruneConfig cfg;
  cfg.surrogate = surrogate;
  std::vector<InterpolationPoint> curve;
  auto probe = a;
  std::vector<double> w(wa.size());
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = steps == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(steps - 1);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (1.0 - t) * wa[i] + t * wb[i];
    model::load_effective_weights(probe, w);
    const auto ev = evaluate(probe, data, priors, cfg, false, Track{});
    curve.push_back({t, ev.loss, ev.fairness});
  }
  return curve;
}

}  // namespace bifp::pruners
