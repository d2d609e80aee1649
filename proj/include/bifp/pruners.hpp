// SPDX-License-Identifier: Apache-2.0
//
// Bi-level fair pruning and baseline pruners.
//
// Every pruner takes a starting model (usually a pretrained dense network),
// the data it may train on and a PruneConfig, and returns the pruned model
// with a TrainLog. All optimization is plain SGD on minibatches drawn by a
// group-stratified sampler, so every batch contains both groups.
//
// The fairness penalty is lambda * F^2, where F is the accuracy-gap
// surrogate evaluated with group priors p+/p- supplied through Options
// (defaulting to the priors of the training data itself).

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bifp/data.hpp"
#include "bifp/fairness.hpp"
#include "bifp/model.hpp"

namespace bifp::pruners {

enum class Method { bifp_str, bifp_uns, lottery, snip, fpgm, fair_then_prune, prune_then_fair };
enum class Hypergrad { first_order, unrolled };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(Hypergrad h);
Hypergrad hypergrad_from_string(const std::string& s);
bool is_bifp(Method m);

struct PruneConfig {
  Method method = Method::bifp_uns;
  double target_sparsity = 0.5;
  double alpha = 0.05;  // weight learning rate
  double beta = 0.01;   // mask-score learning rate
  double lambda_fair = 1.0;
  std::size_t inner_steps_T = 5;
  std::size_t outer_steps = 60;
  Hypergrad hypergrad = Hypergrad::first_order;
  fairness::SurrogateSpec surrogate;
  std::uint64_t seed = 0;
  bool fair_mask_on = true;
  bool fair_weight_on = true;

  std::size_t batch_size = 128;
  std::size_t epochs_per_round = 10;  // lottery training per pruning round
  std::size_t finetune_epochs = 60;   // retraining after one-shot or iterative pruning
  std::size_t dense_epochs = 60;      // fair dense stage of fair-then-prune
  model::Scope scope = model::Scope::global;
  // Relative step of the finite-difference Hessian-vector products used by
  // the unrolled hypergradient: perturbations have norm hvp_epsilon.
  double hvp_epsilon = 1e-4;
  double divergence_threshold = 1e6;

  void validate() const;
};

enum class Level { inner, outer };

struct StepRecord {
  std::size_t step = 0;  // 0-based, counts every gradient step
  Level level = Level::inner;
  double loss = 0.0;     // total objective including the penalty
  double fairness = 0.0; // surrogate F on the step's batch
  double sparsity = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::size_t total_iterations = 0;

  void append(const TrainLog& other);
};

// Thrown when a loss exceeds the divergence threshold or a gradient turns
// non-finite; carries the log up to the failing step.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, TrainLog log) : std::runtime_error(what), log_(std::move(log)) {}
  const TrainLog& log() const { return log_; }

 private:
  TrainLog log_;
};

// Called after every gradient step; returning false stops the pruner early
// (the partial model is returned).
using StepHook = std::function<bool(const model::MaskedModel&, const TrainLog&)>;

struct Options {
  std::optional<data::GroupStats> priors;
  StepHook on_step;
};

struct PruneResult {
  model::MaskedModel model;
  TrainLog log;
};

// Epoch-wise minibatches: each group is shuffled separately and spread
// evenly over the batches of the epoch, so each batch holds both groups
// whenever each group has at least as many samples as there are batches.
class BatchSampler {
 public:
  BatchSampler(const data::GroupedDataset& data, std::size_t batch_size, std::uint64_t seed);

  data::GroupedBatch next();
  std::vector<std::size_t> next_rows();
  std::size_t batches_per_epoch() const { return batches_; }

 private:
  void refill();

  const data::GroupedDataset* data_;
  std::size_t batch_size_;
  std::size_t batches_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::size_t>> epoch_;
  std::size_t cursor_ = 0;
};

// Objective on one batch: logistic loss, plus lambda * F^2 when `fair`.
// Gradients land in the tensors selected by `track`.
struct Evaluation {
  double loss = 0.0;
  double fairness = 0.0;
};
Evaluation evaluate(model::MaskedModel& model, const data::GroupedBatch& batch, const data::GroupStats& priors,
                    const PruneConfig& cfg, bool fair, model::Track track);

// One SGD step on weights and biases with masks fixed.
Evaluation inner_update(model::MaskedModel& model, const data::GroupedBatch& batch, const data::GroupStats& priors,
                        const PruneConfig& cfg);

// Past inner step kept for the unrolled hypergradient.
struct InnerStep {
  std::vector<double> weights;  // raw weights then biases (effective-weight order) before the step
  data::GroupedBatch batch;
};

// d(outer objective)/d(mask scores), one vector per layer. First-order
// ignores the dependence of the weights on the mask; unrolled adds the
// contribution through the inner steps in `history` (oldest first).
std::vector<std::vector<double>> score_hypergradient(model::MaskedModel& model, const data::GroupedBatch& batch,
                                                     const data::GroupStats& priors, const PruneConfig& cfg,
                                                     const std::vector<InnerStep>& history = {});

// One step on the mask scores with weights fixed, then clamping to [0, 1]
// and re-projection onto binary masks at the target sparsity.
Evaluation outer_update(model::MaskedModel& model, const data::GroupedBatch& batch, const data::GroupStats& priors,
                        const PruneConfig& cfg, const std::vector<InnerStep>& history = {});

// Plain (optionally fairness-penalized) masked SGD for `steps` minibatch
// steps. Appends to `log`.
void train(model::MaskedModel& model, const data::GroupedDataset& data, const PruneConfig& cfg, std::size_t steps,
           double lambda, std::uint64_t seed, const Options& opts, TrainLog& log);

PruneResult bifp_prune(const model::MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                       const Options& opts = {});
PruneResult lottery(const model::MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                    const Options& opts = {});
PruneResult snip_prune(const model::MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                       const Options& opts = {});
PruneResult fpgm_prune(const model::MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                       const Options& opts = {});
PruneResult two_stage(const model::MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                      const Options& opts = {});
// Dispatches on cfg.method.
PruneResult prune(const model::MaskedModel& start, const data::GroupedDataset& data, const PruneConfig& cfg,
                  const Options& opts = {});

// Number of 20% rounds needed to reach `target`: ceil(log(1 - s) / log 0.8).
std::size_t lottery_rounds(double target);
// Kept-weight counts after each round, the last clipped to the target.
std::vector<std::size_t> lottery_schedule(std::size_t maskable, double target);

// Sensitivities |g_j * theta_j| / sum |g * theta| over all maskable weights,
// flat in layer order, from one stratified minibatch.
std::vector<double> snip_sensitivity(const model::MaskedModel& model, const data::GroupedBatch& batch);
// |g_j * w_j| normalized to sum to one (all zeros stay zeros).
std::vector<double> snip_scores(std::span<const double> grads, std::span<const double> weights);

// Total Euclidean distance from each row of a [rows x cols] matrix to all
// other rows.
std::vector<double> row_distance_sums(const ad::Tensor& weight);
// Rows to prune from a layer: the `count` smallest distance sums, ties to
// the lowest index. Layers with at most one row are never pruned.
std::vector<std::size_t> fpgm_select(const ad::Tensor& weight, std::size_t count);

struct InterpolationPoint {
  double t = 0.0;
  double loss = 0.0;
  double fairness = 0.0;
};

// Loss and surrogate along (1 - t) * w_a + t * w_b in effective-weight space.
std::vector<InterpolationPoint> loss_interpolation(const model::MaskedModel& a, const model::MaskedModel& b,
                                                   const data::GroupedDataset& data, std::size_t steps,
                                                   const data::GroupStats& priors,
                                                   const fairness::SurrogateSpec& surrogate = {});

}  // namespace bifp::pruners
