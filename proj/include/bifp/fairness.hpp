// SPDX-License-Identifier: Apache-2.0
//
// Group accuracy metrics and the differentiable accuracy-gap surrogate.
// Predictions are +1 when the logit is strictly positive, -1 otherwise.

#pragma once

#include <vector>

#include "bifp/autodiff.hpp"
#include "bifp/data.hpp"
#include "bifp/model.hpp"

namespace bifp::fairness {

struct FairnessReport {
  double acc_overall = 0.0;
  double acc_pos = 0.0;
  double acc_neg = 0.0;
  double perf_gap = 0.0;  // |acc_pos - acc_neg|
  double degradation_pos = 0.0;
  double degradation_neg = 0.0;
  double degradation_gap = 0.0;  // |degradation_pos - degradation_neg|
};

// u(z) applied to the signed margin y * f(x).
//   sigmoid:   u(z) = 1 / (1 + exp(-sharpness * z))
//   indicator: u(z) = 1 if z > 0, 0 otherwise (z = 0 counts as incorrect for
//              y = +1 and correct for y = -1, matching the prediction rule).
//              Not differentiable; for tests and reporting.
struct SurrogateSpec {
  enum class Kind { sigmoid, indicator };
  Kind kind = Kind::sigmoid;
  double sharpness = 4.0;

  void validate() const;
};

struct GroupAccuracy {
  double overall = 0.0;
  double pos = 0.0;
  double neg = 0.0;
};

int predict(double logit);

double accuracy(const model::MaskedModel& model, const data::GroupedDataset& data);
double accuracy(std::span<const double> logits, std::span<const int> labels);
GroupAccuracy group_accuracy(const model::MaskedModel& model, const data::GroupedDataset& data);
GroupAccuracy group_accuracy(std::span<const double> logits, const data::GroupedDataset& data);

// |acc_pos - acc_neg|.
double performance_fairness(const model::MaskedModel& model, const data::GroupedDataset& data);

// Per-group accuracy of `pruned` and its accuracy loss relative to `dense`.
FairnessReport degradation_fairness(const model::MaskedModel& dense, const model::MaskedModel& pruned,
                                    const data::GroupedDataset& data);

// F = (1/N) [ sum_{s+} u(y f)/p+ + sum_{s-} u(-y f)/p- ] - 1 over `batch`,
// where `logits` are the model outputs for the batch rows and p+/p- come from
// `stats`. With the indicator this equals acc_pos - acc_neg whenever `stats`
// describe the batch itself.
ad::Var fairness_surrogate(ad::Var logits, const data::GroupedBatch& batch, const data::GroupStats& stats,
                           const SurrogateSpec& spec);

// Convenience: forward pass of `model` on `batch` followed by the surrogate.
double fairness_surrogate_value(const model::MaskedModel& model, const data::GroupedBatch& batch,
                                const data::GroupStats& stats, const SurrogateSpec& spec);

}  // namespace bifp::fairness
