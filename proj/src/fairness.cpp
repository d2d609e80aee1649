// SPDX-License-Identifier: Apache-2.0

#include "bifp/fairness.hpp"

#include <cmath>

#include "bifp/error.hpp"

namespace bifp::fairness {

using data::Group;

void SurrogateSpec::validate() const {
  if (kind == Kind::sigmoid && !(sharpness > 0.0 && std::isfinite(sharpness))) {
    throw ConfigError("surrogate sharpness must be positive and finite");
  }
}

int predict(double logit) { return logit > 0.0 ? 1 : -1; }

double accuracy(std::span<const double> logits, std::span<const int> labels) {
  if (labels.empty()) throw DataError("accuracy of an empty dataset");
  if (logits.size() != labels.size()) throw ShapeError("accuracy: logits and labels differ in length");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predict(logits[i]) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const model::MaskedModel& model, const data::GroupedDataset& data) {
  if (data.size() == 0) throw DataError("accuracy of an empty dataset");
  return accuracy(model.logits(data.features()), data.labels());
}

GroupAccuracy group_accuracy(std::span<const double> logits, const data::GroupedDataset& data) {
  if (!data.has_both_groups()) throw DataError("group accuracy needs samples from both groups");
  if (logits.size() != data.size()) throw ShapeError("group accuracy: logits and dataset differ in length");
  std::size_t correct[2] = {0, 0}, total[2] = {0, 0};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int g = data.groups()[i] == Group::favorable ? 0 : 1;
    ++total[g];
    correct[g] += predict(logits[i]) == data.labels()[i];
  }
  GroupAccuracy acc;
  acc.overall = static_cast<double>(correct[0] + correct[1]) / static_cast<double>(data.size());
  acc.pos = static_cast<double>(correct[0]) / static_cast<double>(total[0]);
  acc.neg = static_cast<double>(correct[1]) / static_cast<double>(total[1]);
  return acc;
}

GroupAccuracy group_accuracy(const model::MaskedModel& model, const data::GroupedDataset& data) {
  if (!data.has_both_groups()) throw DataError("group accuracy needs samples from both groups");
  return group_accuracy(model.logits(data.features()), data);
}

double performance_fairness(const model::MaskedModel& model, const data::GroupedDataset& data) {
  const auto acc = group_accuracy(model, data);
  return std::abs(acc.pos - acc.neg);
}

FairnessReport degradation_fairness(const model::MaskedModel& dense, const model::MaskedModel& pruned,
                                    const data::GroupedDataset& data) {
  if (!dense.same_architecture(pruned)) throw ShapeError("degradation_fairness: models differ in architecture");
  const auto before = group_accuracy(dense, data);
  const auto after = group_accuracy(pruned, data);
  FairnessReport r;
  r.acc_overall = after.overall;
  r.acc_pos = after.pos;
  r.acc_neg = after.neg;
  r.perf_gap = std::abs(after.pos - after.neg);
  r.degradation_pos = before.pos - after.pos;
  r.degradation_neg = before.neg - after.neg;
  r.degradation_gap = std::abs(r.degradation_pos - r.degradation_neg);
  return r;
}

ad::Var fairness_surrogate(ad::Var logits, const data::GroupedBatch& batch, const data::GroupStats& stats,
                           const SurrogateSpec& spec) {
  spec.validate();
  if (!batch.has_both_groups()) throw DataError("fairness surrogate needs both groups in the batch");
  if (logits.shape() != ad::Shape{batch.size()}) {
    throw ShapeError("fairness surrogate: logits " + ad::to_string(logits.shape()) + " vs batch of " +
                     std::to_string(batch.size()));
  }
  if (!(stats.p_pos > 0.0 && stats.p_neg > 0.0)) throw DataError("fairness surrogate: group priors must be positive");

  const std::size_t n = batch.size();
  const auto f = logits.value().values();
  // Term i is weight[i] * u(sign[i] * y_i * f_i); s- samples use the
  // incorrect-indicator, hence sign -1.
  std::vector<double> weight(n), sign(n), slope(n, 0.0);
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = batch.groups()[i] == Group::favorable;
    weight[i] = 1.0 / (static_cast<double>(n) * (pos ? stats.p_pos : stats.p_neg));
    sign[i] = pos ? 1.0 : -1.0;
    const double y = batch.labels()[i];
    double u;
    if (spec.kind == SurrogateSpec::Kind::indicator) {
      const bool correct = predict(f[i]) == batch.labels()[i];
      u = (pos ? correct : !correct) ? 1.0 : 0.0;
    } else {
      const double z = spec.sharpness * sign[i] * y * f[i];
      u = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      slope[i] = spec.sharpness * sign[i] * y * u * (1.0 - u);
    }
    value += weight[i] * u;
  }
  value -= 1.0;

  return logits.tape()->record(
      ad::Tensor::scalar(value), {logits},
      [weight = std::move(weight), slope = std::move(slope)](std::span<const double> g,
                                                             std::span<std::span<double>> in) {
        if (in[0].empty()) return;
        for (std::size_t i = 0; i < weight.size(); ++i) in[0][i] += g[0] * weight[i] * slope[i];
      });
}

double fairness_surrogate_value(const model::MaskedModel& model, const data::GroupedBatch& batch,
                                const data::GroupStats& stats, const SurrogateSpec& spec) {
  ad::Tape tape;
  auto copy = model;
  auto logits = copy.forward(tape, tape.constant(batch.features()));
  return fairness_surrogate(logits, batch, stats, spec).item();
}

}  // namespace bifp::fairness
