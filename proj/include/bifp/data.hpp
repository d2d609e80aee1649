// SPDX-License-Identifier: Apache-2.0
//
// Grouped binary-classification datasets: CSV ingestion, stratified
// three-way splits, and a synthetic generator with controllable group bias.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bifp/autodiff.hpp"

namespace bifp::data {

// Sensitive attribute value: s+ (favorable) or s- (unfavorable).
enum class Group : std::int8_t { favorable = 1, unfavorable = -1 };

enum class SplitTag { full, train, val, test };

std::string to_string(SplitTag tag);

// Per-column z-score statistics; `raw = standardized * scale + mean`.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const ad::Tensor& raw);
  ad::Tensor apply(const ad::Tensor& raw) const;
  ad::Tensor invert(const ad::Tensor& standardized) const;
};

class GroupedDataset {
 public:
  GroupedDataset() = default;
  // `features` are raw; they are stored standardized with `standardizer`
  // (fitted on `features` itself when not given).
  GroupedDataset(ad::Tensor features, std::vector<int> labels, std::vector<Group> groups,
                 SplitTag tag = SplitTag::full, std::optional<Standardizer> standardizer = {});

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return features_.cols(); }
  const ad::Tensor& features() const { return features_; }
  ad::Tensor raw_features() const { return standardizer_.invert(features_); }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<Group>& groups() const { return groups_; }
  SplitTag tag() const { return tag_; }
  const Standardizer& standardizer() const { return standardizer_; }

  // Labels before injected noise, when the source knows them.
  const std::optional<std::vector<int>>& clean_labels() const { return clean_labels_; }
  void set_clean_labels(std::vector<int> labels);
  // Copy whose observed labels are the clean ones (no-op without them).
  GroupedDataset with_clean_labels() const;

  std::size_t count(Group g) const;
  bool has_both_groups() const { return count(Group::favorable) > 0 && count(Group::unfavorable) > 0; }

  GroupedDataset subset(std::span<const std::size_t> rows) const;
  // Same raw rows re-standardized with other statistics.
  GroupedDataset restandardized(const Standardizer& standardizer, SplitTag tag) const;

 private:
  ad::Tensor features_;
  std::vector<int> labels_;
  std::vector<Group> groups_;
  SplitTag tag_ = SplitTag::full;
  Standardizer standardizer_;
  std::optional<std::vector<int>> clean_labels_;
};

// A batch is a materialized subset of a dataset.
using GroupedBatch = GroupedDataset;

// Empirical P(S = s+) and P(S = s-).
struct GroupStats {
  std::size_t n_pos_group = 0;
  std::size_t n_neg_group = 0;
  double p_pos = 0.0;
  double p_neg = 0.0;

  static GroupStats of(const GroupedDataset& data);
};

struct CsvSchema {
  std::string label_col;
  std::string sensitive_col;
  std::string positive_label;  // cell text mapped to +1; anything else -> -1
  std::string positive_group;  // cell text mapped to s+; anything else -> s-
};

// Reads a UTF-8 comma-separated file with a header row. Every column other
// than the label and sensitive columns must be numeric.
GroupedDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

struct SplitRatios {
  double train = 0.5;
  double val = 0.25;
  double test = 0.25;
};

struct Splits {
  GroupedDataset train;
  GroupedDataset val;
  GroupedDataset test;
};

// Stratified by (label, group). All three splits are standardized with
// statistics of the train split's raw features.
Splits split(const GroupedDataset& data, SplitRatios ratios, std::uint64_t seed);

struct SyntheticSpec {
  std::size_t n = 2000;
  std::size_t d = 20;
  double group_ratio = 0.85;  // P(s+)
  double label_noise_pos = 0.05;
  double label_noise_neg = 0.25;
  double class_sep = 3.0;
  std::uint64_t seed = 0;
  // Group s- geometry: its class axis is rotated by `minority_tilt` radians
  // away from the s+ axis, its noise is scaled by `cov_inflation`, and its
  // cloud is displaced by `group_offset` along a third direction.
  double minority_tilt = 1.2;
  double cov_inflation = 1.2;
  double group_offset = 1.5;
  // When positive (and d >= minority_features + 2), the tilt direction is
  // confined to the last `minority_features` input coordinates, which carry
  // no signal for group s+.
  std::size_t minority_features = 2;

  void validate() const;
};

// Labels carry the injected noise; the noise-free labels are attached as
// clean_labels().
GroupedDataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace bifp::data
