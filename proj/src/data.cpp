// SPDX-License-Identifier: Apache-2.0

#include "bifp/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "bifp/error.hpp"

namespace bifp::data {

using ad::Tensor;

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::full: return "full";
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
  }
  return "?";
}

// ---- Standardizer ---------------------------------------------------------

Standardizer Standardizer::fit(const Tensor& raw) {
  const std::size_t n = raw.rows(), d = raw.cols();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += raw.at(i, j);
  for (auto& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = raw.at(i, j) - s.mean[j];
      s.scale[j] += c * c;
    }
  for (auto& v : s.scale) {
    v = std::sqrt(v / static_cast<double>(n));
    if (v < 1e-12) v = 1.0;  // constant column
  }
  return s;
}

Tensor Standardizer::apply(const Tensor& raw) const {
  if (raw.cols() != mean.size()) {
    throw ShapeError("standardizer fitted on " + std::to_string(mean.size()) + " columns, got " +
                     std::to_string(raw.cols()));
  }
  Tensor out = raw;
  for (std::size_t i = 0; i < raw.rows(); ++i)
    for (std::size_t j = 0; j < raw.cols(); ++j) out.at(i, j) = (raw.at(i, j) - mean[j]) / scale[j];
  return out;
}

Tensor Standardizer::invert(const Tensor& standardized) const {
  Tensor out = standardized;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) = standardized.at(i, j) * scale[j] + mean[j];
  return out;
}

// ---- GroupedDataset -------------------------------------------------------

GroupedDataset::GroupedDataset(Tensor features, std::vector<int> labels, std::vector<Group> groups,
                               SplitTag tag, std::optional<Standardizer> standardizer)
    : labels_(std::move(labels)), groups_(std::move(groups)), tag_(tag) {
  if (features.rank() != 2) throw ShapeError("features must be [n x d], got " + ad::to_string(features.shape()));
  if (features.rows() != labels_.size() || groups_.size() != labels_.size()) {
    throw ShapeError("dataset columns disagree: " + std::to_string(features.rows()) + " feature rows, " +
                     std::to_string(labels_.size()) + " labels, " + std::to_string(groups_.size()) + " groups");
  }
  for (int y : labels_)
    if (y != 1 && y != -1) throw DataError("labels must be -1 or +1, got " + std::to_string(y));
  if (!features.all_finite()) throw NonFiniteError("dataset features contain NaN or Inf");
  standardizer_ = standardizer ? std::move(*standardizer) : Standardizer::fit(features);
  features_ = standardizer_.apply(features);
}

void GroupedDataset::set_clean_labels(std::vector<int> labels) {
  if (labels.size() != labels_.size()) throw ShapeError("clean label count does not match dataset size");
  clean_labels_ = std::move(labels);
}

GroupedDataset GroupedDataset::with_clean_labels() const {
  GroupedDataset out = *this;
  if (clean_labels_) out.labels_ = *clean_labels_;
  return out;
}

std::size_t GroupedDataset::count(Group g) const {
  return static_cast<std::size_t>(std::count(groups_.begin(), groups_.end(), g));
}

GroupedDataset GroupedDataset::subset(std::span<const std::size_t> rows) const {
  GroupedDataset out;
  out.tag_ = tag_;
  out.standardizer_ = standardizer_;
  const std::size_t d = dim();
  std::vector<double> values;
  values.reserve(rows.size() * d);
  out.labels_.reserve(rows.size());
  out.groups_.reserve(rows.size());
  for (auto r : rows) {
    if (r >= size()) throw std::out_of_range("subset row " + std::to_string(r) + " out of range");
    auto row = features_.values().subspan(r * d, d);
    values.insert(values.end(), row.begin(), row.end());
    out.labels_.push_back(labels_[r]);
    out.groups_.push_back(groups_[r]);
  }
  if (rows.empty()) throw DataError("subset must select at least one row");
  out.features_ = Tensor::matrix(rows.size(), d, std::move(values));
  if (clean_labels_) {
    std::vector<int> clean;
    clean.reserve(rows.size());
    for (auto r : rows) clean.push_back((*clean_labels_)[r]);
    out.clean_labels_ = std::move(clean);
  }
  return out;
}

GroupedDataset GroupedDataset::restandardized(const Standardizer& standardizer, SplitTag tag) const {
  GroupedDataset out(raw_features(), labels_, groups_, tag, standardizer);
  out.clean_labels_ = clean_labels_;
  return out;
}

GroupStats GroupStats::of(const GroupedDataset& data) {
  GroupStats s;
  s.n_pos_group = data.count(Group::favorable);
  s.n_neg_group = data.count(Group::unfavorable);
  const auto n = static_cast<double>(data.size());
  if (n > 0) {
    s.p_pos = static_cast<double>(s.n_pos_group) / n;
    s.p_neg = static_cast<double>(s.n_neg_group) / n;
  }
  return s;
}

// ---- CSV ------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  s = s.substr(b, e - b + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos
                                                                                          : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

GroupedDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_line(line);

  auto find_col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(path.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto label_col = find_col(schema.label_col);
  const auto group_col = find_col(schema.sensitive_col);

  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != label_col && c != group_col) feature_cols.push_back(c);
  if (feature_cols.empty()) throw DataError(path.string() + ": no feature columns");

  std::vector<double> values;
  std::vector<int> labels;
  std::vector<Group> groups;
  std::size_t row = 1;  // file line number, header included
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path.string() + ": line " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    }
    for (auto c : feature_cols) {
      const auto& cell = cells[c];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw DataError(path.string() + ": non-numeric cell '" + cell + "' at line " + std::to_string(row) +
                        ", column '" + header[c] + "'");
      }
      values.push_back(v);
    }
    labels.push_back(cells[label_col] == schema.positive_label ? 1 : -1);
    groups.push_back(cells[group_col] == schema.positive_group ? Group::favorable : Group::unfavorable);
  }
  if (labels.empty()) throw DataError(path.string() + ": no data rows");

  const auto n = labels.size();
  GroupedDataset data(Tensor::matrix(n, feature_cols.size(), std::move(values)), std::move(labels),
                      std::move(groups));
  if (!data.has_both_groups()) {
    throw DataError(path.string() + ": sensitive column '" + schema.sensitive_col +
                    "' holds a single group; both s+ and s- are required");
  }
  return data;
}

// ---- split ----------------------------------------------------------------

namespace {

// Integer matrix close to `target` (each cell floor or ceil, widened by one
// if needed) whose row and column sums match exactly. Small matrices only.
std::vector<std::vector<long>> controlled_round(const std::vector<std::vector<double>>& target,
                                                const std::vector<long>& row_sums,
                                                const std::vector<long>& col_sums) {
  const std::size_t R = target.size(), C = col_sums.size(), cells = R * C;
  for (long slack = 0; slack <= 2; ++slack) {
    std::vector<long> lo(cells), width(cells);
    for (std::size_t k = 0; k < cells; ++k) {
      const double t = target[k / C][k % C];
      lo[k] = std::max(0L, static_cast<long>(std::floor(t)) - slack);
      width[k] = static_cast<long>(std::ceil(t)) + slack - lo[k] + 1;
    }
    std::vector<long> digits(cells, 0), best;
    double best_cost = std::numeric_limits<double>::infinity();
    while (true) {
      bool ok = true;
      for (std::size_t r = 0; r < R && ok; ++r) {
        long s = 0;
        for (std::size_t c = 0; c < C; ++c) s += lo[r * C + c] + digits[r * C + c];
        ok = s == row_sums[r];
      }
      for (std::size_t c = 0; c < C && ok; ++c) {
        long s = 0;
        for (std::size_t r = 0; r < R; ++r) s += lo[r * C + c] + digits[r * C + c];
        ok = s == col_sums[c];
      }
      if (ok) {
        double cost = 0.0;
        for (std::size_t k = 0; k < cells; ++k) {
          const double diff = static_cast<double>(lo[k] + digits[k]) - target[k / C][k % C];
          cost += diff * diff;
        }
        if (cost < best_cost - 1e-12) {
          best_cost = cost;
          best = digits;
        }
      }
      std::size_t k = 0;
      while (k < cells && ++digits[k] == width[k]) digits[k++] = 0;
      if (k == cells) break;
    }
    if (!best.empty()) {
      std::vector<std::vector<long>> out(R, std::vector<long>(C));
      for (std::size_t k = 0; k < cells; ++k) out[k / C][k % C] = lo[k] + best[k];
      return out;
    }
  }
  throw DataError("cannot apportion samples to the requested split ratios");
}

// Largest-remainder apportionment of `total` into parts proportional to `weights`.
std::vector<long> apportion(long total, const std::array<double, 3>& weights) {
  std::vector<long> out(3);
  std::vector<std::pair<double, std::size_t>> rem;
  long used = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = weights[k] * static_cast<double>(total);
    out[k] = static_cast<long>(std::floor(exact));
    used += out[k];
    rem.emplace_back(exact - static_cast<double>(out[k]), k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < total; ++i, ++used) ++out[rem[i % 3].second];
  return out;
}

}  // namespace

Splits split(const GroupedDataset& data, SplitRatios ratios, std::uint64_t seed) {
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  for (double v : r)
    if (!(v > 0.0)) throw ConfigError("split ratios must be positive");
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  // cells[g][y]: g = 0 for s+, 1 for s-; y = 0 for +1, 1 for -1
  std::array<std::array<std::vector<std::size_t>, 2>, 2> cells;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto g = data.groups()[i] == Group::favorable ? 0 : 1;
    const auto y = data.labels()[i] == 1 ? 0 : 1;
    cells[g][y].push_back(i);
  }
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t y = 0; y < 2; ++y)
      if (!cells[g][y].empty() && cells[g][y].size() < 3) {
        throw DataError("cell (label " + std::string(y == 0 ? "+1" : "-1") + ", group " +
                        (g == 0 ? "s+" : "s-") + ") has " + std::to_string(cells[g][y].size()) +
                        " samples, fewer than the 3 splits");
      }

  // Stage 1: per-group split sizes with exact split totals.
  const auto totals = apportion(static_cast<long>(data.size()), r);
  std::vector<std::vector<double>> group_target(2, std::vector<double>(3));
  std::vector<long> group_sizes(2);
  for (std::size_t g = 0; g < 2; ++g) {
    group_sizes[g] = static_cast<long>(cells[g][0].size() + cells[g][1].size());
    for (std::size_t k = 0; k < 3; ++k) group_target[g][k] = r[k] * static_cast<double>(group_sizes[g]);
  }
  const auto group_quota = controlled_round(group_target, group_sizes, totals);

  // Stage 2: within each group, split quotas across labels.
  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, 3> rows;
  for (std::size_t g = 0; g < 2; ++g) {
    std::vector<std::vector<double>> target(2, std::vector<double>(3));
    std::vector<long> label_sizes(2);
    for (std::size_t y = 0; y < 2; ++y) {
      label_sizes[y] = static_cast<long>(cells[g][y].size());
      for (std::size_t k = 0; k < 3; ++k) target[y][k] = r[k] * static_cast<double>(label_sizes[y]);
    }
    const auto quota = controlled_round(target, label_sizes, group_quota[g]);
    for (std::size_t y = 0; y < 2; ++y) {
      auto idx = cells[g][y];
      std::shuffle(idx.begin(), idx.end(), rng);
      std::size_t at = 0;
      for (std::size_t k = 0; k < 3; ++k)
        for (long c = 0; c < quota[y][k]; ++c) rows[k].push_back(idx[at++]);
    }
  }
  for (auto& part : rows) std::sort(part.begin(), part.end());

  const std::array<SplitTag, 3> tags{SplitTag::train, SplitTag::val, SplitTag::test};
  std::array<GroupedDataset, 3> parts;
  for (std::size_t k = 0; k < 3; ++k) {
    if (rows[k].empty()) throw DataError(to_string(tags[k]) + " split is empty");
    parts[k] = data.subset(rows[k]);
    if (!parts[k].has_both_groups()) throw DataError(to_string(tags[k]) + " split lacks one of the groups");
  }
  const auto train_stats = Standardizer::fit(parts[0].raw_features());
  return Splits{parts[0].restandardized(train_stats, SplitTag::train),
                parts[1].restandardized(train_stats, SplitTag::val),
                parts[2].restandardized(train_stats, SplitTag::test)};
}

// ---- synthetic ------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (n < 4) throw ConfigError("synthetic n must be at least 4");
  if (d < 1) throw ConfigError("synthetic d must be positive");
  if (!(group_ratio > 0.0 && group_ratio < 1.0)) throw ConfigError("group_ratio must lie in (0, 1)");
  for (double p : {label_noise_pos, label_noise_neg})
    if (!(p >= 0.0 && p < 0.5)) throw ConfigError("label noise rates must lie in [0, 0.5)");
  if (!(class_sep >= 0.0)) throw ConfigError("class_sep must be non-negative");
  if (!(cov_inflation > 0.0)) throw ConfigError("cov_inflation must be positive");
}

namespace {

// Random unit vector supported on coordinates [lo, hi).
std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d, std::size_t lo, std::size_t hi,
                                const std::vector<std::vector<double>>& orthogonal_to) {
  std::normal_distribution<double> normal;
  std::vector<double> v(d, 0.0);
  for (std::size_t j = lo; j < hi; ++j) v[j] = normal(rng);
  for (const auto& u : orthogonal_to) {
    const double dot = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
    for (std::size_t j = 0; j < d; ++j) v[j] -= dot * u[j];
  }
  const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  if (norm < 1e-12 || orthogonal_to.size() >= d) return std::vector<double>(d, 0.0);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

GroupedDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t d = spec.d;
  // With minority_features = k > 0 the minority-specific direction lives on
  // the last k coordinates, the offset on the one before, the shared axis on
  // the rest; otherwise all three are dense.
  const std::size_t k = spec.minority_features;
  const bool split_support = k > 0 && k + 2 <= d;
  const auto axis = random_unit(rng, d, 0, split_support ? d - k - 1 : d, {});
  const auto side = random_unit(rng, d, split_support ? d - k : 0, d, {axis});
  const auto offset_dir = random_unit(rng, d, split_support ? d - k - 1 : 0, split_support ? d - k : d, {axis, side});
  std::vector<double> minority_axis(d);
  for (std::size_t j = 0; j < d; ++j)
    minority_axis[j] = std::cos(spec.minority_tilt) * axis[j] + std::sin(spec.minority_tilt) * side[j];

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  std::vector<double> values(spec.n * d);
  std::vector<int> labels(spec.n), clean(spec.n);
  std::vector<Group> groups(spec.n);
  const double half = spec.class_sep / 2.0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    const bool favorable = unit(rng) < spec.group_ratio;
    const int y = unit(rng) < 0.5 ? 1 : -1;
    double* x = &values[i * d];
    for (std::size_t j = 0; j < d; ++j) x[j] = normal(rng);
    if (favorable) {
      for (std::size_t j = 0; j < d; ++j) x[j] += y * half * axis[j];
    } else {
      for (std::size_t j = 0; j < d; ++j)
        x[j] = spec.cov_inflation * x[j] + y * half * minority_axis[j] + spec.group_offset * offset_dir[j];
    }
    const double noise = favorable ? spec.label_noise_pos : spec.label_noise_neg;
    groups[i] = favorable ? Group::favorable : Group::unfavorable;
    clean[i] = y;
    labels[i] = unit(rng) < noise ? -y : y;
  }
  GroupedDataset data(Tensor::matrix(spec.n, d, std::move(values)), std::move(labels), std::move(groups));
  if (!data.has_both_groups()) throw DataError("synthetic draw produced a single group; raise n or adjust group_ratio");
  data.set_clean_labels(std::move(clean));
  return data;
}

}  // namespace bifp::data
