// SPDX-License-Identifier: Apache-2.0

#include "bifp/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "bifp/error.hpp"

namespace bifp::model {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

std::string to_string(MaskMode mode) { return mode == MaskMode::structured ? "structured" : "unstructured"; }

MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "structured") return MaskMode::structured;
  if (s == "unstructured") return MaskMode::unstructured;
  throw ConfigError("unknown mask mode '" + s + "'");
}

std::size_t MaskedLayer::kept() const {
  const auto v = binary_mask.values();
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), 1.0));
}

MaskedModel::MaskedModel(std::vector<MaskedLayer> layers, Activation activation)
    : layers_(std::move(layers)), activation_(activation) {
  if (layers_.empty()) throw ConfigError("a model needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const ad::Shape ws{L.out(), L.in()};
    if (L.bias.shape() != ad::Shape{L.out()} || L.mask_scores.shape() != ws || L.binary_mask.shape() != ws) {
      throw ShapeError("layer " + std::to_string(l) + ": parameter shapes disagree with weight " +
                       ad::to_string(ws));
    }
    if (l > 0 && layers_[l - 1].out() != L.in()) {
      throw ShapeError("layer " + std::to_string(l) + " expects width " + std::to_string(L.in()) +
                       ", previous layer produces " + std::to_string(layers_[l - 1].out()));
    }
  }
  if (layers_.back().out() != 1) throw ShapeError("the output layer must produce one logit");
}

MaskedModel MaskedModel::mlp(std::span<const std::size_t> widths, MaskMode mode, std::uint64_t seed,
                             Activation activation) {
  if (widths.size() < 2) throw ConfigError("an MLP needs input and output widths");
  std::mt19937_64 rng(seed);
  std::vector<MaskedLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in)));
    std::vector<double> w(in * out);
    for (auto& v : w) v = normal(rng);
    MaskedLayer L;
    L.weight = Tensor::matrix(out, in, std::move(w));
    L.bias = Tensor::zeros({out});
    L.mask_scores = Tensor::zeros({out, in});
    L.binary_mask = Tensor::filled({out, in}, 1.0);
    L.mode = mode;
    layers.push_back(std::move(L));
  }
  MaskedModel model(std::move(layers), activation);
  model.init_scores_from_magnitude();
  return model;
}

std::size_t MaskedModel::maskable_count() const {
  std::size_t n = 0;
  for (const auto& L : layers_) n += L.weight.size();
  return n;
}

std::size_t MaskedModel::kept_count() const {
  std::size_t n = 0;
  for (const auto& L : layers_) n += L.kept();
  return n;
}

std::size_t MaskedModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& L : layers_) n += L.weight.size() + L.bias.size();
  return n;
}

bool MaskedModel::same_architecture(const MaskedModel& other) const {
  if (layers_.size() != other.layers_.size() || activation_ != other.activation_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l)
    if (layers_[l].weight.shape() != other.layers_[l].weight.shape()) return false;
  return true;
}

Var MaskedModel::forward(ad::Tape& tape, Var x, Track track) {
  if (x.shape().size() != 2 || x.shape()[1] != input_dim()) {
    throw ShapeError("model expects input [n x " + std::to_string(input_dim()) + "], got " +
                     ad::to_string(x.shape()));
  }
  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& L = layers_[l];
    L.weight.set_requires_grad(track.weights);
    L.bias.set_requires_grad(track.weights);
    L.mask_scores.set_requires_grad(track.scores);
    Var w = track.weights ? tape.parameter(L.weight) : tape.constant(L.weight);
    Var b = track.weights ? tape.parameter(L.bias) : tape.constant(L.bias);
    Var s = track.scores ? tape.parameter(L.mask_scores) : tape.constant(L.mask_scores);
    Var m = tape.constant(L.binary_mask);
    Var effective = ad::straight_through_mask(w, s, m);
    h = ad::add(ad::matmul_transposed(h, effective), b);
    if (l + 1 < layers_.size()) h = activation_ == Activation::relu ? ad::relu(h) : ad::sigmoid(h);
  }
  return ad::reshape(h, {h.shape()[0]});
}

std::vector<double> MaskedModel::logits(const Tensor& x) const {
  ad::Tape tape;
  auto copy = *this;
  Var out = copy.forward(tape, tape.constant(x));
  return {out.value().values().begin(), out.value().values().end()};
}

void MaskedModel::set_mode(MaskMode mode) {
  for (auto& L : layers_) L.mode = mode;
}

void MaskedModel::init_scores_from_magnitude() {
  for (auto& L : layers_) {
    double top = 0.0;
    for (double w : L.weight.values()) top = std::max(top, std::abs(w));
    for (std::size_t i = 0; i < L.weight.size(); ++i)
      L.mask_scores[i] = top > 0.0 ? std::abs(L.weight[i]) / top : 1.0;
  }
}

void MaskedModel::set_dense_masks() {
  for (auto& L : layers_) std::fill(L.binary_mask.values().begin(), L.binary_mask.values().end(), 1.0);
}

void MaskedModel::clear_grads() {
  for (auto& L : layers_) {
    L.weight.clear_grad();
    L.bias.clear_grad();
    L.mask_scores.clear_grad();
  }
}

// ---- masks ----------------------------------------------------------------

namespace {

// Indices of the top `k` values, ties to the lowest index.
std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
  order.resize(k);
  return order;
}

std::size_t round_count(double fraction, std::size_t total) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
}

void binarize_unstructured_per_layer(MaskedLayer& L, double sparsity) {
  const auto k = std::max<std::size_t>(1, round_count(1.0 - sparsity, L.weight.size()));
  auto& mask = L.binary_mask;
  std::fill(mask.values().begin(), mask.values().end(), 0.0);
  for (auto i : top_k(L.mask_scores.values(), k)) mask[i] = 1.0;
}

void binarize_unstructured_global(std::vector<MaskedLayer*> layers, double sparsity) {
  std::vector<double> scores;
  std::vector<std::size_t> owner, offset;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    offset.push_back(scores.size());
    const auto s = layers[l]->mask_scores.values();
    scores.insert(scores.end(), s.begin(), s.end());
    owner.insert(owner.end(), s.size(), l);
  }
  const auto k = std::max(layers.size(), round_count(1.0 - sparsity, scores.size()));
  auto kept = top_k(scores, k);  // in rank order
  std::vector<std::size_t> per_layer(layers.size(), 0);
  for (auto i : kept) ++per_layer[owner[i]];
  // Every layer keeps at least its best weight; the lowest-ranked weight of
  // a layer with spare weights makes room.
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (per_layer[l] > 0) continue;
    const auto best = top_k(layers[l]->mask_scores.values(), 1).front() + offset[l];
    for (auto it = kept.rbegin(); it != kept.rend(); ++it) {
      if (per_layer[owner[*it]] > 1) {
        --per_layer[owner[*it]];
        *it = best;
        ++per_layer[l];
        break;
      }
    }
  }
  for (auto* L : layers) std::fill(L->binary_mask.values().begin(), L->binary_mask.values().end(), 0.0);
  for (auto i : kept) layers[owner[i]]->binary_mask[i - offset[owner[i]]] = 1.0;
}

std::vector<double> row_means(const Tensor& scores) {
  const std::size_t rows = scores.rows(), cols = scores.cols();
  std::vector<double> means(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) means[r] += scores.at(r, c);
    means[r] /= static_cast<double>(cols);
  }
  return means;
}

void binarize_structured(std::vector<MaskedLayer*> layers, double sparsity) {
  std::vector<std::size_t> rows, sizes;
  double total = 0.0;
  for (auto* L : layers) {
    rows.push_back(L->out());
    sizes.push_back(L->in());
    total += static_cast<double>(L->weight.size());
  }
  const auto keep = allocate_rows(rows, sizes, (1.0 - sparsity) * total);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = *layers[l];
    std::fill(L.binary_mask.values().begin(), L.binary_mask.values().end(), 0.0);
    for (auto r : top_k(row_means(L.mask_scores), keep[l]))
      for (std::size_t c = 0; c < L.in(); ++c) L.binary_mask.at(r, c) = 1.0;
  }
}

}  // namespace

std::vector<std::size_t> allocate_rows(std::span<const std::size_t> rows_per_layer,
                                       std::span<const std::size_t> row_size, double target_kept) {
  const std::size_t n = rows_per_layer.size();
  if (row_size.size() != n) throw ShapeError("allocate_rows: row counts and row sizes differ in length");
  double total = 0.0;
  for (std::size_t l = 0; l < n; ++l) total += static_cast<double>(rows_per_layer[l] * row_size[l]);
  if (total <= 0.0) return {};

  // Layers that cannot lose rows keep everything; the others share the
  // remaining budget proportionally, then single-row moves close the gap.
  double fixed = 0.0, adjustable = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    const auto w = static_cast<double>(rows_per_layer[l] * row_size[l]);
    (rows_per_layer[l] <= 1 ? fixed : adjustable) += w;
  }
  const double fraction = adjustable > 0.0 ? std::clamp((target_kept - fixed) / adjustable, 0.0, 1.0) : 1.0;
  std::vector<std::size_t> keep(n);
  double kept = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    keep[l] = rows_per_layer[l] <= 1
                  ? rows_per_layer[l]
                  : std::clamp<std::size_t>(round_count(fraction, rows_per_layer[l]), 1, rows_per_layer[l]);
    kept += static_cast<double>(keep[l] * row_size[l]);
  }
  while (true) {
    double best_gap = std::abs(kept - target_kept);
    std::ptrdiff_t best_layer = -1;
    int best_step = 0;
    for (std::size_t l = 0; l < n; ++l) {
      const auto size = static_cast<double>(row_size[l]);
      if (keep[l] < rows_per_layer[l] && std::abs(kept + size - target_kept) < best_gap - 1e-9) {
        best_gap = std::abs(kept + size - target_kept);
        best_layer = static_cast<std::ptrdiff_t>(l);
        best_step = 1;
      }
      if (keep[l] > 1 && std::abs(kept - size - target_kept) < best_gap - 1e-9) {
        best_gap = std::abs(kept - size - target_kept);
        best_layer = static_cast<std::ptrdiff_t>(l);
        best_step = -1;
      }
    }
    if (best_layer < 0) break;
    const auto l = static_cast<std::size_t>(best_layer);
    if (best_step == 1) {
      ++keep[l];
      kept += static_cast<double>(row_size[l]);
    } else {
      --keep[l];
      kept -= static_cast<double>(row_size[l]);
    }
  }
  return keep;
}

void binarize_masks(MaskedModel& model, double sparsity, Scope scope) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("sparsity must lie in [0, 1)");
  std::vector<MaskedLayer*> unstructured, structured;
  for (auto& L : model.layers()) (L.mode == MaskMode::structured ? structured : unstructured).push_back(&L);
  if (!structured.empty()) binarize_structured(structured, sparsity);
  if (unstructured.empty()) return;
  if (scope == Scope::global) {
    binarize_unstructured_global(unstructured, sparsity);
  } else {
    for (auto* L : unstructured) binarize_unstructured_per_layer(*L, sparsity);
  }
}

double sparsity(const MaskedModel& model) {
  const auto total = model.maskable_count();
  return 1.0 - static_cast<double>(model.kept_count()) / static_cast<double>(total);
}

double sparsity_granularity(const MaskedModel& model) {
  const auto total = static_cast<double>(model.maskable_count());
  std::size_t unit = 1;
  for (const auto& L : model.layers())
    if (L.mode == MaskMode::structured && L.out() > 1) unit = std::max(unit, L.in());
  return static_cast<double>(unit) / total;
}

// ---- effective weights ----------------------------------------------------

std::vector<double> effective_weights(const MaskedModel& model) {
  std::vector<double> out;
  out.reserve(model.parameter_count());
  for (const auto& L : model.layers())
    for (std::size_t i = 0; i < L.weight.size(); ++i) out.push_back(L.binary_mask[i] * L.weight[i]);
  for (const auto& L : model.layers())
    out.insert(out.end(), L.bias.values().begin(), L.bias.values().end());
  return out;
}

void load_effective_weights(MaskedModel& model, std::span<const double> values) {
  if (values.size() != model.parameter_count()) {
    throw ShapeError("expected " + std::to_string(model.parameter_count()) + " effective weights, got " +
                     std::to_string(values.size()));
  }
  std::size_t at = 0;
  for (auto& L : model.layers())
    for (std::size_t i = 0; i < L.weight.size(); ++i, ++at) {
      L.weight[i] = values[at];
      L.binary_mask[i] = values[at] != 0.0 ? 1.0 : 0.0;
    }
  for (auto& L : model.layers())
    for (std::size_t i = 0; i < L.bias.size(); ++i, ++at) L.bias[i] = values[at];
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr const char* kFormat = "bifp-checkpoint";
constexpr int kVersion = 1;

std::vector<double> as_vector(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor read_tensor(const json& j, const char* key, ad::Shape shape) {
  auto values = j.at(key).get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace

std::string checkpoint_json(const MaskedModel& model) {
  json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["activation"] = model.activation() == Activation::relu ? "relu" : "sigmoid";
  doc["layers"] = json::array();
  for (const auto& L : model.layers()) {
    doc["layers"].push_back({{"in", L.in()},
                             {"out", L.out()},
                             {"mode", to_string(L.mode)},
                             {"weight", as_vector(L.weight)},
                             {"bias", as_vector(L.bias)},
                             {"mask_scores", as_vector(L.mask_scores)},
                             {"binary_mask", as_vector(L.binary_mask)}});
  }
  return doc.dump(1);
}

MaskedModel checkpoint_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
    if (doc.at("format").get<std::string>() != kFormat) throw ConfigError("not a bifp checkpoint");
    if (doc.at("version").get<int>() != kVersion) {
      throw ConfigError("unsupported checkpoint version " + std::to_string(doc.at("version").get<int>()));
    }
    std::vector<MaskedLayer> layers;
    for (const auto& jl : doc.at("layers")) {
      const auto in = jl.at("in").get<std::size_t>(), out = jl.at("out").get<std::size_t>();
      MaskedLayer L;
      L.weight = read_tensor(jl, "weight", {out, in});
      L.bias = read_tensor(jl, "bias", {out});
      L.mask_scores = read_tensor(jl, "mask_scores", {out, in});
      L.binary_mask = read_tensor(jl, "binary_mask", {out, in});
      L.mode = mask_mode_from_string(jl.at("mode").get<std::string>());
      layers.push_back(std::move(L));
    }
    const auto act = doc.at("activation").get<std::string>();
    if (act != "relu" && act != "sigmoid") throw ConfigError("unknown activation '" + act + "'");
    return MaskedModel(std::move(layers), act == "relu" ? Activation::relu : Activation::sigmoid);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const MaskedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_json(model) << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

MaskedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_json(buffer.str());
}

}  // namespace bifp::model
