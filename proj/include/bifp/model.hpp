// SPDX-License-Identifier: Apache-2.0
//
// Masked feed-forward binary classifiers. Every layer carries its weights,
// continuous mask scores in [0, 1] and a hard 0/1 mask; the network computes
// with binary_mask * weight. Biases are never masked.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bifp/autodiff.hpp"

namespace bifp::model {

enum class MaskMode { unstructured, structured };
enum class Scope { per_layer, global };
enum class Activation { relu, sigmoid };

std::string to_string(MaskMode mode);
MaskMode mask_mode_from_string(const std::string& s);

struct MaskedLayer {
  ad::Tensor weight;       // [out x in]
  ad::Tensor bias;         // [out]
  ad::Tensor mask_scores;  // [out x in], entries in [0, 1]
  ad::Tensor binary_mask;  // [out x in], entries in {0, 1}
  MaskMode mode = MaskMode::unstructured;

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
  std::size_t kept() const;
};

// Which leaves of a forward pass are differentiated.
struct Track {
  bool weights = false;  // weights and biases
  bool scores = false;   // mask scores, through the straight-through rule
};

class MaskedModel {
 public:
  MaskedModel() = default;
  explicit MaskedModel(std::vector<MaskedLayer> layers, Activation activation = Activation::relu);

  // He-initialized MLP with zero biases and all-ones masks; `widths` lists
  // input, hidden and output sizes (output must be 1). Scores start at
  // |weight| rescaled to [0, 1] per layer.
  static MaskedModel mlp(std::span<const std::size_t> widths, MaskMode mode, std::uint64_t seed,
                         Activation activation = Activation::relu);

  std::vector<MaskedLayer>& layers() { return layers_; }
  const std::vector<MaskedLayer>& layers() const { return layers_; }
  Activation activation() const { return activation_; }
  std::size_t input_dim() const { return layers_.front().in(); }
  std::size_t maskable_count() const;
  std::size_t kept_count() const;
  std::size_t parameter_count() const;
  bool same_architecture(const MaskedModel& other) const;

  // Records the forward pass on `tape` and returns logits of shape [n].
  // Parameters listed in `track` are bound to the tape so backward fills
  // their grads; the model must outlive the tape.
  ad::Var forward(ad::Tape& tape, ad::Var x, Track track = {});
  // Plain evaluation without gradients.
  std::vector<double> logits(const ad::Tensor& x) const;

  void set_mode(MaskMode mode);
  // Scores := |weight| rescaled to [0, 1] within each layer.
  void init_scores_from_magnitude();
  void set_dense_masks();
  void clear_grads();

 private:
  std::vector<MaskedLayer> layers_;
  Activation activation_ = Activation::relu;
};

// Top-k projection of mask scores onto binary masks at `sparsity`.
// Unstructured: exactly round((1 - sparsity) * count) weights kept per
// scope, ties to the lowest flat index, at least one weight per layer.
// Structured: rows ranked by mean score; rows are allocated so the kept
// fraction is as close as possible to 1 - sparsity, at least one row per
// layer. Structured layers are projected row-wise regardless of `scope`.
void binarize_masks(MaskedModel& model, double sparsity, Scope scope);

// 1 - kept / maskable over weights only.
double sparsity(const MaskedModel& model);

// Kept-row allocation shared by structured pruners: `rows_per_layer[l]`
// rows of `row_size[l]` weights each; returns per-layer kept-row counts
// (each >= 1) whose weight total is closest to `target_kept`.
std::vector<std::size_t> allocate_rows(std::span<const std::size_t> rows_per_layer,
                                       std::span<const std::size_t> row_size, double target_kept);

// One pruning unit as a sparsity fraction: a single weight for unstructured
// models, the largest prunable row for structured ones.
double sparsity_granularity(const MaskedModel& model);

// Concatenation over layers of (binary_mask * weight, bias).
std::vector<double> effective_weights(const MaskedModel& model);
// Inverse of effective_weights: weights take the given values and the
// binary mask becomes (value != 0).
void load_effective_weights(MaskedModel& model, std::span<const double> values);

// Checkpoint document (JSON, format "bifp-checkpoint", version 1).
void save_checkpoint(const MaskedModel& model, const std::filesystem::path& path);
MaskedModel load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_json(const MaskedModel& model);
MaskedModel checkpoint_from_json(const std::string& text);

}  // namespace bifp::model
