// SPDX-License-Identifier: Apache-2.0
//
// The three classifier graphs: a PoS-feature leg, a sentence-embedding leg,
// and the unified network that weighs the two legs with a second attention
// layer. Each leg is
//
//   project -> [positional encoding] -> MHA stack -> position attention
//           -> conv1d + max-pool (or dense, for the ablation variants)
//
// and every forward pass returns the attention weights and filter captures
// needed for explanations.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cattn/nn.hpp"
#include "cattn/tensor.hpp"

namespace cattn {

enum class ModelVariant {
  CAttentionFt,
  CAttentionEmbedding,
  CAttentionUnified,
  AttentionFt,
  AttentionEmbedding,
  AttentionUnified,
};

std::string_view variant_name(ModelVariant v);
std::optional<ModelVariant> parse_variant(std::string_view name);
bool uses_pos_leg(ModelVariant v);
bool uses_embedding_leg(ModelVariant v);
bool is_unified(ModelVariant v);
/// False for the Attention-* ablations, where a dense layer replaces the CNN.
bool uses_cnn(ModelVariant v);

struct ModelConfig {
  ModelVariant variant = ModelVariant::CAttentionUnified;
  std::size_t num_heads = 2;
  std::size_t model_dim = 32;
  std::size_t num_layers = 6;
  std::size_t num_filters = 16;
  std::size_t kernel_width = 3;
  std::size_t utterances = 17;
  std::size_t num_tags = 36;
  std::size_t embedding_dim = 64;
  bool feed_forward = false;
  /// Learned per-tag offset added to the projected PoS rows, so the
  /// otherwise permutation-equivariant MHA stack can tell tags apart.
  bool tag_identity = true;
  std::uint64_t seed = 1;

  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class LegKind { Pos, Embedding };

struct Leg {
  LegKind kind = LegKind::Pos;
  bool conv = true;
  DenseLayer input_projection;
  Tensor row_offset; // [positions × d_m], PoS leg with tag_identity only
  std::vector<MhaBlock> mha;
  PositionAttention attention;
  Conv1dLayer conv_layer;  // when conv
  DenseLayer penultimate;  // otherwise; relu(dense(mean of rows))

  static Leg create(LegKind kind, const ModelConfig& config, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

/// Explanation-relevant trace of one leg.
struct LegOutput {
  std::vector<double> feature_vector;
  std::vector<double> position_weights;
  std::vector<std::vector<Tensor>> mha_weights; // [layer][head]
  std::vector<Capture> captures;                // empty for dense legs
  std::size_t kernel_width = 0;
};

struct LegForward {
  Var features; // [1 × m]
  LegOutput trace;
};

LegForward leg_forward(Tape& tape, const Leg& leg, const Tensor& input);

class Model {
public:
  /// Seeded initialization from config.seed.
  static Model create(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  void visit_parameters(const ParamVisitor& f);
  std::size_t parameter_count() const;

  const std::optional<Leg>& pos_leg() const { return pos_leg_; }
  const std::optional<Leg>& emb_leg() const { return emb_leg_; }
  const DenseLayer& head() const { return head_; }
  const std::optional<PositionAttention>& leg_attention() const { return leg_attention_; }

  bool operator==(const Model& other) const;

private:
  ModelConfig config_;
  std::optional<Leg> pos_leg_;
  std::optional<Leg> emb_leg_;
  std::optional<PositionAttention> leg_attention_;
  DenseLayer head_;
};

/// Inputs for one record; the matrix a variant does not use may be empty.
struct ModelInput {
  Tensor pos; // [num_tags × utterances]
  Tensor emb; // [utterances × embedding_dim]
};

struct ForwardResult {
  Var probabilities; // [1 × 2]
  std::optional<LegOutput> pos_leg;
  std::optional<LegOutput> emb_leg;
  std::optional<std::array<double, 2>> leg_weights; // (pos, emb), unified only
};

ForwardResult forward(Tape& tape, const Model& model, const ModelInput& input);

struct Prediction {
  std::array<double, 2> probabilities{};
  LegOutput trace;
};

struct UnifiedTrace {
  LegOutput pos_leg;
  LegOutput emb_leg;
  std::array<double, 2> leg_weights{};
  std::array<double, 2> probabilities{};
};

/// Single-leg PoS model; P is [36 × L].
Prediction forward_ft(const Model& model, const Tensor& pos);
/// Single-leg embedding model; U is [L × d_e].
Prediction forward_embedding(const Model& model, const Tensor& emb);
UnifiedTrace forward_unified(const Model& model, const Tensor& pos, const Tensor& emb);

// Checkpoints are JSON documents holding the config, free-form string
// metadata (feature settings of the run) and every parameter tensor. Doubles
// are written in shortest round-trip form, so save/load is value-exact.
using CheckpointMetadata = std::map<std::string, std::string>;

struct Checkpoint {
  Model model;
  CheckpointMetadata metadata;
};

std::string checkpoint_to_json(const Model& model, const CheckpointMetadata& metadata = {});
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const Model& model, const std::string& path,
                     const CheckpointMetadata& metadata = {});
Checkpoint load_checkpoint(const std::string& path);

} // namespace cattn
