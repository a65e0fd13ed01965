// SPDX-License-Identifier: Apache-2.0
#include "cattn/model.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cattn/error.hpp"

namespace cattn {

using json = nlohmann::json;

namespace {

struct VariantInfo {
  ModelVariant variant;
  std::string_view name;
  bool pos, emb, cnn;
};

constexpr std::array<VariantInfo, 6> kVariants{{
    {ModelVariant::CAttentionFt, "c-attention-ft", true, false, true},
    {ModelVariant::CAttentionEmbedding, "c-attention-embedding", false, true, true},
    {ModelVariant::CAttentionUnified, "c-attention-unified", true, true, true},
    {ModelVariant::AttentionFt, "attention-ft", true, false, false},
    {ModelVariant::AttentionEmbedding, "attention-embedding", false, true, false},
    {ModelVariant::AttentionUnified, "attention-unified", true, true, false},
}};

const VariantInfo& info(ModelVariant v) {
  for (const auto& i : kVariants)
    if (i.variant == v)
      return i;
  throw ConfigError("unknown model variant");
}

} // namespace

std::string_view variant_name(ModelVariant v) { return info(v).name; }

std::optional<ModelVariant> parse_variant(std::string_view name) {
  for (const auto& i : kVariants)
    if (i.name == name)
      return i.variant;
  return std::nullopt;
}

bool uses_pos_leg(ModelVariant v) { return info(v).pos; }
bool uses_embedding_leg(ModelVariant v) { return info(v).emb; }
bool is_unified(ModelVariant v) { return info(v).pos && info(v).emb; }
bool uses_cnn(ModelVariant v) { return info(v).cnn; }

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0)
      throw ConfigError(std::string(name) + " must be >= 1");
  };
  positive(num_heads, "num_heads");
  positive(model_dim, "model_dim");
  positive(num_layers, "num_layers");
  positive(num_filters, "num_filters");
  positive(kernel_width, "kernel_width");
  positive(utterances, "utterances");
  positive(num_tags, "num_tags");
  positive(embedding_dim, "embedding_dim");
  if (model_dim % num_heads != 0)
    throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  if (uses_cnn(variant)) {
    if (uses_pos_leg(variant) && kernel_width > num_tags)
      throw ConfigError("kernel_width exceeds the number of PoS tag positions");
    if (uses_embedding_leg(variant) && kernel_width > utterances)
      throw ConfigError("kernel_width exceeds the utterance budget");
  }
}

// ---------------------------------------------------------------------------
// Legs

Leg Leg::create(LegKind kind, const ModelConfig& c, Rng& rng) {
  Leg leg;
  leg.kind = kind;
  leg.conv = uses_cnn(c.variant);
  const std::size_t in = kind == LegKind::Pos ? c.utterances : c.embedding_dim;
  leg.input_projection = DenseLayer::create(in, c.model_dim, rng);
  if (kind == LegKind::Pos && c.tag_identity)
    leg.row_offset = init_uniform({c.num_tags, c.model_dim}, c.model_dim, rng);
  for (std::size_t i = 0; i < c.num_layers; ++i)
    leg.mha.push_back(MhaBlock::create(c.num_heads, c.model_dim, rng, c.feed_forward));
  leg.attention = PositionAttention::create(c.model_dim, rng);
  if (leg.conv)
    leg.conv_layer = Conv1dLayer::create(c.num_filters, c.kernel_width, c.model_dim, rng);
  else
    leg.penultimate = DenseLayer::create(c.model_dim, c.num_filters, rng);
  return leg;
}

void Leg::visit(const std::string& prefix, const ParamVisitor& f) {
  input_projection.visit(prefix + ".input", f);
  if (!row_offset.empty())
    f(prefix + ".row_offset", row_offset);
  for (std::size_t i = 0; i < mha.size(); ++i)
    mha[i].visit(prefix + ".mha" + std::to_string(i), f);
  attention.visit(prefix + ".attention", f);
  if (conv)
    conv_layer.visit(prefix + ".conv", f);
  else
    penultimate.visit(prefix + ".dense", f);
}

LegForward leg_forward(Tape& tape, const Leg& leg, const Tensor& input) {
  if (input.rank() != 2 || input.cols() != leg.input_projection.in_width())
    throw DimensionError(std::string(leg.kind == LegKind::Pos ? "PoS" : "embedding") +
                         " leg: input " + shape_string(input.shape()) + " does not have " +
                         std::to_string(leg.input_projection.in_width()) + " columns");
  Var x = dense_forward(tape, tape.constant(input), leg.input_projection);
  if (!leg.row_offset.empty()) {
    if (leg.row_offset.rows() != input.rows())
      throw DimensionError("PoS leg: input " + shape_string(input.shape()) + " does not have " +
                           std::to_string(leg.row_offset.rows()) + " tag rows");
    x = add(x, tape.watch(leg.row_offset));
  }
  if (leg.kind == LegKind::Embedding)
    x = positional_encode(tape, x);
  MhaStackOutput stack = mha_stack(tape, x, leg.mha);
  PositionAttentionOutput att = position_attention(tape, stack.output, leg.attention);

  LegForward out;
  out.trace.mha_weights = std::move(stack.layer_weights);
  const auto w = att.weights.value().values();
  out.trace.position_weights.assign(w.begin(), w.end());
  if (leg.conv) {
    ConvOutput conv = conv1d_maxpool(tape, att.scaled, leg.conv_layer);
    out.features = conv.features;
    out.trace.captures = std::move(conv.captures);
    out.trace.kernel_width = leg.conv_layer.width;
  } else {
    out.features = relu(dense_forward(tape, mean_rows(att.scaled), leg.penultimate));
  }
  const auto f = out.features.value().values();
  out.trace.feature_vector.assign(f.begin(), f.end());
  return out;
}

// ---------------------------------------------------------------------------
// Model

Model Model::create(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config_ = config;
  Rng rng(config.seed);
  if (uses_pos_leg(config.variant))
    m.pos_leg_ = Leg::create(LegKind::Pos, config, rng);
  if (uses_embedding_leg(config.variant))
    m.emb_leg_ = Leg::create(LegKind::Embedding, config, rng);
  if (is_unified(config.variant))
    m.leg_attention_ = PositionAttention::create(config.num_filters, rng);
  m.head_ = DenseLayer::create(config.num_filters, 2, rng);
  return m;
}

void Model::visit_parameters(const ParamVisitor& f) {
  if (pos_leg_)
    pos_leg_->visit("pos", f);
  if (emb_leg_)
    emb_leg_->visit("emb", f);
  if (leg_attention_)
    leg_attention_->visit("legs", f);
  head_.visit("head", f);
}

std::size_t Model::parameter_count() const {
  Model copy = *this;
  std::size_t n = 0;
  copy.visit_parameters([&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

bool Model::operator==(const Model& other) const {
  if (!(config_ == other.config_))
    return false;
  Model a = *this, b = other;
  std::vector<Tensor> pa, pb;
  a.visit_parameters([&](const std::string&, Tensor& t) { pa.push_back(t); });
  b.visit_parameters([&](const std::string&, Tensor& t) { pb.push_back(t); });
  return pa == pb;
}

ForwardResult forward(Tape& tape, const Model& model, const ModelInput& input) {
  const ModelConfig& c = model.config();
  if (model.pos_leg() && input.pos.rows() != c.num_tags)
    throw DimensionError("PoS matrix " + shape_string(input.pos.shape()) + " does not have " +
                         std::to_string(c.num_tags) + " tag rows");
  if (model.emb_leg() && input.emb.rows() != c.utterances)
    throw DimensionError("embedding matrix " + shape_string(input.emb.shape()) +
                         " does not have " + std::to_string(c.utterances) + " utterance rows");
  ForwardResult r;
  std::optional<LegForward> pos, emb;
  if (model.pos_leg())
    pos = leg_forward(tape, *model.pos_leg(), input.pos);
  if (model.emb_leg())
    emb = leg_forward(tape, *model.emb_leg(), input.emb);

  Var features;
  if (pos && emb) {
    // Leg vectors stacked as a 2-position sequence; the attention weights
    // are the relative importance of the two feature classes.
    std::array<Var, 2> legs{pos->features, emb->features};
    Var stacked = concat_rows(legs);
    Var alpha = softmax(transpose(matmul(stacked, tape.watch(model.leg_attention()->context))));
    features = matmul(alpha, stacked);
    r.leg_weights = std::array<double, 2>{alpha.value()[0], alpha.value()[1]};
  } else {
    features = pos ? pos->features : emb->features;
  }
  r.probabilities = classify_head(tape, features, model.head());
  if (pos)
    r.pos_leg = std::move(pos->trace);
  if (emb)
    r.emb_leg = std::move(emb->trace);
  return r;
}

namespace {

std::array<double, 2> probs_of(const Var& p) { return {p.value()[0], p.value()[1]}; }

} // namespace

Prediction forward_ft(const Model& model, const Tensor& pos) {
  if (!model.pos_leg() || model.emb_leg())
    throw ConfigError("forward_ft needs a PoS-only model, got " +
                      std::string(variant_name(model.config().variant)));
  Tape tape;
  ForwardResult r = forward(tape, model, {pos, {}});
  return {probs_of(r.probabilities), std::move(*r.pos_leg)};
}

Prediction forward_embedding(const Model& model, const Tensor& emb) {
  if (!model.emb_leg() || model.pos_leg())
    throw ConfigError("forward_embedding needs an embedding-only model, got " +
                      std::string(variant_name(model.config().variant)));
  Tape tape;
  ForwardResult r = forward(tape, model, {{}, emb});
  return {probs_of(r.probabilities), std::move(*r.emb_leg)};
}

UnifiedTrace forward_unified(const Model& model, const Tensor& pos, const Tensor& emb) {
  if (!is_unified(model.config().variant))
    throw ConfigError("forward_unified needs a unified model, got " +
                      std::string(variant_name(model.config().variant)));
  Tape tape;
  ForwardResult r = forward(tape, model, {pos, emb});
  return {std::move(*r.pos_leg), std::move(*r.emb_leg), *r.leg_weights, probs_of(r.probabilities)};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "cattn-checkpoint";
constexpr int kCheckpointVersion = 1;

json config_to_json(const ModelConfig& c) {
  json j;
  j["variant"] = std::string(variant_name(c.variant));
  j["num_heads"] = c.num_heads;
  j["model_dim"] = c.model_dim;
  j["num_layers"] = c.num_layers;
  j["num_filters"] = c.num_filters;
  j["kernel_width"] = c.kernel_width;
  j["utterances"] = c.utterances;
  j["num_tags"] = c.num_tags;
  j["embedding_dim"] = c.embedding_dim;
  j["feed_forward"] = c.feed_forward;
  j["tag_identity"] = c.tag_identity;
  j["seed"] = c.seed;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  auto variant = parse_variant(j.at("variant").get<std::string>());
  if (!variant)
    throw IngestionError("checkpoint: unknown variant '" + j.at("variant").get<std::string>() + "'");
  c.variant = *variant;
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_filters = j.at("num_filters").get<std::size_t>();
  c.kernel_width = j.at("kernel_width").get<std::size_t>();
  c.utterances = j.at("utterances").get<std::size_t>();
  c.num_tags = j.at("num_tags").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.feed_forward = j.at("feed_forward").get<bool>();
  c.tag_identity = j.at("tag_identity").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

} // namespace

std::string checkpoint_to_json(const Model& model, const CheckpointMetadata& metadata) {
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(model.config());
  j["metadata"] = metadata;
  json params = json::array();
  Model copy = model;
  copy.visit_parameters([&](const std::string& name, Tensor& t) {
    json p;
    p["name"] = name;
    p["shape"] = t.shape();
    p["values"] = std::vector<double>(t.values().begin(), t.values().end());
    params.push_back(std::move(p));
  });
  j["parameters"] = std::move(params);
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IngestionError(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw IngestionError("checkpoint: not a cattn checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw IngestionError("checkpoint: unsupported version " + j.at("version").dump());
    Model m = Model::create(config_from_json(j.at("config")));
    CheckpointMetadata metadata;
    if (j.contains("metadata"))
      metadata = j.at("metadata").get<CheckpointMetadata>();
    const json& params = j.at("parameters");
    std::size_t i = 0;
    m.visit_parameters([&](const std::string& name, Tensor& t) {
      if (i >= params.size())
        throw IngestionError("checkpoint: missing parameter '" + name + "'");
      const json& p = params[i++];
      if (p.at("name").get<std::string>() != name)
        throw IngestionError("checkpoint: expected parameter '" + name + "', found '" +
                             p.at("name").get<std::string>() + "'");
      Shape shape = p.at("shape").get<Shape>();
      if (shape != t.shape())
        throw IngestionError("checkpoint: parameter '" + name + "' has shape " +
                             shape_string(shape) + ", expected " + shape_string(t.shape()));
      t = Tensor(std::move(shape), p.at("values").get<std::vector<double>>());
    });
    if (i != params.size())
      throw IngestionError("checkpoint: " + std::to_string(params.size() - i) +
                           " unexpected trailing parameters");
    return {std::move(m), std::move(metadata)};
  } catch (const json::exception& e) {
    throw IngestionError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::string& path,
                     const CheckpointMetadata& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_json(model, metadata) << '\n';
  if (!out)
    throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

} // namespace cattn
