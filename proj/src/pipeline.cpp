// SPDX-License-Identifier: Apache-2.0
#include "cattn/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "cattn/error.hpp"
#include "parallel.hpp"

namespace cattn {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(std::string_view v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
    return std::string(v.substr(1, v.size() - 2));
  return std::string(v);
}

template <class T>
T parse_integer(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + std::string(key) + "': '" + std::string(v) +
                      "' is not a non-negative integer");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != s.size())
    throw ConfigError("config key '" + std::string(key) + "': '" + s + "' is not a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true")
    return true;
  if (v == "false")
    return false;
  throw ConfigError("config key '" + std::string(key) + "': '" + std::string(v) +
                    "' is not true/false");
}

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the short form when it round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::stod(shorter) == v)
      return shorter;
  }
  return buf;
}

struct KeySpec {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
  bool quoted = false; // echoed in quotes
};

#define CATTN_STRING_KEY(field)                                                                    \
  KeySpec {                                                                                        \
    #field, [](RunConfig& c, std::string_view v) { c.field = unquote(v); },                        \
        [](const RunConfig& c) { return c.field; }, true                                           \
  }
#define CATTN_SIZE_KEY(field)                                                                      \
  KeySpec {                                                                                        \
    #field, [](RunConfig& c, std::string_view v) { c.field = parse_integer<std::size_t>(#field, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                                 \
  }
#define CATTN_U64_KEY(field)                                                                       \
  KeySpec {                                                                                        \
    #field,                                                                                        \
        [](RunConfig& c, std::string_view v) { c.field = parse_integer<std::uint64_t>(#field, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                                 \
  }
#define CATTN_REAL_KEY(field)                                                                      \
  KeySpec {                                                                                        \
    #field, [](RunConfig& c, std::string_view v) { c.field = parse_real(#field, v); },             \
        [](const RunConfig& c) { return real_text(c.field); }                                      \
  }
#define CATTN_BOOL_KEY(field)                                                                      \
  KeySpec {                                                                                        \
    #field, [](RunConfig& c, std::string_view v) { c.field = parse_bool(#field, v); },             \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }                 \
  }

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      CATTN_STRING_KEY(variant),
      CATTN_STRING_KEY(corpus),
      CATTN_STRING_KEY(checkpoint),
      CATTN_STRING_KEY(epoch_log),
      CATTN_U64_KEY(seed),
      CATTN_U64_KEY(split_seed),
      CATTN_SIZE_KEY(utterances),
      CATTN_SIZE_KEY(num_layers),
      CATTN_SIZE_KEY(num_heads),
      CATTN_SIZE_KEY(model_dim),
      CATTN_SIZE_KEY(num_filters),
      CATTN_SIZE_KEY(kernel_width),
      CATTN_BOOL_KEY(feed_forward),
      CATTN_BOOL_KEY(tag_identity),
      CATTN_STRING_KEY(embedding_provider),
      CATTN_SIZE_KEY(embedding_dim),
      CATTN_U64_KEY(embedding_seed),
      CATTN_REAL_KEY(learning_rate),
      CATTN_REAL_KEY(momentum),
      CATTN_SIZE_KEY(epochs),
      CATTN_SIZE_KEY(batch_size),
      CATTN_REAL_KEY(class_weight_control),
      CATTN_REAL_KEY(class_weight_patient),
      CATTN_SIZE_KEY(threads),
  };
  return specs;
}

#undef CATTN_STRING_KEY
#undef CATTN_SIZE_KEY
#undef CATTN_U64_KEY
#undef CATTN_REAL_KEY
#undef CATTN_BOOL_KEY

const KeySpec& find_key(std::string_view key) {
  for (const auto& k : key_specs())
    if (k.name == key)
      return k;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

// Checkpoint metadata keys describing how features were built.
constexpr const char* kMetaProvider = "embedding_provider";
constexpr const char* kMetaEmbDim = "embedding_dim";
constexpr const char* kMetaEmbSeed = "embedding_seed";
constexpr const char* kMetaSplitSeed = "split_seed";

std::string meta_at(const Checkpoint& ck, const char* key) {
  auto it = ck.metadata.find(key);
  if (it == ck.metadata.end())
    throw IngestionError(std::string("checkpoint metadata lacks '") + key + "'");
  return it->second;
}

} // namespace

EmbeddingOptions checkpoint_embedding(const Checkpoint& ck) {
  EmbeddingOptions e;
  const std::string provider = meta_at(ck, kMetaProvider);
  if (provider == "precomputed")
    e.provider = EmbeddingProvider::Precomputed;
  else if (provider == "hash-projection")
    e.provider = EmbeddingProvider::HashProjection;
  else
    throw IngestionError("checkpoint metadata: unknown embedding provider '" + provider + "'");
  e.dim = parse_integer<std::size_t>(kMetaEmbDim, meta_at(ck, kMetaEmbDim));
  e.seed = parse_integer<std::uint64_t>(kMetaEmbSeed, meta_at(ck, kMetaEmbSeed));
  return e;
}


// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::set(std::string_view key, std::string_view value) {
  find_key(key).set(*this, trim(value));
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : key_specs())
      n.push_back(k.name);
    return n;
  }();
  return names;
}

std::string RunConfig::get(std::string_view key) const { return find_key(key).get(*this); }

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const auto& k : key_specs())
    os << k.name << " = " << (k.quoted ? "\"" + k.get(*this) + "\"" : k.get(*this)) << '\n';
  return os.str();
}

void RunConfig::validate() const {
  if (!parse_variant(variant))
    throw ConfigError("unknown model variant '" + variant +
                      "' (expected c-attention-ft, c-attention-embedding, c-attention-unified, "
                      "attention-ft, attention-embedding or attention-unified)");
  if (embedding_provider != "auto" && embedding_provider != "precomputed" &&
      embedding_provider != "hash-projection")
    throw ConfigError("embedding_provider must be auto, precomputed or hash-projection");
  if (threads == 0)
    throw ConfigError("threads must be >= 1");
  train_config().validate();
  model_config(embedding_dim).validate();
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = learning_rate;
  t.momentum = momentum;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.class_weights = ClassWeights::normalized(class_weight_control, class_weight_patient);
  t.seed = seed;
  return t;
}

ModelConfig RunConfig::model_config(std::size_t emb_dim) const {
  auto v = parse_variant(variant);
  if (!v)
    throw ConfigError("unknown model variant '" + variant + "'");
  ModelConfig m;
  m.variant = *v;
  m.num_heads = num_heads;
  m.model_dim = model_dim;
  m.num_layers = num_layers;
  m.num_filters = num_filters;
  m.kernel_width = kernel_width;
  m.utterances = utterances;
  m.num_tags = TagVocabulary::kSize;
  m.embedding_dim = emb_dim;
  m.feed_forward = feed_forward;
  m.tag_identity = tag_identity;
  m.seed = seed;
  return m;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig c;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    // Strip comments outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"')
        quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

// ---------------------------------------------------------------------------
// Samples

EmbeddingOptions resolve_embedding(const RunConfig& config, const std::vector<Record>& records) {
  EmbeddingOptions e;
  e.dim = config.embedding_dim;
  e.seed = config.embedding_seed;
  const bool all_have = !records.empty() && std::all_of(records.begin(), records.end(), [](const Record& r) {
    return r.embeddings && !r.embeddings->empty();
  });
  if (config.embedding_provider == "precomputed" || (config.embedding_provider == "auto" && all_have)) {
    if (!all_have)
      throw IngestionError("embedding_provider = precomputed but some records carry no embeddings");
    e.provider = EmbeddingProvider::Precomputed;
    e.dim = records.front().embeddings->front().size();
    for (const Record& r : records)
      if (r.embeddings->front().size() != e.dim)
        throw IngestionError("record '" + r.id + "': embedding width " +
                             std::to_string(r.embeddings->front().size()) + " differs from " +
                             std::to_string(e.dim));
  } else {
    e.provider = EmbeddingProvider::HashProjection;
  }
  return e;
}

Sample make_sample(const Record& record, const ModelConfig& config, const EmbeddingOptions& emb) {
  Sample s;
  s.id = record.id;
  s.label = record.label;
  if (uses_pos_leg(config.variant))
    s.input.pos = build_pos_matrix(record, TagVocabulary::penn_treebank(), config.utterances);
  if (uses_embedding_leg(config.variant)) {
    s.input.emb = embed(record, emb, config.utterances);
    if (s.input.emb.cols() != config.embedding_dim)
      throw IngestionError("record '" + record.id + "': embedding width " +
                           std::to_string(s.input.emb.cols()) + " does not match the model's " +
                           std::to_string(config.embedding_dim));
  }
  return s;
}

std::vector<Sample> make_samples(const std::vector<Record>& records, const ModelConfig& config,
                                 const EmbeddingOptions& emb) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const Record& r : records)
    out.push_back(make_sample(r, config, emb));
  return out;
}

// ---------------------------------------------------------------------------
// Operations

GenerateSummary run_generate(const SyntheticOptions& options, const std::string& out_path) {
  const auto corpus = generate_synthetic_corpus(options);
  write_corpus_file(out_path, corpus);
  GenerateSummary s;
  for (const Record& r : corpus)
    (r.label == Label::Patient ? s.patient : s.control)++;
  return s;
}

TrainSummary run_train(const RunConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto corpus = read_corpus_file(config.corpus);
  const DatasetSplit split = split_dataset(corpus, config.split_seed);
  const EmbeddingOptions emb = resolve_embedding(config, corpus);
  const ModelConfig model_config = config.model_config(emb.dim);
  const auto train_samples = make_samples(split.train, model_config, emb);
  const auto val_samples = make_samples(split.validation, model_config, emb);

  TrainResult result = train(model_config, train_samples, val_samples, config.train_config(), on_epoch);

  CheckpointMetadata meta;
  meta[kMetaProvider] = emb.provider == EmbeddingProvider::Precomputed ? "precomputed" : "hash-projection";
  meta[kMetaEmbDim] = std::to_string(emb.dim);
  meta[kMetaEmbSeed] = std::to_string(emb.seed);
  meta[kMetaSplitSeed] = std::to_string(config.split_seed);
  save_checkpoint(result.model, config.checkpoint, meta);

  std::ofstream log(config.epoch_log, std::ios::binary);
  if (!log)
    throw IoError("cannot write epoch log '" + config.epoch_log + "'");
  log << epoch_log_csv(result.log);

  TrainSummary s;
  s.best_epoch = result.best_epoch;
  const EpochLog& best = result.log[result.best_epoch - 1];
  s.best_val_loss = best.val_loss;
  s.best_val_acc = best.val_acc;
  s.train_records = split.train.size();
  s.validation_records = split.validation.size();
  s.test_records = split.test.size();
  s.parameters = result.model.parameter_count();
  return s;
}

std::vector<Record> select_split(const std::vector<Record>& records, const Checkpoint& checkpoint,
                                 std::string_view split) {
  if (split == "all")
    return records;
  const auto seed = parse_integer<std::uint64_t>(kMetaSplitSeed, meta_at(checkpoint, kMetaSplitSeed));
  DatasetSplit s = split_dataset(records, seed);
  if (split == "train")
    return std::move(s.train);
  if (split == "validation")
    return std::move(s.validation);
  if (split == "test")
    return std::move(s.test);
  throw ConfigError("unknown split '" + std::string(split) +
                    "' (expected train, validation, test or all)");
}

MetricsReport run_evaluate(const Checkpoint& checkpoint, const std::vector<Record>& corpus,
                           std::string_view split, std::size_t threads) {
  const auto records = select_split(corpus, checkpoint, split);
  const auto samples =
      make_samples(records, checkpoint.model.config(), checkpoint_embedding(checkpoint));
  return evaluate(checkpoint.model, samples, threads);
}

ExplainRun run_explain(const Checkpoint& checkpoint, const std::vector<Record>& corpus,
                       std::string_view record_id, std::string_view split,
                       const ExplainOptions& options, std::size_t threads) {
  const EmbeddingOptions emb = checkpoint_embedding(checkpoint);
  const Model& model = checkpoint.model;
  ExplainRun run;
  if (!record_id.empty()) {
    auto it = std::find_if(corpus.begin(), corpus.end(),
                           [&](const Record& r) { return r.id == record_id; });
    if (it == corpus.end()) {
      std::string ids;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (i == 20) {
          ids += ", ... (" + std::to_string(corpus.size()) + " records)";
          break;
        }
        ids += (i ? ", " : "") + corpus[i].id;
      }
      throw ConfigError("unknown record id '" + std::string(record_id) + "'; available: " + ids);
    }
    run.reports.push_back(explain_record(model, make_sample(*it, model.config(), emb), *it, options));
    return run;
  }

  const auto records = select_split(corpus, checkpoint, split);
  const auto samples = make_samples(records, model.config(), emb);
  run.reports.resize(records.size());
  detail::parallel_for(records.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      run.reports[i] = explain_record(model, samples[i], records[i], options);
  });
  run.summary = summarize(run.reports);
  return run;
}

} // namespace cattn
