// SPDX-License-Identifier: Apache-2.0
#include "cattn/features.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "cattn/error.hpp"
#include "cattn/random.hpp"

namespace cattn {

using json = nlohmann::json;

std::string utterance_text(const Utterance& u) {
  std::string s;
  for (const Token& t : u) {
    if (!s.empty())
      s += ' ';
    s += t.text;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Tag vocabulary

TagVocabulary::TagVocabulary()
    : tags_{"CC",  "CD",  "DT",   "EX",  "FW",  "IN",  "JJ",  "JJR", "JJS",
            "LS",  "MD",  "NN",   "NNS", "NNP", "NNPS", "PDT", "POS", "PRP",
            "PRP$", "RB", "RBR",  "RBS", "RP",  "SYM", "TO",  "UH",  "VB",
            "VBD", "VBG", "VBN",  "VBP", "VBZ", "WDT", "WP",  "WP$", "WRB"} {}

const TagVocabulary& TagVocabulary::penn_treebank() {
  static const TagVocabulary vocab;
  return vocab;
}

std::optional<std::size_t> TagVocabulary::index_of(std::string_view tag) const {
  for (std::size_t i = 0; i < tags_.size(); ++i)
    if (tags_[i] == tag)
      return i;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Feature matrices

Record fix_length(const Record& r, std::size_t budget) {
  if (budget == 0)
    throw ConfigError("utterance budget must be >= 1");
  Record out = r;
  const std::size_t have = r.utterances.size();
  if (have > budget) {
    out.utterances.resize(budget);
    if (out.embeddings)
      out.embeddings->resize(budget);
  } else if (have < budget) {
    out.utterances.resize(budget);
    if (out.embeddings) {
      const std::size_t dim = out.embeddings->empty() ? 0 : out.embeddings->front().size();
      out.embeddings->resize(budget, std::vector<double>(dim, 0.0));
    }
  }
  return out;
}

Tensor build_pos_matrix(const Record& r, const TagVocabulary& vocab, std::size_t budget) {
  const Record fixed = fix_length(r, budget);
  Tensor p = Tensor::matrix(vocab.size(), budget);
  for (std::size_t u = 0; u < budget; ++u)
    for (const Token& t : fixed.utterances[u]) {
      auto idx = vocab.index_of(t.tag);
      if (!idx)
        throw IngestionError("record '" + r.id + "': unknown PoS tag '" + t.tag + "'");
      p(*idx, u) += 1.0;
    }
  return p;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

} // namespace

Tensor embed(const Record& r, const EmbeddingOptions& options, std::size_t budget) {
  const Record fixed = fix_length(r, budget);
  if (options.provider == EmbeddingProvider::Precomputed) {
    if (!r.embeddings || r.embeddings->empty())
      throw IngestionError("record '" + r.id + "' has no precomputed embeddings");
    const std::size_t dim = fixed.embeddings->front().size();
    Tensor u = Tensor::matrix(budget, dim);
    for (std::size_t i = 0; i < budget; ++i) {
      const auto& row = (*fixed.embeddings)[i];
      if (row.size() != dim)
        throw IngestionError("record '" + r.id + "': embedding rows differ in width");
      // Padding utterances are zero rows whatever the stored vector says.
      if (fixed.utterances[i].empty())
        continue;
      std::copy(row.begin(), row.end(), u.values().begin() + i * dim);
    }
    return u;
  }

  const std::size_t dim = options.dim;
  if (dim == 0)
    throw ConfigError("hash-projection embedding dimension must be >= 1");
  Tensor u = Tensor::matrix(budget, dim);
  for (std::size_t i = 0; i < budget; ++i) {
    const Utterance& utt = fixed.utterances[i];
    if (utt.empty())
      continue;
    double* row = u.values().data() + i * dim;
    for (const Token& t : utt) {
      Rng rng(mix_seed(options.seed ^ fnv1a(t.text)));
      for (std::size_t j = 0; j < dim; ++j)
        row[j] += rng.uniform(-1.0, 1.0);
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j)
      norm += row[j] * row[j];
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (std::size_t j = 0; j < dim; ++j)
        row[j] /= norm;
  }
  return u;
}

// ---------------------------------------------------------------------------
// Splitting

std::array<std::size_t, 3> split_sizes(std::size_t n) {
  constexpr std::array<std::size_t, 3> percent{81, 9, 10};
  std::array<std::size_t, 3> size{};
  std::array<std::size_t, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    size[i] = n * percent[i] / 100;
    remainder[i] = n * percent[i] % 100;
    assigned += size[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned)
    ++size[order[i]];
  return size;
}

DatasetSplit split_dataset(const std::vector<Record>& records, std::uint64_t seed) {
  if (records.size() < 10)
    throw ConfigError("need at least 10 records to split, got " + std::to_string(records.size()));
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = idx.size() - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.below(i + 1)]);
  const auto sizes = split_sizes(records.size());
  DatasetSplit s;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < sizes[0]; ++i)
    s.train.push_back(records[idx[pos++]]);
  for (std::size_t i = 0; i < sizes[1]; ++i)
    s.validation.push_back(records[idx[pos++]]);
  for (std::size_t i = 0; i < sizes[2]; ++i)
    s.test.push_back(records[idx[pos++]]);
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct TagProfile {
  std::string_view tag;
  double base_rate;
  double patient_boost; // multiplicative gain at signal strength 1
  std::vector<std::string_view> words;
};

const std::vector<TagProfile>& tag_profiles() {
  static const std::vector<TagProfile> profiles = {
      {"CC", 4.0, 0.0, {"and", "but", "or"}},
      {"CD", 1.0, 0.0, {"one", "two", "three"}},
      {"DT", 10.0, 0.0, {"the", "a", "this", "that"}},
      {"EX", 0.3, 8.0, {"there"}},
      {"FW", 0.05, 0.0, {"etcetera"}},
      {"IN", 9.0, 0.0, {"in", "on", "of", "at", "from"}},
      {"JJ", 6.0, 0.0, {"big", "little", "tall", "dirty", "open"}},
      {"JJR", 0.3, 0.0, {"bigger", "taller"}},
      {"JJS", 0.2, 0.0, {"biggest", "tallest"}},
      {"LS", 0.05, 0.0, {"a)"}},
      {"MD", 0.6, 6.0, {"will", "can", "might", "should", "could"}},
      {"NN", 14.0, -0.3, {"boy", "girl", "cookie", "jar", "stool", "sink", "water", "window", "mother", "plate"}},
      {"NNS", 5.0, 0.0, {"cookies", "dishes", "curtains", "cups"}},
      {"NNP", 2.0, 0.0, {"Mary", "Johnny"}},
      {"NNPS", 0.15, 14.0, {"Americans", "Smiths", "Joneses"}},
      {"PDT", 0.1, 0.0, {"all", "both"}},
      {"POS", 0.3, 0.0, {"'s"}},
      {"PRP", 2.5, 3.5, {"he", "she", "it", "they", "I"}},
      {"PRP$", 2.0, 0.0, {"his", "her", "their"}},
      {"RB", 5.0, 0.0, {"just", "not", "very", "now", "out"}},
      {"RBR", 0.2, 0.0, {"more"}},
      {"RBS", 0.1, 0.0, {"most"}},
      {"RP", 0.5, 0.0, {"up", "off"}},
      {"SYM", 0.05, 0.0, {"%"}},
      {"TO", 2.0, 0.0, {"to"}},
      {"UH", 1.0, 0.0, {"uh", "um", "well"}},
      {"VB", 4.0, 0.0, {"get", "fall", "see", "reach"}},
      {"VBD", 3.0, 0.0, {"fell", "saw", "was"}},
      {"VBG", 4.0, 0.0, {"falling", "washing", "reaching", "standing"}},
      {"VBN", 2.0, 0.0, {"taken", "spilled"}},
      {"VBP", 3.0, 0.0, {"are", "do"}},
      {"VBZ", 4.0, 0.0, {"is", "has", "does"}},
      {"WDT", 0.3, 0.0, {"which"}},
      {"WP", 0.3, 0.0, {"who", "what"}},
      {"WP$", 0.05, 0.0, {"whose"}},
      {"WRB", 0.3, 0.0, {"where", "when", "how"}},
  };
  return profiles;
}

std::size_t sample_index(const std::vector<double>& cumulative, Rng& rng) {
  const double u = rng.uniform() * cumulative.back();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                               cumulative.size() - 1);
}

} // namespace

const std::vector<std::string>& boosted_tags() {
  static const std::vector<std::string> tags = [] {
    std::vector<std::string> t;
    for (const auto& p : tag_profiles())
      if (p.patient_boost > 0.0)
        t.emplace_back(p.tag);
    return t;
  }();
  return tags;
}

std::vector<Record> generate_synthetic_corpus(const SyntheticOptions& options) {
  if (options.n_records == 0)
    throw ConfigError("synthetic corpus needs at least one record");
  if (!(options.patient_fraction > 0.0 && options.patient_fraction < 1.0))
    throw ConfigError("patient_fraction must lie strictly between 0 and 1");
  if (!(options.signal_strength >= 0.0 && options.signal_strength <= 1.0))
    throw ConfigError("signal_strength must lie in [0, 1]");

  const auto& profiles = tag_profiles();
  const double s = options.signal_strength;
  Rng rng(options.seed);

  // Shared class direction for the embedding shift.
  const std::size_t dim = options.embedding_dim;
  std::vector<double> direction(dim);
  {
    Rng drng(mix_seed(options.seed ^ 0xd1ec7ULL));
    double norm = 0.0;
    for (double& x : direction) {
      x = drng.normal();
      norm += x * x;
    }
    for (double& x : direction)
      x /= std::sqrt(norm);
  }

  // Exact class counts keep the imbalance independent of sampling noise.
  const auto n_patients = static_cast<std::size_t>(
      std::llround(options.patient_fraction * static_cast<double>(options.n_records)));
  std::vector<Label> labels(options.n_records, Label::Control);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_patients), Label::Patient);
  for (std::size_t i = labels.size() - 1; i > 0; --i)
    std::swap(labels[i], labels[rng.below(i + 1)]);

  std::vector<Record> corpus;
  corpus.reserve(options.n_records);
  for (std::size_t r = 0; r < options.n_records; ++r) {
    Record rec;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%05zu", r);
    rec.id = id;
    rec.label = labels[r];
    const bool patient = rec.label == Label::Patient;

    // Per-record tag rates: class profile times log-normal speaker style.
    std::vector<double> cumulative;
    cumulative.reserve(profiles.size());
    double acc = 0.0;
    for (const auto& p : profiles) {
      double rate = p.base_rate * std::exp(0.25 * rng.normal());
      if (patient)
        rate *= std::max(0.05, 1.0 + s * p.patient_boost);
      acc += rate;
      cumulative.push_back(acc);
    }

    const std::size_t n_utt = 8 + rng.below(19); // 8..26 utterances
    for (std::size_t u = 0; u < n_utt; ++u) {
      Utterance utt;
      const std::size_t n_tok = 4 + rng.below(9);
      for (std::size_t t = 0; t < n_tok; ++t) {
        const TagProfile& p = profiles[sample_index(cumulative, rng)];
        const auto& w = p.words[rng.below(p.words.size())];
        utt.push_back(Token{std::string(w), std::string(p.tag)});
      }
      rec.utterances.push_back(std::move(utt));
    }

    if (dim > 0) {
      std::vector<std::vector<double>> emb;
      const double sign = patient ? 1.0 : -1.0;
      for (std::size_t u = 0; u < n_utt; ++u) {
        std::vector<double> v(dim);
        // A minority of utterances carry most of the class signal.
        const bool salient = rng.bernoulli(0.35);
        const double shift = sign * s * (salient ? 0.5 : 0.05);
        double norm = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          v[j] = rng.normal() / std::sqrt(static_cast<double>(dim)) + shift * direction[j];
          norm += v[j] * v[j];
        }
        norm = std::sqrt(norm);
        for (double& x : v)
          x /= norm;
        emb.push_back(std::move(v));
      }
      rec.embeddings = std::move(emb);
    }
    corpus.push_back(std::move(rec));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// JSON Lines

std::string record_to_json(const Record& r) {
  json j;
  j["id"] = r.id;
  j["label"] = static_cast<int>(r.label);
  json utts = json::array();
  for (const Utterance& u : r.utterances) {
    json toks = json::array();
    for (const Token& t : u)
      toks.push_back(json::array({t.text, t.tag}));
    utts.push_back(std::move(toks));
  }
  j["utterances"] = std::move(utts);
  if (r.embeddings)
    j["embeddings"] = *r.embeddings;
  return j.dump();
}

namespace {

[[noreturn]] void ingest_fail(std::size_t line_no, const std::string& msg) {
  if (line_no)
    throw IngestionError("line " + std::to_string(line_no) + ": " + msg);
  throw IngestionError(msg);
}

} // namespace

Record record_from_json(std::string_view line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    ingest_fail(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object())
    ingest_fail(line_no, "record must be a JSON object");
  static const std::vector<std::string> allowed{"id", "label", "utterances", "embeddings"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      ingest_fail(line_no, "unknown field '" + it.key() + "'");

  Record r;
  if (!j.contains("id") || !j["id"].is_string())
    ingest_fail(line_no, "missing string field 'id'");
  r.id = j["id"].get<std::string>();
  if (!j.contains("label") || !j["label"].is_number_integer())
    ingest_fail(line_no, "record '" + r.id + "': missing integer field 'label'");
  const auto label = j["label"].get<long long>();
  if (label != 0 && label != 1)
    ingest_fail(line_no, "record '" + r.id + "': label must be 0 or 1");
  r.label = static_cast<Label>(label);

  if (!j.contains("utterances") || !j["utterances"].is_array())
    ingest_fail(line_no, "record '" + r.id + "': missing array field 'utterances'");
  const auto& vocab = TagVocabulary::penn_treebank();
  for (const auto& ju : j["utterances"]) {
    if (!ju.is_array())
      ingest_fail(line_no, "record '" + r.id + "': utterance must be an array of tokens");
    Utterance u;
    for (const auto& jt : ju) {
      if (!jt.is_array() || jt.size() != 2 || !jt[0].is_string() || !jt[1].is_string())
        ingest_fail(line_no, "record '" + r.id + "': token must be [\"text\", \"TAG\"]");
      Token t{jt[0].get<std::string>(), jt[1].get<std::string>()};
      if (!vocab.index_of(t.tag))
        ingest_fail(line_no, "record '" + r.id + "': unknown PoS tag '" + t.tag + "'");
      u.push_back(std::move(t));
    }
    r.utterances.push_back(std::move(u));
  }

  if (j.contains("embeddings") && !j["embeddings"].is_null()) {
    const auto& je = j["embeddings"];
    if (!je.is_array())
      ingest_fail(line_no, "record '" + r.id + "': 'embeddings' must be an array");
    std::vector<std::vector<double>> emb;
    for (const auto& row : je) {
      if (!row.is_array())
        ingest_fail(line_no, "record '" + r.id + "': embedding row must be an array");
      std::vector<double> v;
      for (const auto& x : row) {
        if (!x.is_number())
          ingest_fail(line_no, "record '" + r.id + "': embedding values must be numbers");
        v.push_back(x.get<double>());
        if (!std::isfinite(v.back()))
          ingest_fail(line_no, "record '" + r.id + "': non-finite embedding value");
      }
      if (!emb.empty() && v.size() != emb.front().size())
        ingest_fail(line_no, "record '" + r.id + "': embedding rows differ in width");
      emb.push_back(std::move(v));
    }
    if (emb.size() != r.utterances.size())
      ingest_fail(line_no, "record '" + r.id + "': " + std::to_string(emb.size()) +
                               " embeddings for " + std::to_string(r.utterances.size()) +
                               " utterances");
    r.embeddings = std::move(emb);
  }
  return r;
}

std::vector<Record> read_corpus(std::istream& in) {
  std::vector<Record> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    out.push_back(record_from_json(line, line_no));
    if (!ids.insert(out.back().id).second)
      ingest_fail(line_no, "duplicate record id '" + out.back().id + "'");
  }
  return out;
}

std::vector<Record> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open corpus file '" + path + "'");
  return read_corpus(in);
}

void write_corpus(std::ostream& out, const std::vector<Record>& records) {
  for (const Record& r : records)
    out << record_to_json(r) << '\n';
}

void write_corpus_file(const std::string& path, const std::vector<Record>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write corpus file '" + path + "'");
  write_corpus(out, records);
  if (!out)
    throw IoError("write failed for '" + path + "'");
}

} // namespace cattn
